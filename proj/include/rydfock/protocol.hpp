#pragma once

// Fock-state pulse programs run over sampled ensembles, followed by the
// measurement chain: FORT restore (Rydberg ejection, thermal recapture),
// state-selective blow-away of |a>, and counting of |b> atoms.

#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "rydfock/analytics.hpp"
#include "rydfock/dynamics.hpp"
#include "rydfock/ensemble.hpp"

namespace rydfock::protocol {

using analytics::NumberDistribution;
using dynamics::Channel;

/// How long a pulse lasts.
struct PulseArea {
    enum class Kind {
        Duration,      // value in us
        Theta,         // single-atom pulse area; t = value / Omega_1
        CollectivePi,  // pi pulse at sqrt(n) Omega_1
    };
    Kind kind = Kind::CollectivePi;
    double value = 1.0;
    // For CollectivePi: n = pulse_n_bar - value instead of n = value.
    bool relative_to_n_bar = false;
};

struct PulseStep {
    std::string label;
    Channel channel = Channel::A;
    PulseArea area;
    double global_detuning = 0.0;
    double phase = 0.0;
};

struct Step {
    enum class Kind { Pulse, FortRestore, BlowAway, Detect };
    Kind kind = Kind::Pulse;
    PulseStep pulse;
    double restore_ms = 0.5;
    // FORT-off time before this restore; defaults to the summed pulse time since the last restore.
    std::optional<double> drop_time_us;
};

struct SequenceSpec {
    std::string name;
    std::vector<Step> steps;

    /// Throws std::invalid_argument unless detect appears at most once, as the last step.
    void validate() const;
    PulseStep* find_pulse(const std::string& label);
    const PulseStep* find_pulse(const std::string& label) const;
};

/// "A1B1", "A1B1A2B2" or "A1B1A2B2-probe".
SequenceSpec named_sequence(const std::string& name);

struct AtomSource {
    std::optional<double> n_bar;
    std::optional<std::size_t> fixed_n;
    std::size_t n_max = 0;  // 0 selects ceil(n_bar + 6 sqrt(n_bar) + 5)
};

struct MeasurementModel {
    double blow_away_fidelity = 0.97;
    // Atoms left in |a> after blow-away are reported in n_unejected; they are
    // added to n_b only when this is set.
    bool count_unejected = false;
    // Effective radius for thermal recapture; empty selects the tuned default.
    std::optional<double> trap_radius;
};

struct Experiment {
    ensemble::PhysicalParams physical;
    ensemble::CloudGeometry cloud;
    ensemble::BeamPair beams;
    ensemble::Imperfections toggles;
    AtomSource source;
    MeasurementModel measurement;
    // Atom number that collective pi pulses are timed for; defaults to n_bar or fixed_n.
    std::optional<double> pulse_n_bar;
    double dt_max = 0.05;

    double pulse_reference_n() const;
    double omega_1() const;
    double trap_radius() const;
};

struct MeasurementRecord {
    std::uint64_t seed = 0;
    std::size_t initial_n = 0;
    std::size_t n_b = 0;
    std::size_t n_b_true = 0;
    std::size_t n_rydberg_lost = 0;
    std::size_t n_blown = 0;
    std::size_t recapture_losses = 0;
    std::size_t n_unejected = 0;
};

/// Propagation failure inside a trajectory, tagged with its seed.
class TrajectoryError : public std::runtime_error {
public:
    TrajectoryError(std::uint64_t seed, const std::string& what)
        : std::runtime_error("trajectory seed " + std::to_string(seed) + ": " + what), seed_(seed) {}
    std::uint64_t seed() const { return seed_; }

private:
    std::uint64_t seed_;
};

double collective_pi_time(double n_bar, double omega_1);

std::size_t draw_atom_number(double n_bar, std::size_t n_max, RngStream& rng);

double pulse_duration(const PulseArea& area, double omega_1, double pulse_n_bar);

/// Probability that a thermal atom's ballistic displacement stays within
/// trap_radius on every axis after drop_time.
double recapture_probability(double drop_time_us, double temperature_uk, double trap_radius_um,
                             double mass_amu = kRb87MassAmu);

/// Radius for which the two-atom survival ratio between long and short drops
/// equals pair_ratio, i.e. [p(long)/p(short)]^2 = pair_ratio.
double tune_recapture_radius(double short_drop_us, double long_drop_us, double pair_ratio,
                             double temperature_uk, double mass_amu = kRb87MassAmu);

MeasurementRecord run_sequence(const SequenceSpec& seq, const Experiment& experiment, std::uint64_t seed);

/// Seed of trajectory `index` in stream `stream` under master_seed.
std::uint64_t trajectory_seed(std::uint64_t master_seed, std::uint64_t stream, std::uint64_t index);

/// n_traj trajectories fanned across the worker pool, returned in index order.
std::vector<MeasurementRecord> run_trajectories(const SequenceSpec& seq, const Experiment& experiment,
                                                std::size_t n_traj, std::uint64_t master_seed,
                                                std::uint64_t stream = 0);

/// Single-threaded reference for run_trajectories.
std::vector<MeasurementRecord> run_trajectories_serial(const SequenceSpec& seq, const Experiment& experiment,
                                                       std::size_t n_traj, std::uint64_t master_seed,
                                                       std::uint64_t stream = 0);

NumberDistribution histogram(const std::vector<MeasurementRecord>& records);

NumberDistribution fock_histogram(const SequenceSpec& seq, const Experiment& experiment, std::size_t n_traj,
                                  std::uint64_t master_seed);

NumberDistribution fock_histogram_serial(const SequenceSpec& seq, const Experiment& experiment,
                                         std::size_t n_traj, std::uint64_t master_seed);

}  // namespace rydfock::protocol
