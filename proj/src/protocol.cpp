#include "rydfock/protocol.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <numbers>

#include "rydfock/parallel.hpp"

namespace rydfock::protocol {

using dynamics::BasisPtr;
using dynamics::StateVector;

void SequenceSpec::validate() const {
    for (std::size_t k = 0; k < steps.size(); ++k) {
        const auto& s = steps[k];
        if (s.kind == Step::Kind::Detect && k + 1 != steps.size())
            throw std::invalid_argument("sequence " + name + ": detect must be the final step");
        if (s.kind == Step::Kind::Pulse && s.pulse.area.kind != PulseArea::Kind::CollectivePi && s.pulse.area.value < 0.0)
            throw std::invalid_argument("sequence " + name + ": pulse " + s.pulse.label + " has negative length");
        if (s.kind == Step::Kind::FortRestore && s.drop_time_us && *s.drop_time_us < 0.0)
            throw std::invalid_argument("sequence " + name + ": negative drop time");
    }
}

PulseStep* SequenceSpec::find_pulse(const std::string& label) {
    for (auto& s : steps)
        if (s.kind == Step::Kind::Pulse && s.pulse.label == label) return &s.pulse;
    return nullptr;
}

const PulseStep* SequenceSpec::find_pulse(const std::string& label) const {
    return const_cast<SequenceSpec*>(this)->find_pulse(label);
}

namespace {

Step pulse(std::string label, Channel channel, PulseArea area) {
    Step s;
    s.kind = Step::Kind::Pulse;
    s.pulse = {std::move(label), channel, area, 0.0, 0.0};
    return s;
}

Step marker(Step::Kind kind) {
    Step s;
    s.kind = kind;
    return s;
}

constexpr PulseArea collective_pi(double atoms, bool relative = false) {
    return {PulseArea::Kind::CollectivePi, atoms, relative};
}

}  // namespace

SequenceSpec named_sequence(const std::string& name) {
    SequenceSpec seq;
    seq.name = name;
    // A_k is a collective pi pulse for the n_bar - (k-1) atoms still in |a>;
    // B1 is a single-atom pi pulse and B2 a two-atom collective pi pulse.
    seq.steps.push_back(pulse("A1", Channel::A, collective_pi(0.0, true)));
    seq.steps.push_back(pulse("B1", Channel::B, collective_pi(1.0)));
    if (name == "A1B1") {
    } else if (name == "A1B1A2B2" || name == "A1B1A2B2-probe") {
        seq.steps.push_back(pulse("A2", Channel::A, collective_pi(1.0, true)));
        seq.steps.push_back(pulse("B2", Channel::B, collective_pi(2.0)));
        if (name == "A1B1A2B2-probe") {
            seq.steps.push_back(marker(Step::Kind::FortRestore));
            seq.steps.push_back(pulse("B3", Channel::B, {PulseArea::Kind::Theta, 0.0, false}));
        }
    } else {
        throw std::invalid_argument("unknown sequence name: " + name);
    }
    seq.steps.push_back(marker(Step::Kind::FortRestore));
    seq.steps.push_back(marker(Step::Kind::BlowAway));
    seq.steps.push_back(marker(Step::Kind::Detect));
    return seq;
}

double Experiment::pulse_reference_n() const {
    if (pulse_n_bar) return *pulse_n_bar;
    if (source.n_bar) return *source.n_bar;
    if (source.fixed_n) return static_cast<double>(*source.fixed_n);
    return 1.0;
}

double Experiment::omega_1() const { return ensemble::calibrated_rabi(physical, beams, toggles); }

double Experiment::trap_radius() const {
    if (measurement.trap_radius) return *measurement.trap_radius;
    return tune_recapture_radius(2.0, 6.34, 32.0 / 48.0, physical.temperature_uk, physical.atom_mass_amu);
}

double collective_pi_time(double n_bar, double omega_1) {
    if (!(n_bar > 0.0) || !(omega_1 > 0.0))
        throw std::domain_error("collective_pi_time: n_bar and omega_1 must be > 0");
    return std::numbers::pi / (std::sqrt(n_bar) * omega_1);
}

std::size_t draw_atom_number(double n_bar, std::size_t n_max, RngStream& rng) {
    if (n_bar < 0.0) throw std::domain_error("draw_atom_number: n_bar must be >= 0");
    const auto n = static_cast<std::size_t>(rng.poisson(n_bar));
    return std::min(n, n_max);
}

double pulse_duration(const PulseArea& area, double omega_1, double pulse_n_bar) {
    switch (area.kind) {
        case PulseArea::Kind::Duration:
            return area.value;
        case PulseArea::Kind::Theta:
            return area.value / omega_1;
        case PulseArea::Kind::CollectivePi:
            return collective_pi_time(area.relative_to_n_bar ? pulse_n_bar - area.value : area.value, omega_1);
    }
    return 0.0;
}

double recapture_probability(double drop_time_us, double temperature_uk, double trap_radius_um, double mass_amu) {
    if (drop_time_us < 0.0) throw std::invalid_argument("recapture_probability: drop time must be >= 0");
    if (drop_time_us == 0.0) return 1.0;
    const double sigma_v = std::sqrt(kBoltzmann * temperature_uk * 1e-6 / (mass_amu * kAtomicMassUnit));
    const double per_axis = std::erf(trap_radius_um / (std::sqrt(2.0) * sigma_v * drop_time_us));
    return per_axis * per_axis * per_axis;
}

double tune_recapture_radius(double short_drop_us, double long_drop_us, double pair_ratio, double temperature_uk,
                             double mass_amu) {
    auto excess = [&](double radius) {
        const double r = recapture_probability(long_drop_us, temperature_uk, radius, mass_amu) /
                         recapture_probability(short_drop_us, temperature_uk, radius, mass_amu);
        return r * r - pair_ratio;
    };
    double lo = 1e-3, hi = 100.0;
    if (excess(lo) > 0.0 || excess(hi) < 0.0)
        throw std::domain_error("tune_recapture_radius: target ratio not bracketed");
    for (int it = 0; it < 200; ++it) {
        const double mid = 0.5 * (lo + hi);
        (excess(mid) < 0.0 ? lo : hi) = mid;
    }
    return 0.5 * (lo + hi);
}

namespace {

// Mutable per-trajectory state: the atoms still trapped and their joint wavefunction.
struct Sample {
    ensemble::AtomConfiguration config;
    StateVector psi;
};

StateVector single_label_state(std::size_t n, const std::string& label) {
    auto basis = std::make_shared<const dynamics::Basis>(dynamics::Basis::from_states(n, 2, 2, {label}));
    return StateVector::basis_state(basis, label);
}

// Project onto the strings for which keep(label) holds and renormalise.
template <class Pred>
void project(StateVector& psi, Pred keep) {
    for (std::size_t k = 0; k < psi.basis->size(); ++k)
        if (!keep(psi.basis->state(k))) psi.amplitudes(static_cast<Eigen::Index>(k)) = 0.0;
    psi.normalize();
}

// Remove atoms flagged in `drop`. Every string in the support must agree on those atoms.
void remove_atoms(Sample& s, const std::vector<bool>& drop) {
    std::vector<std::size_t> kept;
    for (std::size_t i = 0; i < drop.size(); ++i)
        if (!drop[i]) kept.push_back(i);
    if (kept.size() == drop.size()) return;

    std::vector<std::string> labels;
    std::vector<dynamics::Complex> amps;
    for (std::size_t k = 0; k < s.psi.basis->size(); ++k) {
        const auto c = s.psi.amplitudes(static_cast<Eigen::Index>(k));
        if (std::norm(c) == 0.0) continue;
        std::string reduced;
        for (std::size_t i : kept) reduced.push_back(s.psi.basis->state(k)[i]);
        labels.push_back(std::move(reduced));
        amps.push_back(c);
    }
    auto basis = std::make_shared<const dynamics::Basis>(
        dynamics::Basis::from_states(kept.size(), s.psi.basis->r_max(), s.psi.basis->b_max(), labels));
    StateVector next{basis, Eigen::VectorXcd::Zero(static_cast<Eigen::Index>(basis->size()))};
    for (std::size_t k = 0; k < labels.size(); ++k) next.amplitudes(static_cast<Eigen::Index>(basis->index(labels[k]))) += amps[k];
    if (kept.empty()) {
        next = single_label_state(0, "");
    } else {
        next.normalize();
    }
    s.psi = std::move(next);
    s.config = s.config.subset(kept);
}

// Sample a key over the support with probability proportional to |amp|^2.
template <class KeyFn>
std::string sample_key(const StateVector& psi, KeyFn key, RngStream& rng) {
    std::map<std::string, double> weights;
    for (std::size_t k = 0; k < psi.basis->size(); ++k) {
        const double p = std::norm(psi.amplitudes(static_cast<Eigen::Index>(k)));
        if (p > 0.0) weights[key(psi.basis->state(k))] += p;
    }
    double total = 0.0;
    for (const auto& [_, w] : weights) total += w;
    const double target = rng.uniform() * total;
    double acc = 0.0;
    for (const auto& [k, w] : weights) {
        acc += w;
        if (target < acc) return k;
    }
    return weights.rbegin()->first;
}

void collapse(StateVector& psi, RngStream& rng) {
    const std::string chosen = sample_key(psi, [](const std::string& s) { return s; }, rng);
    project(psi, [&](const std::string& s) { return s == chosen; });
}

void apply_pulse(Sample& s, const PulseStep& step, double duration, const Experiment& exp, RngStream& rng) {
    const std::size_t n = s.config.n_atoms;
    if (n == 0 || duration <= 0.0) return;
    dynamics::TruncationRules rules;
    rules.r_max = exp.toggles.finite_blockade ? 2 : 1;
    rules.b_max = 2;
    rules.blockade = &s.config.blockade;
    rules.blockade_cutoff = exp.physical.blockade_cutoff;

    const auto seeds = dynamics::support(s.psi);
    BasisPtr basis = dynamics::reachable_basis(seeds, n, step.channel, rules);
    StateVector psi = dynamics::remap(s.psi, basis);
    psi.normalize();
    const auto h = dynamics::build_hamiltonian(
        s.config, basis, {step.channel, duration, step.global_detuning, step.phase});

    // Largest no-jump decay rate of any basis state; dt keeps its per-step loss near 5%.
    const char g = dynamics::ground_label(step.channel);
    double max_decay = 0.0;
    for (const auto& label : basis->states()) {
        double rate = 0.0;
        for (std::size_t i = 0; i < n; ++i)
            if (label[i] == g) rate += s.config.dephasing_rate[i];
        max_decay = std::max(max_decay, rate);
    }
    if (max_decay > 0.0) {
        const double dt = std::min(exp.dt_max, 0.05 / max_decay);
        s.psi = dynamics::propagate_trajectory(psi, h, s.config.dephasing_rate, duration, dt, rng).state;
    } else {
        s.psi = dynamics::propagate_krylov(psi, h, duration);
        s.psi.normalize();
    }
}

void fort_restore(Sample& s, double drop_time, const Experiment& exp, MeasurementRecord& rec, RngStream& rng) {
    const std::size_t n = s.config.n_atoms;
    if (n == 0) return;
    // Rydberg atoms are expelled: measure which atoms are in r, then drop them.
    const std::string pattern = sample_key(
        s.psi,
        [](const std::string& label) {
            std::string mask = label;
            for (char& c : mask) c = c == 'r' ? 'r' : '-';
            return mask;
        },
        rng);
    project(s.psi, [&](const std::string& label) {
        for (std::size_t i = 0; i < n; ++i)
            if ((label[i] == 'r') != (pattern[i] == 'r')) return false;
        return true;
    });
    std::vector<bool> drop(n);
    for (std::size_t i = 0; i < n; ++i) {
        drop[i] = pattern[i] == 'r';
        if (drop[i]) ++rec.n_rydberg_lost;
    }
    remove_atoms(s, drop);

    // Thermal atoms that left the trap volume during the drop are lost.
    const double p_keep = recapture_probability(drop_time, exp.physical.temperature_uk, exp.trap_radius(),
                                                exp.physical.atom_mass_amu);
    drop.assign(s.config.n_atoms, false);
    for (std::size_t i = 0; i < s.config.n_atoms; ++i) {
        if (rng.uniform() < p_keep) continue;
        const std::string label = sample_key(s.psi, [&](const std::string& l) { return std::string(1, l[i]); }, rng);
        project(s.psi, [&](const std::string& l) { return l[i] == label[0]; });
        drop[i] = true;
        ++rec.recapture_losses;
    }
    remove_atoms(s, drop);
}

void blow_away(Sample& s, const Experiment& exp, MeasurementRecord& rec, RngStream& rng) {
    if (s.config.n_atoms == 0) return;
    collapse(s.psi, rng);
    const std::string label = dynamics::support(s.psi, 0.0).front();
    std::vector<bool> drop(label.size(), false);
    for (std::size_t i = 0; i < label.size(); ++i)
        if (label[i] == 'a' && rng.uniform() < exp.measurement.blow_away_fidelity) {
            drop[i] = true;
            ++rec.n_blown;
        }
    remove_atoms(s, drop);
}

void detect(Sample& s, const Experiment& exp, MeasurementRecord& rec, RngStream& rng) {
    if (s.config.n_atoms > 0) {
        collapse(s.psi, rng);
        const std::string label = dynamics::support(s.psi, 0.0).front();
        for (char c : label) {
            if (c == 'b') ++rec.n_b_true;
            if (c == 'a') ++rec.n_unejected;
            if (c == 'r') ++rec.n_rydberg_lost;
        }
    }
    rec.n_b = rec.n_b_true + (exp.measurement.count_unejected ? rec.n_unejected : 0);
}

}  // namespace

MeasurementRecord run_sequence(const SequenceSpec& seq, const Experiment& experiment, std::uint64_t seed) {
    RngStream rng(seed);
    MeasurementRecord rec;
    rec.seed = seed;

    std::size_t n = 0;
    if (experiment.source.fixed_n) {
        n = *experiment.source.fixed_n;
    } else if (experiment.source.n_bar) {
        const double n_bar = *experiment.source.n_bar;
        const std::size_t n_max =
            experiment.source.n_max > 0 ? experiment.source.n_max : analytics::default_n_max(n_bar);
        n = draw_atom_number(n_bar, n_max, rng);
    }
    rec.initial_n = n;

    const std::uint64_t cloud_seed = rng.next_u64();
    Sample s{ensemble::sample_cloud(experiment.cloud, experiment.physical, experiment.beams, n, cloud_seed,
                                    experiment.toggles),
             single_label_state(n, std::string(n, 'a'))};
    const double omega_1 = experiment.omega_1();
    const double pulse_n = experiment.pulse_reference_n();

    try {
        double elapsed = 0.0;
        bool detected = false;
        for (const auto& step : seq.steps) {
            switch (step.kind) {
                case Step::Kind::Pulse: {
                    const double duration = pulse_duration(step.pulse.area, omega_1, pulse_n);
                    apply_pulse(s, step.pulse, duration, experiment, rng);
                    elapsed += duration;
                    break;
                }
                case Step::Kind::FortRestore:
                    fort_restore(s, step.drop_time_us.value_or(elapsed), experiment, rec, rng);
                    elapsed = 0.0;
                    break;
                case Step::Kind::BlowAway:
                    blow_away(s, experiment, rec, rng);
                    break;
                case Step::Kind::Detect:
                    detect(s, experiment, rec, rng);
                    detected = true;
                    break;
            }
        }
        if (!detected) detect(s, experiment, rec, rng);
    } catch (const TrajectoryError&) {
        throw;
    } catch (const std::exception& e) {
        throw TrajectoryError(seed, e.what());
    }
    return rec;
}

std::uint64_t trajectory_seed(std::uint64_t master_seed, std::uint64_t stream, std::uint64_t index) {
    return RngStream::substream(master_seed, stream, index).next_u64();
}

std::vector<MeasurementRecord> run_trajectories(const SequenceSpec& seq, const Experiment& experiment,
                                                std::size_t n_traj, std::uint64_t master_seed, std::uint64_t stream) {
    seq.validate();
    std::vector<MeasurementRecord> out(n_traj);
    parallel_for(n_traj, [&](std::size_t k) {
        out[k] = run_sequence(seq, experiment, trajectory_seed(master_seed, stream, k));
    });
    return out;
}

std::vector<MeasurementRecord> run_trajectories_serial(const SequenceSpec& seq, const Experiment& experiment,
                                                       std::size_t n_traj, std::uint64_t master_seed,
                                                       std::uint64_t stream) {
    seq.validate();
    std::vector<MeasurementRecord> out(n_traj);
    serial_for(n_traj, [&](std::size_t k) {
        out[k] = run_sequence(seq, experiment, trajectory_seed(master_seed, stream, k));
    });
    return out;
}

NumberDistribution histogram(const std::vector<MeasurementRecord>& records) {
    std::vector<std::size_t> counts(3, 0);
    for (const auto& r : records) {
        if (r.n_b >= counts.size()) counts.resize(r.n_b + 1, 0);
        ++counts[r.n_b];
    }
    return NumberDistribution::from_counts(counts);
}

NumberDistribution fock_histogram(const SequenceSpec& seq, const Experiment& experiment, std::size_t n_traj,
                                  std::uint64_t master_seed) {
    if (n_traj == 0) throw std::invalid_argument("fock_histogram: n_traj must be >= 1");
    return histogram(run_trajectories(seq, experiment, n_traj, master_seed));
}

NumberDistribution fock_histogram_serial(const SequenceSpec& seq, const Experiment& experiment,
                                         std::size_t n_traj, std::uint64_t master_seed) {
    if (n_traj == 0) throw std::invalid_argument("fock_histogram: n_traj must be >= 1");
    return histogram(run_trajectories_serial(seq, experiment, n_traj, master_seed));
}

}  // namespace rydfock::protocol
