#pragma once

// Physical scenario: cloud geometry, thermal motion, Gaussian excitation
// beams, and the per-atom couplings, detunings and pair interactions that
// feed the many-atom Hamiltonian.

#include <array>
#include <cstdint>
#include <optional>
#include <span>
#include <vector>

#include <Eigen/Dense>

#include "rydfock/units.hpp"

namespace rydfock::ensemble {

using Vec3 = std::array<double, 3>;

struct PhysicalParams {
    double omega_red_peak = mhz_to_angular(160.0);
    double omega_blue_peak = mhz_to_angular(17.0);
    double delta_intermediate = mhz_to_angular(-2100.0);
    double gamma_5p = mhz_to_angular(6.07);
    // 2pi * 11 MHz at 12 um.
    double c6 = mhz_to_angular(11.0) * 2985984.0;
    double tau_coh = 5.0;
    double lambda_red = 0.780;
    double lambda_blue = 0.480;
    double temperature_uk = 125.0;
    double atom_mass_amu = kRb87MassAmu;

    // When set, replaces the adiabatic-elimination value of the peak
    // two-photon Rabi frequency; per-atom values keep their beam-profile shape.
    std::optional<double> two_photon_rabi_peak;
    // Pairs interacting more strongly than this are treated as perfectly blockaded.
    double blockade_cutoff = mhz_to_angular(10.0);
    double min_separation = 1.0;

    /// Peak two-photon Rabi frequency actually used by the simulator.
    double effective_peak_rabi() const;
    /// Thermal velocity spread per Cartesian component, um/us.
    double velocity_sigma() const;
};

struct BeamProfile {
    double waist_x = 1.0;
    double waist_y = 1.0;
    double offset_x = 0.0;
    double offset_y = 0.0;
    double peak_rabi = 0.0;
};

struct BeamPair {
    BeamProfile red{9.0, 7.0, 1.0, 0.0, mhz_to_angular(160.0)};
    BeamProfile blue{5.6, 4.7, 0.0, 1.0, mhz_to_angular(17.0)};
};

struct CloudGeometry {
    double sigma_x = 0.25;
    double sigma_y = 0.25;
    double sigma_z = 3.5;
};

/// Which experimental imperfections enter a sampled configuration.
struct Imperfections {
    bool doppler = true;
    bool ac_stark = true;
    bool scattering = true;
    bool dephasing = true;
    bool misalignment = true;
    bool beam_profile = true;
    bool finite_blockade = true;

    static Imperfections ideal() { return {false, false, false, false, false, false, false}; }
    static Imperfections infinite_blockade() {
        auto t = Imperfections{};
        t.finite_blockade = false;
        return t;
    }
    static Imperfections full() { return {}; }
};

struct AtomConfiguration {
    std::size_t n_atoms = 0;
    std::vector<Vec3> positions;
    std::vector<Vec3> velocities;
    std::vector<double> rabi_two_photon;
    std::vector<double> detuning_two_photon;
    std::vector<double> dephasing_rate;
    Eigen::MatrixXd blockade;  // V_ij, rad/us

    /// Configuration restricted to the listed atoms, in the listed order.
    AtomConfiguration subset(std::span<const std::size_t> kept) const;
};

double two_photon_rabi(double omega_red, double omega_blue, double delta);

double beam_rabi_at(const BeamProfile& beam, double x, double y);

double blockade_shift(const Vec3& r_i, const Vec3& r_j, double c6);

/// blockade_shift with separations below min_separation raised to it.
double blockade_shift_clamped(const Vec3& r_i, const Vec3& r_j, double c6, double min_separation);

/// Two-photon Doppler shift for a red beam along +z and a counter-propagating
/// blue beam along -z.
double doppler_shift(const Vec3& v, double lambda_red, double lambda_blue);

/// Differential light shift of the two-photon resonance.
double ac_stark_shift(double omega_red_i, double omega_blue_i, double delta);

/// Intermediate-state photon scattering rate for an atom seeing red Rabi omega_red_i.
double scattering_rate(double omega_red_i, double delta, double gamma_5p);

/// Beams with their peak Rabi frequencies taken from params and offsets
/// removed unless misalignment is enabled.
BeamPair effective_beams(const PhysicalParams& params, const BeamPair& beams, const Imperfections& toggles);

/// Two-photon Rabi frequency at the cloud centre. This is what a
/// single-atom flopping measurement calibrates, so pulse areas refer to it.
double calibrated_rabi(const PhysicalParams& params, const BeamPair& beams, const Imperfections& toggles);

AtomConfiguration sample_cloud(const CloudGeometry& geom, const PhysicalParams& params, const BeamPair& beams,
                               std::size_t n_atoms, std::uint64_t seed,
                               const Imperfections& toggles = Imperfections{});

}  // namespace rydfock::ensemble
