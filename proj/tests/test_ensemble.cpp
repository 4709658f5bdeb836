#include <doctest.h>

#include <cmath>
#include <numbers>

#include "rydfock/ensemble.hpp"

using namespace rydfock;
using namespace rydfock::ensemble;

namespace {
constexpr double kTwoPiMHz = 2.0 * std::numbers::pi;
}

TEST_SUITE("ensemble") {

TEST_CASE("two-photon Rabi frequency from single-photon couplings") {
    CHECK(two_photon_rabi(kTwoPiMHz * 160, kTwoPiMHz * 17, kTwoPiMHz * 2100) / kTwoPiMHz ==
          doctest::Approx(160.0 * 17.0 / (2.0 * 2100.0)).epsilon(1e-12));
    CHECK(two_photon_rabi(kTwoPiMHz * 160, kTwoPiMHz * 17, kTwoPiMHz * 2100) / kTwoPiMHz ==
          doctest::Approx(0.6476).epsilon(1e-4));
    CHECK(two_photon_rabi(0.0, kTwoPiMHz * 17, kTwoPiMHz * 2100) == 0.0);
    CHECK(two_photon_rabi(kTwoPiMHz * 100, kTwoPiMHz * 100, kTwoPiMHz * 5000) / kTwoPiMHz ==
          doctest::Approx(1.0).epsilon(1e-12));
    CHECK_THROWS_AS(two_photon_rabi(1.0, 1.0, 0.0), std::domain_error);
}

TEST_CASE("gaussian beam falls to 1/e at the waist") {
    const BeamProfile beam{4.0, 3.0, 0.0, 0.0, 10.0};
    CHECK(beam_rabi_at(beam, 0.0, 0.0) == doctest::Approx(10.0));
    CHECK(beam_rabi_at(beam, 4.0, 0.0) == doctest::Approx(10.0 * std::exp(-1.0)));
    CHECK(beam_rabi_at(beam, 4.0, 3.0) == doctest::Approx(10.0 * std::exp(-2.0)));
}

TEST_CASE("beam Rabi frequency decreases away from the offset axis") {
    const BeamProfile beam{5.0, 4.0, 1.0, -0.5, 7.0};
    for (double d = 0.0; d < 10.0; d += 0.25) {
        CHECK(beam_rabi_at(beam, 1.0 + d + 0.25, -0.5) < beam_rabi_at(beam, 1.0 + d, -0.5));
        CHECK(beam_rabi_at(beam, 1.0 - d - 0.25, -0.5) < beam_rabi_at(beam, 1.0 - d, -0.5));
        CHECK(beam_rabi_at(beam, 1.0, -0.5 + d + 0.25) < beam_rabi_at(beam, 1.0, -0.5 + d));
    }
}

TEST_CASE("van der Waals shift calibrated at 12 um") {
    const PhysicalParams p;
    CHECK(blockade_shift({0, 0, 0}, {0, 0, 12}, p.c6) / kTwoPiMHz == doctest::Approx(11.0).epsilon(1e-12));
    CHECK(blockade_shift({0, 0, 0}, {0, 6, 0}, p.c6) / kTwoPiMHz == doctest::Approx(704.0).epsilon(1e-12));
    CHECK(p.c6 / kTwoPiMHz == doctest::Approx(3.2846e7).epsilon(1e-4));
    CHECK_THROWS(blockade_shift({1, 2, 3}, {1, 2, 3}, p.c6));
}

TEST_CASE("shift scales as the inverse sixth power") {
    const PhysicalParams p;
    for (double r : {1.5, 3.0, 7.7, 12.0, 20.0}) {
        const double ratio = blockade_shift({0, 0, 0}, {r, 0, 0}, p.c6) / blockade_shift({0, 0, 0}, {2 * r, 0, 0}, p.c6);
        CHECK(ratio == doctest::Approx(64.0).epsilon(1e-14));
    }
}

TEST_CASE("clamped shift saturates below the minimum separation") {
    const PhysicalParams p;
    const double at_clamp = blockade_shift({0, 0, 0}, {1, 0, 0}, p.c6);
    CHECK(blockade_shift_clamped({0, 0, 0}, {0.2, 0, 0}, p.c6, 1.0) == doctest::Approx(at_clamp));
    CHECK(blockade_shift_clamped({0, 0, 0}, {0, 0, 0}, p.c6, 1.0) == doctest::Approx(at_clamp));
    CHECK(blockade_shift_clamped({0, 0, 0}, {3, 0, 0}, p.c6, 1.0) ==
          doctest::Approx(blockade_shift({0, 0, 0}, {3, 0, 0}, p.c6)));
}

TEST_CASE("doppler shift follows the axial velocity") {
    CHECK(doppler_shift({0, 0, 0}, 0.78, 0.48) == 0.0);
    CHECK(doppler_shift({0.3, -0.2, 0.0}, 0.78, 0.48) == 0.0);
    const double expected = kTwoPiMHz * (1.0 / 0.48 - 1.0 / 0.78) * 0.1;
    CHECK(std::abs(doppler_shift({0, 0, 0.1}, 0.78, 0.48)) == doctest::Approx(expected).epsilon(1e-12));
    CHECK(std::abs(doppler_shift({0, 0, 0.1}, 0.78, 0.48)) / kTwoPiMHz == doctest::Approx(0.0801).epsilon(1e-3));
}

TEST_CASE("differential light shift") {
    CHECK(ac_stark_shift(5.0, 5.0, -100.0) == 0.0);
    CHECK(ac_stark_shift(0.0, 0.0, -100.0) == 0.0);
    const double shift = ac_stark_shift(kTwoPiMHz * 160, 0.0, -kTwoPiMHz * 2100) / kTwoPiMHz;
    CHECK(shift == doctest::Approx(-160.0 * 160.0 / (4.0 * 2100.0)).epsilon(1e-12));
    CHECK(shift == doctest::Approx(-3.05).epsilon(2e-3));
}

TEST_CASE("empty cloud") {
    const auto cfg = sample_cloud({}, {}, {}, 0, 1);
    CHECK(cfg.n_atoms == 0);
    CHECK(cfg.positions.empty());
    CHECK(cfg.blockade.size() == 0);
}

TEST_CASE("large cloud: centred positions and Maxwell-Boltzmann velocities") {
    PhysicalParams p;
    p.temperature_uk = 150.0;
    const CloudGeometry geom;
    const std::size_t n = 100000;
    // Pair interactions are O(n^2); sample without them by using a one-atom-at-a-time loop.
    double mean[3] = {0, 0, 0};
    double vz2 = 0.0, vz = 0.0;
    const std::size_t batch = 500;
    for (std::size_t b = 0; b < n / batch; ++b) {
        const auto cfg = sample_cloud(geom, p, {}, batch, 1000 + b);
        for (std::size_t i = 0; i < batch; ++i) {
            for (int a = 0; a < 3; ++a) mean[a] += cfg.positions[i][a];
            vz += cfg.velocities[i][2];
            vz2 += cfg.velocities[i][2] * cfg.velocities[i][2];
        }
    }
    const double sig[3] = {geom.sigma_x, geom.sigma_y, geom.sigma_z};
    for (int a = 0; a < 3; ++a) CHECK(std::abs(mean[a] / n) < 5.0 * sig[a] / std::sqrt(double(n)));
    const double m = 86.909180527 * 1.66053906660e-27;
    const double expected = 1.380649e-23 * 150e-6 / m;  // (m/s)^2 == (um/us)^2
    const double var = vz2 / n - (vz / n) * (vz / n);
    CHECK(var == doctest::Approx(expected).epsilon(0.02));
}

TEST_CASE("sampled configurations are deterministic and well formed") {
    const PhysicalParams p;
    const BeamPair beams;
    const auto a = sample_cloud({}, p, beams, 12, 99);
    const auto b = sample_cloud({}, p, beams, 12, 99);
    CHECK(a.positions == b.positions);
    CHECK(a.velocities == b.velocities);
    CHECK(a.rabi_two_photon == b.rabi_two_photon);
    CHECK(a.detuning_two_photon == b.detuning_two_photon);
    CHECK(a.dephasing_rate == b.dephasing_rate);
    CHECK(a.blockade == b.blockade);

    for (std::uint64_t seed = 0; seed < 50; ++seed) {
        const auto cfg = sample_cloud({}, p, beams, 8, seed);
        const double peak = two_photon_rabi(p.omega_red_peak, p.omega_blue_peak, p.delta_intermediate);
        for (std::size_t i = 0; i < 8; ++i) {
            CHECK(cfg.rabi_two_photon[i] <= peak * (1.0 + 1e-12));
            CHECK(cfg.blockade(i, i) == 0.0);
            for (std::size_t j = 0; j < 8; ++j) CHECK(cfg.blockade(i, j) == cfg.blockade(j, i));
        }
    }
}

TEST_CASE("ideal toggles give uniform couplings and no noise") {
    const auto cfg = sample_cloud({}, {}, {}, 6, 5, Imperfections::ideal());
    for (std::size_t i = 0; i < 6; ++i) {
        CHECK(cfg.rabi_two_photon[i] == cfg.rabi_two_photon[0]);
        CHECK(cfg.detuning_two_photon[i] == 0.0);
        CHECK(cfg.dephasing_rate[i] == 0.0);
    }
}

TEST_CASE("centre atom dephases at 4 / tau_coh with all imperfections") {
    PhysicalParams p;
    CloudGeometry point{0.0, 0.0, 0.0};
    auto t = Imperfections::full();
    t.misalignment = false;
    const auto cfg = sample_cloud(point, p, {}, 1, 3, t);
    CHECK(cfg.dephasing_rate[0] == doctest::Approx(4.0 / p.tau_coh));
}

TEST_CASE("subset keeps the chosen atoms in order") {
    const auto cfg = sample_cloud({}, {}, {}, 5, 8);
    const std::size_t keep[] = {3, 1};
    const auto sub = cfg.subset(keep);
    CHECK(sub.n_atoms == 2);
    CHECK(sub.positions[0] == cfg.positions[3]);
    CHECK(sub.rabi_two_photon[1] == cfg.rabi_two_photon[1]);
    CHECK(sub.blockade(0, 1) == cfg.blockade(3, 1));
}

}
