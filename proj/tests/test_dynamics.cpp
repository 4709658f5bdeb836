#include <doctest.h>

#include <cmath>
#include <numbers>

#include <Eigen/Eigenvalues>
#include <unsupported/Eigen/MatrixFunctions>

#include "oracles/lindblad_dense.hpp"
#include "rydfock/analytics.hpp"
#include "rydfock/dynamics.hpp"

using namespace rydfock;
using namespace rydfock::dynamics;

namespace {

ensemble::AtomConfiguration uniform_config(std::size_t n, double rabi, double v, double rate = 0.0) {
    ensemble::AtomConfiguration c;
    c.n_atoms = n;
    c.positions.assign(n, {0, 0, 0});
    c.velocities.assign(n, {0, 0, 0});
    c.rabi_two_photon.assign(n, rabi);
    c.detuning_two_photon.assign(n, 0.0);
    c.dephasing_rate.assign(n, rate);
    c.blockade = Eigen::MatrixXd::Constant(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(n), v);
    c.blockade.diagonal().setZero();
    return c;
}

BasisPtr shared(Basis b) { return std::make_shared<const Basis>(std::move(b)); }

BasisPtr single_excitation_basis(std::size_t n) {
    TruncationRules rules;
    rules.r_max = 1;
    const std::string seed(n, 'a');
    return reachable_basis(std::span<const std::string>(&seed, 1), n, Channel::A, rules);
}

constexpr double kOmega = 2.0 * std::numbers::pi * 0.75;

}  // namespace

TEST_SUITE("dynamics") {

TEST_CASE("basis sizes") {
    CHECK(enumerate_basis(1, 1, 1).size() == 3);
    CHECK(enumerate_basis(2, 2, 2).size() == 9);
    CHECK(enumerate_basis(3, 2, 2).size() == 25);
    CHECK(enumerate_basis(3, 1, 0).size() == 4);
}

TEST_CASE("basis is sorted and reproducible") {
    const auto a = enumerate_basis(4, 2, 2);
    const auto b = enumerate_basis(4, 2, 2);
    CHECK(a.states() == b.states());
    CHECK(std::is_sorted(a.states().begin(), a.states().end()));
    for (std::size_t k = 0; k < a.size(); ++k) CHECK(a.index(a.state(k)) == k);
    CHECK_FALSE(a.find("rrrr").has_value());
    CHECK_THROWS_AS(a.index("zzzz"), std::out_of_range);
}

TEST_CASE("basis cap raises a resource error") {
    CHECK_THROWS_AS(enumerate_basis(12, 12, 12, 1000), ResourceError);
}

TEST_CASE("hamiltonian is exactly hermitian") {
    auto cfg = uniform_config(3, kOmega, 5.0);
    cfg.detuning_two_photon = {0.3, -0.2, 0.1};
    const auto h = build_hamiltonian(cfg, shared(enumerate_basis(3, 2, 2)), {Channel::A, 1.0, 0.4, 0.7});
    const Eigen::MatrixXcd d(h.matrix);
    CHECK((d - d.adjoint()).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("single atom spectrum") {
    const auto cfg = uniform_config(1, kOmega, 0.0);
    const auto h = build_hamiltonian(cfg, shared(enumerate_basis(1, 1, 1)), {Channel::A, 1.0, 0.0, 0.0});
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXcd> eig{Eigen::MatrixXcd(h.matrix)};
    const auto ev = eig.eigenvalues();
    CHECK(ev(0) == doctest::Approx(-kOmega / 2));
    CHECK(ev(1) == doctest::Approx(0.0));
    CHECK(ev(2) == doctest::Approx(kOmega / 2));
}

TEST_CASE("interaction sits only on the doubly excited diagonal") {
    const double v = 17.0;
    const auto cfg = uniform_config(2, 0.0, v);
    const auto basis = shared(enumerate_basis(2, 2, 2));
    const auto h = build_hamiltonian(cfg, basis, {Channel::A, 1.0, 0.0, 0.0});
    const Eigen::MatrixXcd d(h.matrix);
    for (std::size_t k = 0; k < basis->size(); ++k) {
        const double expected = basis->state(k) == "rr" ? v : 0.0;
        CHECK(d(k, k).real() == expected);
    }
    CHECK(d.cwiseAbs().sum() == doctest::Approx(v));
}

TEST_CASE("atom count mismatch is rejected") {
    CHECK_THROWS_AS(build_hamiltonian(uniform_config(2, 1.0, 0.0), shared(enumerate_basis(3, 1, 1)), {}),
                    std::invalid_argument);
}

TEST_CASE("exact propagation: identity at t = 0 and Rabi flopping") {
    const auto cfg = uniform_config(1, kOmega, 0.0);
    const auto basis = shared(enumerate_basis(1, 1, 1));
    const auto h = build_hamiltonian(cfg, basis, {Channel::A, 1.0, 0.0, 0.0});
    const auto psi = StateVector::basis_state(basis, "a");
    CHECK((propagate_exact(psi, h, 0.0).amplitudes - psi.amplitudes).norm() < 1e-14);
    for (double t = 0.0; t < 2.0; t += 0.1) {
        const auto out = propagate_exact(psi, h, t);
        CHECK(out.population("r") == doctest::Approx(std::pow(std::sin(kOmega * t / 2), 2)).epsilon(1e-10));
    }
}

TEST_CASE("blockaded ensembles flop at sqrt(N) Omega") {
    for (std::size_t n : {1u, 2u, 4u, 9u}) {
        const auto basis = single_excitation_basis(n);
        const auto h = build_hamiltonian(uniform_config(n, kOmega, 0.0), basis, {Channel::A, 1.0, 0.0, 0.0});
        const auto g = StateVector::basis_state(basis, std::string(n, 'a'));
        for (double t = 0.05; t < 1.0; t += 0.15) {
            const auto out = propagate_exact(g, h, t);
            const double p_w = std::norm(make_w_state(basis).amplitudes.dot(out.amplitudes));
            CHECK(p_w == doctest::Approx(std::pow(std::sin(std::sqrt(double(n)) * kOmega * t / 2), 2)).epsilon(1e-9));
        }
    }
}

TEST_CASE("sqrt(N) law from fitted flopping frequencies") {
    for (std::size_t n : {1u, 2u, 4u, 9u, 16u}) {
        const auto basis = single_excitation_basis(n);
        const auto h = build_hamiltonian(uniform_config(n, kOmega, 0.0), basis, {Channel::A, 1.0, 0.0, 0.0});
        const auto g = StateVector::basis_state(basis, std::string(n, 'a'));
        std::vector<analytics::Sample> samples;
        for (int k = 0; k < 40; ++k) {
            const double t = 1.5 * k / 39.0;
            const auto out = propagate_krylov(g, h, t);
            samples.push_back({t, 1.0 - out.population(std::string(n, 'a')), 0.0});
        }
        const auto fit = analytics::fit_rabi(samples, std::sqrt(double(n)) * kOmega * 1.05,
                                             std::numeric_limits<double>::infinity());
        REQUIRE(fit.converged);
        CHECK(fit.value("omega") / kOmega == doctest::Approx(std::sqrt(double(n))).epsilon(0.01));
    }
}

TEST_CASE("strong interactions suppress double excitation") {
    const std::size_t n = 3;
    const auto cfg = uniform_config(n, kOmega, 100.0 * kOmega);
    const auto basis = shared(enumerate_basis(n, 2, 0));
    const auto h = build_hamiltonian(cfg, basis, {Channel::A, 1.0, 0.0, 0.0});
    const auto g = StateVector::basis_state(basis, "aaa");
    const double t_pi = std::numbers::pi / (std::sqrt(3.0) * kOmega);
    for (int k = 0; k <= 50; ++k) {
        const auto out = propagate_exact(g, h, t_pi * k / 50.0);
        double double_r = 0.0;
        for (std::size_t s = 0; s < basis->size(); ++s)
            if (std::count(basis->state(s).begin(), basis->state(s).end(), 'r') >= 2)
                double_r += std::norm(out.amplitudes(s));
        CHECK(double_r < 1e-3);
    }
}

TEST_CASE("W state") {
    const auto b1 = single_excitation_basis(1);
    const auto w1 = make_w_state(b1);
    CHECK(w1.population("r") == doctest::Approx(1.0));
    const auto b4 = single_excitation_basis(4);
    const auto w4 = make_w_state(b4);
    for (const char* s : {"raaa", "araa", "aara", "aaar"})
        CHECK(std::abs(w4.amplitudes(b4->index(s))) == doctest::Approx(0.5));
    const auto h = build_hamiltonian(uniform_config(4, kOmega, 0.0), b4, {Channel::A, 1.0, 0.0, 0.0});
    const auto g = StateVector::basis_state(b4, "aaaa");
    const std::complex<double> elem = w4.amplitudes.dot(h.matrix * g.amplitudes);
    CHECK(std::abs(elem) == doctest::Approx(2.0 * kOmega / 2));
}

TEST_CASE("reachable basis respects the blockade cutoff") {
    auto cfg = uniform_config(3, kOmega, 0.0);
    cfg.blockade(0, 1) = cfg.blockade(1, 0) = 1e6;
    cfg.blockade(0, 2) = cfg.blockade(2, 0) = 1.0;
    cfg.blockade(1, 2) = cfg.blockade(2, 1) = 1.0;
    TruncationRules rules;
    rules.r_max = 2;
    rules.blockade = &cfg.blockade;
    rules.blockade_cutoff = 100.0;
    const std::string seed = "aaa";
    const auto basis = reachable_basis(std::span<const std::string>(&seed, 1), 3, Channel::A, rules);
    CHECK_FALSE(basis->find("rra").has_value());
    CHECK(basis->find("rar").has_value());
    CHECK(basis->find("arr").has_value());
    CHECK(basis->size() == 6);
}

TEST_CASE("krylov propagation is unitary and matches dense") {
    auto cfg = uniform_config(4, kOmega, 3.0);
    cfg.detuning_two_photon = {0.5, -1.0, 0.2, 0.0};
    const auto basis = shared(enumerate_basis(4, 2, 0));
    const auto h = build_hamiltonian(cfg, basis, {Channel::A, 1.0, 0.3, 0.2});
    const auto g = StateVector::basis_state(basis, "aaaa");
    for (double t : {0.1, 0.7, 3.0, 12.0}) {
        const auto k = propagate_krylov(g, h, t);
        const auto e = propagate_exact(g, h, t);
        CHECK(std::abs(k.norm_squared() - 1.0) < 1e-9);
        CHECK((k.amplitudes - e.amplitudes).norm() < 1e-8);
    }
}

TEST_CASE("expm_multiply matches a dense exponential for a non-hermitian matrix") {
    Eigen::MatrixXcd a = Eigen::MatrixXcd::Zero(6, 6);
    for (int i = 0; i < 6; ++i)
        for (int j = 0; j < 6; ++j) a(i, j) = std::complex<double>(std::sin(i + 2.0 * j), i == j ? -0.3 * i : 0.0);
    const SparseMatrixC sa = a.sparseView();
    Eigen::VectorXcd v = Eigen::VectorXcd::Ones(6) / std::sqrt(6.0);
    const Eigen::VectorXcd dense = (std::complex<double>(0, -0.8) * a).exp() * v;
    CHECK((expm_multiply(sa, v, 0.8) - dense).norm() < 1e-9);
}

TEST_CASE("trajectory without dissipation agrees with exact propagation") {
    auto cfg = uniform_config(3, kOmega, 4.0);
    const auto basis = shared(enumerate_basis(3, 2, 0));
    const auto h = build_hamiltonian(cfg, basis, {Channel::A, 1.0, 0.0, 0.0});
    const auto g = StateVector::basis_state(basis, "aaa");
    RngStream rng(1);
    const std::vector<double> rates(3, 0.0);
    const auto traj = propagate_trajectory(g, h, rates, 1.3, 0.01, rng);
    const auto exact = propagate_exact(g, h, 1.3);
    CHECK(traj.jumps.empty());
    for (Eigen::Index k = 0; k < exact.amplitudes.size(); ++k)
        CHECK(std::abs(traj.state.amplitudes(k) - exact.amplitudes(k)) < 1e-6);
}

TEST_CASE("trajectory states stay normalised") {
    auto cfg = uniform_config(2, kOmega, 2.0);
    const auto basis = shared(enumerate_basis(2, 2, 0));
    const auto h = build_hamiltonian(cfg, basis, {Channel::A, 1.0, 0.0, 0.0});
    const auto g = StateVector::basis_state(basis, "aa");
    const std::vector<double> rates{0.8, 1.5};
    for (std::uint64_t s = 0; s < 20; ++s) {
        RngStream rng(s);
        auto psi = g;
        for (int seg = 0; seg < 10; ++seg) {
            psi = propagate_trajectory(psi, h, rates, 0.2, 0.01, rng).state;
            CHECK(psi.norm_squared() == doctest::Approx(1.0).epsilon(1e-12));
        }
    }
}

TEST_CASE("oversized steps are rejected") {
    const auto cfg = uniform_config(1, kOmega, 0.0);
    const auto basis = shared(enumerate_basis(1, 1, 0));
    const auto h = build_hamiltonian(cfg, basis, {Channel::A, 1.0, 0.0, 0.0});
    RngStream rng(3);
    const std::vector<double> rates{50.0};
    CHECK_THROWS_AS(propagate_trajectory(StateVector::basis_state(basis, "a"), h, rates, 1.0, 0.1, rng),
                    StepSizeError);
    CHECK_THROWS_AS(propagate_trajectory(StateVector::basis_state(basis, "a"), h, rates, 1.0, 0.0, rng),
                    std::invalid_argument);
}

TEST_CASE("single dephased atom matches the master equation") {
    const double rate = 0.8;
    const auto cfg = uniform_config(1, kOmega, 0.0, rate);
    const auto basis = shared(enumerate_basis(1, 1, 0));
    const auto h = build_hamiltonian(cfg, basis, {Channel::A, 1.0, 0.0, 0.0});
    const oracle::LindbladDense me({{kOmega, 0.0, rate}}, Eigen::MatrixXd::Zero(1, 1));
    Eigen::MatrixXcd rho0 = Eigen::MatrixXcd::Zero(2, 2);
    rho0(0, 0) = 1.0;

    const int n_traj = 4000;
    const int n_times = 20;
    const double dt_seg = 0.15;
    std::vector<double> p_r(n_times, 0.0);
    const std::vector<double> rates{rate};
    for (int k = 0; k < n_traj; ++k) {
        RngStream rng = RngStream::substream(5, 0, k);
        auto psi = StateVector::basis_state(basis, "a");
        for (int s = 0; s < n_times; ++s) {
            psi = propagate_trajectory(psi, h, rates, dt_seg, 0.01, rng).state;
            p_r[s] += psi.population("r") / n_traj;
        }
    }
    for (int s = 0; s < n_times; ++s) {
        const double expected = me.evolve(rho0, dt_seg * (s + 1))(1, 1).real();
        CHECK(std::abs(p_r[s] - expected) < 0.03);
    }
}

}
