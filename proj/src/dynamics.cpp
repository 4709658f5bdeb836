#include "rydfock/dynamics.hpp"

#include <algorithm>
#include <cmath>
#include <deque>
#include <stdexcept>
#include <unordered_set>

#include <unsupported/Eigen/MatrixFunctions>

namespace rydfock::dynamics {

namespace {

std::size_t count_label(std::string_view s, char c) {
    return static_cast<std::size_t>(std::count(s.begin(), s.end(), c));
}

double binomial(std::size_t n, std::size_t k) {
    if (k > n) return 0.0;
    double out = 1.0;
    for (std::size_t i = 1; i <= k; ++i) out = out * static_cast<double>(n - k + i) / static_cast<double>(i);
    return out;
}

void enumerate_into(std::string& prefix, std::size_t n, std::size_t r_left, std::size_t b_left,
                    std::vector<std::string>& out) {
    if (prefix.size() == n) {
        out.push_back(prefix);
        return;
    }
    prefix.push_back('a');
    enumerate_into(prefix, n, r_left, b_left, out);
    prefix.back() = 'b';
    if (b_left > 0) enumerate_into(prefix, n, r_left, b_left - 1, out);
    prefix.back() = 'r';
    if (r_left > 0) enumerate_into(prefix, n, r_left - 1, b_left, out);
    prefix.pop_back();
}

}  // namespace

Basis::Basis(std::size_t n, std::size_t r_max, std::size_t b_max, std::vector<std::string> states)
    : n_atoms_(n), r_max_(r_max), b_max_(b_max), states_(std::move(states)) {
    index_.reserve(states_.size());
    for (std::size_t k = 0; k < states_.size(); ++k) index_.emplace(states_[k], k);
}

Basis Basis::enumerate(std::size_t n_atoms, std::size_t r_max, std::size_t b_max, std::size_t cap) {
    if (n_atoms == 0) throw std::invalid_argument("enumerate_basis: n_atoms must be >= 1");
    double count = 0.0;
    for (std::size_t r = 0; r <= std::min(r_max, n_atoms); ++r)
        for (std::size_t b = 0; b <= std::min(b_max, n_atoms - r); ++b)
            count += binomial(n_atoms, r) * binomial(n_atoms - r, b);
    if (count > static_cast<double>(cap))
        throw ResourceError("enumerate_basis: " + std::to_string(static_cast<long long>(count)) +
                            " states exceeds cap " + std::to_string(cap));
    std::vector<std::string> states;
    states.reserve(static_cast<std::size_t>(count));
    std::string prefix;
    enumerate_into(prefix, n_atoms, r_max, b_max, states);
    return Basis(n_atoms, r_max, b_max, std::move(states));
}

Basis Basis::from_states(std::size_t n_atoms, std::size_t r_max, std::size_t b_max,
                         std::vector<std::string> states) {
    for (const auto& s : states) {
        if (s.size() != n_atoms) throw std::invalid_argument("Basis: label length differs from n_atoms: " + s);
        if (s.find_first_not_of("abr") != std::string::npos)
            throw std::invalid_argument("Basis: labels must be over {a,b,r}: " + s);
    }
    std::sort(states.begin(), states.end());
    states.erase(std::unique(states.begin(), states.end()), states.end());
    return Basis(n_atoms, r_max, b_max, std::move(states));
}

std::optional<std::size_t> Basis::find(std::string_view label) const {
    const auto it = index_.find(std::string(label));
    if (it == index_.end()) return std::nullopt;
    return it->second;
}

std::size_t Basis::index(std::string_view label) const {
    if (auto k = find(label)) return *k;
    throw std::out_of_range("Basis: unknown label " + std::string(label));
}

Basis enumerate_basis(std::size_t n_atoms, std::size_t r_max, std::size_t b_max, std::size_t cap) {
    return Basis::enumerate(n_atoms, r_max, b_max, cap);
}

StateVector StateVector::basis_state(BasisPtr basis, std::string_view label) {
    StateVector psi{basis, Eigen::VectorXcd::Zero(static_cast<Eigen::Index>(basis->size()))};
    psi.amplitudes(static_cast<Eigen::Index>(basis->index(label))) = 1.0;
    return psi;
}

void StateVector::normalize() {
    const double n = amplitudes.norm();
    if (n == 0.0) throw std::domain_error("StateVector: cannot normalise the zero vector");
    amplitudes /= n;
}

double StateVector::population(std::string_view label) const {
    if (auto k = basis->find(label)) return std::norm(amplitudes(static_cast<Eigen::Index>(*k)));
    return 0.0;
}

BasisPtr reachable_basis(std::span<const std::string> seeds, std::size_t n_atoms, Channel channel,
                         const TruncationRules& rules) {
    const char g = ground_label(channel);
    std::unordered_set<std::string> seen(seeds.begin(), seeds.end());
    std::deque<std::string> queue(seeds.begin(), seeds.end());

    auto pair_allowed = [&](const std::string& s, std::size_t i) {
        for (std::size_t j = 0; j < n_atoms; ++j) {
            if (j == i || s[j] != 'r') continue;
            if (rules.blockade == nullptr) continue;
            if (!((*rules.blockade)(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) <
                  rules.blockade_cutoff))
                return false;
        }
        return true;
    };

    while (!queue.empty()) {
        std::string s = std::move(queue.front());
        queue.pop_front();
        const std::size_t n_r = count_label(s, 'r');
        const std::size_t n_b = count_label(s, 'b');
        for (std::size_t i = 0; i < n_atoms; ++i) {
            std::string t = s;
            if (s[i] == g) {
                if (n_r + 1 > rules.r_max || !pair_allowed(s, i)) continue;
                t[i] = 'r';
            } else if (s[i] == 'r') {
                if (g == 'b' && n_b + 1 > rules.b_max) continue;
                t[i] = g;
            } else {
                continue;
            }
            if (seen.insert(t).second) {
                if (seen.size() > rules.cap)
                    throw ResourceError("reachable_basis: more than " + std::to_string(rules.cap) + " states");
                queue.push_back(std::move(t));
            }
        }
    }
    return std::make_shared<const Basis>(Basis::from_states(
        n_atoms, rules.r_max, rules.b_max, std::vector<std::string>(seen.begin(), seen.end())));
}

SparseHamiltonian build_hamiltonian(const ensemble::AtomConfiguration& config, BasisPtr basis,
                                    const DriveSpec& drive) {
    if (basis->n_atoms() != config.n_atoms)
        throw std::invalid_argument("build_hamiltonian: basis has " + std::to_string(basis->n_atoms()) +
                                    " atoms but configuration has " + std::to_string(config.n_atoms));
    if (config.rabi_two_photon.size() != config.n_atoms || config.detuning_two_photon.size() != config.n_atoms)
        throw std::invalid_argument("build_hamiltonian: per-atom arrays do not match n_atoms");

    const char g = ground_label(drive.channel);
    const Complex phase = std::polar(1.0, drive.phase);
    const std::size_t n = config.n_atoms;
    std::vector<Eigen::Triplet<Complex>> entries;
    entries.reserve(basis->size() * (n + 1));

    for (std::size_t k = 0; k < basis->size(); ++k) {
        const std::string& s = basis->state(k);
        double diag = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
            if (s[i] != 'r') continue;
            diag += config.detuning_two_photon[i] + drive.global_detuning;
            for (std::size_t j = i + 1; j < n; ++j)
                if (s[j] == 'r')
                    diag += config.blockade(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j));
        }
        const auto row = static_cast<Eigen::Index>(k);
        if (diag != 0.0) entries.emplace_back(row, row, Complex(diag, 0.0));

        // Couplings from this ground-labelled atom to its Rydberg partner; the
        // Hermitian partner entry is added from the same loop.
        std::string t = s;
        for (std::size_t i = 0; i < n; ++i) {
            if (s[i] != g) continue;
            t[i] = 'r';
            if (auto l = basis->find(t)) {
                const double half = 0.5 * config.rabi_two_photon[i];
                const auto col = static_cast<Eigen::Index>(*l);
                entries.emplace_back(row, col, half * phase);
                entries.emplace_back(col, row, half * std::conj(phase));
            }
            t[i] = s[i];
        }
    }
    const auto dim = static_cast<Eigen::Index>(basis->size());
    SparseHamiltonian h{basis, drive.channel, SparseMatrixC(dim, dim)};
    h.matrix.setFromTriplets(entries.begin(), entries.end());
    h.matrix.makeCompressed();
    return h;
}

StateVector propagate_exact(const StateVector& psi, const SparseHamiltonian& h, double t, std::size_t dense_cap) {
    if (t < 0.0) throw std::invalid_argument("propagate_exact: t must be >= 0");
    if (h.basis->size() > dense_cap)
        throw ResourceError("propagate_exact: " + std::to_string(h.basis->size()) +
                            " states exceeds dense cap " + std::to_string(dense_cap));
    const Eigen::MatrixXcd dense = Eigen::MatrixXcd(h.matrix);
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXcd> eig(dense);
    const Eigen::VectorXcd coeffs = eig.eigenvectors().adjoint() * psi.amplitudes;
    Eigen::VectorXcd phased(coeffs.size());
    for (Eigen::Index k = 0; k < coeffs.size(); ++k)
        phased(k) = coeffs(k) * std::polar(1.0, -eig.eigenvalues()(k) * t);
    return {psi.basis, eig.eigenvectors() * phased};
}

namespace {

double one_norm(const SparseMatrixC& a) {
    Eigen::VectorXd col_sums = Eigen::VectorXd::Zero(a.cols());
    for (Eigen::Index r = 0; r < a.outerSize(); ++r)
        for (SparseMatrixC::InnerIterator it(a, r); it; ++it) col_sums(it.col()) += std::abs(it.value());
    return col_sums.size() > 0 ? col_sums.maxCoeff() : 0.0;
}

// exp(-i a t) v by Arnoldi. The subspace grows until Saad's error estimate
// for the current step passes; the step is halved if 30 vectors are not enough.
Eigen::VectorXcd krylov_apply(const SparseMatrixC& a, double anorm, const Eigen::VectorXcd& v, double t,
                              double tolerance) {
    const Eigen::Index n = v.size();
    if (t == 0.0 || n == 0 || anorm == 0.0) return v;

    const Eigen::Index m = std::min<Eigen::Index>(30, n);
    const Complex minus_i(0.0, -1.0);
    Eigen::VectorXcd w = v;
    double t_done = 0.0;
    double tau = std::min(t, 8.0 / anorm);

    Eigen::MatrixXcd basis(n, m + 1);
    Eigen::MatrixXcd hess = Eigen::MatrixXcd::Zero(m + 1, m);
    Eigen::VectorXcd p(n);
    Eigen::MatrixXcd f;

    while (t - t_done > 1e-14 * t) {
        const double beta = w.norm();
        if (beta == 0.0) break;
        tau = std::min(tau, t - t_done);
        hess.setZero();
        basis.col(0) = w / beta;
        bool accepted = false;
        Eigen::Index k = 0;
        for (Eigen::Index j = 0; j < m && !accepted; ++j) {
            p.noalias() = a * basis.col(j);
            p *= minus_i;
            for (Eigen::Index i = 0; i <= j; ++i) {
                const Complex c = basis.col(i).dot(p);
                hess(i, j) = c;
                p -= c * basis.col(i);
            }
            const double hn = p.norm();
            k = j + 1;
            const bool happy = hn <= 1e-13 * anorm;
            if (!happy) {
                hess(j + 1, j) = hn;
                basis.col(j + 1) = p / hn;
            }
            const bool check = happy || k == m || k == 4 || (k > 4 && k % 3 == 0);
            if (!check) continue;
            if (happy) {
                f = (tau * hess.topLeftCorner(k, k)).exp();
                accepted = true;
                break;
            }
            // Shrink tau when the full subspace is in use and still too coarse.
            for (;;) {
                f = (tau * hess.topLeftCorner(k, k)).exp();
                const double err = beta * hn * tau * std::abs(f(k - 1, 0));
                if (err <= tolerance * beta) {
                    accepted = true;
                    break;
                }
                if (k < m || tau < 1e-14 * t) break;
                tau *= 0.5;
            }
            if (!accepted && k == m) accepted = true;
        }
        w = beta * (basis.leftCols(k) * f.col(0));
        t_done += tau;
        if (k <= m / 2) tau *= 2.0;
    }
    return w;
}

}  // namespace

Eigen::VectorXcd expm_multiply(const SparseMatrixC& a, const Eigen::VectorXcd& v, double t, double tolerance) {
    if (t < 0.0) throw std::invalid_argument("expm_multiply: t must be >= 0");
    return krylov_apply(a, one_norm(a), v, t, tolerance);
}

StateVector propagate_krylov(const StateVector& psi, const SparseHamiltonian& h, double t) {
    return {psi.basis, expm_multiply(h.matrix, psi.amplitudes, t)};
}

TrajectoryResult propagate_trajectory(const StateVector& psi, const SparseHamiltonian& h,
                                      std::span<const double> jump_rates, double t, double dt, RngStream& rng) {
    if (!(dt > 0.0)) throw std::invalid_argument("propagate_trajectory: dt must be > 0");
    if (t < 0.0) throw std::invalid_argument("propagate_trajectory: t must be >= 0");
    const Basis& basis = *h.basis;
    if (jump_rates.size() != basis.n_atoms())
        throw std::invalid_argument("propagate_trajectory: one jump rate per atom required");

    TrajectoryResult out{psi, {}};
    out.state.normalize();
    if (t == 0.0) return out;

    const char g = ground_label(h.channel);
    const auto dim = static_cast<Eigen::Index>(basis.size());
    Eigen::VectorXd decay = Eigen::VectorXd::Zero(dim);
    for (Eigen::Index k = 0; k < dim; ++k) {
        const std::string& s = basis.state(static_cast<std::size_t>(k));
        for (std::size_t i = 0; i < s.size(); ++i)
            if (s[i] == g) decay(k) += jump_rates[i];
    }
    if (decay.maxCoeff() == 0.0) {
        out.state = propagate_krylov(out.state, h, t);
        out.state.normalize();
        return out;
    }

    SparseMatrixC heff = h.matrix;
    {
        SparseMatrixC damping(dim, dim);
        std::vector<Eigen::Triplet<Complex>> diag;
        for (Eigen::Index k = 0; k < dim; ++k)
            if (decay(k) != 0.0) diag.emplace_back(k, k, Complex(0.0, -0.5 * decay(k)));
        damping.setFromTriplets(diag.begin(), diag.end());
        heff += damping;
    }
    const double anorm = one_norm(heff);

    const auto n_steps = static_cast<std::size_t>(std::max(1.0, std::ceil(t / dt - 1e-9)));
    const double step = t / static_cast<double>(n_steps);

    // Dense step propagator pays off for small bases; otherwise Krylov per step.
    // Rough flop counts: Pade exponential plus one matvec per step, against
    // k Arnoldi vectors per step with Gram-Schmidt and a k x k exponential.
    const double nnz = static_cast<double>(heff.nonZeros());
    const double d = static_cast<double>(dim);
    const double k = std::min(std::min(d, 30.0), 6.0 + 2.0 * anorm * step);
    const double steps = static_cast<double>(n_steps);
    const bool use_dense = 100.0 * d * d * d + steps * 8.0 * d * d <
                           steps * (k * (8.0 * nnz + 8.0 * k * d) + 80.0 * k * k * k);
    Eigen::MatrixXcd step_op;
    if (use_dense) step_op = (Complex(0.0, -step) * Eigen::MatrixXcd(heff)).exp();
    const auto advance = [&](const Eigen::VectorXcd& v, double tau) -> Eigen::VectorXcd {
        if (use_dense && tau == step) return step_op * v;
        return krylov_apply(heff, anorm, v, tau, 1e-11);
    };

    // Waiting-time form: the unnormalised no-jump state evolves until its
    // squared norm falls below a uniform draw, then a jump is applied.
    Eigen::VectorXcd amp = out.state.amplitudes;
    double threshold = rng.uniform();
    double t_now = 0.0;
    std::size_t n = 0;
    while (n < n_steps) {
        const double t_end = n + 1 == n_steps ? t : static_cast<double>(n + 1) * step;
        const double seg = t_end - t_now;
        const Eigen::VectorXcd next = advance(amp, seg == step ? step : seg);
        const double before = amp.squaredNorm();
        const double after = next.squaredNorm();
        if (1.0 - after / before > 0.1)
            throw StepSizeError("propagate_trajectory: norm dropped by " + std::to_string(1.0 - after / before) +
                                " in one step of " + std::to_string(step) + " us; reduce dt");
        if (after > threshold) {
            amp = next;
            t_now = t_end;
            ++n;
            continue;
        }
        // Locate the crossing inside this segment by bisection.
        double lo = 0.0;
        double hi = seg;
        Eigen::VectorXcd at_jump = next;
        for (int it = 0; it < 12; ++it) {
            const double mid = 0.5 * (lo + hi);
            Eigen::VectorXcd trial = krylov_apply(heff, anorm, amp, mid, 1e-11);
            if (trial.squaredNorm() > threshold) {
                lo = mid;
            } else {
                hi = mid;
                at_jump = std::move(trial);
            }
        }
        std::vector<double> weights(basis.n_atoms(), 0.0);
        for (Eigen::Index k = 0; k < dim; ++k) {
            const double pop = std::norm(at_jump(k));
            if (pop == 0.0) continue;
            const std::string& s = basis.state(static_cast<std::size_t>(k));
            for (std::size_t i = 0; i < s.size(); ++i)
                if (s[i] == g) weights[i] += jump_rates[i] * pop;
        }
        double total = 0.0;
        for (double w : weights) total += w;
        const double target = rng.uniform() * total;
        std::size_t atom = 0;
        double acc = 0.0;
        for (; atom + 1 < weights.size(); ++atom) {
            acc += weights[atom];
            if (target < acc) break;
        }
        for (Eigen::Index k = 0; k < dim; ++k)
            if (basis.state(static_cast<std::size_t>(k))[atom] != g) at_jump(k) = 0.0;
        amp = at_jump / at_jump.norm();
        t_now += hi;
        out.jumps.push_back({t_now, atom});
        threshold = rng.uniform();
    }
    out.state.amplitudes = amp / amp.norm();
    return out;
}

StateVector make_w_state(BasisPtr basis) {
    const std::size_t n = basis->n_atoms();
    StateVector psi{basis, Eigen::VectorXcd::Zero(static_cast<Eigen::Index>(basis->size()))};
    const double amp = 1.0 / std::sqrt(static_cast<double>(n));
    for (std::size_t i = 0; i < n; ++i) {
        std::string label(n, 'a');
        label[i] = 'r';
        auto k = basis->find(label);
        if (!k) throw std::invalid_argument("make_w_state: basis lacks single-excitation state " + label);
        psi.amplitudes(static_cast<Eigen::Index>(*k)) = amp;
    }
    return psi;
}

StateVector remap(const StateVector& psi, BasisPtr target) {
    StateVector out{target, Eigen::VectorXcd::Zero(static_cast<Eigen::Index>(target->size()))};
    for (std::size_t k = 0; k < psi.basis->size(); ++k) {
        const Complex c = psi.amplitudes(static_cast<Eigen::Index>(k));
        if (c == Complex(0.0, 0.0)) continue;
        if (auto l = target->find(psi.basis->state(k))) out.amplitudes(static_cast<Eigen::Index>(*l)) = c;
    }
    return out;
}

std::vector<std::string> support(const StateVector& psi, double threshold) {
    std::vector<std::string> labels;
    for (std::size_t k = 0; k < psi.basis->size(); ++k)
        if (std::norm(psi.amplitudes(static_cast<Eigen::Index>(k))) > threshold) labels.push_back(psi.basis->state(k));
    return labels;
}

}  // namespace rydfock::dynamics
