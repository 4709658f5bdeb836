#pragma once

// Truncated many-atom basis over per-atom labels {a, b, r}, drive
// Hamiltonians for the A (a<->r) and B (b<->r) channels, and coherent and
// quantum-jump propagation.

#include <complex>
#include <cstddef>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include <Eigen/Dense>
#include <Eigen/Sparse>

#include "rydfock/ensemble.hpp"
#include "rydfock/rng.hpp"

namespace rydfock::dynamics {

using Complex = std::complex<double>;
using SparseMatrixC = Eigen::SparseMatrix<Complex, Eigen::RowMajor>;

enum class Channel { A, B };

/// Label of the ground state a channel couples to the Rydberg level.
constexpr char ground_label(Channel c) { return c == Channel::A ? 'a' : 'b'; }

inline constexpr std::size_t kDefaultBasisCap = 1'000'000;
inline constexpr std::size_t kDefaultDenseCap = 4096;

class Basis {
public:
    /// Every label string with at most r_max 'r' and b_max 'b', in lexicographic order.
    static Basis enumerate(std::size_t n_atoms, std::size_t r_max, std::size_t b_max,
                           std::size_t cap = kDefaultBasisCap);

    /// Basis over an explicit set of strings; duplicates are merged and the
    /// result is sorted lexicographically.
    static Basis from_states(std::size_t n_atoms, std::size_t r_max, std::size_t b_max,
                             std::vector<std::string> states);

    std::size_t n_atoms() const { return n_atoms_; }
    std::size_t r_max() const { return r_max_; }
    std::size_t b_max() const { return b_max_; }
    std::size_t size() const { return states_.size(); }
    const std::vector<std::string>& states() const { return states_; }
    const std::string& state(std::size_t k) const { return states_[k]; }

    std::optional<std::size_t> find(std::string_view label) const;
    /// Like find, but throws std::out_of_range for unknown labels.
    std::size_t index(std::string_view label) const;

private:
    Basis(std::size_t n, std::size_t r_max, std::size_t b_max, std::vector<std::string> states);

    std::size_t n_atoms_ = 0;
    std::size_t r_max_ = 0;
    std::size_t b_max_ = 0;
    std::vector<std::string> states_;
    std::unordered_map<std::string, std::size_t> index_;
};

using BasisPtr = std::shared_ptr<const Basis>;

struct StateVector {
    BasisPtr basis;
    Eigen::VectorXcd amplitudes;

    static StateVector basis_state(BasisPtr basis, std::string_view label);

    double norm_squared() const { return amplitudes.squaredNorm(); }
    void normalize();
    double population(std::string_view label) const;
};

struct DriveSpec {
    Channel channel = Channel::A;
    double duration = 0.0;
    double global_detuning = 0.0;
    double phase = 0.0;
};

struct SparseHamiltonian {
    BasisPtr basis;
    Channel channel = Channel::A;
    SparseMatrixC matrix;
};

/// Rules that decide which label strings a drive may reach.
struct TruncationRules {
    std::size_t r_max = 2;
    std::size_t b_max = 2;
    // With r_max >= 2, a pair may be doubly excited only if V_ij < blockade_cutoff.
    const Eigen::MatrixXd* blockade = nullptr;
    double blockade_cutoff = 0.0;
    std::size_t cap = kDefaultBasisCap;
};

Basis enumerate_basis(std::size_t n_atoms, std::size_t r_max, std::size_t b_max,
                      std::size_t cap = kDefaultBasisCap);

/// Closure of seeds under single-atom flips ground(channel) <-> r, within the rules.
BasisPtr reachable_basis(std::span<const std::string> seeds, std::size_t n_atoms, Channel channel,
                         const TruncationRules& rules);

SparseHamiltonian build_hamiltonian(const ensemble::AtomConfiguration& config, BasisPtr basis,
                                    const DriveSpec& drive);

/// exp(-iHt) psi by dense diagonalisation. Bases above dense_cap raise ResourceError.
StateVector propagate_exact(const StateVector& psi, const SparseHamiltonian& h, double t,
                            std::size_t dense_cap = kDefaultDenseCap);

/// exp(-iHt) psi by restarted Arnoldi on the sparse matrix.
StateVector propagate_krylov(const StateVector& psi, const SparseHamiltonian& h, double t);

/// exp(-i A t) v for a general complex sparse A, t >= 0, via adaptive Krylov steps.
Eigen::VectorXcd expm_multiply(const SparseMatrixC& a, const Eigen::VectorXcd& v, double t,
                               double tolerance = 1e-11);

struct JumpEvent {
    double time = 0.0;
    std::size_t atom = 0;
};

struct TrajectoryResult {
    StateVector state;
    std::vector<JumpEvent> jumps;
};

/// Quantum-jump evolution under H with dephasing jumps sqrt(rate_i) P_i, where
/// P_i projects atom i onto the channel's ground label. The no-jump state is
/// stepped by dt until its norm falls below a uniform draw; the jump time is
/// then refined by bisection. A step losing more than 10% of the norm raises
/// StepSizeError.
TrajectoryResult propagate_trajectory(const StateVector& psi, const SparseHamiltonian& h,
                                      std::span<const double> jump_rates, double t, double dt,
                                      RngStream& rng);

/// Symmetric single-excitation state N^{-1/2} sum_i |a..r_i..a>.
StateVector make_w_state(BasisPtr basis);

/// Re-express psi in another basis. Components absent from the target are dropped.
StateVector remap(const StateVector& psi, BasisPtr target);

/// Labels whose population exceeds threshold.
std::vector<std::string> support(const StateVector& psi, double threshold = 1e-14);

}  // namespace rydfock::dynamics
