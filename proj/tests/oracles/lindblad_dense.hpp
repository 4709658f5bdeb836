#pragma once

// Dense master-equation reference for a few driven two-level atoms with
// per-atom dephasing. Built directly from the Hamiltonian on the 2^N product
// space, independent of the library's basis and trajectory code.

#include <complex>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <unsupported/Eigen/KroneckerProduct>
#include <unsupported/Eigen/MatrixFunctions>

namespace oracle {

using Complex = std::complex<double>;

struct TwoLevelAtom {
    double rabi = 0.0;       // rad/us
    double detuning = 0.0;   // rad/us, on the Rydberg level
    double dephasing = 0.0;  // rate of sqrt(rate) |g><g|
};

class LindbladDense {
public:
    // Bit i of a product-state index is 1 when atom i is in |r>.
    LindbladDense(std::vector<TwoLevelAtom> atoms, const Eigen::MatrixXd& v, double phase = 0.0)
        : atoms_(std::move(atoms)) {
        const int n = static_cast<int>(atoms_.size());
        dim_ = 1 << n;
        Eigen::MatrixXcd h = Eigen::MatrixXcd::Zero(dim_, dim_);
        const Complex e = std::polar(1.0, phase);
        for (int s = 0; s < dim_; ++s) {
            for (int i = 0; i < n; ++i) {
                if (s >> i & 1) {
                    h(s, s) += atoms_[i].detuning;
                    for (int j = i + 1; j < n; ++j)
                        if (s >> j & 1) h(s, s) += v(i, j);
                } else {
                    const int t = s | (1 << i);
                    // <g|H|r> = Omega/2 e^{i phase}
                    h(s, t) += 0.5 * atoms_[i].rabi * e;
                    h(t, s) += 0.5 * atoms_[i].rabi * std::conj(e);
                }
            }
        }
        const Eigen::MatrixXcd id = Eigen::MatrixXcd::Identity(dim_, dim_);
        const Complex mi(0.0, -1.0);
        super_ = mi * (Eigen::kroneckerProduct(id, h).eval() - Eigen::kroneckerProduct(h.transpose(), id).eval());
        for (int i = 0; i < n; ++i) {
            if (atoms_[i].dephasing == 0.0) continue;
            Eigen::MatrixXcd l = Eigen::MatrixXcd::Zero(dim_, dim_);
            for (int s = 0; s < dim_; ++s)
                if (!(s >> i & 1)) l(s, s) = std::sqrt(atoms_[i].dephasing);
            const Eigen::MatrixXcd ldl = l.adjoint() * l;
            super_ += Eigen::kroneckerProduct(l.conjugate(), l).eval();
            super_ -= 0.5 * Eigen::kroneckerProduct(id, ldl).eval();
            super_ -= 0.5 * Eigen::kroneckerProduct(ldl.transpose(), id).eval();
        }
    }

    int dim() const { return dim_; }

    Eigen::MatrixXcd evolve(const Eigen::MatrixXcd& rho, double t) const {
        const Eigen::MatrixXcd prop = (super_ * t).exp();
        const Eigen::VectorXcd vec = Eigen::Map<const Eigen::VectorXcd>(rho.data(), rho.size());
        const Eigen::VectorXcd out = prop * vec;
        return Eigen::Map<const Eigen::MatrixXcd>(out.data(), dim_, dim_);
    }

    /// Product-state index of a label string over {g, r}; any non-'r' letter counts as ground.
    static int index_of(const std::string& label) {
        int s = 0;
        for (std::size_t i = 0; i < label.size(); ++i)
            if (label[i] == 'r') s |= 1 << i;
        return s;
    }

private:
    std::vector<TwoLevelAtom> atoms_;
    int dim_ = 0;
    Eigen::MatrixXcd super_;
};

}  // namespace oracle
