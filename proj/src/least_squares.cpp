#include "rydfock/least_squares.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>

#include <Eigen/Dense>

namespace rydfock::analytics {

double FitResult::value(std::string_view name) const {
    for (std::size_t k = 0; k < names.size(); ++k)
        if (names[k] == name) return values[k];
    throw std::out_of_range("FitResult: no parameter " + std::string(name));
}

double FitResult::sigma(std::string_view name) const {
    for (std::size_t k = 0; k < names.size(); ++k)
        if (names[k] == name) return sigmas[k];
    throw std::out_of_range("FitResult: no parameter " + std::string(name));
}

namespace {

void clamp_to_bounds(Eigen::VectorXd& x, const LeastSquaresOptions& opt) {
    for (Eigen::Index k = 0; k < x.size(); ++k) {
        const auto i = static_cast<std::size_t>(k);
        if (!opt.lower.empty()) x(k) = std::max(x(k), opt.lower[i]);
        if (!opt.upper.empty()) x(k) = std::min(x(k), opt.upper[i]);
    }
}

}  // namespace

FitResult least_squares(const ResidualFn& residuals, std::size_t n_residuals, std::vector<double> start,
                        std::vector<std::string> names, const LeastSquaresOptions& options) {
    const auto p = static_cast<Eigen::Index>(start.size());
    const auto m = static_cast<Eigen::Index>(n_residuals);
    if (names.size() != start.size()) throw std::invalid_argument("least_squares: names/start size mismatch");

    FitResult result;
    result.names = std::move(names);

    Eigen::VectorXd x = Eigen::Map<const Eigen::VectorXd>(start.data(), p);
    clamp_to_bounds(x, options);
    Eigen::VectorXd r(m), r_trial(m), r_plus(m), r_minus(m);

    auto eval = [&](const Eigen::VectorXd& at, Eigen::VectorXd& out) {
        residuals(std::span<const double>(at.data(), static_cast<std::size_t>(at.size())),
                  std::span<double>(out.data(), static_cast<std::size_t>(out.size())));
        return out.squaredNorm();
    };
    auto jacobian = [&](const Eigen::VectorXd& at) {
        Eigen::MatrixXd jac(m, p);
        for (Eigen::Index k = 0; k < p; ++k) {
            const double h = options.jacobian_step * std::max(1.0, std::abs(at(k)));
            Eigen::VectorXd xp = at, xm = at;
            xp(k) += h;
            xm(k) -= h;
            eval(xp, r_plus);
            eval(xm, r_minus);
            jac.col(k) = (r_plus - r_minus) / (2.0 * h);
        }
        return jac;
    };

    double cost = eval(x, r);
    if (!std::isfinite(cost)) {
        result.values = start;
        result.sigmas.assign(start.size(), 0.0);
        result.rss = cost;
        result.message = "non-finite residuals at starting point";
        return result;
    }

    double lambda = 1e-3;
    Eigen::MatrixXd jac = jacobian(x);
    int it = 0;
    for (; it < options.max_iterations; ++it) {
        const Eigen::MatrixXd jtj = jac.transpose() * jac;
        const Eigen::VectorXd grad = jac.transpose() * r;
        bool improved = false;
        double step_rel = 0.0;
        for (int attempt = 0; attempt < 40; ++attempt) {
            Eigen::MatrixXd damped = jtj;
            for (Eigen::Index k = 0; k < p; ++k) damped(k, k) += lambda * std::max(jtj(k, k), 1e-12);
            const Eigen::VectorXd delta = damped.ldlt().solve(-grad);
            Eigen::VectorXd trial = x + delta;
            clamp_to_bounds(trial, options);
            const double trial_cost = eval(trial, r_trial);
            if (std::isfinite(trial_cost) && trial_cost <= cost) {
                step_rel = 0.0;
                for (Eigen::Index k = 0; k < p; ++k)
                    step_rel = std::max(step_rel, std::abs(trial(k) - x(k)) / std::max(1e-12, std::abs(x(k))));
                x = trial;
                r = r_trial;
                const double previous = cost;
                cost = trial_cost;
                lambda = std::max(lambda / 3.0, 1e-12);
                improved = true;
                if (previous - cost <= 1e-15 * std::max(previous, 1e-300)) step_rel = 0.0;
                break;
            }
            lambda *= 4.0;
        }
        if (!improved || step_rel < options.relative_tolerance) {
            result.converged = true;
            break;
        }
        jac = jacobian(x);
    }
    result.iterations = it;
    if (!result.converged) result.message = "iteration limit reached";

    result.values.assign(x.data(), x.data() + p);
    result.rss = cost;
    result.sigmas.assign(static_cast<std::size_t>(p), 0.0);
    jac = jacobian(x);
    const Eigen::MatrixXd jtj = jac.transpose() * jac;
    Eigen::FullPivLU<Eigen::MatrixXd> lu(jtj);
    if (lu.isInvertible() && m > p) {
        const Eigen::MatrixXd cov = lu.inverse() * (cost / static_cast<double>(m - p));
        for (Eigen::Index k = 0; k < p; ++k)
            result.sigmas[static_cast<std::size_t>(k)] = std::sqrt(std::max(0.0, cov(k, k)));
    } else if (!lu.isInvertible()) {
        for (auto& s : result.sigmas) s = std::numeric_limits<double>::infinity();
        result.message = result.message.empty() ? "singular normal matrix" : result.message;
    }
    return result;
}

}  // namespace rydfock::analytics
