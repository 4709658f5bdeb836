#pragma once

#include <functional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace rydfock::analytics {

struct FitResult {
    std::vector<std::string> names;
    std::vector<double> values;
    std::vector<double> sigmas;
    double rss = 0.0;
    bool converged = false;
    // Set when the optimum is found but the model visibly fails to describe the data.
    bool poor_fit = false;
    int iterations = 0;
    std::string message;

    double value(std::string_view name) const;
    double sigma(std::string_view name) const;
};

using ResidualFn = std::function<void(std::span<const double> params, std::span<double> residuals)>;

struct LeastSquaresOptions {
    int max_iterations = 200;
    double relative_tolerance = 1e-8;
    double jacobian_step = 1e-6;
    std::vector<double> lower;  // empty = unbounded
    std::vector<double> upper;
};

/// Damped Gauss-Newton (Levenberg-Marquardt style damping) with central
/// difference Jacobians. Bounds are enforced by clamping trial points.
/// One-sigma uncertainties come from (J^T J)^-1 scaled by rss / (m - p).
FitResult least_squares(const ResidualFn& residuals, std::size_t n_residuals, std::vector<double> start,
                        std::vector<std::string> names, const LeastSquaresOptions& options = {});

}  // namespace rydfock::analytics
