#include "rydfock/rng.hpp"

#include <cmath>
#include <numbers>

namespace rydfock {

double RngStream::normal() {
    if (has_spare_) {
        has_spare_ = false;
        return spare_;
    }
    // 1 - u lies in (0, 1], so the log is finite.
    const double u1 = 1.0 - uniform();
    const double u2 = uniform();
    const double radius = std::sqrt(-2.0 * std::log(u1));
    const double angle = 2.0 * std::numbers::pi * u2;
    spare_ = radius * std::sin(angle);
    has_spare_ = true;
    return radius * std::cos(angle);
}

std::uint64_t RngStream::poisson(double mean) {
    if (!(mean > 0.0)) return 0;
    const double u = uniform();
    double pmf = std::exp(-mean);
    double cdf = pmf;
    std::uint64_t n = 0;
    // Cut off far beyond any reachable tail to guard against u ~ 1 with rounding.
    const auto limit = static_cast<std::uint64_t>(mean + 40.0 * std::sqrt(mean) + 50.0);
    while (u >= cdf && n < limit) {
        ++n;
        pmf *= mean / static_cast<double>(n);
        cdf += pmf;
    }
    return n;
}

}  // namespace rydfock
