#include "rydfock/analytics.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <limits>
#include <numeric>
#include <stdexcept>

#include <Eigen/Dense>

namespace rydfock::analytics {

namespace {

double decay_factor(double t, double tau) { return std::isinf(tau) ? 1.0 : std::exp(-t / tau); }

double weight_of(const Sample& s) { return s.sigma > 0.0 ? 1.0 / (s.sigma * s.sigma) : 1.0; }

FitResult failed_fit(std::vector<std::string> names, std::string message) {
    FitResult r;
    r.values.assign(names.size(), std::numeric_limits<double>::quiet_NaN());
    r.sigmas.assign(names.size(), std::numeric_limits<double>::quiet_NaN());
    r.names = std::move(names);
    r.rss = std::numeric_limits<double>::quiet_NaN();
    r.message = std::move(message);
    return r;
}

bool is_flat(const std::vector<Sample>& samples) {
    const auto [lo, hi] = std::minmax_element(samples.begin(), samples.end(),
                                              [](const Sample& a, const Sample& b) { return a.y < b.y; });
    return hi->y - lo->y < 1e-12;
}

void sort_by_x(std::vector<Sample>& samples) {
    std::sort(samples.begin(), samples.end(), [](const Sample& a, const Sample& b) {
        if (a.x != b.x) return a.x < b.x;
        if (a.y != b.y) return a.y < b.y;
        return a.sigma < b.sigma;
    });
}

}  // namespace

std::size_t default_n_max(double n_bar) {
    return static_cast<std::size_t>(std::ceil(n_bar + 6.0 * std::sqrt(std::max(n_bar, 0.0)) + 5.0));
}

double poisson_pmf(double n_bar, std::size_t n) {
    if (n_bar < 0.0) throw std::domain_error("poisson_pmf: mean must be >= 0");
    if (n_bar == 0.0) return n == 0 ? 1.0 : 0.0;
    const double k = static_cast<double>(n);
    return std::exp(k * std::log(n_bar) - n_bar - std::lgamma(k + 1.0));
}

double eq1_model(double t, const Eq1Params& p) {
    if (t < 0.0) throw std::invalid_argument("eq1_model: t must be >= 0");
    const std::size_t n_max = p.n_max > 0 ? p.n_max : default_n_max(p.n_bar);
    const double envelope = decay_factor(t, p.tau);
    double sum = 0.0;
    for (std::size_t n = p.include_zero_term ? 0 : 1; n <= n_max; ++n) {
        const double weight = poisson_pmf(p.n_bar, n);
        sum += weight * (1.0 - std::cos(std::sqrt(static_cast<double>(n)) * p.omega_1 * t) * envelope);
    }
    return 0.5 * p.epsilon * sum;
}

FitResult fit_eq1(std::vector<Sample> samples, double omega_1, double tau, bool include_zero_term) {
    std::vector<std::string> names{"n_bar", "epsilon"};
    if (samples.size() < 8) return failed_fit(names, "fit_eq1: at least 8 samples required");
    if (is_flat(samples)) return failed_fit(names, "fit_eq1: data are flat");
    sort_by_x(samples);

    auto model = [&](double n_bar, double eps, double t) {
        return eq1_model(t, {n_bar, eps, omega_1, tau, 0, include_zero_term});
    };

    // Coarse grid in n_bar; epsilon enters linearly and is solved exactly.
    double best_rss = std::numeric_limits<double>::infinity();
    double best_n = 1.0, best_eps = 1.0;
    constexpr int kGrid = 241;
    for (int g = 0; g < kGrid; ++g) {
        const double n_bar = 0.5 * std::pow(50.0, static_cast<double>(g) / (kGrid - 1));
        double num = 0.0, den = 0.0;
        std::vector<double> unit(samples.size());
        for (std::size_t k = 0; k < samples.size(); ++k) {
            unit[k] = model(n_bar, 1.0, samples[k].x);
            const double w = weight_of(samples[k]);
            num += w * unit[k] * samples[k].y;
            den += w * unit[k] * unit[k];
        }
        const double eps = den > 0.0 ? std::clamp(num / den, 0.0, 1.2) : 0.0;
        double rss = 0.0;
        for (std::size_t k = 0; k < samples.size(); ++k) {
            const double r = eps * unit[k] - samples[k].y;
            rss += weight_of(samples[k]) * r * r;
        }
        if (rss < best_rss) {
            best_rss = rss;
            best_n = n_bar;
            best_eps = eps;
        }
    }

    LeastSquaresOptions opt;
    opt.lower = {0.01, 0.0};
    opt.upper = {100.0, 1.2};
    auto residuals = [&](std::span<const double> x, std::span<double> r) {
        for (std::size_t k = 0; k < samples.size(); ++k)
            r[k] = (model(x[0], x[1], samples[k].x) - samples[k].y) * std::sqrt(weight_of(samples[k]));
    };
    return least_squares(residuals, samples.size(), {best_n, best_eps}, names, opt);
}

FitResult fit_rabi(const std::vector<Sample>& input, double omega_guess, std::optional<double> fixed_tau,
                   double tau_guess) {
    std::vector<std::string> names{"amplitude", "omega"};
    if (!fixed_tau) names.emplace_back("tau");
    if (input.size() < 5) return failed_fit(names, "fit_rabi: at least 5 samples required");
    if (is_flat(input)) return failed_fit(names, "fit_rabi: data are flat");
    std::vector<Sample> samples = input;
    sort_by_x(samples);

    const double tau0 = fixed_tau.value_or(tau_guess);
    auto shape = [](double omega, double tau, double t) {
        return 0.5 * (1.0 - std::cos(omega * t) * decay_factor(t, tau));
    };

    double best_rss = std::numeric_limits<double>::infinity();
    double best_omega = omega_guess, best_amp = 1.0;
    constexpr int kGrid = 801;
    for (int g = 0; g < kGrid; ++g) {
        const double omega = omega_guess * (0.2 + 4.8 * static_cast<double>(g) / (kGrid - 1));
        double num = 0.0, den = 0.0;
        for (const auto& s : samples) {
            const double u = shape(omega, tau0, s.x);
            num += weight_of(s) * u * s.y;
            den += weight_of(s) * u * u;
        }
        const double amp = den > 0.0 ? num / den : 0.0;
        double rss = 0.0;
        for (const auto& s : samples) {
            const double r = amp * shape(omega, tau0, s.x) - s.y;
            rss += weight_of(s) * r * r;
        }
        if (rss < best_rss) {
            best_rss = rss;
            best_omega = omega;
            best_amp = amp;
        }
    }

    LeastSquaresOptions opt;
    opt.lower = {-10.0, 0.0};
    opt.upper = {10.0, 1e6};
    std::vector<double> start{best_amp, best_omega};
    if (!fixed_tau) {
        opt.lower.push_back(0.01);
        opt.upper.push_back(1e5);
        start.push_back(tau0);
    }
    auto residuals = [&](std::span<const double> x, std::span<double> r) {
        const double tau = fixed_tau ? *fixed_tau : x[2];
        for (std::size_t k = 0; k < samples.size(); ++k)
            r[k] = (x[0] * shape(x[1], tau, samples[k].x) - samples[k].y) * std::sqrt(weight_of(samples[k]));
    };
    return least_squares(residuals, samples.size(), start, names, opt);
}

NumberDistribution NumberDistribution::from_probabilities(std::vector<double> probabilities, std::size_t total) {
    NumberDistribution d;
    d.probabilities = std::move(probabilities);
    d.total = total;
    double m1 = 0.0, m2 = 0.0;
    for (std::size_t n = 0; n < d.probabilities.size(); ++n) {
        const double k = static_cast<double>(n);
        m1 += k * d.probabilities[n];
        m2 += k * k * d.probabilities[n];
    }
    d.mean = m1;
    d.variance = m2 - m1 * m1;
    d.mandel_q = m1 > 0.0 ? d.variance / m1 - 1.0 : std::numeric_limits<double>::quiet_NaN();
    return d;
}

NumberDistribution NumberDistribution::from_counts(const std::vector<std::size_t>& counts) {
    const std::size_t total = std::accumulate(counts.begin(), counts.end(), std::size_t{0});
    std::vector<double> probs(counts.size(), 0.0);
    if (total > 0)
        for (std::size_t n = 0; n < counts.size(); ++n)
            probs[n] = static_cast<double>(counts[n]) / static_cast<double>(total);
    return from_probabilities(std::move(probs), total);
}

double NumberDistribution::standard_error(std::size_t n) const {
    if (total == 0) return 0.0;
    const double p = probability(n);
    return std::sqrt(p * (1.0 - p) / static_cast<double>(total));
}

double mandel_q(const NumberDistribution& dist) {
    if (!(dist.mean > 0.0)) throw std::domain_error("mandel_q: distribution mean must be > 0");
    return dist.variance / dist.mean - 1.0;
}

namespace {

struct ProbeTerms {
    double c1, s1, c2, s2;
};

ProbeTerms probe_terms(double theta, double omega_1, double tau) {
    const double damp = decay_factor(std::abs(theta) / omega_1, tau);
    const double c1 = 0.5 * (1.0 + std::cos(theta) * damp);
    const double c2 = 0.5 * (1.0 + std::cos(std::sqrt(2.0) * theta) * damp);
    return {c1, 1.0 - c1, c2, 1.0 - c2};
}

void check_populations(std::initializer_list<double> pops) {
    double sum = 0.0;
    for (double p : pops) {
        if (p < 0.0) throw std::invalid_argument("probe model: populations must be nonnegative");
        sum += p;
    }
    if (sum > 1.0 + 1e-9) throw std::invalid_argument("probe model: populations sum above 1");
}

}  // namespace

ProbeProbabilities probe_model_alpha(double theta, const AlphaPopulations& p, double omega_1, double tau) {
    check_populations({p.p00, p.p01, p.p10, p.p11});
    const auto [c1, s1, c2, s2] = probe_terms(theta, omega_1, tau);
    return {p.p00 + p.p01 * s1 + p.p10 * c1, p.p01 * c1 + p.p10 * s1 + p.p11 * c2, p.p11 * s2};
}

ProbeProbabilities probe_model_beta(double theta, const BetaPopulations& q, double omega_1, double tau) {
    check_populations({q.q00, q.q01, q.q02});
    const auto [c1, s1, c2, s2] = probe_terms(theta, omega_1, tau);
    return {q.q00 + q.q01 * s1, q.q01 * c1 + q.q02 * s2, q.q02 * c2};
}

FitResult fit_probe(const std::vector<ProbeSample>& samples, ProbeVariant variant, double omega_1, double tau,
                    double max_rms) {
    std::vector<std::string> names = variant == ProbeVariant::Alpha
                                         ? std::vector<std::string>{"p00", "p01", "p10", "p11"}
                                         : std::vector<std::string>{"q00", "q01", "q02"};
    if (samples.size() < 10) return failed_fit(names, "fit_probe: at least 10 samples required");

    const auto n_par = static_cast<Eigen::Index>(names.size());
    const auto rows = static_cast<Eigen::Index>(3 * samples.size());
    Eigen::MatrixXd design = Eigen::MatrixXd::Zero(rows, n_par);
    Eigen::VectorXd target(rows), weight(rows);
    for (std::size_t k = 0; k < samples.size(); ++k) {
        const auto& s = samples[k];
        const auto [c1, s1, c2, s2] = probe_terms(s.theta, omega_1, tau);
        const auto r = static_cast<Eigen::Index>(3 * k);
        if (variant == ProbeVariant::Alpha) {
            design.row(r) << 1.0, s1, c1, 0.0;
            design.row(r + 1) << 0.0, c1, s1, c2;
            design.row(r + 2) << 0.0, 0.0, 0.0, s2;
        } else {
            design.row(r) << 1.0, s1, 0.0;
            design.row(r + 1) << 0.0, c1, s2;
            design.row(r + 2) << 0.0, 0.0, c2;
        }
        target.segment(r, 3) << s.values.p0, s.values.p1, s.values.p2;
        weight.segment(r, 3).setConstant(s.sigma > 0.0 ? 1.0 / s.sigma : 1.0);
    }
    const Eigen::MatrixXd a = weight.asDiagonal() * design;
    const Eigen::VectorXd y = weight.asDiagonal() * target;

    // Convex QP with few variables: enumerate active sets of {p_k = 0} and {sum p = 1}.
    double best_rss = std::numeric_limits<double>::infinity();
    Eigen::VectorXd best;
    unsigned best_mask = 0;
    bool best_sum_active = false;
    for (unsigned mask = 0; mask < (1u << n_par); ++mask) {
        std::vector<Eigen::Index> free;
        for (Eigen::Index k = 0; k < n_par; ++k)
            if (!(mask & (1u << k))) free.push_back(k);
        for (int sum_active = 0; sum_active < 2; ++sum_active) {
            const auto nf = static_cast<Eigen::Index>(free.size());
            if (nf == 0 && sum_active) continue;
            Eigen::VectorXd x = Eigen::VectorXd::Zero(n_par);
            if (nf > 0) {
                Eigen::MatrixXd af(rows, nf);
                for (Eigen::Index j = 0; j < nf; ++j) af.col(j) = a.col(free[static_cast<std::size_t>(j)]);
                const Eigen::Index dim = nf + (sum_active ? 1 : 0);
                Eigen::MatrixXd kkt = Eigen::MatrixXd::Zero(dim, dim);
                Eigen::VectorXd rhs(dim);
                kkt.topLeftCorner(nf, nf) = 2.0 * af.transpose() * af;
                rhs.head(nf) = 2.0 * af.transpose() * y;
                if (sum_active) {
                    kkt.block(nf, 0, 1, nf).setOnes();
                    kkt.block(0, nf, nf, 1).setOnes();
                    rhs(nf) = 1.0;
                }
                const Eigen::VectorXd sol = kkt.completeOrthogonalDecomposition().solve(rhs);
                for (Eigen::Index j = 0; j < nf; ++j) x(free[static_cast<std::size_t>(j)]) = sol(j);
            }
            if ((x.array() < -1e-12).any() || x.sum() > 1.0 + 1e-12) continue;
            const double rss = (a * x - y).squaredNorm();
            if (rss < best_rss - 1e-15) {
                best_rss = rss;
                best = x;
                best_mask = mask;
                best_sum_active = sum_active != 0;
            }
        }
    }

    FitResult result;
    result.names = names;
    if (best.size() == 0) {
        result = failed_fit(names, "fit_probe: no feasible solution");
        return result;
    }
    best = best.cwiseMax(0.0);
    result.values.assign(best.data(), best.data() + n_par);
    result.rss = best_rss;
    result.converged = true;
    result.iterations = 1;
    result.sigmas.assign(static_cast<std::size_t>(n_par), 0.0);
    const double dof = static_cast<double>(rows - n_par);
    const Eigen::MatrixXd normal = a.transpose() * a;
    Eigen::FullPivLU<Eigen::MatrixXd> lu(normal);
    if (lu.isInvertible() && dof > 0) {
        const Eigen::MatrixXd cov = lu.inverse() * (best_rss / dof);
        for (Eigen::Index k = 0; k < n_par; ++k)
            if (!(best_mask & (1u << k))) result.sigmas[static_cast<std::size_t>(k)] = std::sqrt(std::max(0.0, cov(k, k)));
    }
    const double rms = std::sqrt((design * best - target).squaredNorm() / static_cast<double>(rows));
    result.poor_fit = rms > max_rms;
    result.message = "rms residual " + std::to_string(rms) + (best_sum_active ? "; sum constraint active" : "");
    return result;
}

std::vector<double> two_body_decay(const std::vector<double>& times, double n0, double gamma_1, double beta) {
    std::vector<std::size_t> order(times.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return times[a] < times[b]; });

    auto rate = [&](double n) { return -gamma_1 * n - beta * n * (n - 1.0); };
    const double t_end = times.empty() ? 0.0 : times[order.back()];
    const double scale = gamma_1 + beta * (2.0 * std::abs(n0) + 1.0) + 1e-12;
    const double h_max = std::min(t_end / 2000.0 + 1e-300, 0.02 / scale);

    std::vector<double> out(times.size(), n0);
    double t = 0.0;
    double n = n0;
    for (std::size_t idx : order) {
        const double target = times[idx];
        if (target < 0.0) throw std::invalid_argument("two_body_decay: times must be >= 0");
        while (t < target) {
            const double h = std::min(h_max, target - t);
            const double k1 = rate(n);
            const double k2 = rate(n + 0.5 * h * k1);
            const double k3 = rate(n + 0.5 * h * k2);
            const double k4 = rate(n + h * k3);
            n += h / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
            t += h;
        }
        out[idx] = n;
    }
    return out;
}

FitResult two_body_calibration(const std::vector<Sample>& decay, double gamma_1, bool fit_gamma_1) {
    std::vector<std::string> names{"n0", "beta"};
    if (fit_gamma_1) names.emplace_back("gamma_1");
    if (decay.size() < 6) return failed_fit(names, "two_body_calibration: at least 6 samples required");
    std::vector<Sample> samples = decay;
    sort_by_x(samples);
    // Require a decaying trend: negative correlation between t and signal.
    double mt = 0.0, my = 0.0;
    for (const auto& s : samples) {
        mt += s.x;
        my += s.y;
    }
    mt /= static_cast<double>(samples.size());
    my /= static_cast<double>(samples.size());
    double cov = 0.0;
    for (const auto& s : samples) cov += (s.x - mt) * (s.y - my);
    if (!(cov < 0.0) || !(samples.back().y < samples.front().y))
        return failed_fit(names, "two_body_calibration: signal is not decaying");

    std::vector<double> times;
    for (const auto& s : samples) times.push_back(s.x);
    const double n_start = samples.front().y * std::exp(gamma_1 * samples.front().x);

    LeastSquaresOptions opt;
    opt.lower = {1e-6, 0.0};
    opt.upper = {1e6, 1e3};
    std::vector<double> start{n_start, 0.01};
    if (fit_gamma_1) {
        opt.lower.push_back(0.0);
        opt.upper.push_back(1e3);
        start.push_back(gamma_1);
    }
    auto residuals = [&](std::span<const double> x, std::span<double> r) {
        const double g1 = fit_gamma_1 ? x[2] : gamma_1;
        const auto model = two_body_decay(times, x[0], g1, x[1]);
        for (std::size_t k = 0; k < samples.size(); ++k)
            r[k] = (model[k] - samples[k].y) * std::sqrt(weight_of(samples[k]));
    };
    return least_squares(residuals, samples.size(), start, names, opt);
}

SlopeEstimate slope_through_origin(const std::vector<double>& x, const std::vector<double>& y,
                                   const std::vector<double>& sigma_y) {
    if (x.size() != y.size() || x.empty()) throw std::invalid_argument("slope_through_origin: size mismatch");
    const bool weighted = !sigma_y.empty();
    double sxx = 0.0, sxy = 0.0;
    for (std::size_t k = 0; k < x.size(); ++k) {
        const double w = weighted ? 1.0 / (sigma_y[k] * sigma_y[k]) : 1.0;
        sxx += w * x[k] * x[k];
        sxy += w * x[k] * y[k];
    }
    SlopeEstimate est;
    est.slope = sxy / sxx;
    if (weighted) {
        est.sigma = std::sqrt(1.0 / sxx);
    } else if (x.size() > 1) {
        double rss = 0.0;
        for (std::size_t k = 0; k < x.size(); ++k) rss += std::pow(y[k] - est.slope * x[k], 2);
        est.sigma = std::sqrt(rss / static_cast<double>(x.size() - 1) / sxx);
    }
    return est;
}

}  // namespace rydfock::analytics
