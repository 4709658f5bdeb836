#pragma once

// Closed-form models of collective Rabi flopping over a Poisson atom-number
// distribution, two-atom probe oscillations, number statistics, and the fits
// that go with them.

#include <cstddef>
#include <optional>
#include <vector>

#include "rydfock/least_squares.hpp"

namespace rydfock::analytics {

struct Sample {
    double x = 0.0;
    double y = 0.0;
    double sigma = 0.0;  // <= 0 means unweighted
};

/// Parameters of the Poisson-averaged damped collective oscillation
///   p1(t) = eps/2 * sum_N P(N) [1 - cos(sqrt(N) w1 t) exp(-t/tau)].
struct Eq1Params {
    double n_bar = 1.0;
    double epsilon = 1.0;
    double omega_1 = 1.0;
    double tau = 1.0;
    std::size_t n_max = 0;  // 0 selects default_n_max(n_bar)
    // The N = 0 term contributes eps/2 (1 - exp(-t/tau)); it is kept by default.
    bool include_zero_term = true;
};

/// ceil(n_bar + 6 sqrt(n_bar) + 5).
std::size_t default_n_max(double n_bar);

double poisson_pmf(double n_bar, std::size_t n);

double eq1_model(double t, const Eq1Params& p);

/// Two-parameter fit of (n_bar, epsilon) with omega_1 and tau held fixed.
FitResult fit_eq1(std::vector<Sample> samples, double omega_1, double tau, bool include_zero_term = true);

/// Fit of y = A/2 (1 - cos(w t) exp(-t/tau)). tau is fitted when fixed_tau
/// is empty; pass infinity for undamped data.
FitResult fit_rabi(const std::vector<Sample>& samples, double omega_guess, std::optional<double> fixed_tau,
                   double tau_guess = 5.0);

struct NumberDistribution {
    std::vector<double> probabilities;
    std::size_t total = 0;
    double mean = 0.0;
    double variance = 0.0;
    double mandel_q = 0.0;  // NaN when mean == 0

    static NumberDistribution from_probabilities(std::vector<double> probabilities, std::size_t total = 0);
    static NumberDistribution from_counts(const std::vector<std::size_t>& counts);

    double probability(std::size_t n) const { return n < probabilities.size() ? probabilities[n] : 0.0; }
    /// Binomial standard error of probability(n).
    double standard_error(std::size_t n) const;
};

double mandel_q(const NumberDistribution& dist);

struct AlphaPopulations {
    double p00 = 0.0;
    double p01 = 0.0;
    double p10 = 0.0;
    double p11 = 0.0;
};

struct BetaPopulations {
    double q00 = 0.0;
    double q01 = 0.0;
    double q02 = 0.0;
};

struct ProbeProbabilities {
    double p0 = 0.0;
    double p1 = 0.0;
    double p2 = 0.0;
};

/// Detected N_b probabilities after the A1 B1 A2 B2(theta) sequence.
ProbeProbabilities probe_model_alpha(double theta, const AlphaPopulations& pops, double omega_1, double tau);

/// Detected N_b probabilities after Rydberg ejection and a B3(theta) probe.
ProbeProbabilities probe_model_beta(double theta, const BetaPopulations& pops, double omega_1, double tau);

enum class ProbeVariant { Alpha, Beta };

struct ProbeSample {
    double theta = 0.0;
    ProbeProbabilities values;
    double sigma = 0.0;
};

/// Populations >= 0 with sum <= 1 fitted jointly to all three channels.
/// poor_fit is set when the RMS residual exceeds max_rms.
FitResult fit_probe(const std::vector<ProbeSample>& samples, ProbeVariant variant, double omega_1, double tau,
                    double max_rms = 0.03);

/// N(t) under dN/dt = -gamma_1 N - beta N (N - 1), integrated with RK4.
std::vector<double> two_body_decay(const std::vector<double>& times, double n0, double gamma_1, double beta);

/// Fit (n0, beta) to a fluorescence signal in atom-number units; t in ms.
/// When fit_gamma_1 is set the one-body rate is also a free parameter.
FitResult two_body_calibration(const std::vector<Sample>& decay, double gamma_1, bool fit_gamma_1 = false);

struct SlopeEstimate {
    double slope = 0.0;
    double sigma = 0.0;
};

/// Weighted least-squares slope of a line through the origin.
SlopeEstimate slope_through_origin(const std::vector<double>& x, const std::vector<double>& y,
                                   const std::vector<double>& sigma_y = {});

}  // namespace rydfock::analytics
