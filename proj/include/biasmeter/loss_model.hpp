#pragma once

#include "biasmeter/dataset.hpp"
#include "biasmeter/gp_sampler.hpp"

#include <cstddef>
#include <cstdint>
#include <string>
#include <utility>
#include <vector>

namespace biasmeter {

/// Per-hypothesis test losses, each the mean over the n*k test entries of the
/// squared prediction error.
struct LossSamples {
    std::vector<double> losses;
    std::string normalization = "mean_per_element";
    std::string source_manifest;

    void validate(std::size_t min_count = 1) const;
};

LossSamples test_losses(const HypothesisSamples& samples, const Dataset& data);

enum class FitMethod { mom, mle };

std::string to_string(FitMethod method);
FitMethod parse_fit_method(const std::string& name);

/// Loss model L = s * X with X ~ noncentral chi-squared(dof, noncentrality).
struct ChiSquaredFit {
    double scale = 1.0;
    double dof = 1.0;
    double noncentrality = 0.0;
    FitMethod method = FitMethod::mom;
    double log_likelihood = 0.0;

    void validate() const;
    double mean() const;
    double variance() const;
    double third_central_moment() const;
};

/// Closed-form method of moments on the mean, variance and third central
/// moment (population estimators). A negative noncentrality is clamped to 0
/// and (s, k) refit from mean and variance; dof is kept >= 1e-3.
ChiSquaredFit fit_mom(const LossSamples& losses);

double ncx2_logpdf(double x, const ChiSquaredFit& fit);
double ncx2_log_cdf(double x, const ChiSquaredFit& fit);
double log_likelihood(const std::vector<double>& losses, const ChiSquaredFit& fit);

inline constexpr double kMleNoncentralityFloor = 1e-8;

/// Nelder-Mead over (log s, log k, log(lambda + 1e-8)) starting at `init`;
/// stops when the simplex size drops below 1e-8 or after 2000 iterations per
/// restart. The result's likelihood never falls below the initial one.
ChiSquaredFit fit_mle(const LossSamples& losses, const ChiSquaredFit& init);

struct SankaranTerms {
    double h = 0.0;
    double p = 0.0;
    double m = 0.0;
    double y = 0.0; // argument of Phi
};

/// Sankaran's normal approximation to the CDF of an unscaled noncentral
/// chi-squared at z. Returns Phi(y) and the intermediate terms.
std::pair<double, SankaranTerms> sankaran_cdf(double z, double dof, double lambda);

enum class TailRequest { automatic, exact, sankaran, chernoff };
enum class TailMode { exact, sankaran, sankaran_chernoff };

std::string to_string(TailRequest request);
std::string to_string(TailMode mode);
TailRequest parse_tail_request(const std::string& name);
TailMode parse_tail_mode(const std::string& name);

/// Below this Phi argument the Chernoff-style tail replaces Phi.
inline constexpr double kChernoffSwitch = -6.0;

/// Gaussian log-tail used beyond the switch: -y^2/2 plus a constant chosen so
/// the value matches log Phi at the switch point.
double chernoff_log_tail(double y);

/// log P(L <= epsilon) under the fit.
///   exact     Poisson-mixture series
///   sankaran  log Phi(y), evaluated accurately at any y
///   chernoff  Sankaran, with the Chernoff tail when y < -6
///   automatic exact when dof <= 20 and lambda <= 50, otherwise chernoff
std::pair<double, TailMode> log_cdf(double epsilon, const ChiSquaredFit& fit, TailRequest request);

struct BiasEstimate {
    double epsilon = 0.0;
    double log_cdf = 0.0;
    double bias_nats = 0.0;
    double bias_bits = 0.0;
    TailMode tail_mode = TailMode::exact;
};

/// Required inductive bias -log P(L <= epsilon), in nats and bits.
BiasEstimate inductive_bias(const ChiSquaredFit& fit, double epsilon, TailRequest request);

inline constexpr double kAccuracyEpsilonFloor = 1e-12;

/// Bias provided by a model of the given accuracy: epsilon = 1 - accuracy.
BiasEstimate bias_of_model(double accuracy, const ChiSquaredFit& fit, TailRequest request);

struct ConvergenceRow {
    std::size_t size = 0;
    std::size_t subsamples = 0;
    std::vector<double> moments;   // power moments 1..3 averaged over subsamples
    double max_deviation = 0.0;    // largest relative moment deviation seen at this size
    double mean_squared_deviation = 0.0;
    double envelope = 0.0;         // sqrt(r log(2r / sigma)) / size
};

struct ConvergenceDiagnostic {
    std::vector<ConvergenceRow> rows;
    std::vector<double> full_moments;
    double slope = 0.0; // log-log slope of mean_squared_deviation against size
    double sigma = 0.05;
    int moment_count = 3;
};

/// Moment-estimation error as a function of sample size. The losses are
/// shuffled once (seeded) and cut into floor(S / n) disjoint subsamples per
/// size n; each subsample's relative deviation from the full-sample power
/// moments is its largest deviation over the three moments.
ConvergenceDiagnostic convergence_diagnostic(const LossSamples& losses,
                                             const std::vector<std::size_t>& sizes, double sigma,
                                             std::uint64_t seed);

struct KsResult {
    double statistic = 0.0;
    double p_value = 0.0;
};

/// One-sample Kolmogorov-Smirnov test of the losses against the fitted CDF.
KsResult ks_test(const LossSamples& losses, const ChiSquaredFit& fit);

/// Two-sample KS distance between empirical distributions.
double ks_distance(std::vector<double> a, std::vector<double> b);

struct HistogramBin {
    double left = 0.0;
    double right = 0.0;
    std::size_t count = 0;
    double fitted_pdf = 0.0; // fitted density at the bin centre
};

std::vector<HistogramBin> loss_histogram(const LossSamples& losses, const ChiSquaredFit& fit,
                                         std::size_t bins);

} // namespace biasmeter
