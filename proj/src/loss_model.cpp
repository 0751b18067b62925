#include "biasmeter/loss_model.hpp"

#include "biasmeter/error.hpp"
#include "biasmeter/special.hpp"

#include <gsl/gsl_errno.h>
#include <gsl/gsl_multimin.h>
#include <gsl/gsl_vector.h>

#include <algorithm>
#include <cmath>
#include <limits>
#include <memory>
#include <numbers>
#include <numeric>
#include <random>
#include <sstream>

namespace biasmeter {

void LossSamples::validate(std::size_t min_count) const {
    if (losses.size() < min_count)
        throw UsageError("need at least " + std::to_string(min_count) + " loss samples, got " +
                         std::to_string(losses.size()));
    for (double l : losses)
        if (!std::isfinite(l) || l < 0.0) throw DataError("loss samples must be finite and >= 0");
}

LossSamples test_losses(const HypothesisSamples& samples, const Dataset& data) {
    if (samples.count() == 0) throw UsageError("test_losses: no hypothesis samples");
    LossSamples out;
    out.losses.reserve(samples.count());
    for (std::size_t s = 0; s < samples.count(); ++s) {
        const Eigen::MatrixXd& pred = samples.predictions[s];
        if (pred.rows() != data.test_y.rows() || pred.cols() != data.test_y.cols())
            throw DataError("test_losses: sample " + std::to_string(s) + " has shape " +
                            std::to_string(pred.rows()) + "x" + std::to_string(pred.cols()) +
                            ", test targets are " + std::to_string(data.test_y.rows()) + "x" +
                            std::to_string(data.test_y.cols()));
        out.losses.push_back((pred - data.test_y).squaredNorm() / static_cast<double>(pred.size()));
    }
    return out;
}

std::string to_string(FitMethod method) { return method == FitMethod::mom ? "mom" : "mle"; }

FitMethod parse_fit_method(const std::string& name) {
    if (name == "mom") return FitMethod::mom;
    if (name == "mle") return FitMethod::mle;
    throw UsageError("unknown fit method '" + name + "' (expected mom or mle)");
}

void ChiSquaredFit::validate() const {
    if (!(scale > 0.0) || !(dof > 0.0) || !(noncentrality >= 0.0) || !std::isfinite(scale) ||
        !std::isfinite(dof) || !std::isfinite(noncentrality))
        throw UsageError("chi-squared fit needs scale > 0, dof > 0 and noncentrality >= 0");
}

double ChiSquaredFit::mean() const { return scale * (dof + noncentrality); }
double ChiSquaredFit::variance() const { return scale * scale * (2.0 * dof + 4.0 * noncentrality); }
double ChiSquaredFit::third_central_moment() const {
    return scale * scale * scale * (8.0 * dof + 24.0 * noncentrality);
}

double ncx2_logpdf(double x, const ChiSquaredFit& fit) {
    if (!(x > 0.0)) return -std::numeric_limits<double>::infinity();
    return special::ncx2_logpdf_standard(x / fit.scale, fit.dof, fit.noncentrality) - std::log(fit.scale);
}

double ncx2_log_cdf(double x, const ChiSquaredFit& fit) {
    return special::ncx2_log_cdf_standard(x / fit.scale, fit.dof, fit.noncentrality);
}

double log_likelihood(const std::vector<double>& losses, const ChiSquaredFit& fit) {
    double total = 0.0;
    for (double l : losses) total += ncx2_logpdf(l, fit);
    return total;
}

namespace {

constexpr double kMinDof = 1e-3;

struct SampleMoments {
    double mean = 0.0;
    double var = 0.0;
    double third = 0.0;
};

SampleMoments central_moments(const std::vector<double>& xs) {
    SampleMoments m;
    const double count = static_cast<double>(xs.size());
    for (double x : xs) m.mean += x;
    m.mean /= count;
    for (double x : xs) {
        const double d = x - m.mean;
        m.var += d * d;
        m.third += d * d * d;
    }
    m.var /= count;
    m.third /= count;
    return m;
}

// Central fit (lambda = 0) matching mean and variance.
ChiSquaredFit central_fit(const SampleMoments& m) {
    ChiSquaredFit fit;
    fit.scale = m.var / (2.0 * m.mean);
    fit.dof = std::max(2.0 * m.mean * m.mean / m.var, kMinDof);
    fit.noncentrality = 0.0;
    return fit;
}

} // namespace

ChiSquaredFit fit_mom(const LossSamples& losses) {
    losses.validate(3);
    const SampleMoments m = central_moments(losses.losses);
    if (!(m.var > 0.0) || !(m.mean > 0.0))
        throw DataError("fit_mom: losses have zero variance; the chi-squared model is degenerate");

    // mean = s(k + l), var = 2 s^2 (k + l + l), third = 8 s^3 (k + l + 2l)
    // eliminate k and l: 8 mean s^2 - 8 var s + third = 0, smaller root keeps l >= 0.
    ChiSquaredFit fit;
    const double disc = m.var * m.var - 0.5 * m.mean * m.third;
    bool central = disc < 0.0;
    if (!central) {
        const double s = (m.var - std::sqrt(disc)) / (2.0 * m.mean);
        const double lambda = m.var / (2.0 * s * s) - m.mean / s;
        if (!(s > 0.0) || !(lambda >= 0.0) || !std::isfinite(lambda)) {
            central = true;
        } else {
            fit.scale = s;
            fit.noncentrality = lambda;
            fit.dof = m.mean / s - lambda;
            if (fit.dof < kMinDof) {
                // Fix k at the floor and match mean and variance with (s, l):
                // 2k s^2 - 4 mean s + var = 0.
                const double k = kMinDof;
                const double rad = 16.0 * m.mean * m.mean - 8.0 * k * m.var;
                if (rad < 0.0) {
                    central = true;
                } else {
                    fit.dof = k;
                    fit.scale = (4.0 * m.mean - std::sqrt(rad)) / (4.0 * k);
                    fit.noncentrality = std::max(m.mean / fit.scale - k, 0.0);
                }
            }
        }
    }
    if (central) fit = central_fit(m);
    fit.method = FitMethod::mom;
    fit.validate();
    fit.log_likelihood = log_likelihood(losses.losses, fit);
    return fit;
}

namespace {

struct MleProblem {
    const std::vector<double>* losses;
};

ChiSquaredFit unpack(const gsl_vector* v) {
    ChiSquaredFit fit;
    fit.scale = std::exp(gsl_vector_get(v, 0));
    fit.dof = std::exp(gsl_vector_get(v, 1));
    fit.noncentrality = std::max(std::exp(gsl_vector_get(v, 2)) - kMleNoncentralityFloor, 0.0);
    fit.method = FitMethod::mle;
    return fit;
}

double negative_log_likelihood(const gsl_vector* v, void* params) {
    const auto* problem = static_cast<const MleProblem*>(params);
    const ChiSquaredFit fit = unpack(v);
    if (!std::isfinite(fit.scale) || !std::isfinite(fit.dof) || !(fit.scale > 0.0) || !(fit.dof > 0.0))
        return std::numeric_limits<double>::max();
    const double ll = log_likelihood(*problem->losses, fit);
    return std::isfinite(ll) ? -ll : std::numeric_limits<double>::max();
}

struct MinimizerDeleter {
    void operator()(gsl_multimin_fminimizer* m) const { gsl_multimin_fminimizer_free(m); }
};
struct VectorDeleter {
    void operator()(gsl_vector* v) const { gsl_vector_free(v); }
};

} // namespace

ChiSquaredFit fit_mle(const LossSamples& losses, const ChiSquaredFit& init) {
    losses.validate(3);
    init.validate();
    const double init_ll = log_likelihood(losses.losses, init);
    if (!std::isfinite(init_ll))
        throw NumericalError("fit_mle: log-likelihood at the initial parameters is not finite");

    gsl_set_error_handler_off();
    MleProblem problem{&losses.losses};
    gsl_multimin_function objective{&negative_log_likelihood, 3, &problem};

    std::unique_ptr<gsl_vector, VectorDeleter> x(gsl_vector_alloc(3));
    std::unique_ptr<gsl_vector, VectorDeleter> step(gsl_vector_alloc(3));
    gsl_vector_set(x.get(), 0, std::log(init.scale));
    gsl_vector_set(x.get(), 1, std::log(init.dof));
    gsl_vector_set(x.get(), 2, std::log(init.noncentrality + kMleNoncentralityFloor));

    constexpr int kMaxIterations = 2000;
    constexpr int kMaxRestarts = 8;
    constexpr double kSizeTol = 1e-8;
    std::unique_ptr<gsl_multimin_fminimizer, MinimizerDeleter> solver(
        gsl_multimin_fminimizer_alloc(gsl_multimin_fminimizer_nmsimplex2, 3));

    double best = -init_ll;
    // Restart from the incumbent until a fresh simplex stops improving it.
    for (int restart = 0; restart < kMaxRestarts; ++restart) {
        gsl_vector_set_all(step.get(), restart == 0 ? 0.1 : 0.02);
        gsl_multimin_fminimizer_set(solver.get(), &objective, x.get(), step.get());
        for (int iter = 0; iter < kMaxIterations; ++iter) {
            if (gsl_multimin_fminimizer_iterate(solver.get()) != GSL_SUCCESS) break;
            if (gsl_multimin_test_size(gsl_multimin_fminimizer_size(solver.get()), kSizeTol) == GSL_SUCCESS)
                break;
        }
        const double value = gsl_multimin_fminimizer_minimum(solver.get());
        const double gain = best - value;
        if (value < best) {
            best = value;
            gsl_vector_memcpy(x.get(), gsl_multimin_fminimizer_x(solver.get()));
        }
        if (!(gain > 1e-9)) break;
    }

    ChiSquaredFit fit = unpack(x.get());
    fit.log_likelihood = log_likelihood(losses.losses, fit);
    if (!(fit.log_likelihood >= init_ll)) {
        fit = init;
        fit.method = FitMethod::mle;
        fit.log_likelihood = init_ll;
    }
    return fit;
}

std::pair<double, SankaranTerms> sankaran_cdf(double z, double dof, double lambda) {
    if (!(dof + lambda > 0.0) || !(lambda >= 0.0))
        throw UsageError("sankaran_cdf: needs dof + lambda > 0 and lambda >= 0");
    SankaranTerms t;
    const double kl = dof + lambda;
    const double k2l = dof + 2.0 * lambda;
    t.h = 1.0 - (2.0 / 3.0) * kl * (dof + 3.0 * lambda) / (k2l * k2l);
    t.p = k2l / (kl * kl);
    t.m = (t.h - 1.0) * (1.0 - 3.0 * t.h);
    const double centre = 1.0 + t.h * t.p * (t.h - 1.0 - 0.5 * (2.0 - t.h) * t.m * t.p);
    const double spread = t.h * std::sqrt(2.0 * t.p) * (1.0 + 0.5 * t.m * t.p);
    const double ratio = z > 0.0 ? std::pow(z / kl, t.h) : 0.0;
    t.y = (ratio - centre) / spread;
    return {0.5 * std::erfc(-t.y / std::numbers::sqrt2), t};
}

std::string to_string(TailRequest request) {
    switch (request) {
    case TailRequest::automatic: return "auto";
    case TailRequest::exact: return "exact";
    case TailRequest::sankaran: return "sankaran";
    case TailRequest::chernoff: return "chernoff";
    }
    return "auto";
}

std::string to_string(TailMode mode) {
    switch (mode) {
    case TailMode::exact: return "exact";
    case TailMode::sankaran: return "sankaran";
    case TailMode::sankaran_chernoff: return "sankaran_chernoff";
    }
    return "exact";
}

TailRequest parse_tail_request(const std::string& name) {
    if (name == "auto") return TailRequest::automatic;
    if (name == "exact") return TailRequest::exact;
    if (name == "sankaran") return TailRequest::sankaran;
    if (name == "chernoff") return TailRequest::chernoff;
    throw UsageError("unknown tail mode '" + name + "' (expected auto, exact, sankaran or chernoff)");
}

TailMode parse_tail_mode(const std::string& name) {
    if (name == "exact") return TailMode::exact;
    if (name == "sankaran") return TailMode::sankaran;
    if (name == "sankaran_chernoff") return TailMode::sankaran_chernoff;
    throw DataError("unknown tail mode '" + name + "'");
}

double chernoff_log_tail(double y) {
    static const double offset =
        special::log_normal_cdf(kChernoffSwitch) + 0.5 * kChernoffSwitch * kChernoffSwitch;
    return -0.5 * y * y + offset;
}

std::pair<double, TailMode> log_cdf(double epsilon, const ChiSquaredFit& fit, TailRequest request) {
    if (!(epsilon > 0.0) || std::isnan(epsilon)) throw UsageError("log_cdf: epsilon must be > 0");
    fit.validate();
    const double z = epsilon / fit.scale;
    if (request == TailRequest::automatic)
        request = (fit.dof <= 20.0 && fit.noncentrality <= 50.0) ? TailRequest::exact : TailRequest::chernoff;

    double value = 0.0;
    TailMode mode = TailMode::exact;
    if (request == TailRequest::exact) {
        value = special::ncx2_log_cdf_standard(z, fit.dof, fit.noncentrality);
    } else {
        const double y = sankaran_cdf(z, fit.dof, fit.noncentrality).second.y;
        if (request == TailRequest::chernoff && y < kChernoffSwitch) {
            value = chernoff_log_tail(y);
            mode = TailMode::sankaran_chernoff;
        } else {
            value = special::log_normal_cdf(y);
            mode = TailMode::sankaran;
        }
    }
    if (!std::isfinite(value)) value = std::isnan(value) ? 0.0 : -std::numeric_limits<double>::max();
    return {std::min(value, 0.0), mode};
}

BiasEstimate inductive_bias(const ChiSquaredFit& fit, double epsilon, TailRequest request) {
    const auto [value, mode] = log_cdf(epsilon, fit, request);
    BiasEstimate est;
    est.epsilon = epsilon;
    est.log_cdf = value;
    est.bias_nats = std::max(-value, 0.0);
    est.bias_bits = est.bias_nats / std::numbers::ln2;
    est.tail_mode = mode;
    return est;
}

BiasEstimate bias_of_model(double accuracy, const ChiSquaredFit& fit, TailRequest request) {
    if (!(accuracy >= 0.0 && accuracy <= 1.0))
        throw UsageError("accuracy must lie in [0, 1]");
    const double epsilon = std::max(1.0 - accuracy, kAccuracyEpsilonFloor);
    return inductive_bias(fit, epsilon, request);
}

ConvergenceDiagnostic convergence_diagnostic(const LossSamples& losses,
                                             const std::vector<std::size_t>& sizes, double sigma,
                                             std::uint64_t seed) {
    losses.validate(1);
    if (sizes.empty()) throw UsageError("convergence_diagnostic: no subsample sizes");
    if (!(sigma > 0.0 && sigma < 1.0)) throw UsageError("convergence_diagnostic: sigma must be in (0, 1)");
    const std::size_t total = losses.losses.size();
    for (std::size_t i = 0; i < sizes.size(); ++i) {
        if (sizes[i] == 0 || sizes[i] > total)
            throw UsageError("convergence_diagnostic: size " + std::to_string(sizes[i]) +
                             " outside [1, " + std::to_string(total) + "]");
        if (i > 0 && sizes[i] <= sizes[i - 1])
            throw UsageError("convergence_diagnostic: sizes must be strictly increasing");
    }

    ConvergenceDiagnostic diag;
    diag.sigma = sigma;
    const int r = diag.moment_count;
    auto power_moments = [r](auto first, auto last) {
        std::vector<double> out(static_cast<std::size_t>(r), 0.0);
        double count = 0.0;
        for (auto it = first; it != last; ++it) {
            double p = 1.0;
            for (int l = 0; l < r; ++l) {
                p *= *it;
                out[static_cast<std::size_t>(l)] += p;
            }
            count += 1.0;
        }
        for (double& v : out) v /= count;
        return out;
    };

    std::vector<double> shuffled = losses.losses;
    std::mt19937_64 rng(seed);
    std::shuffle(shuffled.begin(), shuffled.end(), rng);
    diag.full_moments = power_moments(shuffled.begin(), shuffled.end());

    std::vector<double> log_n;
    std::vector<double> log_dev;
    for (std::size_t n : sizes) {
        ConvergenceRow row;
        row.size = n;
        row.subsamples = total / n;
        row.moments.assign(static_cast<std::size_t>(r), 0.0);
        double sq_sum = 0.0;
        for (std::size_t b = 0; b < row.subsamples; ++b) {
            const auto first = shuffled.begin() + static_cast<std::ptrdiff_t>(b * n);
            const std::vector<double> mom = power_moments(first, first + static_cast<std::ptrdiff_t>(n));
            double worst = 0.0;
            for (int l = 0; l < r; ++l) {
                const auto li = static_cast<std::size_t>(l);
                row.moments[li] += mom[li] / static_cast<double>(row.subsamples);
                const double ref = diag.full_moments[li];
                const double dev = ref != 0.0 ? std::abs(mom[li] - ref) / std::abs(ref) : std::abs(mom[li]);
                worst = std::max(worst, dev);
            }
            row.max_deviation = std::max(row.max_deviation, worst);
            sq_sum += worst * worst;
        }
        row.mean_squared_deviation = sq_sum / static_cast<double>(row.subsamples);
        row.envelope = std::sqrt(r * std::log(2.0 * r / sigma)) / static_cast<double>(n);
        if (row.mean_squared_deviation > 0.0) {
            log_n.push_back(std::log(static_cast<double>(n)));
            log_dev.push_back(std::log(row.mean_squared_deviation));
        }
        diag.rows.push_back(std::move(row));
    }

    diag.slope = std::numeric_limits<double>::quiet_NaN();
    if (log_n.size() >= 2) {
        const double mx = std::accumulate(log_n.begin(), log_n.end(), 0.0) / static_cast<double>(log_n.size());
        const double my = std::accumulate(log_dev.begin(), log_dev.end(), 0.0) / static_cast<double>(log_dev.size());
        double sxy = 0.0;
        double sxx = 0.0;
        for (std::size_t i = 0; i < log_n.size(); ++i) {
            sxy += (log_n[i] - mx) * (log_dev[i] - my);
            sxx += (log_n[i] - mx) * (log_n[i] - mx);
        }
        diag.slope = sxy / sxx;
    }
    return diag;
}

namespace {

// Asymptotic Kolmogorov survival function.
double kolmogorov_q(double lambda) {
    if (lambda < 0.2) return 1.0;
    double sum = 0.0;
    double sign = 1.0;
    for (int j = 1; j <= 100; ++j) {
        const double term = sign * std::exp(-2.0 * j * j * lambda * lambda);
        sum += term;
        if (std::abs(term) < 1e-16 * std::abs(sum)) break;
        sign = -sign;
    }
    return std::clamp(2.0 * sum, 0.0, 1.0);
}

} // namespace

KsResult ks_test(const LossSamples& losses, const ChiSquaredFit& fit) {
    losses.validate(1);
    fit.validate();
    std::vector<double> sorted = losses.losses;
    std::sort(sorted.begin(), sorted.end());
    const double n = static_cast<double>(sorted.size());
    double d = 0.0;
    for (std::size_t i = 0; i < sorted.size(); ++i) {
        const double cdf = std::exp(ncx2_log_cdf(sorted[i], fit));
        d = std::max({d, cdf - static_cast<double>(i) / n, static_cast<double>(i + 1) / n - cdf});
    }
    const double root = std::sqrt(n);
    return {d, kolmogorov_q((root + 0.12 + 0.11 / root) * d)};
}

double ks_distance(std::vector<double> a, std::vector<double> b) {
    if (a.empty() || b.empty()) throw UsageError("ks_distance: empty sample");
    std::sort(a.begin(), a.end());
    std::sort(b.begin(), b.end());
    std::size_t i = 0;
    std::size_t j = 0;
    double d = 0.0;
    const double na = static_cast<double>(a.size());
    const double nb = static_cast<double>(b.size());
    while (i < a.size() && j < b.size()) {
        const double x = std::min(a[i], b[j]);
        while (i < a.size() && a[i] <= x) ++i;
        while (j < b.size() && b[j] <= x) ++j;
        d = std::max(d, std::abs(static_cast<double>(i) / na - static_cast<double>(j) / nb));
    }
    return d;
}

std::vector<HistogramBin> loss_histogram(const LossSamples& losses, const ChiSquaredFit& fit,
                                         std::size_t bins) {
    losses.validate(1);
    if (bins == 0) throw UsageError("loss_histogram: bins must be >= 1");
    const auto [lo_it, hi_it] = std::minmax_element(losses.losses.begin(), losses.losses.end());
    double lo = *lo_it;
    double hi = *hi_it;
    if (hi <= lo) {
        lo = std::max(0.0, lo - 0.5);
        hi = hi + 0.5;
    }
    const double width = (hi - lo) / static_cast<double>(bins);
    std::vector<HistogramBin> out(bins);
    for (std::size_t b = 0; b < bins; ++b) {
        out[b].left = lo + width * static_cast<double>(b);
        out[b].right = b + 1 == bins ? hi : lo + width * static_cast<double>(b + 1);
        out[b].fitted_pdf = std::exp(ncx2_logpdf(0.5 * (out[b].left + out[b].right), fit));
    }
    for (double l : losses.losses) {
        auto b = static_cast<std::size_t>((l - lo) / width);
        out[std::min(b, bins - 1)].count += 1;
    }
    return out;
}

} // namespace biasmeter
