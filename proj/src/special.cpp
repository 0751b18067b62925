#include "biasmeter/special.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>

namespace biasmeter::special {

namespace {

constexpr double kNegInf = -std::numeric_limits<double>::infinity();
constexpr double kRelTol = 1e-16;
constexpr int kMaxIter = 100000;

// Series for P(a, x), valid and fast for x < a + 1.
double log_gamma_p_series(double a, double x) {
    double term = 1.0;
    double sum = 1.0;
    for (int n = 1; n < kMaxIter; ++n) {
        term *= x / (a + n);
        sum += term;
        if (term < sum * kRelTol) break;
    }
    return a * std::log(x) - x - std::lgamma(a + 1.0) + std::log(sum);
}

// Modified Lentz continued fraction for Q(a, x), valid for x >= a + 1.
double log_gamma_q_fraction(double a, double x) {
    constexpr double tiny = 1e-300;
    double b = x + 1.0 - a;
    double c = 1.0 / tiny;
    double d = 1.0 / b;
    double h = d;
    for (int i = 1; i < kMaxIter; ++i) {
        const double an = -i * (i - a);
        b += 2.0;
        d = an * d + b;
        if (std::abs(d) < tiny) d = tiny;
        c = b + an / c;
        if (std::abs(c) < tiny) c = tiny;
        d = 1.0 / d;
        const double delta = d * c;
        h *= delta;
        if (std::abs(delta - 1.0) < 1e-16) break;
    }
    return a * std::log(x) - x - std::lgamma(a) + std::log(h);
}

} // namespace

double log_add_exp(double a, double b) {
    if (a == kNegInf) return b;
    if (b == kNegInf) return a;
    const double hi = std::max(a, b);
    return hi + std::log1p(std::exp(-std::abs(a - b)));
}

double log_normal_cdf(double y) {
    if (y > 0.0) return std::log1p(-0.5 * std::erfc(y / std::numbers::sqrt2));
    if (y > -35.0) return std::log(0.5 * std::erfc(-y / std::numbers::sqrt2));
    // Mills-ratio asymptotic series: Phi(y) ~ phi(y)/|y| * (1 - 1/y^2 + 3/y^4 - 15/y^6 + 105/y^8).
    const double inv2 = 1.0 / (y * y);
    const double series = 1.0 - inv2 * (1.0 - 3.0 * inv2 * (1.0 - 5.0 * inv2 * (1.0 - 7.0 * inv2)));
    return -0.5 * y * y - std::log(-y) - 0.5 * std::log(2.0 * std::numbers::pi) + std::log(series);
}

double log_gamma_p(double a, double x) {
    if (!(a > 0.0) || !(x >= 0.0)) return std::numeric_limits<double>::quiet_NaN();
    if (x == 0.0) return kNegInf;
    if (std::isinf(x)) return 0.0;
    if (x < a + 1.0) return log_gamma_p_series(a, x);
    const double log_q = log_gamma_q_fraction(a, x);
    return std::log1p(-std::exp(log_q));
}

double ncx2_logpdf_standard(double x, double dof, double lambda) {
    if (!(x > 0.0) || std::isinf(x)) return kNegInf;
    const double half_k = 0.5 * dof;
    auto central = [&](double shape) {
        return (shape - 1.0) * std::log(x) - 0.5 * x - shape * std::numbers::ln2 - std::lgamma(shape);
    };
    if (!(lambda > 0.0)) return central(half_k);

    const double half_lambda = 0.5 * lambda;
    // Term ratio t_{j+1}/t_j = (lambda x / 4) / ((j + 1)(k/2 + j)); the terms are
    // log-concave in j, so the largest one sits at the root of ratio == 1.
    const double drive = 0.25 * lambda * x;
    const double b = 1.0 + half_k;
    const double disc = b * b - 4.0 * (half_k - drive);
    double mode = disc > 0.0 ? std::floor(0.5 * (-b + std::sqrt(disc))) : 0.0;
    mode = std::max(mode, 0.0);

    const double log_peak = -half_lambda + mode * std::log(half_lambda) - std::lgamma(mode + 1.0) +
                            central(half_k + mode);
    double sum = 1.0;
    double term = 1.0;
    for (double j = mode; j < mode + kMaxIter; j += 1.0) {
        term *= drive / ((j + 1.0) * (half_k + j));
        sum += term;
        if (term < kRelTol * sum) break;
    }
    term = 1.0;
    for (double j = mode; j > 0.0; j -= 1.0) {
        term *= (j * (half_k + j - 1.0)) / drive;
        sum += term;
        if (term < kRelTol * sum) break;
    }
    return log_peak + std::log(sum);
}

double ncx2_log_cdf_standard(double x, double dof, double lambda) {
    if (!(x > 0.0)) return kNegInf;
    if (std::isinf(x)) return 0.0;
    const double half_k = 0.5 * dof;
    const double half_x = 0.5 * x;
    if (!(lambda > 0.0)) return log_gamma_p(half_k, half_x);

    const double half_lambda = 0.5 * lambda;
    const double log_half_lambda = std::log(half_lambda);
    auto log_weight = [&](double j) { return -half_lambda + j * log_half_lambda - std::lgamma(j + 1.0); };

    // Start at the Poisson mode. Upward, both the weight and P(k/2 + j, x/2)
    // shrink, so stop on the term itself; downward P grows, so stop only once
    // the weight alone is negligible.
    const double start = std::floor(half_lambda);
    double total = log_weight(start) + log_gamma_p(half_k + start, half_x);
    for (double j = start + 1.0; j < start + kMaxIter; j += 1.0) {
        const double lw = log_weight(j);
        const double t = lw + log_gamma_p(half_k + j, half_x);
        total = log_add_exp(total, t);
        if (j > half_lambda && t < total + std::log(kRelTol)) break;
    }
    for (double j = start - 1.0; j >= 0.0; j -= 1.0) {
        const double lw = log_weight(j);
        if (lw < total + std::log(kRelTol)) break;
        total = log_add_exp(total, lw + log_gamma_p(half_k + j, half_x));
    }
    return std::min(total, 0.0);
}

} // namespace biasmeter::special
