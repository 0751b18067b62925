#pragma once

// Log-domain special functions used by the loss model. Every routine stays
// finite far into the tails where the plain CDF underflows.

namespace biasmeter::special {

/// log Phi(y) for the standard normal CDF.
double log_normal_cdf(double y);

/// log of the regularized lower incomplete gamma function P(a, x), a > 0, x >= 0.
double log_gamma_p(double a, double x);

/// log(exp(a) + exp(b)) without overflow.
double log_add_exp(double a, double b);

/// Standard (unscaled) non-central chi-squared log-density, k > 0, lambda >= 0.
/// Poisson(lambda/2) mixture of central chi-squared(k + 2j) densities, summed
/// outward from the dominant term until terms drop below 1e-16 of the peak.
double ncx2_logpdf_standard(double x, double dof, double lambda);

/// Standard non-central chi-squared log-CDF from the same Poisson mixture
/// applied to regularized incomplete gamma functions.
double ncx2_log_cdf_standard(double x, double dof, double lambda);

} // namespace biasmeter::special
