#pragma once

#include "biasmeter/dataset.hpp"
#include "biasmeter/kernel.hpp"

#include <Eigen/Dense>

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

namespace biasmeter {

/// Plain constant-step SGD settings shared by the alpha and A problems.
/// One run performs epochs * ceil(N / batch_size) steps.
struct SgdConfig {
    double lr_alpha = 1e-5;
    double lr_a = 1e-5;
    std::size_t batch_size = 64;
    std::size_t epochs = 20;
    std::size_t group_size = 1024;
    std::uint64_t seed = 0;

    void validate() const;
};

enum class SgdTarget { alpha, a, both };

/// Approximate solutions of
///   alpha = argmin |Y - K(X,X) alpha|^2
///   A     = argmin |K(X,Xtest) - K(X,X) A|_F^2
/// with their final residual norms.
struct KernelFit {
    Eigen::MatrixXd alpha; // N x k
    Eigen::MatrixXd a;     // N x n
    double residual_alpha = 0.0;
    double residual_a = 0.0;
    std::size_t steps = 0;
};

/// Runs SGD on the requested problem(s). Both problems see the same seeded
/// mini-batch sequence, so fitting them jointly or separately gives the same
/// iterates. Throws NumericalError naming the step and learning rate when an
/// iterate becomes non-finite.
KernelFit sgd_fit(const Dataset& data, const KernelSpec& spec, const SgdConfig& cfg,
                  SgdTarget target = SgdTarget::both);

/// Constant step size fraction / h, where h is the largest spectral norm of
/// the batch Hessian 2 K(X, x_B) K(x_B, X) over the first four consecutive
/// training batches. GD on a fixed batch is stable for fraction < 2.
double suggest_learning_rate(const Dataset& data, const KernelSpec& spec, std::size_t batch_size,
                             double fraction = 0.5);

Eigen::MatrixXd sgd_fit_alpha(const Dataset& data, const KernelSpec& spec, const SgdConfig& cfg);
Eigen::MatrixXd sgd_fit_A(const Dataset& data, const KernelSpec& spec, const SgdConfig& cfg);

/// Frobenius norms |Y - K alpha| and |K(X,Xtest) - K A|, computed in row groups.
std::pair<double, double> fit_residuals(const Dataset& data, const KernelSpec& spec,
                                        const Eigen::MatrixXd& alpha, const Eigen::MatrixXd& a,
                                        std::size_t group_size);

struct PosteriorMoments {
    Eigen::MatrixXd mean; // n x k
    Eigen::MatrixXd cov;  // n x n, shared by every output channel
};

/// mean = K(Xtest, X) alpha, cov = K(Xtest, Xtest) - K(Xtest, X) A, symmetrized.
PosteriorMoments posterior_moments(const Eigen::MatrixXd& alpha, const Eigen::MatrixXd& a,
                                   const Dataset& data, const KernelSpec& spec);

struct PsdRoot {
    Eigen::MatrixXd sqrt_cov;
    double clamped_mass = 0.0; // sum of the magnitudes of clamped negative eigenvalues
};

/// Symmetric square root U diag(sqrt(max(l, 0))) U^T of a symmetric matrix.
PsdRoot psd_sqrt(const Eigen::MatrixXd& cov);

struct PosteriorSolve {
    Eigen::MatrixXd alpha;
    Eigen::MatrixXd a;
    Eigen::MatrixXd mean;
    Eigen::MatrixXd cov_scalar;
    Eigen::MatrixXd sqrt_cov;
    double clamped_mass = 0.0;
    double residual_alpha = 0.0;
    double residual_a = 0.0;

    /// True when the clamped negative spectrum exceeds 1% of trace(cov).
    bool clamped_mass_excessive() const;
};

PosteriorSolve assemble_posterior(Eigen::MatrixXd alpha, Eigen::MatrixXd a, const Dataset& data,
                                  const KernelSpec& spec);

/// SGD route: sgd_fit followed by assemble_posterior, residuals attached.
PosteriorSolve kernel_posterior(const Dataset& data, const KernelSpec& spec, const SgdConfig& cfg);

/// Direct route through a Cholesky factorization of K(X,X) + jitter I.
PosteriorSolve exact_posterior(const Dataset& data, const KernelSpec& spec, double jitter = 1e-10);

inline constexpr Eigen::Index kExactPosteriorMaxTrain = 4096;

enum class SampleSource { kernel, neural_net, exact_oracle };

std::string to_string(SampleSource source);
SampleSource parse_sample_source(const std::string& name);

/// S predicted output matrices (n x k each) on the test inputs.
struct HypothesisSamples {
    std::vector<Eigen::MatrixXd> predictions;
    std::uint64_t seed = 0;
    SampleSource source = SampleSource::kernel;

    std::size_t count() const { return predictions.size(); }
    Eigen::Index points() const { return predictions.empty() ? 0 : predictions.front().rows(); }
    Eigen::Index channels() const { return predictions.empty() ? 0 : predictions.front().cols(); }
};

/// prediction_s = mean + sqrt_cov * Z_s with Z_s an n x k matrix of iid
/// standard normals; channels draw independent columns of Z_s. Normals are
/// consumed in sample, channel, point order from a single seeded stream.
HypothesisSamples draw_samples(const PosteriorSolve& solve, std::size_t count, std::uint64_t seed,
                               SampleSource source = SampleSource::kernel);

} // namespace biasmeter
