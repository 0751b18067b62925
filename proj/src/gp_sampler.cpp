#include "biasmeter/gp_sampler.hpp"

#include "biasmeter/error.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <sstream>

namespace biasmeter {

void SgdConfig::validate() const {
    if (!(lr_alpha > 0.0) || !(lr_a > 0.0))
        throw UsageError("SGD learning rates must be positive");
    if (batch_size == 0 || epochs == 0 || group_size == 0)
        throw UsageError("SGD batch_size, epochs and group_size must be >= 1");
}

namespace {

[[noreturn]] void diverged(const char* which, std::size_t step, std::size_t epoch, double lr) {
    std::ostringstream msg;
    msg << "SGD on " << which << " diverged at step " << step << " (epoch " << epoch
        << "): non-finite iterate with learning rate " << lr << "; lower the learning rate";
    throw NumericalError(msg.str());
}

} // namespace

KernelFit sgd_fit(const Dataset& data, const KernelSpec& spec, const SgdConfig& cfg,
                  SgdTarget target) {
    spec.validate();
    cfg.validate();
    data.validate();

    const bool fit_alpha = target != SgdTarget::a;
    const bool fit_a = target != SgdTarget::alpha;
    const Eigen::Index n_train = data.train_size();
    const Eigen::Index n_test = data.test_size();
    const auto group = static_cast<Eigen::Index>(cfg.group_size);

    KernelFit fit;
    fit.alpha = Eigen::MatrixXd::Zero(n_train, fit_alpha ? data.output_dim() : 0);
    fit.a = Eigen::MatrixXd::Zero(n_train, fit_a ? n_test : 0);

    std::mt19937_64 rng(cfg.seed);
    std::vector<Eigen::Index> order(static_cast<std::size_t>(n_train));
    std::iota(order.begin(), order.end(), Eigen::Index{0});

    std::vector<Eigen::MatrixXd> blocks;
    std::vector<Eigen::Index> batch;
    std::size_t step = 0;
    for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
        std::shuffle(order.begin(), order.end(), rng);
        for (std::size_t begin = 0; begin < order.size(); begin += cfg.batch_size) {
            const std::size_t end = std::min(order.size(), begin + cfg.batch_size);
            batch.assign(order.begin() + static_cast<std::ptrdiff_t>(begin),
                         order.begin() + static_cast<std::ptrdiff_t>(end));
            const auto b = static_cast<Eigen::Index>(batch.size());
            ++step;

            // K(x, X) alpha and K(x, X) A, summed over groups of training columns.
            Eigen::MatrixXd pred_alpha = Eigen::MatrixXd::Zero(b, fit.alpha.cols());
            Eigen::MatrixXd pred_a = Eigen::MatrixXd::Zero(b, fit.a.cols());
            blocks.clear();
            for (Eigen::Index start = 0; start < n_train; start += group) {
                const Eigen::Index len = std::min(group, n_train - start);
                blocks.push_back(kernel_block(spec, data.train_x, batch, data.train_x, start, len));
                const Eigen::MatrixXd& kg = blocks.back();
                if (fit_alpha) pred_alpha.noalias() += kg * fit.alpha.middleRows(start, len);
                if (fit_a) pred_a.noalias() += kg * fit.a.middleRows(start, len);
            }

            Eigen::MatrixXd resid_alpha;
            Eigen::MatrixXd resid_a;
            if (fit_alpha) {
                resid_alpha = pred_alpha;
                for (Eigen::Index r = 0; r < b; ++r) resid_alpha.row(r) -= data.train_y.row(batch[r]);
                if (!resid_alpha.allFinite()) diverged("alpha", step, epoch, cfg.lr_alpha);
                resid_alpha *= 2.0 * cfg.lr_alpha;
            }
            if (fit_a) {
                resid_a = pred_a - kernel_block(spec, data.train_x, batch, data.test_x, 0, n_test);
                if (!resid_a.allFinite()) diverged("A", step, epoch, cfg.lr_a);
                resid_a *= 2.0 * cfg.lr_a;
            }

            Eigen::Index start = 0;
            for (const Eigen::MatrixXd& kg : blocks) {
                const Eigen::Index len = kg.cols();
                if (fit_alpha) fit.alpha.middleRows(start, len).noalias() -= kg.transpose() * resid_alpha;
                if (fit_a) fit.a.middleRows(start, len).noalias() -= kg.transpose() * resid_a;
                start += len;
            }
        }
    }
    if (fit_alpha && !fit.alpha.allFinite()) diverged("alpha", step, cfg.epochs, cfg.lr_alpha);
    if (fit_a && !fit.a.allFinite()) diverged("A", step, cfg.epochs, cfg.lr_a);
    fit.steps = step;

    const auto [ra, rA] = fit_residuals(data, spec, fit.alpha, fit.a, cfg.group_size);
    fit.residual_alpha = fit_alpha ? ra : 0.0;
    fit.residual_a = fit_a ? rA : 0.0;
    return fit;
}

double suggest_learning_rate(const Dataset& data, const KernelSpec& spec, std::size_t batch_size,
                             double fraction) {
    spec.validate();
    data.validate();
    if (batch_size == 0 || !(fraction > 0.0))
        throw UsageError("suggest_learning_rate: needs batch_size >= 1 and fraction > 0");
    const Eigen::Index n_train = data.train_size();
    const auto b = std::min<Eigen::Index>(static_cast<Eigen::Index>(batch_size), n_train);
    double curvature = 0.0;
    std::vector<Eigen::Index> rows(static_cast<std::size_t>(b));
    for (Eigen::Index probe = 0; probe < 4 && (probe + 1) * b <= n_train; ++probe) {
        std::iota(rows.begin(), rows.end(), probe * b);
        const Eigen::MatrixXd kb = kernel_block(spec, data.train_x, rows, data.train_x, 0, n_train);
        const Eigen::MatrixXd gram = kb * kb.transpose();
        Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(gram, Eigen::EigenvaluesOnly);
        curvature = std::max(curvature, 2.0 * eig.eigenvalues().maxCoeff());
    }
    if (!(curvature > 0.0)) throw NumericalError("suggest_learning_rate: kernel batch has zero curvature");
    return fraction / curvature;
}

Eigen::MatrixXd sgd_fit_alpha(const Dataset& data, const KernelSpec& spec, const SgdConfig& cfg) {
    return sgd_fit(data, spec, cfg, SgdTarget::alpha).alpha;
}

Eigen::MatrixXd sgd_fit_A(const Dataset& data, const KernelSpec& spec, const SgdConfig& cfg) {
    return sgd_fit(data, spec, cfg, SgdTarget::a).a;
}

std::pair<double, double> fit_residuals(const Dataset& data, const KernelSpec& spec,
                                        const Eigen::MatrixXd& alpha, const Eigen::MatrixXd& a,
                                        std::size_t group_size) {
    if (group_size == 0) throw UsageError("fit_residuals: group_size must be >= 1");
    const Eigen::Index n_train = data.train_size();
    const auto group = static_cast<Eigen::Index>(group_size);
    double sq_alpha = 0.0;
    double sq_a = 0.0;
    std::vector<Eigen::Index> rows;
    for (Eigen::Index start = 0; start < n_train; start += group) {
        const Eigen::Index len = std::min(group, n_train - start);
        rows.resize(static_cast<std::size_t>(len));
        std::iota(rows.begin(), rows.end(), start);
        const Eigen::MatrixXd k_rows = kernel_block(spec, data.train_x, rows, data.train_x, 0, n_train);
        if (alpha.cols() > 0)
            sq_alpha += (data.train_y.middleRows(start, len) - k_rows * alpha).squaredNorm();
        if (a.cols() > 0) {
            const Eigen::MatrixXd target = kernel_block(spec, data.train_x, rows, data.test_x, 0,
                                                        data.test_size());
            sq_a += (target - k_rows * a).squaredNorm();
        }
    }
    return {std::sqrt(sq_alpha), std::sqrt(sq_a)};
}

PosteriorMoments posterior_moments(const Eigen::MatrixXd& alpha, const Eigen::MatrixXd& a,
                                   const Dataset& data, const KernelSpec& spec) {
    const Eigen::Index n_train = data.train_size();
    const Eigen::Index n_test = data.test_size();
    if (alpha.rows() != n_train || alpha.cols() != data.output_dim())
        throw UsageError("posterior_moments: alpha must be N x k");
    if (a.rows() != n_train || a.cols() != n_test)
        throw UsageError("posterior_moments: A must be N x n");

    const Eigen::MatrixXd k_cross = kernel_matrix(spec, data.test_x, data.train_x);
    PosteriorMoments out;
    out.mean = k_cross * alpha;
    Eigen::MatrixXd cov = kernel_matrix(spec, data.test_x, data.test_x);
    cov.noalias() -= k_cross * a;
    out.cov = 0.5 * (cov + cov.transpose());
    return out;
}

PsdRoot psd_sqrt(const Eigen::MatrixXd& cov) {
    if (cov.rows() != cov.cols()) throw UsageError("psd_sqrt: matrix must be square");
    if (!cov.allFinite()) throw NumericalError("psd_sqrt: matrix has non-finite entries");
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(cov);
    if (eig.info() != Eigen::Success) throw NumericalError("psd_sqrt: eigendecomposition failed");

    const Eigen::VectorXd& values = eig.eigenvalues();
    PsdRoot out;
    Eigen::VectorXd roots(values.size());
    for (Eigen::Index i = 0; i < values.size(); ++i) {
        if (values[i] < 0.0) out.clamped_mass -= values[i];
        roots[i] = std::sqrt(std::max(values[i], 0.0));
    }
    const Eigen::MatrixXd& u = eig.eigenvectors();
    out.sqrt_cov = u * roots.asDiagonal() * u.transpose();
    return out;
}

bool PosteriorSolve::clamped_mass_excessive() const {
    const double trace = cov_scalar.trace();
    return clamped_mass > 0.01 * std::abs(trace);
}

PosteriorSolve assemble_posterior(Eigen::MatrixXd alpha, Eigen::MatrixXd a, const Dataset& data,
                                  const KernelSpec& spec) {
    PosteriorMoments moments = posterior_moments(alpha, a, data, spec);
    PsdRoot root = psd_sqrt(moments.cov);
    PosteriorSolve solve;
    solve.alpha = std::move(alpha);
    solve.a = std::move(a);
    solve.mean = std::move(moments.mean);
    solve.cov_scalar = std::move(moments.cov);
    solve.sqrt_cov = std::move(root.sqrt_cov);
    solve.clamped_mass = root.clamped_mass;
    return solve;
}

PosteriorSolve kernel_posterior(const Dataset& data, const KernelSpec& spec, const SgdConfig& cfg) {
    KernelFit fit = sgd_fit(data, spec, cfg, SgdTarget::both);
    PosteriorSolve solve = assemble_posterior(std::move(fit.alpha), std::move(fit.a), data, spec);
    solve.residual_alpha = fit.residual_alpha;
    solve.residual_a = fit.residual_a;
    return solve;
}

PosteriorSolve exact_posterior(const Dataset& data, const KernelSpec& spec, double jitter) {
    spec.validate();
    data.validate();
    if (!(jitter >= 0.0)) throw UsageError("exact_posterior: jitter must be >= 0");
    if (data.train_size() > kExactPosteriorMaxTrain)
        throw UsageError("exact_posterior: N = " + std::to_string(data.train_size()) +
                         " exceeds the direct-solve limit of " +
                         std::to_string(kExactPosteriorMaxTrain) + "; use the SGD sampler");

    Eigen::MatrixXd gram = kernel_matrix(spec, data.train_x, data.train_x);
    gram.diagonal().array() += jitter;
    Eigen::LLT<Eigen::MatrixXd> llt(gram);
    if (llt.info() != Eigen::Success) {
        std::ostringstream msg;
        msg << "exact_posterior: K(X,X) + " << jitter
            << " I is not positive definite (duplicate or near-duplicate training inputs?); "
               "retry with a larger jitter such as 1e-8";
        throw NumericalError(msg.str());
    }
    Eigen::MatrixXd alpha = llt.solve(data.train_y);
    Eigen::MatrixXd a = llt.solve(kernel_matrix(spec, data.train_x, data.test_x));
    if (!alpha.allFinite() || !a.allFinite())
        throw NumericalError("exact_posterior: solve produced non-finite values; increase jitter");

    const auto [ra, rA] = fit_residuals(data, spec, alpha, a, 1024);
    PosteriorSolve solve = assemble_posterior(std::move(alpha), std::move(a), data, spec);
    solve.residual_alpha = ra;
    solve.residual_a = rA;
    return solve;
}

std::string to_string(SampleSource source) {
    switch (source) {
    case SampleSource::kernel: return "kernel";
    case SampleSource::neural_net: return "neural_net";
    case SampleSource::exact_oracle: return "exact_oracle";
    }
    return "unknown";
}

SampleSource parse_sample_source(const std::string& name) {
    if (name == "kernel") return SampleSource::kernel;
    if (name == "neural_net") return SampleSource::neural_net;
    if (name == "exact_oracle") return SampleSource::exact_oracle;
    throw DataError("unknown hypothesis source '" + name + "'");
}

HypothesisSamples draw_samples(const PosteriorSolve& solve, std::size_t count, std::uint64_t seed,
                               SampleSource source) {
    if (count == 0) throw UsageError("draw_samples: sample count must be >= 1");
    const Eigen::Index n = solve.mean.rows();
    const Eigen::Index k = solve.mean.cols();
    if (solve.sqrt_cov.rows() != n || solve.sqrt_cov.cols() != n)
        throw UsageError("draw_samples: sqrt_cov shape does not match the mean");

    HypothesisSamples out;
    out.seed = seed;
    out.source = source;
    out.predictions.reserve(count);
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> normal(0.0, 1.0);
    Eigen::MatrixXd z(n, k);
    for (std::size_t s = 0; s < count; ++s) {
        for (Eigen::Index c = 0; c < k; ++c)
            for (Eigen::Index j = 0; j < n; ++j) z(j, c) = normal(rng);
        Eigen::MatrixXd pred = solve.mean;
        pred.noalias() += solve.sqrt_cov * z;
        out.predictions.push_back(std::move(pred));
    }
    return out;
}

} // namespace biasmeter
