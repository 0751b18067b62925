#include "biasmeter/nn_sampler.hpp"

#include "biasmeter/error.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <exception>
#include <mutex>
#include <numeric>
#include <random>
#include <string>
#include <thread>

namespace biasmeter {

void MlpArch::validate() const {
    if (input_dim < 1 || hidden_width < 1 || hidden_layers < 1 || output_dim < 1)
        throw UsageError("MLP widths and depth must all be >= 1");
}

void TrainConfig::validate() const {
    if (!(adam.lr >= 0.0) || !std::isfinite(adam.lr)) throw UsageError("Adam learning rate must be >= 0");
    if (epochs == 0 || batch_size == 0) throw UsageError("epochs and batch_size must be >= 1");
}

std::size_t MlpParams::parameter_count() const {
    std::size_t total = 0;
    for (const auto& layer : layers)
        total += static_cast<std::size_t>(layer.weight.size() + layer.bias.size());
    return total;
}

Eigen::VectorXd MlpParams::flatten() const {
    Eigen::VectorXd flat(static_cast<Eigen::Index>(parameter_count()));
    Eigen::Index pos = 0;
    for (const auto& layer : layers) {
        flat.segment(pos, layer.weight.size()) = layer.weight.reshaped();
        pos += layer.weight.size();
        flat.segment(pos, layer.bias.size()) = layer.bias;
        pos += layer.bias.size();
    }
    return flat;
}

void MlpParams::assign(const Eigen::Ref<const Eigen::VectorXd>& flat) {
    if (flat.size() != static_cast<Eigen::Index>(parameter_count()))
        throw UsageError("MlpParams::assign: wrong parameter count");
    Eigen::Index pos = 0;
    for (auto& layer : layers) {
        layer.weight.reshaped() = flat.segment(pos, layer.weight.size());
        pos += layer.weight.size();
        layer.bias = flat.segment(pos, layer.bias.size());
        pos += layer.bias.size();
    }
}

MlpParams init_mlp(const MlpArch& arch, std::uint64_t seed) {
    arch.validate();
    std::mt19937_64 rng(seed);
    std::vector<int> widths{arch.input_dim};
    for (int l = 0; l < arch.hidden_layers; ++l) widths.push_back(arch.hidden_width);
    widths.push_back(arch.output_dim);

    MlpParams params;
    for (std::size_t l = 0; l + 1 < widths.size(); ++l) {
        const int fan_in = widths[l];
        const int fan_out = widths[l + 1];
        const double limit = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
        std::uniform_real_distribution<double> uniform(-limit, limit);
        DenseLayer layer{Eigen::MatrixXd(fan_out, fan_in), Eigen::VectorXd::Zero(fan_out)};
        for (Eigen::Index j = 0; j < layer.weight.cols(); ++j)
            for (Eigen::Index i = 0; i < layer.weight.rows(); ++i) layer.weight(i, j) = uniform(rng);
        params.layers.push_back(std::move(layer));
    }
    return params;
}

namespace {

void check_input(const MlpParams& params, const Eigen::MatrixXd& x) {
    if (params.layers.empty()) throw UsageError("MLP has no layers");
    if (x.cols() != params.layers.front().weight.cols())
        throw UsageError("MLP input width " + std::to_string(x.cols()) + " does not match " +
                         std::to_string(params.layers.front().weight.cols()));
}

// Pre-activations of every layer; activations are recomputed from them.
std::vector<Eigen::MatrixXd> forward_trace(const MlpParams& params, const Eigen::MatrixXd& x) {
    std::vector<Eigen::MatrixXd> pre;
    pre.reserve(params.layers.size());
    Eigen::MatrixXd h = x;
    for (std::size_t l = 0; l < params.layers.size(); ++l) {
        const DenseLayer& layer = params.layers[l];
        Eigen::MatrixXd z = h * layer.weight.transpose();
        z.rowwise() += layer.bias.transpose();
        pre.push_back(z);
        if (l + 1 < params.layers.size()) h = z.cwiseMax(0.0);
    }
    return pre;
}

} // namespace

Eigen::MatrixXd mlp_forward(const MlpParams& params, const Eigen::MatrixXd& x) {
    check_input(params, x);
    return std::move(forward_trace(params, x).back());
}

double mse_loss(const MlpParams& params, const Eigen::MatrixXd& x, const Eigen::MatrixXd& y) {
    const Eigen::MatrixXd out = mlp_forward(params, x);
    if (out.rows() != y.rows() || out.cols() != y.cols()) throw UsageError("mse_loss: target shape mismatch");
    return (out - y).squaredNorm() / static_cast<double>(y.size());
}

double mse_gradient(const MlpParams& params, const Eigen::MatrixXd& x, const Eigen::MatrixXd& y,
                    MlpParams& grad) {
    check_input(params, x);
    const std::vector<Eigen::MatrixXd> pre = forward_trace(params, x);
    const Eigen::MatrixXd& out = pre.back();
    if (out.rows() != y.rows() || out.cols() != y.cols()) throw UsageError("mse_gradient: target shape mismatch");

    const Eigen::MatrixXd diff = out - y;
    const double loss = diff.squaredNorm() / static_cast<double>(y.size());
    Eigen::MatrixXd delta = (2.0 / static_cast<double>(y.size())) * diff;

    grad.layers.resize(params.layers.size());
    for (std::size_t l = params.layers.size(); l-- > 0;) {
        const Eigen::MatrixXd input = l == 0 ? x : Eigen::MatrixXd(pre[l - 1].cwiseMax(0.0));
        grad.layers[l].weight.noalias() = delta.transpose() * input;
        grad.layers[l].bias = delta.colwise().sum().transpose();
        if (l > 0) {
            Eigen::MatrixXd back = delta * params.layers[l].weight;
            delta = (pre[l - 1].array() > 0.0).select(back, 0.0);
        }
    }
    return loss;
}

TrainResult train_mlp(MlpParams params, const Dataset& data, const TrainConfig& cfg) {
    cfg.validate();
    data.validate();
    check_input(params, data.train_x);

    TrainResult result;
    result.initial_train_loss = mse_loss(params, data.train_x, data.train_y);

    const AdamConfig& adam = cfg.adam;
    MlpParams m = params;
    MlpParams v = params;
    for (auto* state : {&m, &v})
        for (auto& layer : state->layers) {
            layer.weight.setZero();
            layer.bias.setZero();
        }
    MlpParams grad;

    std::mt19937_64 rng(cfg.seed);
    std::vector<Eigen::Index> order(static_cast<std::size_t>(data.train_size()));
    std::iota(order.begin(), order.end(), Eigen::Index{0});
    Eigen::MatrixXd xb;
    Eigen::MatrixXd yb;
    std::size_t step = 0;
    for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
        std::shuffle(order.begin(), order.end(), rng);
        for (std::size_t begin = 0; begin < order.size(); begin += cfg.batch_size) {
            const std::size_t end = std::min(order.size(), begin + cfg.batch_size);
            const auto rows = static_cast<Eigen::Index>(end - begin);
            xb.resize(rows, data.input_dim());
            yb.resize(rows, data.output_dim());
            for (Eigen::Index r = 0; r < rows; ++r) {
                xb.row(r) = data.train_x.row(order[begin + static_cast<std::size_t>(r)]);
                yb.row(r) = data.train_y.row(order[begin + static_cast<std::size_t>(r)]);
            }
            ++step;
            const double loss = mse_gradient(params, xb, yb, grad);
            if (!std::isfinite(loss))
                throw NumericalError("MLP training loss became non-finite at step " + std::to_string(step) +
                                     " (epoch " + std::to_string(epoch) + ")");

            const double t = static_cast<double>(step);
            const double c1 = 1.0 - std::pow(adam.beta1, t);
            const double c2 = 1.0 - std::pow(adam.beta2, t);
            auto update = [&](auto& p, auto& mm, auto& vv, const auto& g) {
                mm = adam.beta1 * mm + (1.0 - adam.beta1) * g;
                vv = adam.beta2 * vv + (1.0 - adam.beta2) * g.cwiseAbs2();
                p.array() -= adam.lr * (mm.array() / c1) / ((vv.array() / c2).sqrt() + adam.eps);
            };
            for (std::size_t l = 0; l < params.layers.size(); ++l) {
                update(params.layers[l].weight, m.layers[l].weight, v.layers[l].weight, grad.layers[l].weight);
                update(params.layers[l].bias, m.layers[l].bias, v.layers[l].bias, grad.layers[l].bias);
            }
        }
    }
    result.final_train_loss = mse_loss(params, data.train_x, data.train_y);
    if (!std::isfinite(result.final_train_loss))
        throw NumericalError("MLP final training loss is non-finite after " + std::to_string(step) + " steps");
    result.params = std::move(params);
    return result;
}

NnSamples sample_nn_hypotheses(const MlpArch& arch, const Dataset& data, std::size_t count,
                               const TrainConfig& cfg, unsigned threads) {
    if (count == 0) throw UsageError("sample_nn_hypotheses: sample count must be >= 1");
    arch.validate();
    cfg.validate();
    data.validate();
    if (arch.input_dim != data.input_dim() || arch.output_dim != data.output_dim())
        throw UsageError("MLP architecture does not match the dataset's input/output widths");

    NnSamples out;
    out.samples.seed = cfg.seed;
    out.samples.source = SampleSource::neural_net;
    out.samples.predictions.resize(count);
    out.final_train_losses.resize(count);
    out.initial_train_losses.resize(count);

    std::atomic<std::size_t> next{0};
    std::mutex error_mutex;
    std::exception_ptr first_error;
    std::size_t failed_index = count;
    auto worker = [&] {
        for (std::size_t s = next++; s < count; s = next++) {
            try {
                TrainConfig local = cfg;
                local.seed = cfg.seed + s;
                TrainResult trained = train_mlp(init_mlp(arch, local.seed), data, local);
                out.samples.predictions[s] = mlp_forward(trained.params, data.test_x);
                out.final_train_losses[s] = trained.final_train_loss;
                out.initial_train_losses[s] = trained.initial_train_loss;
            } catch (...) {
                std::lock_guard lock(error_mutex);
                if (s < failed_index) {
                    failed_index = s;
                    first_error = std::current_exception();
                }
            }
        }
    };
    const unsigned workers = std::max(1u, std::min<unsigned>(threads, static_cast<unsigned>(count)));
    if (workers == 1) {
        worker();
    } else {
        std::vector<std::thread> pool;
        for (unsigned t = 0; t < workers; ++t) pool.emplace_back(worker);
        for (auto& th : pool) th.join();
    }
    if (first_error) {
        try {
            std::rethrow_exception(first_error);
        } catch (const NumericalError& e) {
            throw NumericalError("hypothesis " + std::to_string(failed_index) + ": " + e.what());
        } catch (const UsageError& e) {
            throw UsageError("hypothesis " + std::to_string(failed_index) + ": " + e.what());
        } catch (const DataError& e) {
            throw DataError("hypothesis " + std::to_string(failed_index) + ": " + e.what());
        } catch (const std::exception& e) {
            throw std::runtime_error("hypothesis " + std::to_string(failed_index) + ": " + e.what());
        }
    }
    return out;
}

} // namespace biasmeter
