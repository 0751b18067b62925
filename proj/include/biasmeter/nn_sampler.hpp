#pragma once

#include "biasmeter/dataset.hpp"
#include "biasmeter/gp_sampler.hpp"

#include <Eigen/Dense>

#include <cstddef>
#include <cstdint>
#include <vector>

namespace biasmeter {

/// Fully connected ReLU network: `hidden_layers` affine+ReLU layers of width
/// `hidden_width` (the first one projects the input), then an affine output
/// layer without activation. Every layer has a bias.
struct MlpArch {
    int input_dim = 1;
    int hidden_width = 64;
    int hidden_layers = 3;
    int output_dim = 1;

    void validate() const;
};

struct AdamConfig {
    double lr = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
};

struct TrainConfig {
    AdamConfig adam;
    std::size_t epochs = 10;
    std::size_t batch_size = 128;
    std::uint64_t seed = 0;

    void validate() const;
};

struct DenseLayer {
    Eigen::MatrixXd weight; // out x in
    Eigen::VectorXd bias;   // out
};

struct MlpParams {
    std::vector<DenseLayer> layers;

    std::size_t parameter_count() const;
    /// Flattened copy in layer order, weights (column-major) before biases.
    Eigen::VectorXd flatten() const;
    void assign(const Eigen::Ref<const Eigen::VectorXd>& flat);
};

/// Glorot-uniform weights, zero biases.
MlpParams init_mlp(const MlpArch& arch, std::uint64_t seed);

/// Row-wise forward pass: returns rows x output_dim.
Eigen::MatrixXd mlp_forward(const MlpParams& params, const Eigen::MatrixXd& x);

/// Mean over rows and channels of the squared error.
double mse_loss(const MlpParams& params, const Eigen::MatrixXd& x, const Eigen::MatrixXd& y);

/// MSE and its gradient with respect to every parameter (same layout as params).
double mse_gradient(const MlpParams& params, const Eigen::MatrixXd& x, const Eigen::MatrixXd& y,
                    MlpParams& grad);

struct TrainResult {
    MlpParams params;
    double initial_train_loss = 0.0;
    double final_train_loss = 0.0;
};

/// Adam on mini-batch MSE with a seeded shuffle per epoch. Throws
/// NumericalError with the step index if a batch loss becomes non-finite.
TrainResult train_mlp(MlpParams params, const Dataset& data, const TrainConfig& cfg);

struct NnSamples {
    HypothesisSamples samples;
    std::vector<double> final_train_losses;
    std::vector<double> initial_train_losses;
};

/// Trains `count` networks; hypothesis s uses seed cfg.seed + s for both its
/// initialization and its batch order. `threads` > 1 trains hypotheses
/// concurrently; results do not depend on the thread count.
NnSamples sample_nn_hypotheses(const MlpArch& arch, const Dataset& data, std::size_t count,
                               const TrainConfig& cfg, unsigned threads = 1);

} // namespace biasmeter
