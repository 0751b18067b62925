#pragma once

#include "biasmeter/dataset.hpp"

#include <Eigen/Dense>
#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

namespace biasmeter {

// ---------------------------------------------------------------------------
// Inverted pendulum with a closed-form optimal controller.

struct PendulumState {
    double theta = 0.0; // radians
    double omega = 0.0; // radians / second
};

struct PendulumRates {
    double theta_dot = 0.0;
    double omega_dot = 0.0;
};

/// theta' = omega, omega' = sin(theta) + u.
PendulumRates pendulum_dynamics(const PendulumState& s, double u);

/// C = u^2/2 + 24 theta^2 + (8 theta + 4 omega)(theta - sin theta).
double pendulum_cost(double u, double theta, double omega);

/// V = 14 theta^2 + 8 theta omega + 2 omega^2.
double pendulum_value(double theta, double omega);

/// u* = -8 theta - 4 omega.
double pendulum_optimal_control(double theta, double omega);

/// dV/dtheta * theta' + dV/domega * omega' + C evaluated at u*.
double bellman_residual(double theta, double omega);

inline constexpr std::size_t kPendulumDefaultTrain = 10000;
inline constexpr std::size_t kPendulumDefaultTest = 100;

/// Inputs (theta, omega) uniform on [-pi, pi] x [-1, 1]; target u*.
/// The training split is drawn before the test split from one seeded stream.
Dataset generate_pendulum_dataset(std::size_t n_train = kPendulumDefaultTrain,
                                  std::size_t n_test = kPendulumDefaultTest, std::uint64_t seed = 0);

// ---------------------------------------------------------------------------
// Synthetic task whose targets lie in the RBF feature space.

/// Random Fourier features phi(x) = sqrt(2/P) cos(W x + b), W ~ N(0, bandwidth I),
/// b ~ U[0, 2 pi), so phi(x).phi(x') approximates exp(-bandwidth/2 |x - x'|^2).
/// Targets are phi(x) theta_star.
struct SyntheticGpSpec {
    int num_features = 4096;
    int input_dim = 2;
    int output_dim = 1;
    double bandwidth = 1.0;
    double theta_variance = 0.0; // 0 selects 1 / num_features
    std::uint64_t seed = 0;

    Eigen::MatrixXd frequencies; // P x input_dim
    Eigen::VectorXd phases;      // P
    Eigen::MatrixXd theta_star;  // P x output_dim

    void validate() const;
    double effective_theta_variance() const;
};

/// Fills frequencies, phases and theta_star from spec.seed.
SyntheticGpSpec make_synthetic_gp_spec(int num_features, int input_dim, int output_dim,
                                       double bandwidth, std::uint64_t seed);

/// N x P feature matrix for the rows of x.
Eigen::MatrixXd rff_features(const SyntheticGpSpec& spec, const PointSet& x);

/// Inputs uniform on [0, 1]^input_dim (train then test, stream seeded from
/// spec.seed and independent of the feature draws); noiseless targets.
Dataset generate_synthetic_gp_task(const SyntheticGpSpec& spec, std::size_t n_train, std::size_t n_test);

// ---------------------------------------------------------------------------
// IDX image/label files.

inline constexpr std::uint32_t kIdxImagesMagic = 0x00000803;
inline constexpr std::uint32_t kIdxLabelsMagic = 0x00000801;

/// Raw contents of an IDX image file and its label file.
struct IdxData {
    std::size_t count = 0;
    std::size_t rows = 0;
    std::size_t cols = 0;
    std::vector<std::uint8_t> pixels; // count * rows * cols, row-major per image
    std::vector<std::uint8_t> labels; // count

    std::size_t pixels_per_image() const { return rows * cols; }
};

/// Throws DataError on a missing file, bad magic, truncated payload or an
/// image/label count mismatch.
IdxData read_idx(const std::string& images_path, const std::string& labels_path);
void write_idx(const IdxData& data, const std::string& images_path, const std::string& labels_path);

struct LoadedImages {
    Eigen::MatrixXd images; // count x pixels, values v / 255
    std::vector<int> labels;
};

LoadedImages load_idx(const std::string& images_path, const std::string& labels_path);

/// Rows with a single 1 in column label.
Eigen::MatrixXd one_hot(const std::vector<int>& labels, int num_classes);

/// Row indices of the largest entry per row (first on ties).
std::vector<int> argmax_rows(const Eigen::MatrixXd& y);

/// True when every row holds exactly one 1 and zeros elsewhere.
bool is_one_hot(const Eigen::MatrixXd& y);

/// Seeded sampling without replacement of n_train training rows and n_test
/// test rows. One-hot targets are stratified by class with largest-remainder
/// allocation; selected rows keep their original relative order.
Dataset subsample(const Dataset& data, std::size_t n_train, std::size_t n_test, std::uint64_t seed);

/// Disjoint stratified train/test subsets carved out of a single labelled pool.
Dataset carve_classification_task(const std::string& name, const Eigen::MatrixXd& inputs,
                                  const std::vector<int>& labels, int num_classes, std::size_t n_train,
                                  std::size_t n_test, std::uint64_t seed);

/// Per-feature z-scoring with training-split statistics; constant features
/// are only centred.
void standardize_inputs(Dataset& data);

} // namespace biasmeter
