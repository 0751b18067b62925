#pragma once

#include "biasmeter/kernel.hpp"

#include <Eigen/Dense>

#include <string>

namespace biasmeter {

/// A supervised regression task: training inputs/targets and a held-out test
/// set. Classification tasks carry one-hot targets.
struct Dataset {
    std::string name;
    PointSet train_x;
    Eigen::MatrixXd train_y; // N x k
    PointSet test_x;
    Eigen::MatrixXd test_y;  // n x k

    Eigen::Index train_size() const { return train_x.rows(); }
    Eigen::Index test_size() const { return test_x.rows(); }
    Eigen::Index input_dim() const { return train_x.cols(); }
    Eigen::Index output_dim() const { return train_y.cols(); }

    /// Throws DataError on empty splits, mismatched shapes or non-finite values.
    void validate() const;
};

} // namespace biasmeter
