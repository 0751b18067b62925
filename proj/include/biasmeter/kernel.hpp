#pragma once

#include <Eigen/Dense>

#include <cstddef>
#include <vector>

namespace biasmeter {

/// Rows are points, columns are input features.
using PointSet = Eigen::MatrixXd;

enum class KernelFamily { gaussian_rbf };

/// Gaussian RBF kernel k(x1, x2) = exp(-bandwidth/2 * |x1 - x2|^2), applied
/// independently to each of the `output_dim` output channels (the full
/// multi-output kernel is this scalar times the k x k identity).
struct KernelSpec {
    KernelFamily family = KernelFamily::gaussian_rbf;
    double bandwidth = 1.0;
    int output_dim = 1;

    void validate() const;
};

/// Throws DataError when the set is empty or holds non-finite entries.
void validate_points(const PointSet& points, const char* what);

double kernel_scalar(const KernelSpec& spec,
                     const Eigen::Ref<const Eigen::VectorXd>& x1,
                     const Eigen::Ref<const Eigen::VectorXd>& x2);

/// |A| x |B| matrix of pairwise kernel values. Distances are accumulated
/// feature by feature, so kernel_matrix(A, A) is exactly symmetric with a
/// unit diagonal.
Eigen::MatrixXd kernel_matrix(const KernelSpec& spec, const PointSet& a, const PointSet& b);

/// Same as kernel_matrix, restricted to the rows of `a` listed in `rows` and
/// the column range [col_begin, col_begin + col_count) of `b`.
Eigen::MatrixXd kernel_block(const KernelSpec& spec, const PointSet& a,
                             const std::vector<Eigen::Index>& rows, const PointSet& b,
                             Eigen::Index col_begin, Eigen::Index col_count);

/// K(X, X) v without materializing K: the columns of K are produced in groups
/// of `group_size` points and their contributions K(., X_g) v_g are summed in
/// group order.
Eigen::VectorXd kernel_matvec_chunked(const KernelSpec& spec, const PointSet& x,
                                      const Eigen::Ref<const Eigen::VectorXd>& v,
                                      std::size_t group_size);

} // namespace biasmeter
