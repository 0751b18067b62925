#include "biasmeter/kernel.hpp"

#include "biasmeter/error.hpp"

#include <cmath>
#include <string>

namespace biasmeter {

void KernelSpec::validate() const {
    if (!(bandwidth > 0.0) || !std::isfinite(bandwidth))
        throw UsageError("kernel bandwidth must be a positive finite number, got " +
                         std::to_string(bandwidth));
    if (output_dim < 1)
        throw UsageError("kernel output_dim must be >= 1, got " + std::to_string(output_dim));
}

void validate_points(const PointSet& points, const char* what) {
    if (points.rows() < 1 || points.cols() < 1)
        throw DataError(std::string(what) + ": point set is empty");
    if (!points.allFinite())
        throw DataError(std::string(what) + ": point set contains non-finite entries");
}

namespace {

void check_dims(Eigen::Index a, Eigen::Index b) {
    if (a != b)
        throw UsageError("kernel input dimension mismatch: " + std::to_string(a) + " vs " +
                         std::to_string(b));
}

inline double rbf(double bandwidth, double sq_dist) { return std::exp(-0.5 * bandwidth * sq_dist); }

// Column-major copies keep each point contiguous for the distance loops.
Eigen::MatrixXd transposed(const PointSet& p) { return p.transpose(); }

} // namespace

double kernel_scalar(const KernelSpec& spec, const Eigen::Ref<const Eigen::VectorXd>& x1,
                     const Eigen::Ref<const Eigen::VectorXd>& x2) {
    check_dims(x1.size(), x2.size());
    return rbf(spec.bandwidth, (x1 - x2).squaredNorm());
}

Eigen::MatrixXd kernel_matrix(const KernelSpec& spec, const PointSet& a, const PointSet& b) {
    check_dims(a.cols(), b.cols());
    const Eigen::MatrixXd at = transposed(a);
    const Eigen::MatrixXd bt = transposed(b);
    Eigen::MatrixXd out(a.rows(), b.rows());
    for (Eigen::Index j = 0; j < b.rows(); ++j)
        for (Eigen::Index i = 0; i < a.rows(); ++i)
            out(i, j) = rbf(spec.bandwidth, (at.col(i) - bt.col(j)).squaredNorm());
    return out;
}

Eigen::MatrixXd kernel_block(const KernelSpec& spec, const PointSet& a,
                             const std::vector<Eigen::Index>& rows, const PointSet& b,
                             Eigen::Index col_begin, Eigen::Index col_count) {
    check_dims(a.cols(), b.cols());
    if (col_begin < 0 || col_count < 0 || col_begin + col_count > b.rows())
        throw UsageError("kernel_block column range out of bounds");
    const Eigen::Index d = a.cols();
    Eigen::MatrixXd at(d, static_cast<Eigen::Index>(rows.size()));
    for (std::size_t r = 0; r < rows.size(); ++r)
        at.col(static_cast<Eigen::Index>(r)) = a.row(rows[r]).transpose();
    const Eigen::MatrixXd bt = b.middleRows(col_begin, col_count).transpose();

    Eigen::MatrixXd out(at.cols(), col_count);
    for (Eigen::Index j = 0; j < col_count; ++j)
        for (Eigen::Index i = 0; i < at.cols(); ++i)
            out(i, j) = rbf(spec.bandwidth, (at.col(i) - bt.col(j)).squaredNorm());
    return out;
}

Eigen::VectorXd kernel_matvec_chunked(const KernelSpec& spec, const PointSet& x,
                                      const Eigen::Ref<const Eigen::VectorXd>& v,
                                      std::size_t group_size) {
    if (group_size == 0) throw UsageError("kernel_matvec_chunked: group_size must be >= 1");
    if (v.size() != x.rows())
        throw UsageError("kernel_matvec_chunked: vector length " + std::to_string(v.size()) +
                         " does not match point count " + std::to_string(x.rows()));
    const Eigen::Index n = x.rows();
    const auto g = static_cast<Eigen::Index>(group_size);
    Eigen::VectorXd out = Eigen::VectorXd::Zero(n);
    for (Eigen::Index start = 0; start < n; start += g) {
        const Eigen::Index len = std::min(g, n - start);
        out.noalias() += kernel_matrix(spec, x, x.middleRows(start, len)) * v.segment(start, len);
    }
    return out;
}

} // namespace biasmeter
