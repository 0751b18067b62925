#include "biasmeter/dataset.hpp"

#include "biasmeter/error.hpp"

#include <string>

namespace biasmeter {

void Dataset::validate() const {
    validate_points(train_x, "train inputs");
    validate_points(test_x, "test inputs");
    if (train_x.cols() != test_x.cols())
        throw DataError("train/test input widths differ: " + std::to_string(train_x.cols()) +
                        " vs " + std::to_string(test_x.cols()));
    if (train_y.rows() != train_x.rows() || test_y.rows() != test_x.rows())
        throw DataError("target rows do not match input rows");
    if (train_y.cols() < 1 || train_y.cols() != test_y.cols())
        throw DataError("train/test target widths differ or are empty");
    if (!train_y.allFinite() || !test_y.allFinite())
        throw DataError("targets contain non-finite values");
}

} // namespace biasmeter
