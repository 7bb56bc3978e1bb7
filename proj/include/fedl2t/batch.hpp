#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include <Eigen/Dense>

namespace fedl2t {

/// Row-major dense matrix; one sample per row throughout the library.
using Matrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

/// Labelled samples: `x` is n x d, `y` holds one class in {0, 1} per row.
struct SampleBatch {
    Matrix x;
    std::vector<int> y;

    std::size_t size() const { return y.size(); }
    std::size_t dim() const { return static_cast<std::size_t>(x.cols()); }
    bool empty() const { return y.empty(); }

    /// Rows picked by index, in the given order.
    SampleBatch subset(std::span<const std::size_t> rows) const;
};

}  // namespace fedl2t
