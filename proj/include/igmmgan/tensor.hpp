#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include <Eigen/Dense>

namespace igmmgan {

/// Row-major dense matrix; rows are batch entries throughout the library.
using Matrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using RowVector = Eigen::RowVectorXd;
using Vector = Eigen::VectorXd;

/// Shaped array of finite doubles in row-major order.
///
/// The first dimension is treated as the batch dimension when a tensor is
/// viewed as a matrix: a (B, 4, 32) tensor becomes a B x 128 matrix.
class Tensor {
 public:
  Tensor() = default;
  /// Throws DimensionError if the shape does not match the data length and
  /// NumericError if any entry is NaN or infinite.
  Tensor(std::vector<std::size_t> shape, std::vector<double> data);

  static Tensor zeros(std::vector<std::size_t> shape);
  static Tensor from_matrix(const Matrix& m);

  const std::vector<std::size_t>& shape() const { return shape_; }
  std::size_t rank() const { return shape_.size(); }
  std::size_t size() const { return data_.size(); }
  std::span<const double> data() const { return data_; }
  double operator[](std::size_t i) const { return data_[i]; }

  /// Leading dimension, or 1 for a rank-0/1 tensor.
  std::size_t batch() const;
  /// Product of the trailing dimensions.
  std::size_t row_width() const;

  Matrix to_matrix() const;
  /// Same data, new shape with equal element count.
  Tensor reshaped(std::vector<std::size_t> shape) const;

  bool operator==(const Tensor& other) const = default;

 private:
  std::vector<std::size_t> shape_;
  std::vector<double> data_;
};

std::size_t shape_product(const std::vector<std::size_t>& shape);

}  // namespace igmmgan
