#include "igmmgan/tensor.hpp"

#include <cmath>
#include <functional>
#include <numeric>
#include <string>

#include "igmmgan/error.hpp"

namespace igmmgan {

std::size_t shape_product(const std::vector<std::size_t>& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

Tensor::Tensor(std::vector<std::size_t> shape, std::vector<double> data)
    : shape_(std::move(shape)), data_(std::move(data)) {
  for (std::size_t dim : shape_) {
    if (dim == 0) throw DimensionError("tensor dimensions must be positive");
  }
  if (shape_product(shape_) != data_.size()) {
    throw DimensionError("tensor shape holds " + std::to_string(shape_product(shape_)) +
                         " elements but data has " + std::to_string(data_.size()));
  }
  for (std::size_t i = 0; i < data_.size(); ++i) {
    if (!std::isfinite(data_[i])) {
      throw NumericError("non-finite tensor entry at flat index " + std::to_string(i));
    }
  }
}

Tensor Tensor::zeros(std::vector<std::size_t> shape) {
  const std::size_t n = shape_product(shape);
  return Tensor(std::move(shape), std::vector<double>(n, 0.0));
}

Tensor Tensor::from_matrix(const Matrix& m) {
  std::vector<double> data(m.data(), m.data() + m.size());
  return Tensor({static_cast<std::size_t>(m.rows()), static_cast<std::size_t>(m.cols())},
                std::move(data));
}

std::size_t Tensor::batch() const { return shape_.size() < 2 ? 1 : shape_.front(); }

std::size_t Tensor::row_width() const { return batch() == 0 ? 0 : data_.size() / batch(); }

Matrix Tensor::to_matrix() const {
  Matrix m(static_cast<Eigen::Index>(batch()), static_cast<Eigen::Index>(row_width()));
  std::copy(data_.begin(), data_.end(), m.data());
  return m;
}

Tensor Tensor::reshaped(std::vector<std::size_t> shape) const { return Tensor(std::move(shape), data_); }

}  // namespace igmmgan
