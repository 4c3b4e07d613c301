#include "rle/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "rle/errors.hpp"

namespace rle {

Tensor2::Tensor2(std::size_t rows, std::size_t cols)
    : rows_(rows), cols_(cols), data_(rows * cols, 0.0) {}

Tensor2::Tensor2(std::size_t rows, std::size_t cols, std::vector<double> data)
    : rows_(rows), cols_(cols), data_(std::move(data)) {
  if (data_.size() != rows * cols) {
    throw ShapeError("Tensor2: data length " + std::to_string(data_.size()) +
                     " != " + std::to_string(rows) + "x" +
                     std::to_string(cols));
  }
  if (!all_finite()) throw DomainError("Tensor2: non-finite element");
}

Tensor2 Tensor2::row_vector(std::span<const double> v) {
  return Tensor2(1, v.size(), std::vector<double>(v.begin(), v.end()));
}

void Tensor2::fill(double v) noexcept { std::fill(data_.begin(), data_.end(), v); }

bool Tensor2::all_finite() const noexcept {
  return std::all_of(data_.begin(), data_.end(),
                     [](double x) { return std::isfinite(x); });
}

}  // namespace rle
