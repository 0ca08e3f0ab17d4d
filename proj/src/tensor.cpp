#include "flowreg/tensor.hpp"

#include <cmath>
#include <numeric>
#include <sstream>

#include "flowreg/errors.hpp"

namespace flowreg {

namespace {
std::size_t shape_product(const std::vector<std::size_t>& shape) {
  std::size_t n = 1;
  for (std::size_t d : shape) n *= d;
  return shape.empty() ? 0 : n;
}
}  // namespace

Tensor::Tensor(std::vector<std::size_t> shape)
    : shape_(std::move(shape)), values_(shape_product(shape_), 0.0) {}

Tensor::Tensor(std::vector<std::size_t> shape, std::vector<double> values)
    : shape_(std::move(shape)), values_(std::move(values)) {
  if (shape_product(shape_) != values_.size()) {
    throw StructuralError("tensor shape does not match value count");
  }
}

Tensor Tensor::scalar(double v) { return Tensor({1, 1}, {v}); }

Tensor Tensor::zeros(std::size_t rows, std::size_t cols) {
  return Tensor({rows, cols});
}

Tensor Tensor::full(std::size_t rows, std::size_t cols, double v) {
  Tensor t({rows, cols});
  t.fill(v);
  return t;
}

Tensor Tensor::row(std::vector<double> values) {
  std::size_t n = values.size();
  return Tensor({1, n}, std::move(values));
}

Tensor Tensor::column(std::vector<double> values) {
  std::size_t n = values.size();
  return Tensor({n, 1}, std::move(values));
}

std::size_t Tensor::rows() const {
  if (shape_.empty()) return 0;
  return shape_.size() == 1 ? 1 : shape_[0];
}

std::size_t Tensor::cols() const {
  if (shape_.empty()) return 0;
  return shape_.size() == 1 ? shape_[0] : shape_[1];
}

bool Tensor::all_finite() const {
  for (double v : values_) {
    if (!std::isfinite(v)) return false;
  }
  return true;
}

void Tensor::fill(double v) {
  std::fill(values_.begin(), values_.end(), v);
}

std::string shape_string(const Tensor& t) {
  std::ostringstream os;
  os << "[";
  for (std::size_t i = 0; i < t.shape().size(); ++i) {
    if (i) os << "x";
    os << t.shape()[i];
  }
  os << "]";
  return os.str();
}

}  // namespace flowreg
