#include "ndet/nn/tensor.hpp"

#include <cmath>

namespace ndet {

namespace {
std::size_t shape_size(const std::vector<std::size_t>& shape) {
  if (shape.empty()) throw DataError("tensor shape must have at least one extent");
  std::size_t n = 1;
  for (std::size_t d : shape) {
    if (d == 0) throw DataError("tensor extents must be positive");
    n *= d;
  }
  return n;
}
}  // namespace

Tensor::Tensor(std::vector<std::size_t> shape, double fill)
    : shape_(std::move(shape)), v_(shape_size(shape_), fill) {}

Tensor Tensor::from(std::vector<std::size_t> shape, std::vector<double> values) {
  if (shape_size(shape) != values.size())
    throw DataError(strf("value count %zu does not match shape %s", values.size(),
                         shape_string(shape).c_str()));
  Tensor t;
  t.shape_ = std::move(shape);
  t.v_ = std::move(values);
  return t;
}

void Tensor::fill(double value) {
  for (auto& x : v_) x = value;
}

bool Tensor::finite() const {
  for (double x : v_)
    if (!std::isfinite(x)) return false;
  return true;
}

Tensor Tensor::reshaped(std::vector<std::size_t> shape) const {
  if (shape_size(shape) != v_.size())
    throw DataError(strf("cannot reshape %s to %s", shape_string(shape_).c_str(),
                         shape_string(shape).c_str()));
  Tensor t;
  t.shape_ = std::move(shape);
  t.v_ = v_;
  return t;
}

std::string shape_string(const std::vector<std::size_t>& shape) {
  std::string s = "(";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) s += ", ";
    s += std::to_string(shape[i]);
  }
  return s + ")";
}

}  // namespace ndet
