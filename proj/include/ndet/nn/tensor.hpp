// Dense row-major double tensor used by every network layer.
#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include "ndet/common.hpp"

namespace ndet {

class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(std::vector<std::size_t> shape, double fill = 0.0);
  static Tensor from(std::vector<std::size_t> shape, std::vector<double> values);

  const std::vector<std::size_t>& shape() const { return shape_; }
  std::size_t rank() const { return shape_.size(); }
  std::size_t dim(std::size_t i) const { return shape_[i]; }
  std::size_t size() const { return v_.size(); }

  double* data() { return v_.data(); }
  const double* data() const { return v_.data(); }
  double& operator[](std::size_t i) { return v_[i]; }
  double operator[](std::size_t i) const { return v_[i]; }

  double& at2(std::size_t i, std::size_t j) { return v_[i * shape_[1] + j]; }
  double at2(std::size_t i, std::size_t j) const { return v_[i * shape_[1] + j]; }
  double& at3(std::size_t i, std::size_t j, std::size_t k) {
    return v_[(i * shape_[1] + j) * shape_[2] + k];
  }
  double at3(std::size_t i, std::size_t j, std::size_t k) const {
    return v_[(i * shape_[1] + j) * shape_[2] + k];
  }
  double& at4(std::size_t i, std::size_t j, std::size_t k, std::size_t l) {
    return v_[((i * shape_[1] + j) * shape_[2] + k) * shape_[3] + l];
  }
  double at4(std::size_t i, std::size_t j, std::size_t k, std::size_t l) const {
    return v_[((i * shape_[1] + j) * shape_[2] + k) * shape_[3] + l];
  }

  void fill(double value);
  bool finite() const;
  // Same value count, new extents.
  Tensor reshaped(std::vector<std::size_t> shape) const;

  bool operator==(const Tensor& other) const {
    return shape_ == other.shape_ && v_ == other.v_;
  }

 private:
  std::vector<std::size_t> shape_;
  std::vector<double> v_;
};

std::string shape_string(const std::vector<std::size_t>& shape);

}  // namespace ndet
