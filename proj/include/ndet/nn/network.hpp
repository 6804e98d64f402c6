// Sequential layer stack: forward/backward plumbing, gradient bookkeeping,
// static shape probing, and a versioned on-disk format.
#pragma once

#include <cstdint>
#include <memory>
#include <random>
#include <string>
#include <vector>

#include "ndet/nn/layers.hpp"

namespace ndet {

class Network {
 public:
  Network() = default;
  Network(Network&&) = default;
  Network& operator=(Network&&) = default;

  void add(std::unique_ptr<Layer> layer);
  std::size_t size() const { return layers_.size(); }
  Layer& layer(std::size_t i) { return *layers_[i]; }
  const Layer& layer(std::size_t i) const { return *layers_[i]; }

  // Stream feeding dropout masks and additive noise; reseeding makes the
  // next training forward passes reproducible.
  void reseed(std::uint64_t seed) { rng_.seed(seed); }

  // Throws NumericError naming the first layer that produces a non-finite
  // value.
  Tensor forward(const Tensor& x, bool training);
  Tensor backward(const Tensor& dloss);

  std::vector<Tensor*> params();
  std::vector<Tensor*> grads();
  void zero_grads();
  void scale_grads(double s);
  // Scales each recurrent layer's gradient block to the given L2 norm when it
  // exceeds it; returns the largest pre-clip norm seen.
  double clip_recurrent_grads(double max_norm);
  std::size_t param_count() const;

  // Static per-layer output shapes; validates the chain without running data.
  std::vector<std::vector<std::size_t>> probe(
      const std::vector<std::size_t>& input_shape) const;
  std::string summary(const std::vector<std::size_t>& input_shape) const;

  void save(const std::string& path) const;
  static Network load(const std::string& path);

 private:
  std::vector<std::unique_ptr<Layer>> layers_;
  std::mt19937_64 rng_{0x9e3779b97f4a7c15ull};
};

}  // namespace ndet
