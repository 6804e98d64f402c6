// Network building blocks. Rank conventions double as batch semantics:
//   dense/activation/dropout/noise: rank-1 vector or rank-2 (rows, dim)
//   conv2d/maxpool2d: rank-3 (H, W, C) image or rank-4 (T, H, W, C) stack
//     (shared weights across the leading axis)
//   conv1d/maxpool1d: rank-2 (T, C)
//   lstm/bilstm: rank-2 (T, D) -> (T, H[, 2H]) or final hidden vector
//   flatten: rank-4 -> rank-2 (leading axis kept), lower ranks -> rank-1
#pragma once

#include <iosfwd>
#include <memory>
#include <random>
#include <string>
#include <vector>

#include "ndet/nn/tensor.hpp"

namespace ndet {

enum class ActivationKind { Linear, Tanh, Sigmoid, Softsign, Relu, Elu };

const char* to_string(ActivationKind kind);
ActivationKind activation_from_string(const std::string& s);
double activate(ActivationKind kind, double x);
// Derivative expressed through the input and the already-computed output.
double activate_derivative(ActivationKind kind, double x, double y);

class Layer {
 public:
  virtual ~Layer() = default;
  virtual std::string kind() const = 0;
  virtual std::string describe() const { return kind(); }
  virtual std::vector<std::size_t> output_shape(
      const std::vector<std::size_t>& in) const = 0;
  // Training mode records masks/noise so backward can replay them.
  virtual Tensor forward(const Tensor& x, bool training, std::mt19937_64& rng) = 0;
  // Accumulates parameter gradients (+=) and returns d(loss)/d(input).
  virtual Tensor backward(const Tensor& dy) = 0;
  virtual std::vector<Tensor*> params() { return {}; }
  virtual std::vector<Tensor*> grads() { return {}; }
  virtual bool recurrent() const { return false; }
  virtual void save(std::ostream& os) const = 0;
};

std::unique_ptr<Layer> load_layer(std::istream& is);

// Parameter order: weights (in, units), bias (units).
std::unique_ptr<Layer> make_dense(std::size_t in, std::size_t units,
                                  std::mt19937_64& rng);
// Parameter order: kernels (kh, kw, cin, k), bias (k). Odd kernel extents,
// stride 1, zero same-padding.
std::unique_ptr<Layer> make_conv2d(std::size_t kh, std::size_t kw, std::size_t cin,
                                   std::size_t k, std::mt19937_64& rng);
std::unique_ptr<Layer> make_maxpool2d(std::size_t ph, std::size_t pw);
// Parameter order: kernels (kt, cin, k), bias (k).
std::unique_ptr<Layer> make_conv1d(std::size_t kt, std::size_t cin, std::size_t k,
                                   std::mt19937_64& rng);
std::unique_ptr<Layer> make_maxpool1d(std::size_t p);
// Parameter order: wx (in, 4H), wh (H, 4H), bias (4H); gate slices
// [input, forget, candidate, output]; forget bias starts at 1.
std::unique_ptr<Layer> make_lstm(std::size_t in, std::size_t hidden,
                                 bool return_sequences, std::mt19937_64& rng);
// Forward-direction parameters first, then backward-direction (same order).
std::unique_ptr<Layer> make_bilstm(std::size_t in, std::size_t hidden,
                                   bool return_sequences, std::mt19937_64& rng);
std::unique_ptr<Layer> make_activation(ActivationKind kind);
std::unique_ptr<Layer> make_dropout(double rate);
std::unique_ptr<Layer> make_gaussian_noise(double stddev);
std::unique_ptr<Layer> make_flatten();

}  // namespace ndet
