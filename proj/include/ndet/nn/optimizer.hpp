// The seven first-order update rules compared in the experiments, with
// shared step-count learning-rate decay.
#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "ndet/nn/tensor.hpp"

namespace ndet {

enum class OptimizerKind { Sgd, Rmsprop, Adagrad, Adadelta, Adam, Adamax, Nadam };

const char* to_string(OptimizerKind kind);
OptimizerKind optimizer_from_string(const std::string& s);

struct OptimizerConfig {
  OptimizerKind kind = OptimizerKind::Adam;
  double lr = -1.0;   // negative selects the per-kind default
  double decay = 0.0; // effective rate = lr / (1 + decay * steps_taken)
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double rho = -1.0;  // negative selects 0.9 (rmsprop) / 0.95 (adadelta)

  double resolved_lr() const;
  double resolved_rho() const;
  void validate() const;  // throws ConfigError on negative hyperparameters
};

class Optimizer {
 public:
  explicit Optimizer(const OptimizerConfig& cfg);

  // Applies one update; parameter and gradient lists must be positionally
  // stable across calls (accumulators are keyed by position).
  void step(const std::vector<Tensor*>& params, const std::vector<Tensor*>& grads);

  std::uint64_t steps() const { return t_; }
  const OptimizerConfig& config() const { return cfg_; }

 private:
  OptimizerConfig cfg_;
  std::uint64_t t_ = 0;
  std::vector<std::vector<double>> slot1_;  // first moment / squared-grad avg
  std::vector<std::vector<double>> slot2_;  // second moment / delta avg / inf norm
};

}  // namespace ndet
