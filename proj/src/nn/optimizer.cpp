#include "ndet/nn/optimizer.hpp"

#include <cmath>

namespace ndet {

const char* to_string(OptimizerKind kind) {
  switch (kind) {
    case OptimizerKind::Sgd: return "sgd";
    case OptimizerKind::Rmsprop: return "rmsprop";
    case OptimizerKind::Adagrad: return "adagrad";
    case OptimizerKind::Adadelta: return "adadelta";
    case OptimizerKind::Adam: return "adam";
    case OptimizerKind::Adamax: return "adamax";
    case OptimizerKind::Nadam: return "nadam";
  }
  return "?";
}

OptimizerKind optimizer_from_string(const std::string& s) {
  if (s == "sgd") return OptimizerKind::Sgd;
  if (s == "rmsprop") return OptimizerKind::Rmsprop;
  if (s == "adagrad") return OptimizerKind::Adagrad;
  if (s == "adadelta") return OptimizerKind::Adadelta;
  if (s == "adam") return OptimizerKind::Adam;
  if (s == "adamax") return OptimizerKind::Adamax;
  if (s == "nadam") return OptimizerKind::Nadam;
  throw ConfigError("unknown optimizer kind '" + s + "'");
}

double OptimizerConfig::resolved_lr() const {
  if (lr >= 0.0) return lr;
  switch (kind) {
    case OptimizerKind::Sgd: return 0.01;
    case OptimizerKind::Rmsprop: return 0.001;
    case OptimizerKind::Adagrad: return 0.01;
    case OptimizerKind::Adadelta: return 1.0;
    case OptimizerKind::Adam: return 0.0005;
    case OptimizerKind::Adamax: return 0.002;
    case OptimizerKind::Nadam: return 0.002;
  }
  return 0.01;
}

double OptimizerConfig::resolved_rho() const {
  if (rho >= 0.0) return rho;
  return kind == OptimizerKind::Adadelta ? 0.95 : 0.9;
}

void OptimizerConfig::validate() const {
  if (resolved_lr() < 0.0) throw ConfigError("learning rate must be non-negative");
  if (decay < 0.0) throw ConfigError("learning-rate decay must be non-negative");
  if (!(beta1 >= 0.0 && beta1 < 1.0)) throw ConfigError("beta1 must lie in [0, 1)");
  if (!(beta2 >= 0.0 && beta2 < 1.0)) throw ConfigError("beta2 must lie in [0, 1)");
  if (!(eps > 0.0)) throw ConfigError("epsilon must be positive");
  if (!(resolved_rho() >= 0.0 && resolved_rho() < 1.0))
    throw ConfigError("rho must lie in [0, 1)");
}

Optimizer::Optimizer(const OptimizerConfig& cfg) : cfg_(cfg) { cfg_.validate(); }

void Optimizer::step(const std::vector<Tensor*>& params,
                     const std::vector<Tensor*>& grads) {
  if (params.size() != grads.size())
    throw DataError("parameter and gradient lists differ in length");
  if (slot1_.empty()) {
    slot1_.resize(params.size());
    slot2_.resize(params.size());
    for (std::size_t i = 0; i < params.size(); ++i) {
      slot1_[i].assign(params[i]->size(), 0.0);
      slot2_[i].assign(params[i]->size(), 0.0);
    }
  }
  if (slot1_.size() != params.size())
    throw DataError("parameter list changed length across steps");

  const double alpha =
      cfg_.resolved_lr() / (1.0 + cfg_.decay * static_cast<double>(t_));
  const double b1 = cfg_.beta1;
  const double b2 = cfg_.beta2;
  const double eps = cfg_.eps;
  const double rho = cfg_.resolved_rho();
  const double n = static_cast<double>(t_ + 1);  // 1-based step index

  for (std::size_t i = 0; i < params.size(); ++i) {
    Tensor& p = *params[i];
    const Tensor& g = *grads[i];
    if (p.size() != g.size()) throw DataError("gradient shape mismatch");
    if (slot1_[i].size() != p.size())
      throw DataError("parameter tensor changed size across steps");
    auto& s1 = slot1_[i];
    auto& s2 = slot2_[i];
    for (std::size_t j = 0; j < p.size(); ++j) {
      const double gj = g[j];
      switch (cfg_.kind) {
        case OptimizerKind::Sgd:
          p[j] -= alpha * gj;
          break;
        case OptimizerKind::Rmsprop:
          s1[j] = rho * s1[j] + (1.0 - rho) * gj * gj;
          p[j] -= alpha * gj / (std::sqrt(s1[j]) + eps);
          break;
        case OptimizerKind::Adagrad:
          s1[j] += gj * gj;
          p[j] -= alpha * gj / (std::sqrt(s1[j]) + eps);
          break;
        case OptimizerKind::Adadelta: {
          s1[j] = rho * s1[j] + (1.0 - rho) * gj * gj;
          const double delta =
              -std::sqrt(s2[j] + eps) / std::sqrt(s1[j] + eps) * gj;
          s2[j] = rho * s2[j] + (1.0 - rho) * delta * delta;
          p[j] += alpha * delta;
          break;
        }
        case OptimizerKind::Adam: {
          s1[j] = b1 * s1[j] + (1.0 - b1) * gj;
          s2[j] = b2 * s2[j] + (1.0 - b2) * gj * gj;
          const double mhat = s1[j] / (1.0 - std::pow(b1, n));
          const double vhat = s2[j] / (1.0 - std::pow(b2, n));
          p[j] -= alpha * mhat / (std::sqrt(vhat) + eps);
          break;
        }
        case OptimizerKind::Adamax: {
          s1[j] = b1 * s1[j] + (1.0 - b1) * gj;
          s2[j] = std::max(b2 * s2[j], std::abs(gj));
          p[j] -= alpha / (1.0 - std::pow(b1, n)) * s1[j] / (s2[j] + eps);
          break;
        }
        case OptimizerKind::Nadam: {
          s1[j] = b1 * s1[j] + (1.0 - b1) * gj;
          s2[j] = b2 * s2[j] + (1.0 - b2) * gj * gj;
          const double mhat = s1[j] / (1.0 - std::pow(b1, n + 1.0));
          const double ghat = gj / (1.0 - std::pow(b1, n));
          const double vhat = s2[j] / (1.0 - std::pow(b2, n));
          p[j] -= alpha * (b1 * mhat + (1.0 - b1) * ghat) /
                  (std::sqrt(vhat) + eps);
          break;
        }
      }
    }
  }
  ++t_;
}

}  // namespace ndet
