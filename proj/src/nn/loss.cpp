#include "ndet/nn/loss.hpp"

#include <algorithm>
#include <cmath>

namespace ndet {

namespace {
constexpr double kClipLo = 1e-7;
constexpr double kClipHi = 1.0 - 1e-7;
}  // namespace

const char* to_string(LossKind kind) {
  return kind == LossKind::CrossEntropy ? "cross_entropy" : "mse";
}

LossKind loss_from_string(const std::string& s) {
  if (s == "cross_entropy") return LossKind::CrossEntropy;
  if (s == "mse") return LossKind::Mse;
  throw ConfigError("unknown loss kind '" + s + "'");
}

LossValue loss_eval(LossKind kind, const Tensor& prediction, const Tensor& target) {
  if (prediction.shape() != target.shape())
    throw DataError(strf("prediction shape %s does not match target shape %s",
                         shape_string(prediction.shape()).c_str(),
                         shape_string(target.shape()).c_str()));
  const std::size_t n = prediction.size();
  LossValue out;
  out.grad = Tensor(prediction.shape(), 0.0);
  double total = 0.0;
  if (kind == LossKind::Mse) {
    for (std::size_t i = 0; i < n; ++i) {
      const double e = prediction[i] - target[i];
      total += e * e;
      out.grad[i] = 2.0 * e / n;
    }
  } else {
    for (std::size_t i = 0; i < n; ++i) {
      const double p = std::clamp(prediction[i], kClipLo, kClipHi);
      const double t = target[i];
      total += -(t * std::log(p) + (1.0 - t) * std::log(1.0 - p));
      // Clipped regions contribute a constant, so their gradient is zero.
      out.grad[i] = prediction[i] > kClipLo && prediction[i] < kClipHi
                        ? (p - t) / (p * (1.0 - p) * n)
                        : 0.0;
    }
  }
  out.loss = total / n;
  return out;
}

}  // namespace ndet
