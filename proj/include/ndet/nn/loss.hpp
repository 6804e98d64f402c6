// Training objectives: clipped binary cross-entropy and mean squared error,
// both averaged over every element of the prediction tensor.
#pragma once

#include <string>

#include "ndet/nn/tensor.hpp"

namespace ndet {

enum class LossKind { CrossEntropy, Mse };

const char* to_string(LossKind kind);
LossKind loss_from_string(const std::string& s);

struct LossValue {
  double loss = 0.0;
  Tensor grad;  // d(loss)/d(prediction), same shape as the prediction
};

LossValue loss_eval(LossKind kind, const Tensor& prediction, const Tensor& target);

}  // namespace ndet
