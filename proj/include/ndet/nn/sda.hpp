// Greedy layer-wise denoising-autoencoder pretraining and assembly of the
// pretrained encoder stack into a two-class classifier.
#pragma once

#include <cstdint>
#include <iosfwd>
#include <vector>

#include "ndet/nn/network.hpp"

namespace ndet {

// Maps raw features into (0, 1) via a fitted z-score followed by a sigmoid,
// so cross-entropy reconstruction is well-posed.
struct SquashNormalizer {
  std::vector<double> mean;
  std::vector<double> inv_std;

  static SquashNormalizer fit(const std::vector<std::vector<double>>& rows);
  std::vector<double> apply(const std::vector<double>& x) const;

  void save(std::ostream& os) const;
  static SquashNormalizer load(std::istream& is);
};

struct SdaConfig {
  std::vector<std::size_t> hidden_sizes{800, 500, 300};
  double corruption = 0.3;  // zero-masking probability
  double pretrain_lr = 0.5;
  std::size_t pretrain_epochs = 150;
  std::size_t pretrain_batch = 300;
  double finetune_lr = 0.1;
  std::size_t finetune_epochs = 300;
  std::size_t finetune_batch = 100;
  std::uint64_t seed = 1;
};

struct SdaPretrainResult {
  std::vector<Tensor> weights;  // encoder weights, (in, units) per layer
  std::vector<Tensor> biases;
  // Per layer: mean per-sample reconstruction cross-entropy per epoch
  // (summed over dimensions, averaged over the batch).
  std::vector<std::vector<double>> layer_losses;
};

// data01 rows must lie in (0, 1); untied decoder weights; corruption
// zero-masks each element independently. Deterministic per cfg.seed.
SdaPretrainResult sda_pretrain(const std::vector<std::vector<double>>& data01,
                               const SdaConfig& cfg);

// Encoder stack (pretrained) + randomly-initialized logistic-regression head:
// dense/sigmoid pairs ending in num_classes sigmoid outputs.
Network assemble_sda_classifier(const SdaPretrainResult& pre, std::size_t input_dim,
                                std::size_t num_classes, std::uint64_t seed);

}  // namespace ndet
