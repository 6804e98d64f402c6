// Minibatch trainer over (input, target) tensor pairs.
#pragma once

#include <cstdint>
#include <vector>

#include "ndet/nn/loss.hpp"
#include "ndet/nn/network.hpp"
#include "ndet/nn/optimizer.hpp"

namespace ndet {

struct TrainConfig {
  std::size_t epochs = 10;
  std::size_t batch_size = 32;
  OptimizerConfig optimizer;
  LossKind loss = LossKind::CrossEntropy;
  bool shuffle = true;
  std::uint64_t seed = 1;
  double clip_norm = 5.0;  // recurrent layers only; <= 0 disables
  // Stack rank-1 samples into one rank-2 tensor per minibatch; valid only
  // for networks whose layers all accept row batching (no recurrent or
  // image layers with rank-1 samples). Large speedup for dense stacks.
  bool pack_rows = false;
  bool log_progress = false;  // per-epoch line on stderr
};

struct TrainResult {
  std::vector<double> epoch_loss;  // mean per-sample loss per epoch
};

TrainResult train_network(Network& net, const std::vector<Tensor>& inputs,
                          const std::vector<Tensor>& targets,
                          const TrainConfig& cfg);

}  // namespace ndet
