#include "ndet/nn/train.hpp"

#include <algorithm>
#include <cstdio>
#include <numeric>
#include <random>

namespace ndet {

namespace {

Tensor pack_batch(const std::vector<Tensor>& items, const std::vector<std::size_t>& idx,
                  std::size_t lo, std::size_t hi) {
  const Tensor& first = items[idx[lo]];
  std::vector<std::size_t> shape;
  shape.push_back(hi - lo);
  for (std::size_t d : first.shape()) shape.push_back(d);
  Tensor out(shape, 0.0);
  const std::size_t step = first.size();
  for (std::size_t i = lo; i < hi; ++i) {
    const Tensor& t = items[idx[i]];
    if (t.shape() != first.shape())
      throw DataError("packed samples must share one shape");
    std::copy(t.data(), t.data() + step, out.data() + (i - lo) * step);
  }
  return out;
}

}  // namespace

TrainResult train_network(Network& net, const std::vector<Tensor>& inputs,
                          const std::vector<Tensor>& targets,
                          const TrainConfig& cfg) {
  if (inputs.empty()) throw DataError("training requires at least one sample");
  if (inputs.size() != targets.size())
    throw DataError("input and target counts differ");
  if (cfg.batch_size == 0) throw ConfigError("batch size must be positive");
  if (cfg.epochs == 0) throw ConfigError("epoch count must be positive");
  cfg.optimizer.validate();

  Optimizer opt(cfg.optimizer);
  std::mt19937_64 shuffle_rng(cfg.seed);
  net.reseed(cfg.seed ^ 0x5bf0a8f1d6c3e417ull);

  const std::size_t n = inputs.size();
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);

  TrainResult result;
  result.epoch_loss.reserve(cfg.epochs);
  const auto params = net.params();
  const auto grads = net.grads();

  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    if (cfg.shuffle) std::shuffle(order.begin(), order.end(), shuffle_rng);
    double total = 0.0;
    for (std::size_t lo = 0; lo < n; lo += cfg.batch_size) {
      const std::size_t hi = std::min(n, lo + cfg.batch_size);
      net.zero_grads();
      if (cfg.pack_rows) {
        const Tensor x = pack_batch(inputs, order, lo, hi);
        const Tensor t = pack_batch(targets, order, lo, hi);
        const Tensor y = net.forward(x, true);
        LossValue lv = loss_eval(cfg.loss, y, t);
        net.backward(lv.grad);
        total += lv.loss * static_cast<double>(hi - lo);
      } else {
        for (std::size_t i = lo; i < hi; ++i) {
          const Tensor y = net.forward(inputs[order[i]], true);
          LossValue lv = loss_eval(cfg.loss, y, targets[order[i]]);
          net.backward(lv.grad);
          total += lv.loss;
        }
        net.scale_grads(1.0 / static_cast<double>(hi - lo));
      }
      if (cfg.clip_norm > 0.0) net.clip_recurrent_grads(cfg.clip_norm);
      opt.step(params, grads);
    }
    result.epoch_loss.push_back(total / static_cast<double>(n));
    if (cfg.log_progress)
      std::fprintf(stderr, "epoch %zu/%zu loss %.6f\n", epoch + 1, cfg.epochs,
                   result.epoch_loss.back());
  }
  return result;
}

}  // namespace ndet
