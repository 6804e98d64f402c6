#include "ndet/nn/sda.hpp"

#include <algorithm>
#include <cmath>
#include <istream>
#include <numeric>
#include <ostream>
#include <random>

#include "ndet/nn/loss.hpp"
#include "ndet/nn/optimizer.hpp"

namespace ndet {

SquashNormalizer SquashNormalizer::fit(const std::vector<std::vector<double>>& rows) {
  if (rows.empty()) throw DataError("normalizer needs at least one row");
  const std::size_t d = rows.front().size();
  SquashNormalizer n;
  n.mean.assign(d, 0.0);
  n.inv_std.assign(d, 1.0);
  for (const auto& r : rows) {
    if (r.size() != d) throw DataError("rows differ in dimension");
    for (std::size_t j = 0; j < d; ++j) n.mean[j] += r[j];
  }
  for (auto& m : n.mean) m /= static_cast<double>(rows.size());
  std::vector<double> var(d, 0.0);
  for (const auto& r : rows)
    for (std::size_t j = 0; j < d; ++j) {
      const double z = r[j] - n.mean[j];
      var[j] += z * z;
    }
  for (std::size_t j = 0; j < d; ++j) {
    const double v = var[j] / static_cast<double>(rows.size());
    n.inv_std[j] = 1.0 / std::sqrt(std::max(v, 1e-12));
  }
  return n;
}

std::vector<double> SquashNormalizer::apply(const std::vector<double>& x) const {
  if (x.size() != mean.size())
    throw DataError(strf("input dimension %zu does not match normalizer %zu",
                         x.size(), mean.size()));
  std::vector<double> y(x.size());
  for (std::size_t j = 0; j < x.size(); ++j) {
    const double z = (x[j] - mean[j]) * inv_std[j];
    y[j] = 1.0 / (1.0 + std::exp(-z));
  }
  return y;
}

void SquashNormalizer::save(std::ostream& os) const {
  write_u32(os, static_cast<std::uint32_t>(mean.size()));
  for (double v : mean) write_f64(os, v);
  for (double v : inv_std) write_f64(os, v);
}

SquashNormalizer SquashNormalizer::load(std::istream& is) {
  const std::uint32_t d = read_u32(is);
  SquashNormalizer n;
  n.mean.resize(d);
  n.inv_std.resize(d);
  for (auto& v : n.mean) v = read_f64(is);
  for (auto& v : n.inv_std) v = read_f64(is);
  return n;
}

namespace {

Tensor pack_rows(const std::vector<std::vector<double>>& rows,
                 const std::vector<std::size_t>& idx, std::size_t lo,
                 std::size_t hi) {
  const std::size_t d = rows.front().size();
  Tensor out({hi - lo, d}, 0.0);
  for (std::size_t i = lo; i < hi; ++i)
    std::copy(rows[idx[i]].begin(), rows[idx[i]].end(),
              out.data() + (i - lo) * d);
  return out;
}

}  // namespace

SdaPretrainResult sda_pretrain(const std::vector<std::vector<double>>& data01,
                               const SdaConfig& cfg) {
  if (data01.empty()) throw DataError("pretraining requires non-empty data");
  if (!(cfg.corruption >= 0.0 && cfg.corruption < 1.0))
    throw ConfigError("corruption level must lie in [0, 1)");
  if (cfg.hidden_sizes.empty()) throw ConfigError("encoder needs at least one layer");

  std::vector<std::vector<double>> code = data01;
  SdaPretrainResult result;

  for (std::size_t layer = 0; layer < cfg.hidden_sizes.size(); ++layer) {
    const std::size_t in = code.front().size();
    const std::size_t out = cfg.hidden_sizes[layer];

    std::mt19937_64 init_rng(cfg.seed * 0x100 + layer);
    Network dae;
    dae.add(make_dense(in, out, init_rng));
    dae.add(make_activation(ActivationKind::Sigmoid));
    dae.add(make_dense(out, in, init_rng));
    dae.add(make_activation(ActivationKind::Sigmoid));

    OptimizerConfig oc;
    oc.kind = OptimizerKind::Sgd;
    oc.lr = cfg.pretrain_lr;
    Optimizer opt(oc);

    std::mt19937_64 shuffle_rng(cfg.seed * 0x100 + layer + 0x40);
    std::mt19937_64 corrupt_rng(cfg.seed * 0x100 + layer + 0x80);
    std::uniform_real_distribution<double> u(0.0, 1.0);

    const std::size_t n = code.size();
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    const auto params = dae.params();
    const auto grads = dae.grads();

    std::vector<double> losses;
    losses.reserve(cfg.pretrain_epochs);
    for (std::size_t epoch = 0; epoch < cfg.pretrain_epochs; ++epoch) {
      std::shuffle(order.begin(), order.end(), shuffle_rng);
      double total = 0.0;
      for (std::size_t lo = 0; lo < n; lo += cfg.pretrain_batch) {
        const std::size_t hi = std::min(n, lo + cfg.pretrain_batch);
        const Tensor clean = pack_rows(code, order, lo, hi);
        Tensor corrupted = clean;
        if (cfg.corruption > 0.0)
          for (std::size_t i = 0; i < corrupted.size(); ++i)
            if (u(corrupt_rng) < cfg.corruption) corrupted[i] = 0.0;

        dae.zero_grads();
        const Tensor y = dae.forward(corrupted, true);
        LossValue lv = loss_eval(LossKind::CrossEntropy, y, clean);
        // Classic reconstruction objective: sum over dimensions, mean over
        // the batch.
        for (std::size_t i = 0; i < lv.grad.size(); ++i)
          lv.grad[i] *= static_cast<double>(in);
        dae.backward(lv.grad);
        opt.step(params, grads);
        total += lv.loss * static_cast<double>(in) * static_cast<double>(hi - lo);
      }
      losses.push_back(total / static_cast<double>(n));
    }
    result.layer_losses.push_back(std::move(losses));
    result.weights.push_back(*dae.layer(0).params()[0]);
    result.biases.push_back(*dae.layer(0).params()[1]);

    // Propagate the training set through the new encoder layer.
    std::vector<std::vector<double>> next(n, std::vector<double>(out, 0.0));
    const Tensor& W = result.weights.back();
    const Tensor& b = result.biases.back();
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < out; ++j) {
        double acc = b[j];
        for (std::size_t k = 0; k < in; ++k) acc += code[i][k] * W.at2(k, j);
        next[i][j] = 1.0 / (1.0 + std::exp(-acc));
      }
    code = std::move(next);
  }
  return result;
}

Network assemble_sda_classifier(const SdaPretrainResult& pre, std::size_t input_dim,
                                std::size_t num_classes, std::uint64_t seed) {
  if (pre.weights.empty()) throw DataError("pretraining result has no layers");
  std::mt19937_64 rng(seed);
  Network net;
  std::size_t in = input_dim;
  for (std::size_t l = 0; l < pre.weights.size(); ++l) {
    const Tensor& W = pre.weights[l];
    if (W.dim(0) != in)
      throw DataError(strf("pretrained layer %zu expects input %zu, got %zu", l,
                           W.dim(0), in));
    auto dense = make_dense(in, W.dim(1), rng);
    *dense->params()[0] = W;
    *dense->params()[1] = pre.biases[l];
    in = W.dim(1);
    net.add(std::move(dense));
    net.add(make_activation(ActivationKind::Sigmoid));
  }
  net.add(make_dense(in, num_classes, rng));
  net.add(make_activation(ActivationKind::Sigmoid));
  return net;
}

}  // namespace ndet
