#include "ndet/architectures.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <random>
#include <sstream>

#include "ndet/config.hpp"

namespace ndet {

namespace {

// Stage-specific sub-seed derivation (splitmix64 over a salted seed) so that
// changing one stage's randomness never perturbs another's.
constexpr std::uint64_t kSaltHmmSeiz = 0xA1;
constexpr std::uint64_t kSaltHmmBckg = 0xA2;
constexpr std::uint64_t kSaltSampling = 0xA3;
constexpr std::uint64_t kSaltNetInit = 0xB1;
constexpr std::uint64_t kSaltSda = 0xB2;
constexpr std::uint64_t kSaltSdaHead = 0xB3;
constexpr std::uint64_t kSaltNetTrain = 0xB4;

std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t salt) {
  std::uint64_t z = seed ^ (salt * 0x9e3779b97f4a7c15ull);
  z += 0x9e3779b97f4a7c15ull;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
  return z ^ (z >> 31);
}

std::size_t frames_per_epoch_of(const FeatureConfig& fc) {
  return static_cast<std::size_t>(std::llround(1.0 / fc.frame_s));
}

std::size_t clamp_index(long long i, std::size_t n) {
  if (i < 0) return 0;
  if (i >= static_cast<long long>(n)) return n - 1;
  return static_cast<std::size_t>(i);
}

}  // namespace

const char* to_string(SystemKind kind) {
  switch (kind) {
    case SystemKind::HmmOnly: return "hmm";
    case SystemKind::HmmSda: return "hmm_sda";
    case SystemKind::HmmLstm: return "hmm_lstm";
    case SystemKind::IpcaLstm: return "ipca_lstm";
    case SystemKind::CnnMlp: return "cnn_mlp";
    case SystemKind::CnnLstm: return "cnn_lstm";
  }
  return "?";
}

SystemKind system_kind_from_string(const std::string& s) {
  if (s == "hmm" || s == "hmm_only") return SystemKind::HmmOnly;
  if (s == "hmm_sda") return SystemKind::HmmSda;
  if (s == "hmm_lstm") return SystemKind::HmmLstm;
  if (s == "ipca_lstm") return SystemKind::IpcaLstm;
  if (s == "cnn_mlp") return SystemKind::CnnMlp;
  if (s == "cnn_lstm") return SystemKind::CnnLstm;
  throw ConfigError(strf("unknown system kind '%s'", s.c_str()));
}

FeatureScaler FeatureScaler::fit(const std::vector<const FeatureSequence*>& seqs) {
  if (seqs.empty()) throw DataError("feature scaler needs at least one sequence");
  const std::size_t dim = seqs.front()->dim();
  std::vector<double> sum(dim, 0.0), sum2(dim, 0.0);
  std::size_t n = 0;
  for (const FeatureSequence* fs : seqs) {
    if (fs->dim() != dim) throw DataError("feature scaler: mixed feature dimensions");
    for (std::size_t f = 0; f < fs->frames(); ++f) {
      for (std::size_t c = 0; c < fs->channels(); ++c) {
        for (std::size_t d = 0; d < dim; ++d) {
          const double v = fs->at(f, c, d);
          sum[d] += v;
          sum2[d] += v * v;
        }
      }
    }
    n += fs->frames() * fs->channels();
  }
  if (n == 0) throw DataError("feature scaler: empty sequences");
  FeatureScaler scaler;
  scaler.mean.resize(dim);
  scaler.inv_std.resize(dim);
  for (std::size_t d = 0; d < dim; ++d) {
    scaler.mean[d] = sum[d] / static_cast<double>(n);
    const double var =
        std::max(sum2[d] / static_cast<double>(n) - scaler.mean[d] * scaler.mean[d], 0.0);
    scaler.inv_std[d] = 1.0 / std::max(std::sqrt(var), 1e-9);
  }
  return scaler;
}

void FeatureScaler::save(std::ostream& os) const {
  write_u64(os, mean.size());
  for (double v : mean) write_f64(os, v);
  for (double v : inv_std) write_f64(os, v);
}

FeatureScaler FeatureScaler::load(std::istream& is) {
  FeatureScaler scaler;
  const std::uint64_t dim = read_u64(is);
  scaler.mean.resize(dim);
  scaler.inv_std.resize(dim);
  for (auto& v : scaler.mean) v = read_f64(is);
  for (auto& v : scaler.inv_std) v = read_f64(is);
  return scaler;
}

SystemConfig SystemConfig::defaults_for(SystemKind kind) {
  SystemConfig cfg;
  cfg.kind = kind;
  cfg.optimizer.kind = OptimizerKind::Adam;
  cfg.optimizer.decay = 1e-4;
  if (kind == SystemKind::CnnLstm) {
    cfg.activation = ActivationKind::Elu;
    cfg.loss = LossKind::Mse;
  }
  return cfg;
}

void SystemConfig::validate() const {
  if (channels == 0) throw ConfigError("system needs at least one channel");
  features.validate();
  if (supervector_window == 0 || supervector_window % 2 == 0) {
    throw ConfigError(strf("supervector window %zu must be odd", supervector_window));
  }
  if (context_epochs == 0 || context_epochs % 2 == 0) {
    throw ConfigError(strf("context window %zu must be odd", context_epochs));
  }
  if (frame_stack_epochs == 0 || frame_stack_epochs % 2 == 0) {
    throw ConfigError(strf("frame-stack window %zu must be odd", frame_stack_epochs));
  }
  if (ipca_sequence == 0 || ipca_sequence % 2 == 0) {
    throw ConfigError(strf("reduced-window sequence length %zu must be odd", ipca_sequence));
  }
  if (pca_dim == 0 || ipca_dim == 0) throw ConfigError("reduction dims must be positive");
  if (kind == SystemKind::HmmSda &&
      pca_dim > supervector_window * 2 * channels) {
    throw ConfigError("pca dim exceeds supervector width");
  }
  if (kind == SystemKind::HmmLstm && pca_dim > 2 * channels) {
    throw ConfigError("pca dim exceeds per-epoch score width");
  }
  if (kind == SystemKind::IpcaLstm &&
      ipca_dim > channels * features.total_dim * context_epochs) {
    throw ConfigError("streaming reduction dim exceeds window width");
  }
  if (ipca_batch == 0) throw ConfigError("streaming reduction batch must be positive");
  if (lstm_hidden == 0 || ipca_lstm_hidden == 0 || bilstm_hidden1 == 0 ||
      bilstm_hidden2 == 0) {
    throw ConfigError("hidden sizes must be positive");
  }
  if (conv1d_filters == 0 || conv1d_kernel == 0 || conv1d_kernel % 2 == 0) {
    throw ConfigError("temporal convolution needs an odd kernel and >= 1 filter");
  }
  if (pool1d == 0) throw ConfigError("temporal pool size must be positive");
  if (!(hmm_temperature > 0.0)) throw ConfigError("posterior temperature must be positive");
  if (!(dropout_dense >= 0.0 && dropout_dense < 1.0) ||
      !(dropout_conv >= 0.0 && dropout_conv < 1.0)) {
    throw ConfigError("dropout rates must lie in [0, 1)");
  }
  if (!(noise_std >= 0.0)) throw ConfigError("noise level must be non-negative");
  if (!(balance_ratio > 0.0)) throw ConfigError("balance ratio must be positive");
  if (net_epochs == 0 || net_batch == 0) {
    throw ConfigError("training epochs and batch size must be positive");
  }
  if (kind == SystemKind::HmmSda && sda.hidden_sizes.empty()) {
    throw ConfigError("encoder stack needs at least one hidden layer");
  }
  optimizer.validate();
}

std::size_t SystemConfig::min_epochs() const {
  switch (kind) {
    case SystemKind::HmmOnly: return 1;
    case SystemKind::HmmSda:
    case SystemKind::HmmLstm: return supervector_window;
    case SystemKind::IpcaLstm:
    case SystemKind::CnnMlp: return context_epochs;
    case SystemKind::CnnLstm: return frame_stack_epochs;
  }
  return 1;
}

std::vector<double> score_supervector(const EpochScoreGrid& grid, std::size_t center,
                                      std::size_t window) {
  if (grid.epochs() == 0) throw DataError("empty score grid");
  std::vector<double> out;
  out.reserve(window * grid.width());
  const long long half = static_cast<long long>(window / 2);
  for (long long k = -half; k <= half; ++k) {
    const std::size_t e = clamp_index(static_cast<long long>(center) + k, grid.epochs());
    const std::vector<double> row = grid.row(e);
    out.insert(out.end(), row.begin(), row.end());
  }
  return out;
}

std::vector<double> epoch_feature_summary(const FeatureSequence& feats, std::size_t epoch) {
  const auto [begin, end] = feats.epoch_frame_range(epoch);
  if (begin >= end) throw DataError(strf("epoch %zu has no frames", epoch));
  std::vector<double> out(feats.channels() * feats.dim(), 0.0);
  for (std::size_t f = begin; f < end; ++f) {
    for (std::size_t c = 0; c < feats.channels(); ++c) {
      for (std::size_t d = 0; d < feats.dim(); ++d) {
        out[c * feats.dim() + d] += feats.at(f, c, d);
      }
    }
  }
  const double inv = 1.0 / static_cast<double>(end - begin);
  for (double& v : out) v *= inv;
  return out;
}

std::vector<double> context_window_vector(const std::vector<std::vector<double>>& summaries,
                                          std::size_t center, std::size_t window) {
  if (summaries.empty()) throw DataError("no epoch summaries");
  std::vector<double> out;
  out.reserve(window * summaries.front().size());
  const long long half = static_cast<long long>(window / 2);
  for (long long k = -half; k <= half; ++k) {
    const std::size_t e = clamp_index(static_cast<long long>(center) + k, summaries.size());
    out.insert(out.end(), summaries[e].begin(), summaries[e].end());
  }
  return out;
}

Tensor feature_image(const FeatureSequence& feats, std::size_t center,
                     std::size_t window_epochs, const FeatureScaler* scaler) {
  const std::size_t fpe = feats.frames_per_epoch();
  const std::size_t count = window_epochs * fpe;
  Tensor img({count, feats.channels(), feats.dim()}, 0.0);
  const long long start = static_cast<long long>(center) * static_cast<long long>(fpe) -
                          static_cast<long long>((count - fpe) / 2);
  for (std::size_t i = 0; i < count; ++i) {
    const std::size_t f = clamp_index(start + static_cast<long long>(i), feats.frames());
    for (std::size_t c = 0; c < feats.channels(); ++c) {
      for (std::size_t d = 0; d < feats.dim(); ++d) {
        const double v = feats.at(f, c, d);
        img.at3(i, c, d) = scaler ? scaler->apply(v, d) : v;
      }
    }
  }
  return img;
}

Tensor frame_stack(const FeatureSequence& feats, std::size_t center,
                   std::size_t window_epochs, const FeatureScaler* scaler) {
  const std::size_t fpe = feats.frames_per_epoch();
  const std::size_t count = window_epochs * fpe;
  Tensor stack({count, feats.dim(), feats.channels(), 1}, 0.0);
  const long long start = static_cast<long long>(center) * static_cast<long long>(fpe) -
                          static_cast<long long>((count - fpe) / 2);
  for (std::size_t i = 0; i < count; ++i) {
    const std::size_t f = clamp_index(start + static_cast<long long>(i), feats.frames());
    for (std::size_t c = 0; c < feats.channels(); ++c) {
      for (std::size_t d = 0; d < feats.dim(); ++d) {
        const double v = feats.at(f, c, d);
        stack.at4(i, d, c, 0) = scaler ? scaler->apply(v, d) : v;
      }
    }
  }
  return stack;
}

namespace {

Network build_network(const SystemConfig& cfg, std::uint64_t init_seed) {
  std::mt19937_64 rng(init_seed);
  Network net;
  switch (cfg.kind) {
    case SystemKind::HmmOnly:
      break;
    case SystemKind::HmmSda: {
      std::size_t in = cfg.pca_dim;
      for (std::size_t h : cfg.sda.hidden_sizes) {
        net.add(make_dense(in, h, rng));
        net.add(make_activation(ActivationKind::Sigmoid));
        in = h;
      }
      net.add(make_dense(in, 2, rng));
      net.add(make_activation(ActivationKind::Sigmoid));
      break;
    }
    case SystemKind::HmmLstm:
      net.add(make_lstm(cfg.pca_dim, cfg.lstm_hidden, false, rng));
      net.add(make_dense(cfg.lstm_hidden, 2, rng));
      net.add(make_activation(ActivationKind::Sigmoid));
      break;
    case SystemKind::IpcaLstm:
      net.add(make_lstm(cfg.ipca_dim, cfg.ipca_lstm_hidden, false, rng));
      net.add(make_dense(cfg.ipca_lstm_hidden, 2, rng));
      net.add(make_activation(ActivationKind::Sigmoid));
      break;
    case SystemKind::CnnMlp: {
      const std::size_t fpe = frames_per_epoch_of(cfg.features);
      std::size_t h = cfg.context_epochs * fpe;
      std::size_t w = cfg.channels;
      std::size_t cin = cfg.features.total_dim;
      for (std::size_t bank : {std::size_t{16}, std::size_t{32}, std::size_t{64}}) {
        net.add(make_conv2d(3, 3, cin, bank, rng));
        net.add(make_activation(cfg.activation));
        net.add(make_conv2d(3, 3, bank, bank, rng));
        net.add(make_activation(cfg.activation));
        net.add(make_maxpool2d(2, 2));
        net.add(make_dropout(cfg.dropout_conv));
        h /= 2;
        w /= 2;
        cin = bank;
      }
      net.add(make_flatten());
      net.add(make_dense(h * w * cin, 512, rng));
      net.add(make_activation(cfg.activation));
      net.add(make_dropout(cfg.dropout_dense));
      net.add(make_dense(512, 2, rng));
      net.add(make_activation(ActivationKind::Sigmoid));
      break;
    }
    case SystemKind::CnnLstm: {
      std::size_t h = cfg.features.total_dim;
      std::size_t w = cfg.channels;
      std::size_t cin = 1;
      for (std::size_t bank : {std::size_t{16}, std::size_t{32}, std::size_t{64}}) {
        net.add(make_conv2d(3, 3, cin, bank, rng));
        net.add(make_activation(cfg.activation));
        net.add(make_maxpool2d(2, 2));
        net.add(make_dropout(cfg.dropout_conv));
        h /= 2;
        w /= 2;
        cin = bank;
      }
      net.add(make_flatten());
      net.add(make_conv1d(cfg.conv1d_kernel, h * w * cin, cfg.conv1d_filters, rng));
      net.add(make_activation(cfg.activation));
      net.add(make_maxpool1d(cfg.pool1d));
      net.add(make_gaussian_noise(cfg.noise_std));
      net.add(make_bilstm(cfg.conv1d_filters, cfg.bilstm_hidden1, true, rng));
      net.add(make_bilstm(2 * cfg.bilstm_hidden1, cfg.bilstm_hidden2, false, rng));
      net.add(make_dropout(cfg.dropout_dense));
      net.add(make_dense(2 * cfg.bilstm_hidden2, 2, rng));
      net.add(make_activation(ActivationKind::Sigmoid));
      break;
    }
  }
  return net;
}

std::vector<std::size_t> net_input_shape(const SystemConfig& cfg) {
  const std::size_t fpe = frames_per_epoch_of(cfg.features);
  switch (cfg.kind) {
    case SystemKind::HmmOnly: return {};
    case SystemKind::HmmSda: return {cfg.pca_dim};
    case SystemKind::HmmLstm: return {cfg.supervector_window, cfg.pca_dim};
    case SystemKind::IpcaLstm: return {cfg.ipca_sequence, cfg.ipca_dim};
    case SystemKind::CnnMlp:
      return {cfg.context_epochs * fpe, cfg.channels, cfg.features.total_dim};
    case SystemKind::CnnLstm:
      return {cfg.frame_stack_epochs * fpe, cfg.features.total_dim, cfg.channels, 1};
  }
  return {};
}

}  // namespace

PipelineDesc build_system(const SystemConfig& cfg) {
  cfg.validate();
  const std::size_t dim = cfg.features.total_dim;
  const std::size_t width = 2 * cfg.channels;
  const std::size_t fpe = frames_per_epoch_of(cfg.features);

  PipelineDesc pipe;
  pipe.kind = cfg.kind;
  pipe.stages.push_back({"features (per frame, per channel)", {dim}});
  switch (cfg.kind) {
    case SystemKind::HmmOnly:
      pipe.stages.push_back({"epoch_scores", {width}});
      pipe.stages.push_back({"likelihood_ratio_posterior", {1}});
      return pipe;
    case SystemKind::HmmSda:
      pipe.stages.push_back({"epoch_scores", {width}});
      pipe.stages.push_back({"score_window", {cfg.supervector_window * width}});
      pipe.stages.push_back({"pca", {cfg.pca_dim}});
      pipe.stages.push_back({"squash", {cfg.pca_dim}});
      break;
    case SystemKind::HmmLstm:
      pipe.stages.push_back({"epoch_scores", {width}});
      pipe.stages.push_back({"pca", {cfg.pca_dim}});
      pipe.stages.push_back({"score_sequence", {cfg.supervector_window, cfg.pca_dim}});
      break;
    case SystemKind::IpcaLstm:
      pipe.stages.push_back({"epoch_summary", {cfg.channels * dim}});
      pipe.stages.push_back(
          {"context_window", {cfg.channels * dim * cfg.context_epochs}});
      pipe.stages.push_back({"streaming_pca", {cfg.ipca_dim}});
      pipe.stages.push_back({"window_sequence", {cfg.ipca_sequence, cfg.ipca_dim}});
      break;
    case SystemKind::CnnMlp:
      pipe.stages.push_back(
          {"feature_image", {cfg.context_epochs * fpe, cfg.channels, dim}});
      break;
    case SystemKind::CnnLstm:
      pipe.stages.push_back(
          {"frame_stack", {cfg.frame_stack_epochs * fpe, dim, cfg.channels, 1}});
      break;
  }

  const Network net = build_network(cfg, mix_seed(cfg.seed, kSaltNetInit));
  std::vector<std::vector<std::size_t>> shapes;
  try {
    shapes = net.probe(net_input_shape(cfg));
  } catch (const Error& e) {
    throw ConfigError(strf("shape chain failed: %s", e.what()));
  }
  for (std::size_t i = 0; i < net.size(); ++i) {
    pipe.stages.push_back({net.layer(i).describe(), shapes[i]});
  }
  return pipe;
}

std::string describe(const PipelineDesc& pipeline) {
  std::ostringstream os;
  os << "system: " << to_string(pipeline.kind) << '\n';
  for (const StageDesc& stage : pipeline.stages) {
    os << strf("  %-32s -> %s\n", stage.name.c_str(), shape_string(stage.shape).c_str());
  }
  return os.str();
}

namespace {

struct Sample {
  std::size_t rec = 0;
  std::size_t epoch = 0;
  EventLabel label = EventLabel::Bckg;
};

struct PreparedCorpus {
  std::vector<FeatureSequence> feats;
  std::vector<EpochLabelTrack> labels;
};

PreparedCorpus prepare_corpus(const SystemConfig& cfg, const Corpus& corpus) {
  if (corpus.empty()) throw DataError("empty training corpus");
  PreparedCorpus prep;
  prep.feats.reserve(corpus.size());
  prep.labels.reserve(corpus.size());
  for (const auto& [record, ann] : corpus) {
    if (record.channels() != cfg.channels) {
      throw DataError(strf("record has %zu channels, system expects %zu",
                           record.channels(), cfg.channels));
    }
    FeatureSequence fs = extract_features(record, cfg.features);
    EpochLabelTrack track = annotations_to_epoch_labels(ann);
    if (track.size() < fs.epoch_count()) {
      throw DataError(strf("annotation covers %zu epochs, features span %zu",
                           track.size(), fs.epoch_count()));
    }
    track.labels.resize(fs.epoch_count());
    prep.feats.push_back(std::move(fs));
    prep.labels.push_back(std::move(track));
  }
  return prep;
}

// Balanced center sampling: every seizure epoch (up to the cap), background
// epochs subsampled to balance_ratio times the seizure count.
std::vector<Sample> sample_centers(const SystemConfig& cfg, const PreparedCorpus& prep,
                                   double* seiz_fraction) {
  std::vector<Sample> seiz, bckg;
  for (std::size_t r = 0; r < prep.labels.size(); ++r) {
    for (std::size_t e = 0; e < prep.labels[r].size(); ++e) {
      const EventLabel label = prep.labels[r].labels[e];
      (label == EventLabel::Seiz ? seiz : bckg).push_back({r, e, label});
    }
  }
  if (seiz.empty() || bckg.empty()) {
    throw DataError("training corpus must contain both seizure and background epochs");
  }
  std::mt19937_64 rng(mix_seed(cfg.seed, kSaltSampling));
  std::shuffle(seiz.begin(), seiz.end(), rng);
  std::shuffle(bckg.begin(), bckg.end(), rng);
  std::size_t n_seiz = seiz.size();
  if (cfg.max_per_class > 0) n_seiz = std::min(n_seiz, cfg.max_per_class);
  std::size_t n_bckg = std::min(
      bckg.size(), static_cast<std::size_t>(std::llround(cfg.balance_ratio *
                                                         static_cast<double>(n_seiz))));
  if (cfg.max_per_class > 0) n_bckg = std::min(n_bckg, cfg.max_per_class);
  n_bckg = std::max<std::size_t>(n_bckg, 1);
  seiz.resize(n_seiz);
  bckg.resize(n_bckg);
  std::vector<Sample> all;
  all.reserve(n_seiz + n_bckg);
  all.insert(all.end(), seiz.begin(), seiz.end());
  all.insert(all.end(), bckg.begin(), bckg.end());
  std::shuffle(all.begin(), all.end(), rng);
  if (seiz_fraction) {
    *seiz_fraction = static_cast<double>(n_seiz) / static_cast<double>(n_seiz + n_bckg);
  }
  return all;
}

std::vector<FrameSeq> class_sequences(const std::vector<Sample>& centers,
                                      const PreparedCorpus& prep, EventLabel want) {
  std::vector<FrameSeq> seqs;
  for (const Sample& s : centers) {
    if (s.label != want) continue;
    const FeatureSequence& fs = prep.feats[s.rec];
    const auto [begin, end] = fs.epoch_frame_range(s.epoch);
    for (std::size_t c = 0; c < fs.channels(); ++c) {
      FrameSeq seq;
      seq.reserve(end - begin);
      for (std::size_t f = begin; f < end; ++f) {
        std::vector<double> frame(fs.dim());
        for (std::size_t d = 0; d < fs.dim(); ++d) frame[d] = fs.at(f, c, d);
        seq.push_back(std::move(frame));
      }
      seqs.push_back(std::move(seq));
    }
  }
  return seqs;
}

Tensor target_of(EventLabel label) {
  return label == EventLabel::Seiz ? Tensor::from({2}, {0.0, 1.0})
                                   : Tensor::from({2}, {1.0, 0.0});
}

// Per-component whitening factors turning reduced coordinates into roughly
// unit-variance inputs (PCA components are unit vectors, so the coordinate
// standard deviation along component i is sigma_i / sqrt(n - 1)).
std::vector<double> whiten_scales(const PcaModel& model) {
  const double n = static_cast<double>(model.samples_seen());
  const double denom = std::sqrt(std::max(n - 1.0, 1.0));
  std::vector<double> scale(model.output_dim(), 0.0);
  for (std::size_t i = 0; i < model.output_dim(); ++i) {
    const double sd = model.singular_values()[i] / denom;
    scale[i] = sd > 1e-12 ? 1.0 / sd : 0.0;
  }
  return scale;
}

std::vector<double> reduce_whitened(const PcaModel& model,
                                    const std::vector<double>& scales,
                                    const std::vector<double>& x) {
  std::vector<double> y = pca_transform(model, x);
  for (std::size_t i = 0; i < y.size(); ++i) y[i] *= scales[i];
  return y;
}

TrainConfig net_train_config(const SystemConfig& cfg, bool pack_rows) {
  TrainConfig tc;
  tc.epochs = cfg.net_epochs;
  tc.batch_size = cfg.net_batch;
  tc.optimizer = cfg.optimizer;
  tc.loss = cfg.loss;
  tc.seed = mix_seed(cfg.seed, kSaltNetTrain);
  tc.clip_norm = cfg.clip_norm;
  tc.pack_rows = pack_rows;
  tc.log_progress = cfg.log_progress;
  return tc;
}

double posterior_from(const Tensor& y) {
  if (y.size() != 2) throw NumericError(strf("expected 2 output scores, got %zu", y.size()));
  const double b = y[0];
  const double s = y[1];
  const double total = b + s;
  if (!std::isfinite(total) || total <= 0.0) return 0.5;
  return std::min(std::max(s / total, 0.0), 1.0);
}

void log_stage(const SystemConfig& cfg, const char* stage) {
  if (!cfg.log_progress) return;
  std::fprintf(stderr, "[%s] %s\n", to_string(cfg.kind), stage);
}

}  // namespace

SystemArtifact train_system(const SystemConfig& cfg, const Corpus& corpus) {
  cfg.validate();
  SystemArtifact art;
  art.config = cfg;

  log_stage(cfg, "extracting features");
  const PreparedCorpus prep = prepare_corpus(cfg, corpus);
  for (const FeatureSequence& fs : prep.feats) {
    if (fs.epoch_count() < cfg.min_epochs()) {
      throw DataError(strf("record too short for training: %zu epochs, need %zu",
                           fs.epoch_count(), cfg.min_epochs()));
    }
  }

  double seiz_fraction = 0.0;
  const std::vector<Sample> centers = sample_centers(cfg, prep, &seiz_fraction);
  art.stats.seiz_fraction = seiz_fraction;
  art.stats.train_samples = centers.size();

  const bool uses_hmm = cfg.kind == SystemKind::HmmOnly || cfg.kind == SystemKind::HmmSda ||
                        cfg.kind == SystemKind::HmmLstm;
  std::vector<EpochScoreGrid> grids;
  if (uses_hmm) {
    log_stage(cfg, "training sequential decoders");
    TrainOptions seiz_opts = cfg.hmm;
    seiz_opts.seed = mix_seed(cfg.seed, kSaltHmmSeiz);
    TrainOptions bckg_opts = cfg.hmm;
    bckg_opts.seed = mix_seed(cfg.seed, kSaltHmmBckg);
    const std::vector<FrameSeq> seiz_seqs =
        class_sequences(centers, prep, EventLabel::Seiz);
    const std::vector<FrameSeq> bckg_seqs =
        class_sequences(centers, prep, EventLabel::Bckg);
    BaumWelchResult seiz_fit = train_gmm_hmm(EventLabel::Seiz, seiz_seqs, seiz_opts);
    BaumWelchResult bckg_fit = train_gmm_hmm(EventLabel::Bckg, bckg_seqs, bckg_opts);
    if (cfg.kind == SystemKind::HmmOnly) {
      const double n =
          static_cast<double>(seiz_seqs.size() + bckg_seqs.size());
      const std::size_t iters =
          std::min(seiz_fit.loglik_trace.size(), bckg_fit.loglik_trace.size());
      for (std::size_t i = 0; i < iters; ++i) {
        art.stats.loss_trace.push_back(
            -(seiz_fit.loglik_trace[i] + bckg_fit.loglik_trace[i]) / n);
      }
    }
    art.hmm_seiz = std::move(seiz_fit.model);
    art.hmm_bckg = std::move(bckg_fit.model);

    log_stage(cfg, "scoring training epochs");
    grids.reserve(prep.feats.size());
    for (const FeatureSequence& fs : prep.feats) {
      grids.push_back(epoch_scores(*art.hmm_seiz, *art.hmm_bckg, fs));
    }
  }

  switch (cfg.kind) {
    case SystemKind::HmmOnly:
      break;

    case SystemKind::HmmSda: {
      log_stage(cfg, "fitting reduction and squash");
      std::vector<std::vector<double>> windows;
      windows.reserve(centers.size());
      for (const Sample& s : centers) {
        windows.push_back(score_supervector(grids[s.rec], s.epoch, cfg.supervector_window));
      }
      PcaModel pca = pca_fit(windows, cfg.pca_dim);
      std::vector<std::vector<double>> reduced = pca_transform(pca, windows);
      SquashNormalizer squash = SquashNormalizer::fit(reduced);
      std::vector<std::vector<double>> squashed;
      squashed.reserve(reduced.size());
      for (const auto& row : reduced) squashed.push_back(squash.apply(row));
      art.reducer = std::move(pca);
      art.squash = std::move(squash);

      log_stage(cfg, "pretraining encoder stack");
      SdaConfig sda_cfg = cfg.sda;
      sda_cfg.seed = mix_seed(cfg.seed, kSaltSda);
      const SdaPretrainResult pre = sda_pretrain(squashed, sda_cfg);
      Network net =
          assemble_sda_classifier(pre, cfg.pca_dim, 2, mix_seed(cfg.seed, kSaltSdaHead));

      log_stage(cfg, "fine-tuning classifier");
      std::vector<Tensor> inputs, targets;
      inputs.reserve(centers.size());
      targets.reserve(centers.size());
      for (std::size_t i = 0; i < centers.size(); ++i) {
        inputs.push_back(Tensor::from({cfg.pca_dim}, squashed[i]));
        targets.push_back(target_of(centers[i].label));
      }
      TrainConfig tc = net_train_config(cfg, true);
      tc.epochs = sda_cfg.finetune_epochs;
      tc.batch_size = sda_cfg.finetune_batch;
      tc.optimizer = OptimizerConfig{};
      tc.optimizer.kind = OptimizerKind::Sgd;
      tc.optimizer.lr = sda_cfg.finetune_lr;
      tc.loss = LossKind::CrossEntropy;
      const TrainResult tr = train_network(net, inputs, targets, tc);
      art.stats.loss_trace = tr.epoch_loss;
      art.net = std::move(net);
      break;
    }

    case SystemKind::HmmLstm: {
      log_stage(cfg, "fitting score reduction");
      std::vector<std::vector<double>> rows;
      rows.reserve(centers.size());
      for (const Sample& s : centers) rows.push_back(grids[s.rec].row(s.epoch));
      PcaModel pca = pca_fit(rows, cfg.pca_dim);
      const std::vector<double> scales = whiten_scales(pca);

      std::vector<std::vector<std::vector<double>>> reduced(prep.feats.size());
      for (std::size_t r = 0; r < prep.feats.size(); ++r) {
        reduced[r].reserve(grids[r].epochs());
        for (std::size_t e = 0; e < grids[r].epochs(); ++e) {
          reduced[r].push_back(reduce_whitened(pca, scales, grids[r].row(e)));
        }
      }
      art.reducer = std::move(pca);

      log_stage(cfg, "training sequence classifier");
      const long long half = static_cast<long long>(cfg.supervector_window / 2);
      std::vector<Tensor> inputs, targets;
      inputs.reserve(centers.size());
      targets.reserve(centers.size());
      for (const Sample& s : centers) {
        Tensor seq({cfg.supervector_window, cfg.pca_dim}, 0.0);
        for (long long k = -half; k <= half; ++k) {
          const std::size_t e =
              clamp_index(static_cast<long long>(s.epoch) + k, reduced[s.rec].size());
          const auto& row = reduced[s.rec][e];
          for (std::size_t d = 0; d < cfg.pca_dim; ++d) {
            seq.at2(static_cast<std::size_t>(k + half), d) = row[d];
          }
        }
        inputs.push_back(std::move(seq));
        targets.push_back(target_of(s.label));
      }
      Network net = build_network(cfg, mix_seed(cfg.seed, kSaltNetInit));
      const TrainResult tr = train_network(net, inputs, targets, net_train_config(cfg, false));
      art.stats.loss_trace = tr.epoch_loss;
      art.net = std::move(net);
      break;
    }

    case SystemKind::IpcaLstm: {
      log_stage(cfg, "fitting streaming reduction");
      std::vector<std::vector<std::vector<double>>> summaries(prep.feats.size());
      for (std::size_t r = 0; r < prep.feats.size(); ++r) {
        const std::size_t epochs = prep.feats[r].epoch_count();
        summaries[r].reserve(epochs);
        for (std::size_t e = 0; e < epochs; ++e) {
          summaries[r].push_back(epoch_feature_summary(prep.feats[r], e));
        }
      }
      const std::size_t window_dim =
          cfg.channels * cfg.features.total_dim * cfg.context_epochs;
      if (centers.size() < cfg.ipca_dim) {
        throw DataError(strf("too few training windows (%zu) for a %zu-dim reduction",
                             centers.size(), cfg.ipca_dim));
      }
      PcaModel ipca(window_dim, cfg.ipca_dim);
      std::vector<std::vector<double>> batch;
      batch.reserve(cfg.ipca_batch);
      for (const Sample& s : centers) {
        batch.push_back(
            context_window_vector(summaries[s.rec], s.epoch, cfg.context_epochs));
        if (batch.size() == cfg.ipca_batch) {
          ipca_partial_fit(ipca, batch);
          batch.clear();
        }
      }
      if (!batch.empty()) ipca_partial_fit(ipca, batch);
      const std::vector<double> scales = whiten_scales(ipca);

      std::vector<std::vector<std::vector<double>>> reduced(prep.feats.size());
      for (std::size_t r = 0; r < prep.feats.size(); ++r) {
        const std::size_t epochs = summaries[r].size();
        reduced[r].reserve(epochs);
        for (std::size_t e = 0; e < epochs; ++e) {
          reduced[r].push_back(reduce_whitened(
              ipca, scales, context_window_vector(summaries[r], e, cfg.context_epochs)));
        }
      }
      art.reducer = std::move(ipca);

      log_stage(cfg, "training sequence classifier");
      const long long half = static_cast<long long>(cfg.ipca_sequence / 2);
      std::vector<Tensor> inputs, targets;
      inputs.reserve(centers.size());
      targets.reserve(centers.size());
      for (const Sample& s : centers) {
        Tensor seq({cfg.ipca_sequence, cfg.ipca_dim}, 0.0);
        for (long long k = -half; k <= half; ++k) {
          const std::size_t e =
              clamp_index(static_cast<long long>(s.epoch) + k, reduced[s.rec].size());
          const auto& row = reduced[s.rec][e];
          for (std::size_t d = 0; d < cfg.ipca_dim; ++d) {
            seq.at2(static_cast<std::size_t>(k + half), d) = row[d];
          }
        }
        inputs.push_back(std::move(seq));
        targets.push_back(target_of(s.label));
      }
      Network net = build_network(cfg, mix_seed(cfg.seed, kSaltNetInit));
      const TrainResult tr = train_network(net, inputs, targets, net_train_config(cfg, false));
      art.stats.loss_trace = tr.epoch_loss;
      art.net = std::move(net);
      break;
    }

    case SystemKind::CnnMlp: {
      log_stage(cfg, "fitting feature scaler");
      std::vector<const FeatureSequence*> refs;
      refs.reserve(prep.feats.size());
      for (const FeatureSequence& fs : prep.feats) refs.push_back(&fs);
      FeatureScaler scaler = FeatureScaler::fit(refs);

      log_stage(cfg, "training image classifier");
      std::vector<Tensor> inputs, targets;
      inputs.reserve(centers.size());
      targets.reserve(centers.size());
      for (const Sample& s : centers) {
        inputs.push_back(
            feature_image(prep.feats[s.rec], s.epoch, cfg.context_epochs, &scaler));
        targets.push_back(target_of(s.label));
      }
      art.scaler = std::move(scaler);
      Network net = build_network(cfg, mix_seed(cfg.seed, kSaltNetInit));
      const TrainResult tr = train_network(net, inputs, targets, net_train_config(cfg, true));
      art.stats.loss_trace = tr.epoch_loss;
      art.net = std::move(net);
      break;
    }

    case SystemKind::CnnLstm: {
      log_stage(cfg, "fitting feature scaler");
      std::vector<const FeatureSequence*> refs;
      refs.reserve(prep.feats.size());
      for (const FeatureSequence& fs : prep.feats) refs.push_back(&fs);
      FeatureScaler scaler = FeatureScaler::fit(refs);

      log_stage(cfg, "training recurrent image classifier");
      std::vector<Tensor> inputs, targets;
      inputs.reserve(centers.size());
      targets.reserve(centers.size());
      for (const Sample& s : centers) {
        inputs.push_back(
            frame_stack(prep.feats[s.rec], s.epoch, cfg.frame_stack_epochs, &scaler));
        targets.push_back(target_of(s.label));
      }
      art.scaler = std::move(scaler);
      Network net = build_network(cfg, mix_seed(cfg.seed, kSaltNetInit));
      const TrainResult tr = train_network(net, inputs, targets, net_train_config(cfg, false));
      art.stats.loss_trace = tr.epoch_loss;
      art.net = std::move(net);
      break;
    }
  }
  return art;
}

PosteriorTrack infer_system(SystemArtifact& art, const EegRecord& record) {
  const SystemConfig& cfg = art.config;
  cfg.validate();
  if (record.channels() != cfg.channels) {
    throw DataError(strf("record has %zu channels, system expects %zu", record.channels(),
                         cfg.channels));
  }
  const FeatureSequence feats = extract_features(record, cfg.features);
  const std::size_t epochs = feats.epoch_count();
  if (epochs < cfg.min_epochs()) {
    throw DataError(strf("record too short for inference: %zu epochs, need %zu", epochs,
                         cfg.min_epochs()));
  }

  PosteriorTrack track;
  track.values.resize(epochs, 0.5);

  switch (cfg.kind) {
    case SystemKind::HmmOnly: {
      if (!art.hmm_seiz || !art.hmm_bckg) throw DataError("artifact lacks decoder models");
      const EpochScoreGrid grid = epoch_scores(*art.hmm_seiz, *art.hmm_bckg, feats);
      for (std::size_t e = 0; e < epochs; ++e) {
        double llr = 0.0;
        for (std::size_t c = 0; c < cfg.channels; ++c) {
          llr += grid.seiz(e, c) - grid.bckg(e, c);
        }
        llr /= static_cast<double>(cfg.channels);
        track.values[e] = 1.0 / (1.0 + std::exp(-llr / cfg.hmm_temperature));
      }
      break;
    }

    case SystemKind::HmmSda: {
      if (!art.hmm_seiz || !art.hmm_bckg || !art.reducer || !art.squash || !art.net) {
        throw DataError("artifact is missing stages for this system kind");
      }
      const EpochScoreGrid grid = epoch_scores(*art.hmm_seiz, *art.hmm_bckg, feats);
      for (std::size_t e = 0; e < epochs; ++e) {
        const std::vector<double> window =
            score_supervector(grid, e, cfg.supervector_window);
        const std::vector<double> squashed =
            art.squash->apply(pca_transform(*art.reducer, window));
        const Tensor y = art.net->forward(Tensor::from({cfg.pca_dim}, squashed), false);
        track.values[e] = posterior_from(y);
      }
      break;
    }

    case SystemKind::HmmLstm: {
      if (!art.hmm_seiz || !art.hmm_bckg || !art.reducer || !art.net) {
        throw DataError("artifact is missing stages for this system kind");
      }
      const EpochScoreGrid grid = epoch_scores(*art.hmm_seiz, *art.hmm_bckg, feats);
      const std::vector<double> scales = whiten_scales(*art.reducer);
      std::vector<std::vector<double>> reduced;
      reduced.reserve(epochs);
      for (std::size_t e = 0; e < epochs; ++e) {
        reduced.push_back(reduce_whitened(*art.reducer, scales, grid.row(e)));
      }
      const long long half = static_cast<long long>(cfg.supervector_window / 2);
      for (std::size_t e = 0; e < epochs; ++e) {
        Tensor seq({cfg.supervector_window, cfg.pca_dim}, 0.0);
        for (long long k = -half; k <= half; ++k) {
          const std::size_t idx = clamp_index(static_cast<long long>(e) + k, epochs);
          for (std::size_t d = 0; d < cfg.pca_dim; ++d) {
            seq.at2(static_cast<std::size_t>(k + half), d) = reduced[idx][d];
          }
        }
        track.values[e] = posterior_from(art.net->forward(seq, false));
      }
      break;
    }

    case SystemKind::IpcaLstm: {
      if (!art.reducer || !art.net) {
        throw DataError("artifact is missing stages for this system kind");
      }
      std::vector<std::vector<double>> summaries;
      summaries.reserve(epochs);
      for (std::size_t e = 0; e < epochs; ++e) {
        summaries.push_back(epoch_feature_summary(feats, e));
      }
      const std::vector<double> scales = whiten_scales(*art.reducer);
      std::vector<std::vector<double>> reduced;
      reduced.reserve(epochs);
      for (std::size_t e = 0; e < epochs; ++e) {
        reduced.push_back(reduce_whitened(
            *art.reducer, scales, context_window_vector(summaries, e, cfg.context_epochs)));
      }
      const long long half = static_cast<long long>(cfg.ipca_sequence / 2);
      for (std::size_t e = 0; e < epochs; ++e) {
        Tensor seq({cfg.ipca_sequence, cfg.ipca_dim}, 0.0);
        for (long long k = -half; k <= half; ++k) {
          const std::size_t idx = clamp_index(static_cast<long long>(e) + k, epochs);
          for (std::size_t d = 0; d < cfg.ipca_dim; ++d) {
            seq.at2(static_cast<std::size_t>(k + half), d) = reduced[idx][d];
          }
        }
        track.values[e] = posterior_from(art.net->forward(seq, false));
      }
      break;
    }

    case SystemKind::CnnMlp: {
      if (!art.scaler || !art.net) {
        throw DataError("artifact is missing stages for this system kind");
      }
      for (std::size_t e = 0; e < epochs; ++e) {
        const Tensor img = feature_image(feats, e, cfg.context_epochs, &*art.scaler);
        track.values[e] = posterior_from(art.net->forward(img, false));
      }
      break;
    }

    case SystemKind::CnnLstm: {
      if (!art.scaler || !art.net) {
        throw DataError("artifact is missing stages for this system kind");
      }
      Network& net = *art.net;
      std::size_t flatten_idx = net.size();
      for (std::size_t i = 0; i < net.size(); ++i) {
        if (net.layer(i).kind() == "flatten") {
          flatten_idx = i;
          break;
        }
      }
      if (flatten_idx == net.size()) throw DataError("frame-stack network lacks a flatten stage");

      // The per-frame convolutional prefix only depends on the frame itself,
      // so evaluate it once per frame and reassemble windows afterwards.
      std::mt19937_64 rng(0);
      std::vector<std::vector<double>> frame_codes;
      frame_codes.reserve(feats.frames());
      for (std::size_t f = 0; f < feats.frames(); ++f) {
        Tensor x({feats.dim(), cfg.channels, 1}, 0.0);
        for (std::size_t c = 0; c < cfg.channels; ++c) {
          for (std::size_t d = 0; d < feats.dim(); ++d) {
            x.at3(d, c, 0) = art.scaler->apply(feats.at(f, c, d), d);
          }
        }
        for (std::size_t i = 0; i <= flatten_idx; ++i) {
          x = net.layer(i).forward(x, false, rng);
        }
        frame_codes.push_back(std::vector<double>(x.data(), x.data() + x.size()));
      }

      const std::size_t fpe = feats.frames_per_epoch();
      const std::size_t count = cfg.frame_stack_epochs * fpe;
      const std::size_t code_dim = frame_codes.front().size();
      for (std::size_t e = 0; e < epochs; ++e) {
        Tensor seq({count, code_dim}, 0.0);
        const long long start = static_cast<long long>(e * fpe) -
                                static_cast<long long>((count - fpe) / 2);
        for (std::size_t i = 0; i < count; ++i) {
          const std::size_t f = clamp_index(start + static_cast<long long>(i), feats.frames());
          for (std::size_t d = 0; d < code_dim; ++d) {
            seq.at2(i, d) = frame_codes[f][d];
          }
        }
        Tensor x = std::move(seq);
        for (std::size_t i = flatten_idx + 1; i < net.size(); ++i) {
          x = net.layer(i).forward(x, false, rng);
        }
        track.values[e] = posterior_from(x);
      }
      break;
    }
  }
  return track;
}

namespace {

void save_stream(const std::string& path, const std::function<void(std::ostream&)>& fn) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw DataError(strf("cannot open %s for writing", path.c_str()));
  fn(os);
  if (!os) throw DataError(strf("write failed: %s", path.c_str()));
}

}  // namespace

void save_system(const SystemArtifact& art, const std::string& dir) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw DataError(strf("cannot create directory %s: %s", dir.c_str(),
                               ec.message().c_str()));
  std::vector<std::string> names;

  save_stream(dir + "/config.txt",
              [&](std::ostream& os) { write_system_config(os, art.config); });
  names.push_back("config.txt");

  if (art.hmm_seiz) {
    save_gmm_hmm(*art.hmm_seiz, dir + "/hmm_seiz.bin");
    names.push_back("hmm_seiz.bin");
  }
  if (art.hmm_bckg) {
    save_gmm_hmm(*art.hmm_bckg, dir + "/hmm_bckg.bin");
    names.push_back("hmm_bckg.bin");
  }
  if (art.reducer) {
    save_pca(*art.reducer, dir + "/reducer.bin");
    names.push_back("reducer.bin");
  }
  if (art.squash) {
    save_stream(dir + "/squash.bin", [&](std::ostream& os) { art.squash->save(os); });
    names.push_back("squash.bin");
  }
  if (art.scaler) {
    save_stream(dir + "/scaler.bin", [&](std::ostream& os) { art.scaler->save(os); });
    names.push_back("scaler.bin");
  }
  if (art.net) {
    art.net->save(dir + "/net.bin");
    names.push_back("net.bin");
  }

  save_stream(dir + "/training_loss.csv", [&](std::ostream& os) {
    os << "epoch,loss\n";
    for (std::size_t i = 0; i < art.stats.loss_trace.size(); ++i) {
      os << i << ',' << strf("%.17g", art.stats.loss_trace[i]) << '\n';
    }
  });
  names.push_back("training_loss.csv");
  save_stream(dir + "/train_stats.txt", [&](std::ostream& os) {
    os << "seiz_fraction = " << strf("%.17g", art.stats.seiz_fraction) << '\n';
    os << "train_samples = " << art.stats.train_samples << '\n';
  });
  names.push_back("train_stats.txt");

  write_manifest(dir, names, "manifest.txt");
}

SystemArtifact load_system(const std::string& dir) {
  const std::string config_path = dir + "/config.txt";
  std::ifstream cfg_in(config_path);
  if (!cfg_in) throw DataError(strf("cannot open %s", config_path.c_str()));
  SystemArtifact art;
  art.config = read_system_config(cfg_in);

  const auto want = [&](const char* name) { return dir + "/" + name; };
  const auto exists = [](const std::string& p) { return std::filesystem::exists(p); };

  if (exists(want("hmm_seiz.bin"))) art.hmm_seiz = load_gmm_hmm(want("hmm_seiz.bin"));
  if (exists(want("hmm_bckg.bin"))) art.hmm_bckg = load_gmm_hmm(want("hmm_bckg.bin"));
  if (exists(want("reducer.bin"))) art.reducer = load_pca(want("reducer.bin"));
  if (exists(want("squash.bin"))) {
    std::ifstream is(want("squash.bin"), std::ios::binary);
    if (!is) throw DataError(strf("cannot open %s", want("squash.bin").c_str()));
    art.squash = SquashNormalizer::load(is);
  }
  if (exists(want("scaler.bin"))) {
    std::ifstream is(want("scaler.bin"), std::ios::binary);
    if (!is) throw DataError(strf("cannot open %s", want("scaler.bin").c_str()));
    art.scaler = FeatureScaler::load(is);
  }
  if (exists(want("net.bin"))) art.net = Network::load(want("net.bin"));

  if (exists(want("training_loss.csv"))) {
    std::ifstream is(want("training_loss.csv"));
    std::string line;
    std::getline(is, line);  // header
    while (std::getline(is, line)) {
      if (line.empty()) continue;
      std::size_t epoch = 0;
      double loss = 0.0;
      if (std::sscanf(line.c_str(), "%zu,%lf", &epoch, &loss) == 2) {
        art.stats.loss_trace.push_back(loss);
      }
    }
  }
  return art;
}

}  // namespace ndet
