// The six detection systems as declarative pipelines over the feature,
// sequential-decoder, dimensionality-reduction, and network modules:
// assembly with shape validation, staged training, sliding-window inference,
// and the on-disk system artifact.
#pragma once

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "ndet/dimred.hpp"
#include "ndet/features.hpp"
#include "ndet/hmm.hpp"
#include "ndet/nn/network.hpp"
#include "ndet/nn/sda.hpp"
#include "ndet/nn/train.hpp"
#include "ndet/scoring.hpp"
#include "ndet/signal.hpp"

namespace ndet {

enum class SystemKind : std::uint8_t {
  HmmOnly = 0,
  HmmSda = 1,
  HmmLstm = 2,
  IpcaLstm = 3,
  CnnMlp = 4,
  CnnLstm = 5,
};

constexpr std::size_t kSystemKindCount = 6;

const char* to_string(SystemKind kind);
SystemKind system_kind_from_string(const std::string& s);

// Per-feature-dimension standardizer shared across channels and frames;
// used in front of the convolutional systems.
struct FeatureScaler {
  std::vector<double> mean;
  std::vector<double> inv_std;

  static FeatureScaler fit(const std::vector<const FeatureSequence*>& seqs);
  double apply(double v, std::size_t d) const { return (v - mean[d]) * inv_std[d]; }

  void save(std::ostream& os) const;
  static FeatureScaler load(std::istream& is);
};

struct SystemConfig {
  SystemKind kind = SystemKind::HmmOnly;
  std::size_t channels = 22;
  FeatureConfig features;
  TrainOptions hmm;  // shared by the seizure and background decoders
  SdaConfig sda;
  OptimizerConfig optimizer;  // neural stages other than the autoencoder stack

  // Window sizes, in whole-second epochs (odd, centered on the target epoch).
  std::size_t supervector_window = 41;  // decoder-score supervectors
  std::size_t context_epochs = 7;       // feature context windows and images
  std::size_t frame_stack_epochs = 21;  // per-frame convolutional stack

  std::size_t pca_dim = 20;
  std::size_t ipca_dim = 25;
  std::size_t ipca_batch = 50;
  std::size_t ipca_sequence = 7;  // consecutive reduced windows per sequence

  std::size_t lstm_hidden = 32;       // score-sequence system
  std::size_t ipca_lstm_hidden = 128; // streaming-reduction system
  std::size_t bilstm_hidden1 = 128;   // per-direction widths of the stacked
  std::size_t bilstm_hidden2 = 256;   // bidirectional layers
  std::size_t conv1d_filters = 16;
  std::size_t conv1d_kernel = 3;
  std::size_t pool1d = 8;

  // Likelihood-ratio temperature of the decoder-only system's posterior.
  double hmm_temperature = 10.0;

  ActivationKind activation = ActivationKind::Relu;
  LossKind loss = LossKind::CrossEntropy;
  double dropout_dense = 0.5;
  double dropout_conv = 0.1;
  double noise_std = 0.1;

  // Class balancing for sampled training windows: background count is at most
  // balance_ratio times the seizure count.
  double balance_ratio = 1.0;
  std::size_t max_per_class = 0;  // cap on sampled windows per class; 0 = none

  std::size_t net_epochs = 20;
  std::size_t net_batch = 32;
  double clip_norm = 5.0;

  std::uint64_t seed = 1;
  bool log_progress = false;

  // Kind-appropriate defaults (ELU activation and squared-error loss for the
  // frame-stack system; ReLU and cross-entropy elsewhere).
  static SystemConfig defaults_for(SystemKind kind);

  void validate() const;

  // Window length (in epochs) a record must cover before inference runs.
  std::size_t min_epochs() const;
};

struct StageDesc {
  std::string name;
  std::vector<std::size_t> shape;  // output shape of the stage
};

struct PipelineDesc {
  SystemKind kind = SystemKind::HmmOnly;
  std::vector<StageDesc> stages;
};

// Resolves the full stage list with output shapes; throws ConfigError naming
// the first stage whose shape chain fails to compose.
PipelineDesc build_system(const SystemConfig& cfg);

// Multi-line, human-readable stage table.
std::string describe(const PipelineDesc& pipeline);

using Corpus = std::vector<std::pair<EegRecord, AnnotationSet>>;

struct TrainStats {
  // Decoder systems: mean negative log-likelihood per expectation-maximization
  // iteration. Neural systems: mean training loss per epoch.
  std::vector<double> loss_trace;
  double seiz_fraction = 0.0;  // class balance achieved in the sampled set
  std::size_t train_samples = 0;
};

struct SystemArtifact {
  SystemConfig config;
  std::optional<GmmHmm> hmm_seiz;
  std::optional<GmmHmm> hmm_bckg;
  std::optional<PcaModel> reducer;
  std::optional<SquashNormalizer> squash;
  std::optional<FeatureScaler> scaler;
  std::optional<Network> net;
  TrainStats stats;
};

// Trains every stage in pipeline order with class-balanced sampling.
// Deterministic per cfg.seed. Throws DataError when the corpus lacks either
// class or disagrees with the configured channel count.
SystemArtifact train_system(const SystemConfig& cfg, const Corpus& corpus);

// Sliding-window posteriors, one per whole-second epoch, windows centered on
// the epoch with replicated edges. Throws DataError when the record is
// shorter than one full window. The artifact is logically read-only; the
// reference is mutable because network forward passes reuse layer caches.
PosteriorTrack infer_system(SystemArtifact& art, const EegRecord& record);

// Artifact directory: config, stage model files, training trace, and a
// manifest of content hashes.
void save_system(const SystemArtifact& art, const std::string& dir);
SystemArtifact load_system(const std::string& dir);

// Window-assembly helpers (exposed for verification).
//
// Flattened scores of `window` consecutive epochs centered on `center`
// (edge epochs replicated): width = window x 2 x channels.
std::vector<double> score_supervector(const EpochScoreGrid& grid, std::size_t center,
                                      std::size_t window);
// Frame-averaged per-epoch summary: channels x dim values.
std::vector<double> epoch_feature_summary(const FeatureSequence& feats, std::size_t epoch);
// Concatenation of `window` consecutive epoch summaries centered on `center`.
std::vector<double> context_window_vector(const std::vector<std::vector<double>>& summaries,
                                          std::size_t center, std::size_t window);
// (frames, channels, dim) image spanning `window_epochs` epochs centered on
// `center`; frame indices clamped to the record. Optionally standardized.
Tensor feature_image(const FeatureSequence& feats, std::size_t center,
                     std::size_t window_epochs, const FeatureScaler* scaler);
// (frames, dim, channels, 1) per-frame image stack over the same span.
Tensor frame_stack(const FeatureSequence& feats, std::size_t center,
                   std::size_t window_epochs, const FeatureScaler* scaler);

}  // namespace ndet
