// Per-channel cepstral feature extraction: framing, linear-filterbank
// cepstra with log frame energy, and first/second regression derivatives.
#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "ndet/common.hpp"
#include "ndet/signal.hpp"

namespace ndet {

struct FeatureConfig {
  double frame_s = 0.1;    // frame (hop) period
  double window_s = 0.2;   // analysis window length
  std::size_t num_filters = 24;
  std::size_t base_dim = 9;   // log energy + cepstra 1..8
  std::size_t total_dim = 26; // base + deltas + delta-deltas
  double preemphasis = 0.97;
  double energy_floor = 1e-10;
  std::size_t delta_halfwidth = 2;

  void validate() const;  // throws ConfigError
};

// Dense frames x channels x dim block with the framing metadata needed to
// align frames to 1 s epochs downstream.
class FeatureSequence {
 public:
  FeatureSequence() = default;
  FeatureSequence(std::size_t frames, std::size_t channels, std::size_t dim,
                  double frame_period_s, double window_s,
                  std::vector<std::string> channel_labels);

  std::size_t frames() const { return frames_; }
  std::size_t channels() const { return channels_; }
  std::size_t dim() const { return dim_; }
  double frame_period_s() const { return frame_period_s_; }
  double window_s() const { return window_s_; }
  const std::vector<std::string>& channel_labels() const { return channel_labels_; }

  double at(std::size_t frame, std::size_t channel, std::size_t d) const {
    return values_[(frame * channels_ + channel) * dim_ + d];
  }
  double& at(std::size_t frame, std::size_t channel, std::size_t d) {
    return values_[(frame * channels_ + channel) * dim_ + d];
  }
  const std::vector<double>& values() const { return values_; }

  // 1 s epochs over the frame grid. The final epoch may hold fewer frames
  // (the last window of a whole-second record starts 0.2 s before the end).
  std::size_t frames_per_epoch() const;
  std::size_t epoch_count() const;
  // [begin, end) frame range of epoch e; end - begin >= frames_per_epoch - 1.
  std::pair<std::size_t, std::size_t> epoch_frame_range(std::size_t e) const;

  bool operator==(const FeatureSequence& other) const;

 private:
  std::size_t frames_ = 0;
  std::size_t channels_ = 0;
  std::size_t dim_ = 0;
  double frame_period_s_ = 0.1;
  double window_s_ = 0.2;
  std::vector<std::string> channel_labels_;
  std::vector<double> values_;
};

// Stateless per-window math with precomputed window/transform tables.
class FeatureExtractor {
 public:
  FeatureExtractor(const FeatureConfig& cfg, std::uint32_t sample_rate_hz);

  std::size_t window_samples() const { return window_n_; }
  std::size_t hop_samples() const { return hop_n_; }
  std::size_t spectrum_bins() const { return fft_n_ / 2 + 1; }

  // One-sided power spectrum of the preemphasized, Hamming-windowed frame.
  std::vector<double> power_spectrum(const std::vector<double>& window) const;
  // Triangular filterbank energies (floored at cfg.energy_floor).
  std::vector<double> filterbank_energies(const std::vector<double>& window) const;
  // [log frame energy, cepstra 1..base_dim-1]
  std::vector<double> base_features(const std::vector<double>& window) const;

  const FeatureConfig& config() const { return cfg_; }

 private:
  FeatureConfig cfg_;
  std::size_t window_n_ = 0;
  std::size_t hop_n_ = 0;
  std::size_t fft_n_ = 0;
  std::vector<double> hamming_;
  std::vector<double> dft_cos_;  // (fft_n/2+1) x fft_n
  std::vector<double> dft_sin_;
  std::vector<double> filters_;  // num_filters x (fft_n/2+1)
  std::vector<double> dct_;      // (base_dim-1) x num_filters, orthonormal rows
};

// All analysis windows of one channel, advancing by the frame period.
// Throws DataError when the record is shorter than one window.
std::vector<std::vector<double>> frame_signal(const EegRecord& record,
                                              std::size_t channel,
                                              const FeatureConfig& cfg);

// Frame count for a record of n samples under cfg (integer arithmetic).
std::size_t frame_count(std::size_t samples, std::uint32_t sample_rate_hz,
                        const FeatureConfig& cfg);

// frames x base_dim -> frames x total_dim: base, regression deltas of all
// base columns, then second-order deltas of the first
// (total_dim - 2*base_dim) base columns. Replicated-boundary padding.
std::vector<std::vector<double>> append_derivatives(
    const std::vector<std::vector<double>>& base, const FeatureConfig& cfg);

FeatureSequence extract_features(const EegRecord& record, const FeatureConfig& cfg);

FeatureSequence load_features(const std::string& path);
void save_features(const FeatureSequence& seq, const std::string& path);
void export_features_csv(const FeatureSequence& seq, const std::string& path);

}  // namespace ndet
