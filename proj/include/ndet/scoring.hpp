// Epoch-level overlap scoring, sensitivity/specificity/false-alarm metrics,
// hypothesis smoothing, and DET-curve generation.
#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "ndet/signal.hpp"

namespace ndet {

// Per-epoch seizure posterior probabilities on consecutive 1-second epochs.
struct PosteriorTrack {
  std::vector<double> values;

  std::size_t size() const { return values.size(); }
};

PosteriorTrack load_posteriors(const std::string& path);
void save_posteriors(const PosteriorTrack& track, const std::string& path);

// How false alarms are counted: as maximal runs of consecutive false-positive
// epochs (an "alarm" the way a reviewer would see it) or as raw FP epochs.
enum class FaMode : std::uint8_t { Event = 0, Epoch = 1 };

const char* to_string(FaMode mode);
FaMode fa_mode_from_string(const std::string& s);

struct ConfusionCounts {
  std::uint64_t tp = 0;
  std::uint64_t tn = 0;
  std::uint64_t fp = 0;
  std::uint64_t fn = 0;
  // Number of maximal runs of consecutive FP epochs; needed to count
  // event-level false alarms after the epoch tallies are folded together.
  std::uint64_t fp_runs = 0;
  double total_duration_s = 0.0;

  std::uint64_t total() const { return tp + tn + fp + fn; }
};

struct Metrics {
  double sensitivity = 0.0;
  double specificity = 0.0;
  double fa_per_24h = 0.0;
};

// Parameters of the duration/gap hypothesis smoother applied after
// thresholding the posterior track.
struct SmoothingParams {
  double threshold = 0.5;
  double min_event_s = 3.0;
  double merge_gap_s = 2.0;
  // Multiplies the seizure odds before thresholding; 1.0 is neutral.
  double prior_weight = 1.0;

  void validate() const;
};

struct HypEvent {
  double start_s = 0.0;
  double stop_s = 0.0;
};

struct SmoothResult {
  EpochLabelTrack track;
  std::vector<HypEvent> events;
};

// Epoch-wise confusion counts ("overlap method"). Throws DataError when the
// tracks differ in length. Each epoch contributes epoch_s seconds of scored
// duration.
ConfusionCounts score_epochs(const EpochLabelTrack& ref, const EpochLabelTrack& hyp,
                             double epoch_s = 1.0);

// sensitivity = tp/(tp+fn), specificity = tn/(tn+fp) (0 when the denominator
// is 0); fa_per_24h = false alarms x 86400 / total_duration_s where a false
// alarm is either an FP run (Event mode) or an FP epoch (Epoch mode).
Metrics metrics(const ConfusionCounts& c, FaMode mode = FaMode::Event);

// Binarize at p.threshold, merge seizure runs separated by gaps shorter than
// merge_gap_s, then delete seizure runs shorter than min_event_s. Returns the
// smoothed epoch track plus the surviving (start, stop) events in seconds.
SmoothResult smooth_hypotheses(const PosteriorTrack& posteriors, const SmoothingParams& p,
                               double epoch_s = 1.0);

struct DetPoint {
  double threshold = 0.0;
  double sensitivity = 0.0;
  double specificity = 0.0;
  double fa_per_24h = 0.0;
  double false_positive_rate = 0.0;
  double miss_rate = 0.0;
};

struct DetCurve {
  std::vector<DetPoint> points;
};

// `count` uniform thresholds spanning [0, 1] inclusive.
std::vector<double> uniform_thresholds(std::size_t count = 101);

// Binarize + smooth + score at every threshold (ascending). Sensitivity is
// weakly decreasing in the threshold.
DetCurve det_curve(const PosteriorTrack& posteriors, const EpochLabelTrack& ref,
                   const SmoothingParams& smoothing, const std::vector<double>& thresholds,
                   FaMode mode = FaMode::Event);

void write_det_csv(const DetCurve& curve, const std::string& path);

// Single-row-per-system table: system,sensitivity,specificity,fa_per_24h.
std::string metrics_csv_header();
std::string metrics_csv_row(const std::string& name, const Metrics& m);
void write_metrics_csv(const std::vector<std::pair<std::string, Metrics>>& rows,
                       const std::string& path);

}  // namespace ndet
