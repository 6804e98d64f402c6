// Multichannel EEG record model, annotations, epoch labels, file I/O,
// and the synthetic labeled-corpus generator.
#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "ndet/common.hpp"

namespace ndet {

enum class EventLabel : std::uint8_t { Bckg = 0, Seiz = 1 };

const char* to_string(EventLabel label);
EventLabel event_label_from_string(const std::string& s);

// Immutable multichannel record. Samples are stored as raw 16-bit integers
// (channel-major) with a per-record calibration factor in microvolts/LSB.
class EegRecord {
 public:
  EegRecord(std::vector<std::string> channel_labels, std::uint32_t sample_rate_hz,
            double calibration, std::vector<std::int16_t> raw_channel_major);

  // Quantizes floating microvolt data; throws DataError if any quantized
  // sample falls outside 16 signed bits.
  static EegRecord from_microvolts(std::vector<std::string> channel_labels,
                                   std::uint32_t sample_rate_hz, double calibration,
                                   const std::vector<std::vector<double>>& microvolts);

  std::size_t channels() const { return channel_labels_.size(); }
  std::size_t samples_per_channel() const { return samples_per_channel_; }
  std::uint32_t sample_rate_hz() const { return sample_rate_hz_; }
  double calibration() const { return calibration_; }
  double duration_s() const {
    return static_cast<double>(samples_per_channel_) / sample_rate_hz_;
  }
  const std::vector<std::string>& channel_labels() const { return channel_labels_; }

  std::int16_t raw(std::size_t channel, std::size_t t) const {
    return raw_[channel * samples_per_channel_ + t];
  }
  double microvolts(std::size_t channel, std::size_t t) const {
    return raw(channel, t) * calibration_;
  }
  const std::vector<std::int16_t>& raw_samples() const { return raw_; }

  bool operator==(const EegRecord& other) const;

 private:
  std::vector<std::string> channel_labels_;
  std::uint32_t sample_rate_hz_ = 0;
  double calibration_ = 1.0;
  std::size_t samples_per_channel_ = 0;
  std::vector<std::int16_t> raw_;
};

EegRecord load_record(const std::string& path);
void save_record(const EegRecord& record, const std::string& path);

struct AnnEvent {
  double start_s = 0.0;
  double stop_s = 0.0;
  EventLabel label = EventLabel::Bckg;
};

// Sorted, non-overlapping labeled intervals covering [0, record_duration_s].
class AnnotationSet {
 public:
  AnnotationSet(std::vector<AnnEvent> events, double record_duration_s);

  const std::vector<AnnEvent>& events() const { return events_; }
  double record_duration_s() const { return record_duration_s_; }
  double seizure_seconds() const;

 private:
  std::vector<AnnEvent> events_;
  double record_duration_s_ = 0.0;
};

AnnotationSet load_annotations(const std::string& path);
void save_annotations(const AnnotationSet& ann, const std::string& path);

// One label per 1-second epoch.
struct EpochLabelTrack {
  std::vector<EventLabel> labels;

  std::size_t size() const { return labels.size(); }
};

// Majority rule: an epoch is seiz iff seizure coverage >= 0.5 s
// (ties resolved to seiz).
EpochLabelTrack annotations_to_epoch_labels(const AnnotationSet& ann);

struct SynthConfig {
  double duration_s = 60.0;
  std::uint32_t channels = 22;
  std::uint32_t sample_rate_hz = 250;

  // Seizure events: exact count when >= 0, else derived from target fraction.
  int seizure_count = -1;
  double seizure_fraction = 0.1;
  double seizure_min_s = 8.0;
  double seizure_max_s = 20.0;

  double artifact_rate_per_min = 2.0;
  double artifact_min_s = 0.3;
  double artifact_max_s = 1.2;

  // Fraction of artifacts that are rhythmic seizure mimics (chewing-like
  // spike trains in the seizure band) instead of EMG bursts or blink pulses.
  double artifact_rhythmic_fraction = 0.0;

  double background_rms_uv = 20.0;
  double seizure_snr_db = 10.0;   // seizure amplitude over background RMS
  double artifact_snr_db = 14.0;  // artifact amplitude over background RMS

  // Fraction of channels each seizure event covers. 1.0 means generalized
  // (all channels); smaller values produce focal events on a contiguous
  // electrode block chosen per event.
  double seizure_channel_fraction = 1.0;

  double edge_margin_s = 2.0;  // events stay this far from record edges
  double event_gap_s = 3.0;    // minimum gap between seizure events
};

// Deterministic for a fixed (config, seed). Background is 1/f-shaped noise;
// seizures are 3 Hz spike-and-wave bursts over the configured channel
// fraction; artifacts are high-amplitude transients on at most 3 channels
// and count as background.
std::pair<EegRecord, AnnotationSet> synthesize_record(const SynthConfig& config,
                                                      std::uint64_t seed);

}  // namespace ndet
