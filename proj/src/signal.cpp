#include "ndet/signal.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <random>
#include <sstream>

namespace ndet {

namespace {
constexpr char kSignalMagic[4] = {'N', 'D', 'E', 'T'};
constexpr std::uint16_t kSignalVersion = 1;
}  // namespace

const char* to_string(EventLabel label) {
  return label == EventLabel::Seiz ? "seiz" : "bckg";
}

EventLabel event_label_from_string(const std::string& s) {
  if (s == "seiz") return EventLabel::Seiz;
  if (s == "bckg") return EventLabel::Bckg;
  throw DataError("unknown event label '" + s + "'");
}

EegRecord::EegRecord(std::vector<std::string> channel_labels,
                     std::uint32_t sample_rate_hz, double calibration,
                     std::vector<std::int16_t> raw_channel_major)
    : channel_labels_(std::move(channel_labels)),
      sample_rate_hz_(sample_rate_hz),
      calibration_(calibration),
      raw_(std::move(raw_channel_major)) {
  if (channel_labels_.empty()) throw DataError("record must have at least one channel");
  if (sample_rate_hz_ == 0) throw DataError("sample rate must be positive");
  if (!std::isfinite(calibration_) || calibration_ <= 0.0)
    throw DataError("calibration must be a positive finite value");
  if (raw_.size() % channel_labels_.size() != 0)
    throw DataError(strf("channel/sample count mismatch: %zu samples over %zu channels",
                         raw_.size(), channel_labels_.size()));
  samples_per_channel_ = raw_.size() / channel_labels_.size();
}

EegRecord EegRecord::from_microvolts(std::vector<std::string> channel_labels,
                                     std::uint32_t sample_rate_hz, double calibration,
                                     const std::vector<std::vector<double>>& microvolts) {
  if (microvolts.empty()) throw DataError("record must have at least one channel");
  if (!std::isfinite(calibration) || calibration <= 0.0)
    throw DataError("calibration must be a positive finite value");
  const std::size_t n = microvolts.front().size();
  std::vector<std::int16_t> raw;
  raw.reserve(microvolts.size() * n);
  for (const auto& ch : microvolts) {
    if (ch.size() != n)
      throw DataError("channel/sample count mismatch: channels differ in length");
    for (double v : ch) {
      const double q = std::nearbyint(v / calibration);
      if (!(q >= -32768.0 && q <= 32767.0))
        throw DataError(strf("sample %g uV exceeds 16-bit range at calibration %g",
                             v, calibration));
      raw.push_back(static_cast<std::int16_t>(q));
    }
  }
  return EegRecord(std::move(channel_labels), sample_rate_hz, calibration,
                   std::move(raw));
}

bool EegRecord::operator==(const EegRecord& other) const {
  return channel_labels_ == other.channel_labels_ &&
         sample_rate_hz_ == other.sample_rate_hz_ &&
         calibration_ == other.calibration_ && raw_ == other.raw_;
}

EegRecord load_record(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw DataError("unreadable: cannot open '" + path + "'");

  char magic[4];
  is.read(magic, 4);
  if (is.gcount() != 4 || std::memcmp(magic, kSignalMagic, 4) != 0)
    throw DataError("malformed header: bad magic in '" + path + "'");
  const std::uint16_t version = read_u16(is);
  if (version != kSignalVersion)
    throw DataError(strf("malformed header: unsupported version %u in '%s'",
                         version, path.c_str()));
  const std::uint16_t channels = read_u16(is);
  if (channels == 0) throw DataError("malformed header: zero channels in '" + path + "'");
  const std::uint32_t rate = read_u32(is);
  const std::uint64_t samples = read_u64(is);
  const double calibration = read_f64(is);

  std::vector<std::string> labels(channels);
  for (auto& l : labels) l = read_lp_string(is);

  const std::uint64_t total = static_cast<std::uint64_t>(channels) * samples;
  std::vector<unsigned char> bytes(total * 2);
  is.read(reinterpret_cast<char*>(bytes.data()),
          static_cast<std::streamsize>(bytes.size()));
  if (static_cast<std::uint64_t>(is.gcount()) != total * 2)
    throw DataError(strf(
        "channel/sample count mismatch: '%s' ends after %llu of %llu sample bytes",
        path.c_str(), static_cast<unsigned long long>(is.gcount()),
        static_cast<unsigned long long>(total * 2)));
  is.peek();
  if (!is.eof())
    throw DataError("channel/sample count mismatch: trailing bytes in '" + path + "'");

  std::vector<std::int16_t> raw(total);
  for (std::uint64_t i = 0; i < total; ++i) {
    const std::uint16_t u = static_cast<std::uint16_t>(bytes[2 * i]) |
                            static_cast<std::uint16_t>(bytes[2 * i + 1]) << 8;
    raw[i] = static_cast<std::int16_t>(u);
  }
  return EegRecord(std::move(labels), rate, calibration, std::move(raw));
}

void save_record(const EegRecord& record, const std::string& path) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw DataError("write failed: cannot open '" + path + "'");
  os.write(kSignalMagic, 4);
  write_u16(os, kSignalVersion);
  write_u16(os, static_cast<std::uint16_t>(record.channels()));
  write_u32(os, record.sample_rate_hz());
  write_u64(os, record.samples_per_channel());
  write_f64(os, record.calibration());
  for (const auto& l : record.channel_labels()) write_lp_string(os, l);
  for (std::int16_t v : record.raw_samples()) write_i16(os, v);
  if (!os) throw DataError("write failed for '" + path + "'");
}

AnnotationSet::AnnotationSet(std::vector<AnnEvent> events, double record_duration_s)
    : events_(std::move(events)), record_duration_s_(record_duration_s) {
  if (!(record_duration_s_ > 0.0))
    throw DataError("annotation set requires positive record duration");
  double prev_stop = 0.0;
  for (const auto& e : events_) {
    if (!(e.start_s < e.stop_s))
      throw DataError(strf("annotation event [%g, %g) is empty or reversed",
                           e.start_s, e.stop_s));
    if (e.start_s < prev_stop - 1e-9)
      throw DataError("annotation events overlap or are unsorted");
    if (e.stop_s > record_duration_s_ + 1e-9)
      throw DataError("annotation event extends past record end");
    prev_stop = e.stop_s;
  }
}

double AnnotationSet::seizure_seconds() const {
  double total = 0.0;
  for (const auto& e : events_)
    if (e.label == EventLabel::Seiz) total += e.stop_s - e.start_s;
  return total;
}

AnnotationSet load_annotations(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw DataError("unreadable: cannot open '" + path + "'");
  std::string line;
  if (!std::getline(is, line) || line.rfind("start_s,stop_s,label", 0) != 0)
    throw DataError("malformed header: expected 'start_s,stop_s,label' in '" + path + "'");
  std::vector<AnnEvent> events;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    std::istringstream ls(line);
    std::string a, b, c;
    if (!std::getline(ls, a, ',') || !std::getline(ls, b, ',') || !std::getline(ls, c))
      throw DataError("malformed annotation row: '" + line + "'");
    AnnEvent e;
    e.start_s = std::stod(a);
    e.stop_s = std::stod(b);
    e.label = event_label_from_string(c);
    events.push_back(e);
  }
  if (events.empty()) throw DataError("annotation file '" + path + "' has no events");
  return AnnotationSet(events, events.back().stop_s);
}

void save_annotations(const AnnotationSet& ann, const std::string& path) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw DataError("write failed: cannot open '" + path + "'");
  os << "start_s,stop_s,label\n";
  for (const auto& e : ann.events())
    os << strf("%.4f,%.4f,%s\n", e.start_s, e.stop_s, to_string(e.label));
  if (!os) throw DataError("write failed for '" + path + "'");
}

EpochLabelTrack annotations_to_epoch_labels(const AnnotationSet& ann) {
  const std::size_t epochs =
      static_cast<std::size_t>(std::floor(ann.record_duration_s() + 1e-9));
  EpochLabelTrack track;
  track.labels.assign(epochs, EventLabel::Bckg);
  for (std::size_t i = 0; i < epochs; ++i) {
    const double lo = static_cast<double>(i);
    const double hi = lo + 1.0;
    double coverage = 0.0;
    for (const auto& e : ann.events()) {
      if (e.label != EventLabel::Seiz) continue;
      coverage += std::max(0.0, std::min(hi, e.stop_s) - std::max(lo, e.start_s));
    }
    if (coverage + 1e-12 >= 0.5) track.labels[i] = EventLabel::Seiz;
  }
  return track;
}

// --- synthesis -------------------------------------------------------------

namespace {

struct Interval {
  double start = 0.0;
  double stop = 0.0;
};

// Paul Kellet's economy pink-noise filter over a white gaussian stream.
class PinkNoise {
 public:
  double next(double white) {
    b0_ = 0.99886 * b0_ + white * 0.0555179;
    b1_ = 0.99332 * b1_ + white * 0.0750759;
    b2_ = 0.96900 * b2_ + white * 0.1538520;
    b3_ = 0.86650 * b3_ + white * 0.3104856;
    b4_ = 0.55000 * b4_ + white * 0.5329522;
    b5_ = -0.7616 * b5_ - white * 0.0168980;
    const double pink = b0_ + b1_ + b2_ + b3_ + b4_ + b5_ + b6_ + white * 0.5362;
    b6_ = white * 0.115926;
    return pink;
  }

 private:
  double b0_ = 0, b1_ = 0, b2_ = 0, b3_ = 0, b4_ = 0, b5_ = 0, b6_ = 0;
};

bool overlaps_any(const std::vector<Interval>& v, double start, double stop, double gap) {
  for (const auto& iv : v)
    if (start < iv.stop + gap && iv.start < stop + gap) return true;
  return false;
}

// One cycle of a 3 Hz spike-and-wave pattern; u in [0, 1).
double spike_wave_shape(double u) {
  const double spike = 2.0 * std::exp(-0.5 * std::pow((u - 0.2) / 0.03, 2.0));
  double wave = 0.0;
  if (u >= 0.3) wave = std::sin(M_PI * (u - 0.3) / 0.7);
  return spike + wave;
}

// Raised-cosine onset/offset envelope, ramp_s on each side.
double burst_envelope(double t, double start, double stop, double ramp_s) {
  if (t < start || t >= stop) return 0.0;
  const double len = stop - start;
  const double ramp = std::min(ramp_s, len / 2.0);
  const double a = t - start;
  const double b = stop - t;
  if (a < ramp) return 0.5 * (1.0 - std::cos(M_PI * a / ramp));
  if (b < ramp) return 0.5 * (1.0 - std::cos(M_PI * b / ramp));
  return 1.0;
}

}  // namespace

std::pair<EegRecord, AnnotationSet> synthesize_record(const SynthConfig& cfg,
                                                      std::uint64_t seed) {
  if (!(cfg.duration_s > 0.0)) throw DataError("synthesis duration must be positive");
  if (cfg.seizure_fraction > 1.0) throw DataError("seizure fraction exceeds 1");
  if (cfg.seizure_fraction < 0.0) throw DataError("seizure fraction is negative");
  if (cfg.channels == 0) throw DataError("synthesis requires at least one channel");
  if (cfg.sample_rate_hz == 0) throw DataError("synthesis requires a positive rate");
  if (cfg.seizure_min_s > cfg.seizure_max_s)
    throw DataError("seizure length bounds are reversed");
  if (!(cfg.seizure_channel_fraction > 0.0) || cfg.seizure_channel_fraction > 1.0)
    throw DataError("seizure channel fraction must be in (0, 1]");
  if (cfg.artifact_rhythmic_fraction < 0.0 || cfg.artifact_rhythmic_fraction > 1.0)
    throw DataError("artifact rhythmic fraction must be in [0, 1]");

  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::normal_distribution<double> gauss(0.0, 1.0);

  const double dur = cfg.duration_s;
  const std::size_t n = static_cast<std::size_t>(std::llround(dur * cfg.sample_rate_hz));
  const double dt = 1.0 / cfg.sample_rate_hz;

  // Seizure interval placement.
  std::vector<Interval> seizures;
  const double margin = std::min(cfg.edge_margin_s, dur / 4.0);
  auto try_place = [&](double len, std::vector<Interval>& out, double gap) {
    if (len <= 0.0 || len > dur - 2.0 * margin) return false;
    for (int attempt = 0; attempt < 200; ++attempt) {
      const double start = margin + unit(rng) * (dur - 2.0 * margin - len);
      if (!overlaps_any(seizures, start, start + len, gap) &&
          (&out == &seizures || !overlaps_any(out, start, start + len, gap))) {
        out.push_back({start, start + len});
        return true;
      }
    }
    return false;
  };

  if (cfg.seizure_count >= 0) {
    for (int k = 0; k < cfg.seizure_count; ++k) {
      const double len =
          cfg.seizure_min_s + unit(rng) * (cfg.seizure_max_s - cfg.seizure_min_s);
      try_place(len, seizures, cfg.event_gap_s);
    }
  } else if (cfg.seizure_fraction > 0.0) {
    const double target = cfg.seizure_fraction * dur;
    double total = 0.0;
    for (int guard = 0; guard < 10000 && total < 0.97 * target; ++guard) {
      double len =
          cfg.seizure_min_s + unit(rng) * (cfg.seizure_max_s - cfg.seizure_min_s);
      if (total + len > 1.03 * target) len = 1.03 * target - total;
      // Never emit an event shorter than the configured minimum; stop a
      // little under target instead.
      if (len < cfg.seizure_min_s) break;
      if (try_place(len, seizures, cfg.event_gap_s)) total += len;
    }
  }
  std::sort(seizures.begin(), seizures.end(),
            [](const Interval& a, const Interval& b) { return a.start < b.start; });

  // Focal coverage: each event touches a contiguous electrode block. A
  // fraction of 1.0 draws nothing, so generalized output is unchanged by
  // this feature.
  std::vector<std::pair<std::uint32_t, std::uint32_t>> seiz_span(
      seizures.size(), {0, cfg.channels});
  if (cfg.seizure_channel_fraction < 1.0) {
    const std::uint32_t width = std::max<std::uint32_t>(
        1, static_cast<std::uint32_t>(
               std::llround(cfg.seizure_channel_fraction * cfg.channels)));
    for (auto& span : seiz_span) {
      const std::uint32_t lo = static_cast<std::uint32_t>(
          unit(rng) * (cfg.channels - width + 1));
      span = {std::min(lo, cfg.channels - width), width};
      span.second = span.first + width;
    }
  }

  // Artifact placement: outside seizures, on 1..3 channels each.
  struct Artifact {
    Interval iv;
    std::vector<std::uint32_t> channels;
    bool emg = false;       // else slow blink-like pulse
    bool rhythmic = false;  // seizure-band spike train (overrides emg)
    double freq_hz = 3.0;
    double phase = 0.0;
  };
  std::vector<Artifact> artifacts;
  {
    std::poisson_distribution<int> count_dist(cfg.artifact_rate_per_min * dur / 60.0);
    const int count = cfg.artifact_rate_per_min > 0.0 ? count_dist(rng) : 0;
    std::vector<Interval> placed;
    for (int k = 0; k < count; ++k) {
      const double len =
          cfg.artifact_min_s + unit(rng) * (cfg.artifact_max_s - cfg.artifact_min_s);
      std::vector<Interval> tmp = placed;
      if (!try_place(len, tmp, 0.5)) continue;
      Artifact a;
      a.iv = tmp.back();
      placed = std::move(tmp);
      const int nch = 1 + static_cast<int>(unit(rng) * 3.0) % 3;
      std::vector<std::uint32_t> all(cfg.channels);
      for (std::uint32_t c = 0; c < cfg.channels; ++c) all[c] = c;
      std::shuffle(all.begin(), all.end(), rng);
      a.channels.assign(all.begin(), all.begin() + std::min<std::size_t>(nch, all.size()));
      std::sort(a.channels.begin(), a.channels.end());
      const double u = unit(rng);
      a.emg = u < 0.5;
      // The top slice of the unit draw selects the mimic type, so a zero
      // fraction consumes the same stream as before the type existed.
      if (cfg.artifact_rhythmic_fraction > 0.0 &&
          u >= 1.0 - cfg.artifact_rhythmic_fraction) {
        a.rhythmic = true;
        a.emg = false;
        a.freq_hz = 2.5 + 1.5 * unit(rng);
        a.phase = unit(rng);
      }
      artifacts.push_back(std::move(a));
    }
  }

  const double seiz_amp = cfg.background_rms_uv * std::pow(10.0, cfg.seizure_snr_db / 20.0);
  const double art_amp = cfg.background_rms_uv * std::pow(10.0, cfg.artifact_snr_db / 20.0);

  std::vector<std::vector<double>> uv(cfg.channels, std::vector<double>(n, 0.0));
  double peak = 0.0;
  for (std::uint32_t c = 0; c < cfg.channels; ++c) {
    PinkNoise pink;
    auto& ch = uv[c];
    double sumsq = 0.0;
    for (std::size_t t = 0; t < n; ++t) {
      ch[t] = pink.next(gauss(rng));
      sumsq += ch[t] * ch[t];
    }
    const double rms = std::sqrt(sumsq / std::max<std::size_t>(n, 1));
    const double scale = rms > 0.0 ? cfg.background_rms_uv / rms : 1.0;
    for (auto& v : ch) v *= scale;

    // Per-channel seizure morphology: shared 3 Hz rhythm, channel-specific
    // amplitude and small phase jitter.
    for (std::size_t ei = 0; ei < seizures.size(); ++ei) {
      const auto& iv = seizures[ei];
      const double amp = seiz_amp * (0.7 + 0.3 * unit(rng));
      const double jitter = 0.05 * unit(rng);
      if (c < seiz_span[ei].first || c >= seiz_span[ei].second) continue;
      const std::size_t t0 = static_cast<std::size_t>(std::max(0.0, iv.start) / dt);
      const std::size_t t1 =
          std::min(n, static_cast<std::size_t>(std::ceil(iv.stop / dt)));
      for (std::size_t t = t0; t < t1; ++t) {
        const double tt = t * dt;
        const double env = burst_envelope(tt, iv.start, iv.stop, 0.5);
        if (env <= 0.0) continue;
        double u = 3.0 * (tt - iv.start) + jitter;
        u -= std::floor(u);
        ch[t] += amp * env * spike_wave_shape(u);
      }
    }
    for (double v : ch) peak = std::max(peak, std::abs(v));
  }

  for (const auto& a : artifacts) {
    const std::size_t t0 = static_cast<std::size_t>(std::max(0.0, a.iv.start) / dt);
    const std::size_t t1 = std::min(n, static_cast<std::size_t>(std::ceil(a.iv.stop / dt)));
    const double mid = 0.5 * (a.iv.start + a.iv.stop);
    const double width = 0.25 * (a.iv.stop - a.iv.start);
    for (std::uint32_t c : a.channels) {
      const double amp = art_amp * (0.8 + 0.4 * unit(rng));
      for (std::size_t t = t0; t < t1; ++t) {
        const double tt = t * dt;
        double v;
        if (a.rhythmic) {
          double u = a.freq_hz * (tt - a.iv.start) + a.phase;
          u -= std::floor(u);
          v = amp * burst_envelope(tt, a.iv.start, a.iv.stop, 0.3) *
              spike_wave_shape(u);
        } else if (a.emg) {
          v = amp * burst_envelope(tt, a.iv.start, a.iv.stop, 0.05) * gauss(rng) * 0.6;
        } else {
          v = amp * std::exp(-0.5 * std::pow((tt - mid) / width, 2.0));
        }
        uv[c][t] += v;
        peak = std::max(peak, std::abs(uv[c][t]));
      }
    }
  }

  const double calibration = peak > 0.0 ? peak / 30000.0 : 1e-3;
  std::vector<std::string> labels(cfg.channels);
  for (std::uint32_t c = 0; c < cfg.channels; ++c)
    labels[c] = strf("EEG-%02u", c);
  EegRecord record =
      EegRecord::from_microvolts(std::move(labels), cfg.sample_rate_hz, calibration, uv);

  // Full-coverage annotation: seizure intervals, background elsewhere.
  std::vector<AnnEvent> events;
  double cursor = 0.0;
  for (const auto& iv : seizures) {
    if (iv.start > cursor)
      events.push_back({cursor, iv.start, EventLabel::Bckg});
    events.push_back({iv.start, iv.stop, EventLabel::Seiz});
    cursor = iv.stop;
  }
  if (cursor < dur) events.push_back({cursor, dur, EventLabel::Bckg});
  return {std::move(record), AnnotationSet(std::move(events), dur)};
}

}  // namespace ndet
