#include "ndet/scoring.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "ndet/common.hpp"

namespace ndet {

namespace {

constexpr double kSecondsPerDay = 86400.0;

std::string format_double(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

}  // namespace

PosteriorTrack load_posteriors(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataError(strf("posterior file unreadable: cannot open %s", path.c_str()));
  std::string line;
  if (!std::getline(in, line)) {
    throw DataError(strf("posterior file malformed: %s is empty", path.c_str()));
  }
  if (line == "epoch,p_seiz\r") line.pop_back();
  if (line != "epoch,p_seiz") {
    throw DataError(strf("posterior file malformed: bad header in %s", path.c_str()));
  }
  PosteriorTrack track;
  std::size_t row = 0;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    std::size_t epoch = 0;
    double p = 0.0;
    if (std::sscanf(line.c_str(), "%zu,%lf", &epoch, &p) != 2 || epoch != row) {
      throw DataError(strf("posterior file malformed: bad row %zu in %s", row, path.c_str()));
    }
    if (!std::isfinite(p) || p < 0.0 || p > 1.0) {
      throw DataError(strf("posterior file malformed: value %g out of [0,1] at row %zu", p, row));
    }
    track.values.push_back(p);
    ++row;
  }
  return track;
}

void save_posteriors(const PosteriorTrack& track, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError(strf("cannot open %s for writing", path.c_str()));
  out << "epoch,p_seiz\n";
  for (std::size_t e = 0; e < track.values.size(); ++e) {
    out << e << ',' << format_double(track.values[e]) << '\n';
  }
  if (!out) throw DataError(strf("write failed: %s", path.c_str()));
}

const char* to_string(FaMode mode) {
  return mode == FaMode::Event ? "event" : "epoch";
}

FaMode fa_mode_from_string(const std::string& s) {
  if (s == "event") return FaMode::Event;
  if (s == "epoch") return FaMode::Epoch;
  throw ConfigError(strf("unknown fa mode '%s' (expected event or epoch)", s.c_str()));
}

void SmoothingParams::validate() const {
  if (!(threshold >= 0.0 && threshold <= 1.0)) {
    throw ConfigError(strf("smoothing threshold %g outside [0,1]", threshold));
  }
  if (!(min_event_s >= 0.0)) {
    throw ConfigError(strf("min_event_s %g must be non-negative", min_event_s));
  }
  if (!(merge_gap_s >= 0.0)) {
    throw ConfigError(strf("merge_gap_s %g must be non-negative", merge_gap_s));
  }
  if (!(prior_weight > 0.0) || !std::isfinite(prior_weight)) {
    throw ConfigError(strf("prior_weight %g must be positive and finite", prior_weight));
  }
}

ConfusionCounts score_epochs(const EpochLabelTrack& ref, const EpochLabelTrack& hyp,
                             double epoch_s) {
  if (ref.size() != hyp.size()) {
    throw DataError(strf("epoch track length mismatch: ref %zu vs hyp %zu", ref.size(),
                         hyp.size()));
  }
  ConfusionCounts c;
  bool in_fp_run = false;
  for (std::size_t e = 0; e < ref.size(); ++e) {
    const bool ref_seiz = ref.labels[e] == EventLabel::Seiz;
    const bool hyp_seiz = hyp.labels[e] == EventLabel::Seiz;
    if (ref_seiz && hyp_seiz) {
      ++c.tp;
    } else if (!ref_seiz && !hyp_seiz) {
      ++c.tn;
    } else if (!ref_seiz && hyp_seiz) {
      ++c.fp;
    } else {
      ++c.fn;
    }
    const bool fp_here = !ref_seiz && hyp_seiz;
    if (fp_here && !in_fp_run) ++c.fp_runs;
    in_fp_run = fp_here;
  }
  c.total_duration_s = static_cast<double>(ref.size()) * epoch_s;
  return c;
}

Metrics metrics(const ConfusionCounts& c, FaMode mode) {
  if (!(c.total_duration_s > 0.0)) {
    throw DataError("cannot compute metrics over zero scored duration");
  }
  Metrics m;
  const double pos = static_cast<double>(c.tp + c.fn);
  const double neg = static_cast<double>(c.tn + c.fp);
  m.sensitivity = pos > 0.0 ? static_cast<double>(c.tp) / pos : 0.0;
  m.specificity = neg > 0.0 ? static_cast<double>(c.tn) / neg : 0.0;
  const double alarms =
      static_cast<double>(mode == FaMode::Event ? c.fp_runs : c.fp);
  m.fa_per_24h = alarms * kSecondsPerDay / c.total_duration_s;
  return m;
}

SmoothResult smooth_hypotheses(const PosteriorTrack& posteriors, const SmoothingParams& p,
                               double epoch_s) {
  p.validate();
  const std::size_t n = posteriors.size();
  std::vector<char> seiz(n, 0);
  for (std::size_t e = 0; e < n; ++e) {
    double v = posteriors.values[e];
    if (p.prior_weight != 1.0) {
      // Scale seizure odds by the prior weight, then renormalize.
      const double clamped = std::min(std::max(v, 1e-12), 1.0 - 1e-12);
      const double odds = p.prior_weight * clamped / (1.0 - clamped);
      v = odds / (1.0 + odds);
    }
    seiz[e] = v >= p.threshold ? 1 : 0;
  }

  // Collect maximal seizure runs as [start, stop) epoch ranges.
  std::vector<std::pair<std::size_t, std::size_t>> runs;
  for (std::size_t e = 0; e < n;) {
    if (!seiz[e]) {
      ++e;
      continue;
    }
    std::size_t stop = e;
    while (stop < n && seiz[stop]) ++stop;
    runs.emplace_back(e, stop);
    e = stop;
  }

  // Merge runs separated by gaps strictly shorter than merge_gap_s.
  std::vector<std::pair<std::size_t, std::size_t>> merged;
  for (const auto& run : runs) {
    if (!merged.empty() &&
        static_cast<double>(run.first - merged.back().second) * epoch_s < p.merge_gap_s) {
      merged.back().second = run.second;
    } else {
      merged.push_back(run);
    }
  }

  // Delete runs shorter than min_event_s.
  SmoothResult result;
  result.track.labels.assign(n, EventLabel::Bckg);
  for (const auto& run : merged) {
    const double len_s = static_cast<double>(run.second - run.first) * epoch_s;
    if (len_s < p.min_event_s) continue;
    for (std::size_t e = run.first; e < run.second; ++e) {
      result.track.labels[e] = EventLabel::Seiz;
    }
    result.events.push_back({static_cast<double>(run.first) * epoch_s,
                             static_cast<double>(run.second) * epoch_s});
  }
  return result;
}

std::vector<double> uniform_thresholds(std::size_t count) {
  if (count < 2) throw ConfigError("threshold grid needs at least 2 points");
  std::vector<double> t(count);
  for (std::size_t i = 0; i < count; ++i) {
    t[i] = static_cast<double>(i) / static_cast<double>(count - 1);
  }
  return t;
}

DetCurve det_curve(const PosteriorTrack& posteriors, const EpochLabelTrack& ref,
                   const SmoothingParams& smoothing, const std::vector<double>& thresholds,
                   FaMode mode) {
  if (posteriors.size() != ref.size()) {
    throw DataError(strf("posterior/reference length mismatch: %zu vs %zu", posteriors.size(),
                         ref.size()));
  }
  if (thresholds.empty()) throw ConfigError("empty threshold grid");
  for (std::size_t i = 0; i < thresholds.size(); ++i) {
    if (thresholds[i] < 0.0 || thresholds[i] > 1.0) {
      throw ConfigError(strf("threshold %g outside [0,1]", thresholds[i]));
    }
    if (i > 0 && thresholds[i] <= thresholds[i - 1]) {
      throw ConfigError("thresholds must be strictly increasing");
    }
  }

  DetCurve curve;
  curve.points.reserve(thresholds.size());
  SmoothingParams p = smoothing;
  for (double thr : thresholds) {
    p.threshold = thr;
    const SmoothResult sm = smooth_hypotheses(posteriors, p);
    const ConfusionCounts c = score_epochs(ref, sm.track);
    const Metrics m = metrics(c, mode);
    DetPoint point;
    point.threshold = thr;
    point.sensitivity = m.sensitivity;
    point.specificity = m.specificity;
    point.fa_per_24h = m.fa_per_24h;
    point.false_positive_rate = 1.0 - m.specificity;
    point.miss_rate = 1.0 - m.sensitivity;
    curve.points.push_back(point);
  }
  return curve;
}

void write_det_csv(const DetCurve& curve, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError(strf("cannot open %s for writing", path.c_str()));
  out << "threshold,sensitivity,specificity,fa_per_24h,fpr,miss\n";
  for (const DetPoint& pt : curve.points) {
    out << format_double(pt.threshold) << ',' << format_double(pt.sensitivity) << ','
        << format_double(pt.specificity) << ',' << format_double(pt.fa_per_24h) << ','
        << format_double(pt.false_positive_rate) << ',' << format_double(pt.miss_rate)
        << '\n';
  }
  if (!out) throw DataError(strf("write failed: %s", path.c_str()));
}

std::string metrics_csv_header() { return "system,sensitivity,specificity,fa_per_24h"; }

std::string metrics_csv_row(const std::string& name, const Metrics& m) {
  std::ostringstream row;
  row << name << ',' << format_double(m.sensitivity) << ',' << format_double(m.specificity)
      << ',' << format_double(m.fa_per_24h);
  return row.str();
}

void write_metrics_csv(const std::vector<std::pair<std::string, Metrics>>& rows,
                       const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError(strf("cannot open %s for writing", path.c_str()));
  out << metrics_csv_header() << '\n';
  for (const auto& [name, m] : rows) out << metrics_csv_row(name, m) << '\n';
  if (!out) throw DataError(strf("write failed: %s", path.c_str()));
}

}  // namespace ndet
