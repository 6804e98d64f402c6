#include <cmath>
#include <fstream>
#include <random>

#include "doctest.h"
#include "ndet/scoring.hpp"
#include "testutil.hpp"

using namespace ndet;
using ndet_test::TempDir;

namespace {

EpochLabelTrack track_from(const std::string& pattern) {
  EpochLabelTrack t;
  for (const char c : pattern)
    t.labels.push_back(c == 'S' ? EventLabel::Seiz : EventLabel::Bckg);
  return t;
}

PosteriorTrack posteriors_from(std::initializer_list<double> values) {
  PosteriorTrack p;
  p.values.assign(values);
  return p;
}

}  // namespace

TEST_CASE("epoch confusion counts match a brute-force recount") {
  std::mt19937_64 rng(71);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  const std::size_t n = 10000;
  EpochLabelTrack ref, hyp;
  for (std::size_t i = 0; i < n; ++i) {
    ref.labels.push_back(u(rng) < 0.2 ? EventLabel::Seiz : EventLabel::Bckg);
    hyp.labels.push_back(u(rng) < 0.3 ? EventLabel::Seiz : EventLabel::Bckg);
  }
  const ConfusionCounts c = score_epochs(ref, hyp);

  std::uint64_t tp = 0, tn = 0, fp = 0, fn = 0, fp_runs = 0;
  bool in_fp_run = false;
  for (std::size_t i = 0; i < n; ++i) {
    const bool r = ref.labels[i] == EventLabel::Seiz;
    const bool h = hyp.labels[i] == EventLabel::Seiz;
    if (r && h) ++tp;
    if (!r && !h) ++tn;
    if (!r && h) ++fp;
    if (r && !h) ++fn;
    const bool is_fp = !r && h;
    if (is_fp && !in_fp_run) ++fp_runs;
    in_fp_run = is_fp;
  }
  CHECK(c.tp == tp);
  CHECK(c.tn == tn);
  CHECK(c.fp == fp);
  CHECK(c.fn == fn);
  CHECK(c.fp_runs == fp_runs);
  CHECK(c.total() == n);
  CHECK(c.total_duration_s == doctest::Approx(static_cast<double>(n)));

  EpochLabelTrack shorter = ref;
  shorter.labels.pop_back();
  CHECK_THROWS_AS(score_epochs(shorter, hyp), DataError);
}

TEST_CASE("metrics on the four-epoch hand example") {
  // ref S S B B vs hyp S B S B: one hit, one miss, one false alarm.
  const ConfusionCounts c = score_epochs(track_from("SSBB"), track_from("SBSB"));
  CHECK(c.tp == 1);
  CHECK(c.fn == 1);
  CHECK(c.fp == 1);
  CHECK(c.tn == 1);
  CHECK(c.fp_runs == 1);
  const Metrics m = metrics(c, FaMode::Event);
  CHECK(m.sensitivity == doctest::Approx(0.5));
  CHECK(m.specificity == doctest::Approx(0.5));
  // One alarm in four seconds scales to 21600 per day.
  CHECK(m.fa_per_24h == doctest::Approx(21600.0));
}

TEST_CASE("event and epoch alarm counting differ on multi-epoch runs") {
  // One FP run of three epochs.
  const ConfusionCounts c = score_epochs(track_from("BBBBBB"), track_from("BSSSBB"));
  CHECK(c.fp == 3);
  CHECK(c.fp_runs == 1);
  const Metrics ev = metrics(c, FaMode::Event);
  const Metrics ep = metrics(c, FaMode::Epoch);
  CHECK(ev.fa_per_24h == doctest::Approx(1.0 * 86400.0 / 6.0));
  CHECK(ep.fa_per_24h == doctest::Approx(3.0 * 86400.0 / 6.0));
}

TEST_CASE("zero denominators yield zero rates instead of dividing") {
  const ConfusionCounts all_bckg = score_epochs(track_from("BBB"), track_from("BBB"));
  const Metrics m = metrics(all_bckg, FaMode::Event);
  CHECK(m.sensitivity == 0.0);  // no seizure epochs to find
  CHECK(m.specificity == 1.0);
  CHECK(m.fa_per_24h == 0.0);

  ConfusionCounts empty;
  CHECK_THROWS_AS(metrics(empty, FaMode::Event), DataError);
}

TEST_CASE("smoothing merges short gaps then deletes short events") {
  SmoothingParams p;
  p.threshold = 0.5;
  p.min_event_s = 3.0;
  p.merge_gap_s = 2.0;
  const PosteriorTrack post = posteriors_from({0.9, 0.9, 0.1, 0.9, 0.9, 0.1, 0.1, 0.1});

  const SmoothResult r = smooth_hypotheses(post, p);
  REQUIRE(r.track.size() == 8);
  // The single-epoch gap (1 s < 2 s) merges; the resulting 5 s event stays.
  REQUIRE(r.events.size() == 1);
  CHECK(r.events[0].start_s == doctest::Approx(0.0));
  CHECK(r.events[0].stop_s == doctest::Approx(5.0));
  for (std::size_t i = 0; i < 5; ++i) CHECK(r.track.labels[i] == EventLabel::Seiz);
  for (std::size_t i = 5; i < 8; ++i) CHECK(r.track.labels[i] == EventLabel::Bckg);

  // Without the merge the two 2 s runs each fall under the minimum duration.
  SmoothingParams strict = p;
  strict.merge_gap_s = 1.0;
  const SmoothResult r2 = smooth_hypotheses(post, strict);
  CHECK(r2.events.empty());
  for (const EventLabel l : r2.track.labels) CHECK(l == EventLabel::Bckg);
}

TEST_CASE("threshold comparison is inclusive and the prior weight scales odds") {
  SmoothingParams p;
  p.threshold = 0.5;
  p.min_event_s = 1.0;
  p.merge_gap_s = 0.0;
  // Exactly at threshold counts as seizure.
  const SmoothResult at = smooth_hypotheses(posteriors_from({0.5}), p);
  CHECK(at.track.labels[0] == EventLabel::Seiz);

  // p = 0.4 misses at weight 1; doubling the seizure odds lifts it to
  // 0.8 / (0.8 + 0.6) = 0.571.
  const SmoothResult neutral = smooth_hypotheses(posteriors_from({0.4}), p);
  CHECK(neutral.track.labels[0] == EventLabel::Bckg);
  SmoothingParams boosted = p;
  boosted.prior_weight = 2.0;
  const SmoothResult lifted = smooth_hypotheses(posteriors_from({0.4}), boosted);
  CHECK(lifted.track.labels[0] == EventLabel::Seiz);
}

TEST_CASE("detection tradeoff sweep is weakly monotone in the threshold") {
  std::mt19937_64 rng(73);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  const std::size_t n = 600;
  EpochLabelTrack ref;
  PosteriorTrack post;
  for (std::size_t i = 0; i < n; ++i) {
    const bool seiz = (i / 25) % 3 == 0;
    ref.labels.push_back(seiz ? EventLabel::Seiz : EventLabel::Bckg);
    // Noisy but informative posterior.
    post.values.push_back(std::clamp(0.35 + (seiz ? 0.3 : 0.0) + 0.3 * (u(rng) - 0.5), 0.0, 1.0));
  }
  SmoothingParams p;
  p.min_event_s = 3.0;
  p.merge_gap_s = 2.0;
  const std::vector<double> grid = uniform_thresholds(101);
  REQUIRE(grid.size() == 101);
  CHECK(grid.front() == 0.0);
  CHECK(grid.back() == 1.0);

  const DetCurve curve = det_curve(post, ref, p, grid, FaMode::Event);
  REQUIRE(curve.points.size() == 101);
  CHECK(curve.points.front().sensitivity == doctest::Approx(1.0));
  for (std::size_t i = 1; i < curve.points.size(); ++i) {
    CHECK(curve.points[i].sensitivity <= curve.points[i - 1].sensitivity + 1e-12);
    CHECK(curve.points[i].miss_rate == doctest::Approx(1.0 - curve.points[i].sensitivity));
    CHECK(curve.points[i].false_positive_rate ==
          doctest::Approx(1.0 - curve.points[i].specificity));
  }

  CHECK_THROWS_AS(det_curve(post, ref, p, {0.5, 0.5}, FaMode::Event), ConfigError);
}

TEST_CASE("posterior files round-trip exactly and reject bad rows") {
  TempDir tmp;
  PosteriorTrack post = posteriors_from({0.0, 0.25, 1.0, 1e-17, 0.999999});
  const std::string path = tmp.file("p.csv");
  save_posteriors(post, path);
  const PosteriorTrack loaded = load_posteriors(path);
  CHECK(loaded.values == post.values);

  std::ofstream bad(tmp.file("bad.csv"));
  bad << "epoch,p_seiz\n0,1.5\n";
  bad.close();
  CHECK_THROWS_AS(load_posteriors(tmp.file("bad.csv")), DataError);
}

TEST_CASE("metrics tables carry one labeled row per system") {
  TempDir tmp;
  Metrics m;
  m.sensitivity = 0.857;
  m.specificity = 0.9021;
  m.fa_per_24h = 12.5;
  const std::string path = tmp.file("m.csv");
  write_metrics_csv({{"hmm_lstm", m}}, path);
  std::ifstream is(path);
  std::string header, row;
  std::getline(is, header);
  std::getline(is, row);
  CHECK(header == "system,sensitivity,specificity,fa_per_24h");
  CHECK(row.substr(0, 9) == "hmm_lstm,");
  // Values are printed with enough digits to round-trip doubles exactly.
  std::istringstream fields(row.substr(9));
  double sens = 0.0, spec = 0.0, fa = 0.0;
  char comma = 0;
  fields >> sens >> comma >> spec >> comma >> fa;
  CHECK(sens == 0.857);
  CHECK(spec == 0.9021);
  CHECK(fa == 12.5);
}
