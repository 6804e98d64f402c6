// Release acceptance gate. Runs every contract check as a numbered criterion,
// prints exactly one PASS/FAIL line per criterion (with the measured values
// and the wall-clock budget), and exits nonzero when anything fails. Unlike
// the unit suites this binary favors breadth: each criterion re-derives its
// expected values from first principles or from an independent oracle.
#include <sys/wait.h>

#include <algorithm>
#include <chrono>
#include <cinttypes>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <functional>
#include <map>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "ndet/architectures.hpp"
#include "ndet/common.hpp"
#include "ndet/config.hpp"
#include "ndet/dimred.hpp"
#include "ndet/features.hpp"
#include "ndet/hmm.hpp"
#include "ndet/nn/loss.hpp"
#include "ndet/nn/network.hpp"
#include "ndet/nn/optimizer.hpp"
#include "ndet/scoring.hpp"
#include "ndet/signal.hpp"
#include "testutil.hpp"

using namespace ndet;
using ndet_test::TempDir;

namespace {

// ---------------------------------------------------------------------------
// Criterion harness
// ---------------------------------------------------------------------------

struct Ctx {
  bool ok = true;
  std::string headline;            // shown on the summary line
  std::vector<std::string> notes;  // indented detail (failures, measurements)

  void expect(bool cond, const std::string& what) {
    if (!cond) {
      ok = false;
      notes.push_back("check failed: " + what);
    }
  }
  void note(const std::string& what) { notes.push_back(what); }
};

struct Criterion {
  int id;
  std::string name;
  double budget_s;
  std::function<void(Ctx&)> run;
};

double now_s() {
  return std::chrono::duration<double>(
             std::chrono::steady_clock::now().time_since_epoch())
      .count();
}

// ---------------------------------------------------------------------------
// 1. Pipeline shape fidelity
// ---------------------------------------------------------------------------

const StageDesc* find_stage(const PipelineDesc& p, const std::string& name) {
  for (const StageDesc& s : p.stages)
    if (s.name == name) return &s;
  return nullptr;
}

void expect_stage(Ctx& c, const PipelineDesc& p, const std::string& name,
                  const std::vector<std::size_t>& shape) {
  const StageDesc* s = find_stage(p, name);
  if (!s) {
    c.expect(false, strf("%s: missing stage '%s'", to_string(p.kind), name.c_str()));
    return;
  }
  c.expect(s->shape == shape, strf("%s: stage '%s' has shape %s, expected %s",
                                   to_string(p.kind), name.c_str(),
                                   shape_string(s->shape).c_str(),
                                   shape_string(shape).c_str()));
}

void criterion_shapes(Ctx& c) {
  // Decoder-score systems: 2 scores x 22 channels = 44 per epoch; a 41-epoch
  // window flattens to 1804 and reduces to 20 principal components.
  const PipelineDesc sda = build_system(SystemConfig::defaults_for(SystemKind::HmmSda));
  expect_stage(c, sda, "epoch_scores", {44});
  expect_stage(c, sda, "score_window", {41 * 44});
  expect_stage(c, sda, "pca", {20});

  const PipelineDesc lstm = build_system(SystemConfig::defaults_for(SystemKind::HmmLstm));
  expect_stage(c, lstm, "epoch_scores", {44});
  expect_stage(c, lstm, "pca", {20});
  expect_stage(c, lstm, "score_sequence", {41, 20});

  // Streaming-reduction system: 22 channels x 26 dims x 7 epochs = 4004 in,
  // 25 out, consumed as 7-step sequences.
  const PipelineDesc ipca = build_system(SystemConfig::defaults_for(SystemKind::IpcaLstm));
  expect_stage(c, ipca, "epoch_summary", {22 * 26});
  expect_stage(c, ipca, "context_window", {4004});
  expect_stage(c, ipca, "streaming_pca", {25});
  expect_stage(c, ipca, "window_sequence", {7, 25});

  // Convolutional image system: 7 epochs x 10 frames = 70 frames over
  // 22 channels x 26 dims, ending in a 512-unit dense bottleneck.
  const PipelineDesc cnn = build_system(SystemConfig::defaults_for(SystemKind::CnnMlp));
  expect_stage(c, cnn, "feature_image", {70, 22, 26});
  expect_stage(c, cnn, "dense 1024->512", {512});

  // Frame-stack system: 21 epochs x 10 frames = 210 per-frame images of
  // (26, 22, 1); the shared convolutional stack flattens each frame to 384,
  // 1-D pooling leaves 26 steps of 16 channels, and the stacked
  // bidirectional layers widen to 256 then 512.
  const PipelineDesc seq = build_system(SystemConfig::defaults_for(SystemKind::CnnLstm));
  expect_stage(c, seq, "frame_stack", {210, 26, 22, 1});
  expect_stage(c, seq, "flatten", {210, 384});
  expect_stage(c, seq, "maxpool1d 8", {26, 16});
  expect_stage(c, seq, "bilstm h 128 (sequence)", {26, 2 * 128});
  expect_stage(c, seq, "bilstm h 256", {512});
  expect_stage(c, seq, "dense 512->2", {2});

  c.headline = "six pipelines probed; 44/1804/20, 4004/25, 70x22x26->512, 210->384->(26,16)->256/512 all exact";
}

// ---------------------------------------------------------------------------
// 2. Analytic gradients vs central finite differences
// ---------------------------------------------------------------------------

struct GradCase {
  Network net;
  Tensor x;
  LossKind loss = LossKind::Mse;
};

Tensor random_input(std::mt19937_64& rng, const std::vector<std::size_t>& shape) {
  std::size_t n = 1;
  for (std::size_t d : shape) n *= d;
  return Tensor::from(shape, ndet_test::rand_vec(rng, n, -1.5, 1.5));
}

// One randomized network per (layer kind, configuration index). Every case
// ends in a small dense head so each layer's backward pass is exercised by
// parameters both before and after it; cross-entropy cases end in a sigmoid
// so predictions stay strictly inside (0, 1).
GradCase make_grad_case(const std::string& kind, std::size_t i) {
  GradCase gc;
  std::mt19937_64 rng(0x5eedULL + 131 * i + std::hash<std::string>{}(kind));
  gc.loss = (i % 2 == 0) ? LossKind::CrossEntropy : LossKind::Mse;
  Network& net = gc.net;

  if (kind == "dense") {
    const std::size_t in = 2 + i % 7, units = 1 + (3 * i) % 6;
    const std::vector<std::size_t> shape =
        (i % 3 == 0) ? std::vector<std::size_t>{2 + i % 3, in}
                     : std::vector<std::size_t>{in};
    net.add(make_dense(in, units, rng));
    gc.x = random_input(rng, shape);
  } else if (kind == "conv2d") {
    const std::size_t h = 3 + i % 4, w = 3 + (i / 2) % 4, cin = 1 + i % 3,
                      k = 1 + (i / 3) % 3;
    const std::size_t kh = (i % 2 == 0) ? 3 : 1, kw = ((i / 2) % 2 == 0) ? 3 : 1;
    net.add(make_conv2d(kh, kw, cin, k, rng));
    net.add(make_flatten());
    if (i % 4 == 0) {
      // Rank-4 stack: weights shared across the leading axis.
      const std::size_t t = 2 + i % 2;
      net.add(make_dense(h * w * k, 2, rng));
      gc.x = random_input(rng, {t, h, w, cin});
    } else {
      net.add(make_dense(h * w * k, 2, rng));
      gc.x = random_input(rng, {h, w, cin});
    }
  } else if (kind == "maxpool2d") {
    const std::size_t h = 4 + i % 4, w = 4 + (i / 2) % 3, cin = 1 + i % 2,
                      k = 1 + i % 3;
    const std::size_t ph = 2 + i % 2, pw = 2 + (i / 3) % 2;
    net.add(make_conv2d(3, 3, cin, k, rng));
    net.add(make_maxpool2d(ph, pw));
    net.add(make_flatten());
    net.add(make_dense((h / ph) * (w / pw) * k, 2, rng));
    gc.x = random_input(rng, {h, w, cin});
  } else if (kind == "conv1d") {
    const std::size_t t = 4 + i % 6, cin = 1 + i % 4, k = 1 + (i / 2) % 4;
    const std::size_t kt = (i % 2 == 0) ? 3 : 1;
    net.add(make_conv1d(kt, cin, k, rng));
    net.add(make_flatten());
    net.add(make_dense(t * k, 2, rng));
    gc.x = random_input(rng, {t, cin});
  } else if (kind == "maxpool1d") {
    const std::size_t t = 6 + i % 5, cin = 1 + i % 3, k = 1 + i % 3;
    const std::size_t p = 2 + i % 3;
    net.add(make_conv1d(3, cin, k, rng));
    net.add(make_maxpool1d(p));
    net.add(make_flatten());
    net.add(make_dense((t / p) * k, 2, rng));
    gc.x = random_input(rng, {t, cin});
  } else if (kind == "lstm") {
    const std::size_t t = 2 + i % 5, in = 2 + i % 4, h = 2 + (i / 2) % 5;
    const bool seq = (i % 2 == 0);
    net.add(make_lstm(in, h, seq, rng));
    if (seq) {
      net.add(make_flatten());
      net.add(make_dense(t * h, 2, rng));
    } else {
      net.add(make_dense(h, 2, rng));
    }
    gc.x = random_input(rng, {t, in});
  } else if (kind == "bilstm") {
    const std::size_t t = 2 + i % 5, in = 2 + i % 4, h = 2 + (i / 2) % 4;
    const bool seq = (i % 2 == 0);
    net.add(make_bilstm(in, h, seq, rng));
    if (seq) {
      net.add(make_flatten());
      net.add(make_dense(t * 2 * h, 2, rng));
    } else {
      net.add(make_dense(2 * h, 2, rng));
    }
    gc.x = random_input(rng, {t, in});
  } else if (kind == "activation") {
    static const ActivationKind kinds[] = {ActivationKind::Linear,  ActivationKind::Tanh,
                                           ActivationKind::Sigmoid, ActivationKind::Softsign,
                                           ActivationKind::Relu,    ActivationKind::Elu};
    const std::size_t in = 3 + i % 5, mid = 2 + (i / 2) % 5;
    net.add(make_dense(in, mid, rng));
    net.add(make_activation(kinds[i % 6]));
    net.add(make_dense(mid, 2, rng));
    gc.x = random_input(rng, {in});
  } else if (kind == "dropout") {
    // Rate 0 keeps the forward pass deterministic; the mask bookkeeping and
    // backward scaling still run.
    const std::size_t in = 3 + i % 5, mid = 2 + i % 5;
    net.add(make_dense(in, mid, rng));
    net.add(make_dropout(0.0));
    net.add(make_dense(mid, 2, rng));
    gc.x = random_input(rng, {in});
  } else if (kind == "gaussian_noise") {
    const std::size_t in = 3 + i % 5, mid = 2 + i % 5;
    net.add(make_dense(in, mid, rng));
    net.add(make_gaussian_noise(0.0));
    net.add(make_dense(mid, 2, rng));
    gc.x = random_input(rng, {in});
  } else if (kind == "flatten") {
    const std::size_t a = 2 + i % 2, b = 3 + i % 3, d = 1 + i % 2;
    net.add(make_flatten());
    net.add(make_dense(a * b * d, 2, rng));
    gc.x = random_input(rng, {a, b, d});
  } else {
    throw std::logic_error("unknown gradient-case kind " + kind);
  }

  if (gc.loss == LossKind::CrossEntropy) net.add(make_activation(ActivationKind::Sigmoid));
  return gc;
}

void criterion_gradients(Ctx& c) {
  const std::vector<std::string> kinds = {
      "dense",  "conv2d", "maxpool2d",  "conv1d",        "maxpool1d", "lstm",
      "bilstm", "activation", "dropout", "gaussian_noise", "flatten"};
  constexpr std::size_t kConfigsPerKind = 20;
  constexpr double kTol = 1e-4;

  double worst = 0.0;
  std::string worst_case;
  std::size_t total_probes = 0;
  for (const std::string& kind : kinds) {
    for (std::size_t i = 0; i < kConfigsPerKind; ++i) {
      GradCase gc = make_grad_case(kind, i);
      const std::vector<std::vector<std::size_t>> shapes = gc.net.probe(gc.x.shape());
      const std::vector<std::size_t>& out_shape = shapes.back();
      std::size_t out_n = 1;
      for (std::size_t d : out_shape) out_n *= d;
      std::mt19937_64 trng(77 + i);
      const Tensor target =
          Tensor::from(out_shape,
                       gc.loss == LossKind::CrossEntropy
                           ? ndet_test::rand_vec(trng, out_n, 0.2, 0.8)
                           : ndet_test::rand_vec(trng, out_n, -1.0, 1.0));
      const ndet_test::GradCheckResult r =
          ndet_test::fd_gradient_check(gc.net, gc.x, target, gc.loss, 1e-5, 20, 17 + i);
      total_probes += r.checked;
      if (r.max_rel_err > worst) {
        worst = r.max_rel_err;
        worst_case = strf("%s #%zu (%s)", kind.c_str(), i,
                          gc.loss == LossKind::CrossEntropy ? "cross_entropy" : "mse");
      }
      c.expect(r.max_rel_err < kTol,
               strf("%s config %zu: max relative error %.3e >= %.0e", kind.c_str(), i,
                    r.max_rel_err, kTol));
    }
  }
  c.headline = strf("%zu layer kinds x %zu configs (%zu probes), worst rel err %.2e [%s]",
                    kinds.size(), kConfigsPerKind, total_probes, worst, worst_case.c_str());
}

// ---------------------------------------------------------------------------
// 3. Decoder: exact search agreement and monotone reestimation
// ---------------------------------------------------------------------------

void criterion_decoder(Ctx& c) {
  std::mt19937_64 rng(4242);
  std::uniform_int_distribution<std::size_t> t_dist(1, 12);

  constexpr std::size_t kInstances = 120;
  double worst_gap = 0.0;
  for (std::size_t i = 0; i < kInstances; ++i) {
    const GmmHmm model = ndet_test::random_left_right_hmm(rng, 3, 2, 1 + i % 2);
    const FrameSeq frames = ndet_test::random_frames(rng, t_dist(rng), 2);
    const ViterbiResult fast = viterbi_decode(model, frames);
    const ViterbiResult brute = ndet_test::brute_force_viterbi(model, frames);
    const double gap = std::fabs(fast.log_score - brute.log_score);
    worst_gap = std::max(worst_gap, gap);
    c.expect(gap <= 1e-10, strf("instance %zu: |viterbi - brute| = %.3e > 1e-10", i, gap));
    c.expect(fast.path.size() == frames.size() && fast.path[0] == 0,
             strf("instance %zu: path malformed", i));
  }

  constexpr std::size_t kCorpora = 12;
  constexpr std::size_t kIters = 20;
  double worst_drop = 0.0;
  for (std::size_t k = 0; k < kCorpora; ++k) {
    std::vector<FrameSeq> seqs;
    for (int s = 0; s < 4; ++s) seqs.push_back(ndet_test::random_frames(rng, 15 + (s + k) % 6, 2));
    TrainOptions opts;
    opts.num_states = 3;
    opts.num_components = 2;
    opts.iterations = kIters;
    opts.seed = 100 + k;
    const BaumWelchResult r = train_gmm_hmm(EventLabel::Seiz, seqs, opts);
    c.expect(r.loglik_trace.size() == kIters,
             strf("corpus %zu: trace has %zu entries, expected %zu", k,
                  r.loglik_trace.size(), kIters));
    for (std::size_t it = 1; it < r.loglik_trace.size(); ++it) {
      const double prev = r.loglik_trace[it - 1];
      const double cur = r.loglik_trace[it];
      const double slack = 1e-8 * std::max(1.0, std::fabs(prev));
      worst_drop = std::max(worst_drop, prev - cur);
      c.expect(cur >= prev - slack,
               strf("corpus %zu iteration %zu: log-likelihood fell %.3e (%.6f -> %.6f)",
                    k, it, prev - cur, prev, cur));
    }
  }
  c.headline = strf("%zu exhaustive-search matches (worst gap %.1e); "
                    "%zu corpora x %zu iterations monotone (worst drop %.1e)",
                    kInstances, worst_gap, kCorpora, kIters, worst_drop);
}

// ---------------------------------------------------------------------------
// 4. Principal components: batch vs eigendecomposition, streaming vs batch
// ---------------------------------------------------------------------------

void criterion_dimred(Ctx& c) {
  std::mt19937_64 rng(2718);

  // Batch fit against an independent covariance eigendecomposition.
  const auto data = ndet_test::gapped_gaussian_rows(rng, 400, 24, 0.65);
  constexpr std::size_t kOut = 8;
  const PcaModel model = pca_fit(data, kOut);
  const ndet_test::CovarianceEigen oracle = ndet_test::covariance_eigen_oracle(data, kOut);
  const double denom = static_cast<double>(data.size() - 1);
  double worst_var = 0.0;
  for (std::size_t k = 0; k < kOut; ++k) {
    const double sv = model.singular_values()[k];
    const double var = sv * sv / denom;
    const double rel = std::fabs(var - oracle.variances[k]) /
                       std::max(std::fabs(oracle.variances[k]), 1e-300);
    worst_var = std::max(worst_var, rel);
    c.expect(rel < 1e-8, strf("component %zu: variance rel err %.3e >= 1e-8", k, rel));
    double dot = 0.0;
    for (std::size_t d = 0; d < 24; ++d) dot += model.component(k, d) * oracle.axes[k][d];
    c.expect(std::fabs(std::fabs(dot) - 1.0) < 1e-6,
             strf("component %zu: |axis dot| = %.8f, expected 1", k, std::fabs(dot)));
  }

  // Streaming rank updates, 10 batches of 50, against one batch fit.
  const auto stream = ndet_test::gapped_gaussian_rows(rng, 500, 30, 0.6);
  constexpr std::size_t kStreamOut = 6;
  PcaModel inc(30, kStreamOut);
  for (std::size_t b = 0; b < 10; ++b)
    ipca_partial_fit(inc, {stream.begin() + 50 * b, stream.begin() + 50 * (b + 1)});
  c.expect(inc.samples_seen() == 500,
           strf("streaming model saw %" PRIu64 " samples, expected 500", inc.samples_seen()));
  const PcaModel batch = pca_fit(stream, kStreamOut);
  auto rows_of = [](const PcaModel& m) {
    std::vector<std::vector<double>> rows(m.output_dim(),
                                          std::vector<double>(m.input_dim()));
    for (std::size_t r = 0; r < m.output_dim(); ++r)
      for (std::size_t d = 0; d < m.input_dim(); ++d) rows[r][d] = m.component(r, d);
    return rows;
  };
  const double angle = ndet_test::max_principal_angle(rows_of(inc), rows_of(batch));
  c.expect(angle < 0.05, strf("streaming/batch principal angle %.4f rad >= 0.05", angle));

  c.headline = strf("variance rel err %.1e vs eigendecomposition; "
                    "10x50 streaming subspace angle %.4f rad",
                    worst_var, angle);
}

// ---------------------------------------------------------------------------
// 5. Scoring: recount agreement, worked example, monotone trade-off curve
// ---------------------------------------------------------------------------

void criterion_scoring(Ctx& c) {
  std::mt19937_64 rng(99);

  // Exact agreement with a direct recount on long random tracks.
  for (int rep = 0; rep < 3; ++rep) {
    constexpr std::size_t kEpochs = 10000;
    EpochLabelTrack ref, hyp;
    std::bernoulli_distribution ref_d(0.30), hyp_d(0.25);
    for (std::size_t i = 0; i < kEpochs; ++i) {
      ref.labels.push_back(ref_d(rng) ? EventLabel::Seiz : EventLabel::Bckg);
      hyp.labels.push_back(hyp_d(rng) ? EventLabel::Seiz : EventLabel::Bckg);
    }
    const ConfusionCounts counts = score_epochs(ref, hyp);
    std::uint64_t tp = 0, tn = 0, fp = 0, fn = 0, runs = 0;
    bool in_run = false;
    for (std::size_t i = 0; i < kEpochs; ++i) {
      const bool r = ref.labels[i] == EventLabel::Seiz;
      const bool h = hyp.labels[i] == EventLabel::Seiz;
      if (r && h) ++tp;
      if (!r && !h) ++tn;
      if (!r && h) ++fp;
      if (r && !h) ++fn;
      const bool is_fp = !r && h;
      if (is_fp && !in_run) ++runs;
      in_run = is_fp;
    }
    c.expect(counts.tp == tp && counts.tn == tn && counts.fp == fp && counts.fn == fn &&
                 counts.fp_runs == runs,
             strf("rep %d: counts (%" PRIu64 ",%" PRIu64 ",%" PRIu64 ",%" PRIu64
                  ", runs %" PRIu64 ") != recount (%" PRIu64 ",%" PRIu64 ",%" PRIu64
                  ",%" PRIu64 ", runs %" PRIu64 ")",
                  rep, counts.tp, counts.tn, counts.fp, counts.fn, counts.fp_runs, tp, tn,
                  fp, fn, runs));
    c.expect(counts.total_duration_s == static_cast<double>(kEpochs),
             strf("rep %d: scored duration %.1f != %zu", rep, counts.total_duration_s,
                  kEpochs));
  }

  // Worked four-epoch example: one hit, one miss, one false alarm, one
  // correct rejection over four seconds.
  EpochLabelTrack ref4, hyp4;
  ref4.labels = {EventLabel::Seiz, EventLabel::Seiz, EventLabel::Bckg, EventLabel::Bckg};
  hyp4.labels = {EventLabel::Seiz, EventLabel::Bckg, EventLabel::Seiz, EventLabel::Bckg};
  const Metrics m4 = metrics(score_epochs(ref4, hyp4), FaMode::Event);
  c.expect(m4.sensitivity == 0.5, strf("worked example sensitivity %.6f != 0.5", m4.sensitivity));
  c.expect(m4.specificity == 0.5, strf("worked example specificity %.6f != 0.5", m4.specificity));
  c.expect(std::fabs(m4.fa_per_24h - 21600.0) < 1e-9,
           strf("worked example fa/24h %.6f != 21600", m4.fa_per_24h));

  // Trade-off curve: 101 thresholds, sensitivity weakly decreasing.
  constexpr std::size_t kTrack = 3600;
  EpochLabelTrack ref;
  PosteriorTrack post;
  std::uniform_real_distribution<double> noise(0.0, 0.45);
  std::size_t e = 0;
  while (e < kTrack) {
    const std::size_t span = 20 + static_cast<std::size_t>(noise(rng) * 80);
    const bool seiz = (e / 60) % 4 == 1;
    for (std::size_t i = 0; i < span && e < kTrack; ++i, ++e) {
      ref.labels.push_back(seiz ? EventLabel::Seiz : EventLabel::Bckg);
      const double base = seiz ? 0.85 : 0.12;
      post.values.push_back(std::clamp(base + noise(rng) - 0.22, 0.0, 1.0));
    }
  }
  SmoothingParams sp;
  const DetCurve det = det_curve(post, ref, sp, uniform_thresholds(101), FaMode::Event);
  c.expect(det.points.size() == 101,
           strf("trade-off curve has %zu points, expected 101", det.points.size()));
  for (std::size_t i = 1; i < det.points.size(); ++i)
    c.expect(det.points[i].sensitivity <= det.points[i - 1].sensitivity + 1e-12,
             strf("sensitivity rose between thresholds %.2f and %.2f (%.6f -> %.6f)",
                  det.points[i - 1].threshold, det.points[i].threshold,
                  det.points[i - 1].sensitivity, det.points[i].sensitivity));

  c.headline = strf("3 x 10^4-epoch recounts exact; worked example 0.5/0.5/21600; "
                    "101-point curve weakly decreasing");
}

// ---------------------------------------------------------------------------
// 6. Optimizers: descent on a convex quadratic, calibrated first step
// ---------------------------------------------------------------------------

void criterion_optimizers(Ctx& c) {
  static const OptimizerKind kKinds[] = {OptimizerKind::Sgd,      OptimizerKind::Rmsprop,
                                         OptimizerKind::Adagrad,  OptimizerKind::Adadelta,
                                         OptimizerKind::Adam,     OptimizerKind::Adamax,
                                         OptimizerKind::Nadam};
  std::mt19937_64 rng(31337);
  constexpr std::size_t kDim = 8;
  const std::vector<double> curv = ndet_test::rand_vec(rng, kDim, 0.5, 2.0);
  const std::vector<double> start = ndet_test::rand_vec(rng, kDim, -1.0, 1.0);
  auto value = [&](const Tensor& p) {
    double f = 0.0;
    for (std::size_t d = 0; d < kDim; ++d) f += curv[d] * p[d] * p[d];
    return f;
  };

  std::string per_kind;
  for (const OptimizerKind kind : kKinds) {
    OptimizerConfig cfg;
    cfg.kind = kind;
    Optimizer opt(cfg);
    Tensor p = Tensor::from({kDim}, start);
    Tensor g({kDim});
    const double f0 = value(p);
    for (int step = 0; step < 200; ++step) {
      for (std::size_t d = 0; d < kDim; ++d) g[d] = 2.0 * curv[d] * p[d];
      opt.step({&p}, {&g});
    }
    const double f200 = value(p);
    c.expect(f200 < f0, strf("%s: f(step 200) = %.6f not below f(step 0) = %.6f",
                             to_string(kind), f200, f0));
    per_kind += strf("%s %.1e ", to_string(kind), f200 / f0);
  }

  // Bias-corrected first step with unit gradients equals the default rate.
  OptimizerConfig adam;
  adam.kind = OptimizerKind::Adam;
  Optimizer opt(adam);
  Tensor p = Tensor::from({4}, ndet_test::rand_vec(rng, 4, -1.0, 1.0));
  const Tensor before = p;
  Tensor g({4});
  for (std::size_t d = 0; d < 4; ++d) g[d] = (d % 2 == 0) ? 1.0 : -1.0;
  opt.step({&p}, {&g});
  double worst_step = 0.0;
  for (std::size_t d = 0; d < 4; ++d) {
    const double step = before[d] - p[d];  // positive for +1 gradients
    const double expected = (d % 2 == 0) ? 0.0005 : -0.0005;
    worst_step = std::max(worst_step, std::fabs(step - expected));
    c.expect(std::fabs(step - expected) <= 0.05 * 0.0005,
             strf("adam first step on slot %zu = %.7f, expected %.7f within 5%%", d, step,
                  expected));
  }

  c.headline = strf("7 rules reduce the quadratic (f200/f0: %s); adam first step within %.2f%%",
                    per_kind.c_str(), 100.0 * worst_step / 0.0005);
}

// ---------------------------------------------------------------------------
// 7. End-to-end trend on a synthetic corpus
// ---------------------------------------------------------------------------

SynthConfig trend_synth_config() {
  SynthConfig s;
  s.duration_s = 300.0;
  s.channels = 22;
  s.seizure_fraction = 0.10;
  s.seizure_min_s = 8.0;
  s.seizure_max_s = 20.0;
  s.seizure_snr_db = 6.0;
  s.artifact_rate_per_min = 6.0;
  s.artifact_snr_db = 16.0;
  return s;
}

// Reduced training budgets sized for one core; the architectural shapes stay
// exactly as configured by default.
SystemConfig trend_system_config(SystemKind kind) {
  SystemConfig cfg = SystemConfig::defaults_for(kind);
  cfg.seed = 20240614;
  switch (kind) {
    case SystemKind::HmmOnly:
      cfg.hmm.iterations = 12;
      cfg.max_per_class = 140;
      break;
    case SystemKind::HmmSda:
      cfg.hmm.iterations = 10;
      cfg.max_per_class = 140;
      cfg.sda.hidden_sizes = {120, 60, 30};
      cfg.sda.pretrain_epochs = 40;
      cfg.sda.pretrain_batch = 100;
      cfg.sda.finetune_epochs = 80;
      break;
    case SystemKind::HmmLstm:
      cfg.hmm.iterations = 10;
      cfg.max_per_class = 140;
      cfg.net_epochs = 15;
      break;
    case SystemKind::IpcaLstm:
      cfg.net_epochs = 15;
      break;
    case SystemKind::CnnMlp:
      cfg.net_epochs = 6;
      cfg.max_per_class = 120;
      cfg.net_batch = 16;
      break;
    case SystemKind::CnnLstm:
      cfg.net_epochs = 4;
      cfg.max_per_class = 64;
      cfg.net_batch = 8;
      break;
  }
  return cfg;
}

struct TrendOutcome {
  Metrics m;
  double train_s = 0.0;
  double infer_s = 0.0;
};

void criterion_trend(Ctx& c) {
  const SynthConfig synth = trend_synth_config();
  constexpr std::size_t kRecords = 6;  // 6 x 300 s = 30 min per split

  Corpus train_corpus, eval_corpus;
  for (std::size_t i = 0; i < kRecords; ++i) {
    train_corpus.push_back(synthesize_record(synth, 901 + i));
    eval_corpus.push_back(synthesize_record(synth, 951 + i));
  }
  std::vector<EpochLabelTrack> ref;
  for (const auto& [rec, ann] : eval_corpus) ref.push_back(annotations_to_epoch_labels(ann));

  const SmoothingParams sp;  // defaults: threshold 0.5, merge 2 s, min 3 s
  std::map<SystemKind, TrendOutcome> outcome;
  std::vector<PosteriorTrack> decoder_posts;  // kept for the trade-off sweep

  for (std::size_t k = 0; k < kSystemKindCount; ++k) {
    const SystemKind kind = static_cast<SystemKind>(k);
    const SystemConfig cfg = trend_system_config(kind);
    TrendOutcome& out = outcome[kind];

    double t0 = now_s();
    SystemArtifact art = train_system(cfg, train_corpus);
    out.train_s = now_s() - t0;

    t0 = now_s();
    ConfusionCounts counts;
    for (std::size_t r = 0; r < kRecords; ++r) {
      const PosteriorTrack post = infer_system(art, eval_corpus[r].first);
      if (kind == SystemKind::HmmOnly) decoder_posts.push_back(post);
      const SmoothResult smooth = smooth_hypotheses(post, sp);
      const ConfusionCounts cc = score_epochs(ref[r], smooth.track);
      counts.tp += cc.tp;
      counts.tn += cc.tn;
      counts.fp += cc.fp;
      counts.fn += cc.fn;
      counts.fp_runs += cc.fp_runs;
      counts.total_duration_s += cc.total_duration_s;
    }
    out.infer_s = now_s() - t0;
    out.m = metrics(counts, FaMode::Event);
    c.note(strf("%-9s sens %.3f  spec %.3f  fa/24h %7.1f  (train %.1f s, infer %.1f s)",
                to_string(kind), out.m.sensitivity, out.m.specificity, out.m.fa_per_24h,
                out.train_s, out.infer_s));
  }

  for (const auto& [kind, out] : outcome) {
    c.expect(out.m.sensitivity >= 0.7,
             strf("%s sensitivity %.3f < 0.7", to_string(kind), out.m.sensitivity));
    c.expect(out.m.specificity >= 0.7,
             strf("%s specificity %.3f < 0.7", to_string(kind), out.m.specificity));
  }
  const Metrics deep = outcome[SystemKind::CnnLstm].m;
  c.expect(deep.sensitivity >= 0.85,
           strf("cnn_lstm sensitivity %.3f < 0.85", deep.sensitivity));

  // Decoder-only trade-off sweep, aggregated over the evaluation records,
  // to find its operating point at the deep system's sensitivity.
  const std::vector<double> thresholds = uniform_thresholds(101);
  bool matched_found = false;
  double matched_sens = 0.0, matched_fa = 0.0, best_sens = 0.0;
  for (const double th : thresholds) {
    SmoothingParams spt = sp;
    spt.threshold = th;
    ConfusionCounts counts;
    for (std::size_t r = 0; r < kRecords; ++r) {
      const SmoothResult smooth = smooth_hypotheses(decoder_posts[r], spt);
      const ConfusionCounts cc = score_epochs(ref[r], smooth.track);
      counts.tp += cc.tp;
      counts.tn += cc.tn;
      counts.fp += cc.fp;
      counts.fn += cc.fn;
      counts.fp_runs += cc.fp_runs;
      counts.total_duration_s += cc.total_duration_s;
    }
    const Metrics m = metrics(counts, FaMode::Event);
    best_sens = std::max(best_sens, m.sensitivity);
    if (m.sensitivity >= deep.sensitivity) {
      // Tightest match from above; ties keep the decoder's best (lowest)
      // false-alarm rate so the comparison is conservative.
      if (!matched_found || m.sensitivity < matched_sens ||
          (m.sensitivity == matched_sens && m.fa_per_24h < matched_fa)) {
        matched_sens = m.sensitivity;
        matched_fa = m.fa_per_24h;
      }
      matched_found = true;
    }
  }
  if (matched_found) {
    c.note(strf("decoder-only matched point: sens %.3f fa/24h %.1f vs cnn_lstm fa/24h %.1f",
                matched_sens, matched_fa, deep.fa_per_24h));
    c.expect(deep.fa_per_24h < matched_fa,
             strf("cnn_lstm fa/24h %.1f not strictly below decoder-only %.1f at matched "
                  "sensitivity %.3f",
                  deep.fa_per_24h, matched_fa, matched_sens));
  } else {
    // The decoder cannot reach the deep system's sensitivity at any
    // threshold: the trend holds by sensitivity dominance.
    c.note(strf("decoder-only max sensitivity %.3f stays below cnn_lstm %.3f at every "
                "threshold",
                best_sens, deep.sensitivity));
  }

  c.headline = strf("six systems >= 0.7/0.7; cnn_lstm sens %.3f fa %.1f vs decoder fa %.1f "
                    "at matched sens",
                    deep.sensitivity, deep.fa_per_24h, matched_found ? matched_fa : -1.0);
}

// ---------------------------------------------------------------------------
// 8. Byte-identical pipeline replay through the command-line binary
// ---------------------------------------------------------------------------

int run_tool(const std::string& args) {
  const std::string cmd = std::string(NDET_CLI_PATH) + " " + args + " >/dev/null 2>&1";
  const int status = std::system(cmd.c_str());
  return status == -1 ? -1 : WEXITSTATUS(status);
}

std::string slurp(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is.good()) return "<missing " + path + ">";
  std::ostringstream os;
  os << is.rdbuf();
  return os.str();
}

void criterion_replay(Ctx& c) {
  TempDir tmp;
  const std::string cfg = tmp.file("exp.txt");
  {
    std::ofstream os(cfg);
    os << "[experiment]\n"
          "seed = 31\n"
          "det_points = 31\n"
          "[synth]\n"
          "records = 2\n"
          "duration_s = 180\n"
          "channels = 8\n"
          "seizure_fraction = 0.12\n"
          "[system]\n"
          "kind = hmm_lstm\n"
          "channels = 8\n"
          "pca_dim = 12\n"
          "net_epochs = 8\n"
          "[hmm]\n"
          "num_components = 2\n"
          "iterations = 5\n";
  }

  for (const std::string tag : {"A", "B"}) {
    const std::string corpus = tmp.file("corpus" + tag);
    const std::string model = tmp.file("model" + tag);
    const std::string post = tmp.file("post" + tag);
    const std::string scored = tmp.file("scored" + tag);
    const std::string det = tmp.file("det" + tag);
    c.expect(run_tool("synth --config " + cfg + " --out " + corpus) == 0,
             "synth " + tag + " exited nonzero");
    c.expect(run_tool("train --config " + cfg + " --out " + model + " " + corpus) == 0,
             "train " + tag + " exited nonzero");
    c.expect(run_tool("infer --model " + model + " --out " + post + " " + corpus) == 0,
             "infer " + tag + " exited nonzero");
    c.expect(run_tool("score --config " + cfg + " --out " + scored + " " + post +
                      "/rec_000_post.csv " + corpus + "/rec_000.ann " + post +
                      "/rec_001_post.csv " + corpus + "/rec_001.ann") == 0,
             "score " + tag + " exited nonzero");
    c.expect(run_tool("det --config " + cfg + " --out " + det + " " + post +
                      "/rec_000_post.csv " + corpus + "/rec_000.ann") == 0,
             "det " + tag + " exited nonzero");
  }

  std::size_t compared = 0;
  for (const std::string stage : {"corpus", "model", "post", "scored", "det"}) {
    const std::string a = slurp(tmp.file(stage + "A/manifest.txt"));
    const std::string b = slurp(tmp.file(stage + "B/manifest.txt"));
    c.expect(a == b && a.rfind("<missing", 0) != 0,
             stage + ": replay manifests differ or are missing");
    ++compared;
  }
  for (const std::string file :
       {std::string("postA/rec_000_post.csv"), std::string("postA/rec_001_post.csv"),
        std::string("scoredA/metrics.csv"), std::string("detA/det.csv")}) {
    std::string other = file;
    other[other.find('A')] = 'B';
    const std::string a = slurp(tmp.file(file));
    const std::string b = slurp(tmp.file(other));
    c.expect(a == b && a.rfind("<missing", 0) != 0, file + ": replay bytes differ");
    ++compared;
  }
  c.headline = strf("synth/train/infer/score/det replayed; %zu artifact comparisons "
                    "byte-identical",
                    compared);
}

}  // namespace

int main() {
  const std::vector<Criterion> criteria = {
      {1, "pipeline shape fidelity", 10.0, criterion_shapes},
      {2, "gradient checks vs finite differences", 120.0, criterion_gradients},
      {3, "decoder exactness and monotone reestimation", 60.0, criterion_decoder},
      {4, "principal components: batch and streaming", 30.0, criterion_dimred},
      {5, "scoring recounts, worked example, trade-off curve", 10.0, criterion_scoring},
      {6, "optimizer descent and calibrated first step", 10.0, criterion_optimizers},
      {7, "synthetic end-to-end detection trend", 1800.0, criterion_trend},
      {8, "byte-identical pipeline replay", 1800.0, criterion_replay},
  };

  int failures = 0;
  for (const Criterion& cr : criteria) {
    Ctx ctx;
    const double t0 = now_s();
    try {
      cr.run(ctx);
    } catch (const std::exception& e) {
      ctx.ok = false;
      ctx.notes.push_back(std::string("unhandled exception: ") + e.what());
    }
    const double elapsed = now_s() - t0;
    const bool in_budget = elapsed < cr.budget_s;
    if (!in_budget)
      ctx.notes.push_back(strf("over budget: %.1f s >= %.1f s", elapsed, cr.budget_s));
    const bool pass = ctx.ok && in_budget;
    if (!pass) ++failures;
    std::printf("%s  %d. %s (%.1f s / %.0f s): %s\n", pass ? "PASS" : "FAIL", cr.id,
                cr.name.c_str(), elapsed, cr.budget_s, ctx.headline.c_str());
    for (const std::string& note : ctx.notes) std::printf("        %s\n", note.c_str());
    std::fflush(stdout);
  }

  std::printf("acceptance: %zu/%zu criteria passed\n", criteria.size() - failures,
              criteria.size());
  return failures == 0 ? 0 : 1;
}
