#include "ndet/hmm.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <limits>
#include <random>

namespace ndet {

namespace {
constexpr char kHmmMagic[4] = {'N', 'D', 'H', 'M'};
constexpr std::uint16_t kHmmVersion = 1;
constexpr double kNegInf = -std::numeric_limits<double>::infinity();
constexpr double kLog2Pi = 1.8378770664093453;

double log_gaussian_diag(const GmmComponent& c, const std::vector<double>& x) {
  double acc = 0.0;
  for (std::size_t d = 0; d < x.size(); ++d) {
    const double z = x[d] - c.mean[d];
    acc += std::log(c.var[d]) + z * z / c.var[d];
  }
  return -0.5 * (x.size() * kLog2Pi + acc);
}

double log_sum_exp(const std::vector<double>& v) {
  double m = kNegInf;
  for (double x : v) m = std::max(m, x);
  if (m == kNegInf) return kNegInf;
  double s = 0.0;
  for (double x : v) s += std::exp(x - m);
  return m + std::log(s);
}
}  // namespace

GmmHmm::GmmHmm(EventLabel label, std::size_t num_states, std::size_t dim,
               std::vector<double> transitions, std::vector<GmmState> states)
    : label_(label), dim_(dim), transitions_(std::move(transitions)),
      states_(std::move(states)) {
  if (states_.size() != num_states)
    throw DataError("state count does not match the provided states");
  validate();
}

void GmmHmm::validate() const {
  const std::size_t n = states_.size();
  if (n == 0) throw DataError("model has no states");
  if (dim_ == 0) throw DataError("model has zero feature dimension");
  if (transitions_.size() != n * n) throw DataError("transition matrix shape mismatch");
  for (std::size_t i = 0; i < n; ++i) {
    double row = 0.0;
    for (std::size_t j = 0; j < n; ++j) {
      const double a = transitions_[i * n + j];
      if (!(a >= 0.0 && a <= 1.0) || !std::isfinite(a))
        throw DataError("transition probability outside [0, 1]");
      if ((j < i || j > i + 1) && a != 0.0)
        throw DataError("transition matrix is not upper-bidiagonal");
      row += a;
    }
    if (std::abs(row - 1.0) > 1e-9)
      throw DataError(strf("transition row %zu sums to %.12g, expected 1", i, row));
  }
  for (const auto& st : states_) {
    if (st.components.empty()) throw DataError("state has no mixture components");
    double wsum = 0.0;
    for (const auto& c : st.components) {
      if (c.mean.size() != dim_ || c.var.size() != dim_)
        throw DataError("mixture component dimension mismatch");
      if (!(c.weight >= 0.0)) throw DataError("negative mixture weight");
      wsum += c.weight;
      for (double v : c.var)
        if (!(v > 0.0) || !std::isfinite(v))
          throw DataError("mixture variance must be positive and finite");
      for (double m : c.mean)
        if (!std::isfinite(m)) throw DataError("mixture mean must be finite");
    }
    if (std::abs(wsum - 1.0) > 1e-9)
      throw DataError(strf("mixture weights sum to %.12g, expected 1", wsum));
  }
}

double gmm_log_likelihood(const GmmState& state, const std::vector<double>& x) {
  if (state.components.empty()) throw DataError("state has no mixture components");
  std::vector<double> terms;
  terms.reserve(state.components.size());
  for (const auto& c : state.components) {
    if (c.mean.size() != x.size())
      throw DataError(strf("mixture dimension %zu does not match input %zu",
                           c.mean.size(), x.size()));
    if (c.weight <= 0.0) continue;
    terms.push_back(std::log(c.weight) + log_gaussian_diag(c, x));
  }
  if (terms.empty()) throw DataError("all mixture weights are zero");
  return log_sum_exp(terms);
}

// --- initialization --------------------------------------------------------

namespace {

// Plain Lloyd iterations with distinct seeded starting points.
std::vector<std::size_t> kmeans_assign(const std::vector<const double*>& pts,
                                       std::size_t dim, std::size_t k,
                                       std::size_t iters, std::mt19937_64& rng,
                                       std::vector<std::vector<double>>& centers) {
  const std::size_t n = pts.size();
  centers.assign(k, std::vector<double>(dim, 0.0));
  std::vector<std::size_t> order(n);
  for (std::size_t i = 0; i < n; ++i) order[i] = i;
  std::shuffle(order.begin(), order.end(), rng);
  for (std::size_t j = 0; j < k; ++j) {
    const double* p = pts[order[j % n]];
    std::copy(p, p + dim, centers[j].begin());
  }

  std::vector<std::size_t> assign(n, 0);
  for (std::size_t it = 0; it < iters; ++it) {
    bool moved = false;
    for (std::size_t i = 0; i < n; ++i) {
      double best = std::numeric_limits<double>::max();
      std::size_t bj = 0;
      for (std::size_t j = 0; j < k; ++j) {
        double d2 = 0.0;
        for (std::size_t d = 0; d < dim; ++d) {
          const double z = pts[i][d] - centers[j][d];
          d2 += z * z;
        }
        if (d2 < best) {
          best = d2;
          bj = j;
        }
      }
      if (assign[i] != bj) {
        assign[i] = bj;
        moved = true;
      }
    }
    std::vector<std::size_t> counts(k, 0);
    std::vector<std::vector<double>> sums(k, std::vector<double>(dim, 0.0));
    for (std::size_t i = 0; i < n; ++i) {
      ++counts[assign[i]];
      for (std::size_t d = 0; d < dim; ++d) sums[assign[i]][d] += pts[i][d];
    }
    for (std::size_t j = 0; j < k; ++j) {
      if (counts[j] == 0) {
        // Re-seed an empty cluster on a random point.
        const double* p = pts[rng() % n];
        std::copy(p, p + dim, centers[j].begin());
        moved = true;
        continue;
      }
      for (std::size_t d = 0; d < dim; ++d) centers[j][d] = sums[j][d] / counts[j];
    }
    if (!moved) break;
  }
  return assign;
}

std::vector<double> global_variance_floor(const std::vector<FrameSeq>& sequences,
                                          std::size_t dim, double factor) {
  std::vector<double> mean(dim, 0.0), m2(dim, 0.0);
  std::size_t n = 0;
  for (const auto& seq : sequences)
    for (const auto& f : seq) {
      ++n;
      for (std::size_t d = 0; d < dim; ++d) {
        const double delta = f[d] - mean[d];
        mean[d] += delta / n;
        m2[d] += delta * (f[d] - mean[d]);
      }
    }
  std::vector<double> floor(dim, 1e-8);
  if (n > 1)
    for (std::size_t d = 0; d < dim; ++d)
      floor[d] = std::max(1e-8, factor * m2[d] / (n - 1));
  return floor;
}

void check_sequences(const std::vector<FrameSeq>& sequences, std::size_t num_states,
                     std::size_t* dim_out) {
  if (sequences.empty()) throw DataError("training requires at least one sequence");
  std::size_t dim = 0;
  for (const auto& seq : sequences) {
    if (seq.size() < num_states)
      throw DataError(strf("sequence of %zu frames is shorter than the %zu-state "
                           "topology",
                           seq.size(), num_states));
    for (const auto& f : seq) {
      if (dim == 0) dim = f.size();
      if (f.size() != dim) throw DataError("frames differ in dimension");
    }
  }
  if (dim == 0) throw DataError("training frames are empty");
  *dim_out = dim;
}

}  // namespace

GmmHmm init_gmm_hmm(EventLabel label, const std::vector<FrameSeq>& sequences,
                    const TrainOptions& opts) {
  std::size_t dim = 0;
  check_sequences(sequences, opts.num_states, &dim);
  const std::vector<double> floor =
      global_variance_floor(sequences, dim, opts.variance_floor_factor);
  std::mt19937_64 rng(opts.seed);

  // Uniform segmentation: state j owns the j-th contiguous slice of each
  // sequence.
  std::vector<std::vector<const double*>> slices(opts.num_states);
  for (const auto& seq : sequences) {
    const std::size_t T = seq.size();
    for (std::size_t j = 0; j < opts.num_states; ++j) {
      const std::size_t lo = j * T / opts.num_states;
      const std::size_t hi = (j + 1) * T / opts.num_states;
      for (std::size_t t = lo; t < hi; ++t) slices[j].push_back(seq[t].data());
    }
  }

  std::vector<GmmState> states(opts.num_states);
  for (std::size_t j = 0; j < opts.num_states; ++j) {
    const auto& pts = slices[j];
    const std::size_t k = std::min(opts.num_components, pts.size());
    std::vector<std::vector<double>> centers;
    const std::vector<std::size_t> assign =
        kmeans_assign(pts, dim, k, opts.kmeans_iterations, rng, centers);

    std::vector<std::size_t> counts(k, 0);
    std::vector<std::vector<double>> var(k, std::vector<double>(dim, 0.0));
    for (std::size_t i = 0; i < pts.size(); ++i) ++counts[assign[i]];
    for (std::size_t i = 0; i < pts.size(); ++i)
      for (std::size_t d = 0; d < dim; ++d) {
        const double z = pts[i][d] - centers[assign[i]][d];
        var[assign[i]][d] += z * z;
      }

    auto& st = states[j];
    st.components.resize(opts.num_components);
    for (std::size_t c = 0; c < opts.num_components; ++c) {
      auto& comp = st.components[c];
      const std::size_t src = c % k;
      comp.mean = centers[src];
      comp.var.resize(dim);
      for (std::size_t d = 0; d < dim; ++d) {
        const double v = counts[src] > 1 ? var[src][d] / counts[src] : 0.0;
        comp.var[d] = std::max(v, floor[d]);
      }
      comp.weight =
          std::max(1e-3, static_cast<double>(counts[src]) / pts.size()) / (c < k ? 1 : 8);
    }
    double wsum = 0.0;
    for (const auto& comp : st.components) wsum += comp.weight;
    for (auto& comp : st.components) comp.weight /= wsum;
    // Duplicate centers would make components coincide; nudge duplicates.
    for (std::size_t c = k; c < opts.num_components; ++c)
      for (std::size_t d = 0; d < dim; ++d)
        st.components[c].mean[d] +=
            (0.1 + 0.05 * static_cast<double>(c - k)) * std::sqrt(st.components[c].var[d]);
  }

  std::vector<double> trans(opts.num_states * opts.num_states, 0.0);
  for (std::size_t i = 0; i + 1 < opts.num_states; ++i) {
    trans[i * opts.num_states + i] = opts.self_loop_init;
    trans[i * opts.num_states + i + 1] = 1.0 - opts.self_loop_init;
  }
  trans[opts.num_states * opts.num_states - 1] = 1.0;
  return GmmHmm(label, opts.num_states, dim, std::move(trans), std::move(states));
}

// --- Baum-Welch ------------------------------------------------------------

namespace {

struct EmissionTable {
  // log_b[t][j]: state log-likelihood; log_bc[t][j][k]: per-component terms
  // (log weight + log density).
  std::vector<std::vector<double>> log_b;
  std::vector<std::vector<std::vector<double>>> log_bc;
};

EmissionTable emissions(const GmmHmm& model, const FrameSeq& seq) {
  const std::size_t T = seq.size();
  const std::size_t N = model.num_states();
  EmissionTable e;
  e.log_b.assign(T, std::vector<double>(N, kNegInf));
  e.log_bc.assign(T, std::vector<std::vector<double>>(N));
  for (std::size_t t = 0; t < T; ++t)
    for (std::size_t j = 0; j < N; ++j) {
      const auto& comps = model.state(j).components;
      auto& terms = e.log_bc[t][j];
      terms.resize(comps.size(), kNegInf);
      for (std::size_t k = 0; k < comps.size(); ++k)
        if (comps[k].weight > 0.0)
          terms[k] = std::log(comps[k].weight) + log_gaussian_diag(comps[k], seq[t]);
      e.log_b[t][j] = log_sum_exp(terms);
    }
  return e;
}

struct Accumulators {
  std::vector<double> trans_num;             // N x N
  std::vector<std::vector<double>> occ;      // state x comp
  std::vector<std::vector<std::vector<double>>> mean_num;  // state x comp x dim
  std::vector<std::vector<std::vector<double>>> sq_num;    // state x comp x dim

  Accumulators(std::size_t N, std::size_t K, std::size_t dim)
      : trans_num(N * N, 0.0),
        occ(N, std::vector<double>(K, 0.0)),
        mean_num(N, std::vector<std::vector<double>>(K, std::vector<double>(dim, 0.0))),
        sq_num(N, std::vector<std::vector<double>>(K, std::vector<double>(dim, 0.0))) {}
};

// Scaled forward-backward; returns the sequence log-likelihood and adds
// expected statistics into acc.
double accumulate_sequence(const GmmHmm& model, const FrameSeq& seq,
                           Accumulators& acc) {
  const std::size_t T = seq.size();
  const std::size_t N = model.num_states();
  const EmissionTable em = emissions(model, seq);

  // Per-frame shift keeps the scaled emission weights in (0, 1].
  std::vector<double> shift(T);
  std::vector<std::vector<double>> b(T, std::vector<double>(N, 0.0));
  for (std::size_t t = 0; t < T; ++t) {
    double m = kNegInf;
    for (std::size_t j = 0; j < N; ++j) m = std::max(m, em.log_b[t][j]);
    shift[t] = m;
    for (std::size_t j = 0; j < N; ++j) b[t][j] = std::exp(em.log_b[t][j] - m);
  }

  std::vector<std::vector<double>> alpha(T, std::vector<double>(N, 0.0));
  std::vector<std::vector<double>> beta(T, std::vector<double>(N, 0.0));
  std::vector<double> scale(T, 0.0);

  alpha[0][0] = b[0][0];  // start fixed at state 0
  scale[0] = alpha[0][0];
  if (scale[0] <= 0.0) throw NumericError("forward pass underflow at frame 0");
  alpha[0][0] /= scale[0];
  for (std::size_t t = 1; t < T; ++t) {
    for (std::size_t j = 0; j < N; ++j) {
      double s = alpha[t - 1][j] * model.transition(j, j);
      if (j > 0) s += alpha[t - 1][j - 1] * model.transition(j - 1, j);
      alpha[t][j] = s * b[t][j];
      scale[t] += alpha[t][j];
    }
    if (scale[t] <= 0.0) throw NumericError(strf("forward pass underflow at frame %zu", t));
    for (std::size_t j = 0; j < N; ++j) alpha[t][j] /= scale[t];
  }

  for (std::size_t j = 0; j < N; ++j) beta[T - 1][j] = 1.0;
  for (std::size_t t = T - 1; t-- > 0;) {
    for (std::size_t j = 0; j < N; ++j) {
      double s = model.transition(j, j) * b[t + 1][j] * beta[t + 1][j];
      if (j + 1 < N) s += model.transition(j, j + 1) * b[t + 1][j + 1] * beta[t + 1][j + 1];
      beta[t][j] = s / scale[t + 1];
    }
  }

  double loglik = 0.0;
  for (std::size_t t = 0; t < T; ++t) loglik += std::log(scale[t]) + shift[t];

  // State/component occupancy.
  for (std::size_t t = 0; t < T; ++t) {
    std::vector<double> gamma(N);
    double gsum = 0.0;
    for (std::size_t j = 0; j < N; ++j) {
      gamma[j] = alpha[t][j] * beta[t][j];
      gsum += gamma[j];
    }
    if (gsum <= 0.0) throw NumericError("zero state occupancy");
    for (std::size_t j = 0; j < N; ++j) {
      gamma[j] /= gsum;
      if (gamma[j] == 0.0) continue;
      const auto& terms = em.log_bc[t][j];
      double m = kNegInf;
      for (double v : terms) m = std::max(m, v);
      double denom = 0.0;
      for (double v : terms) denom += std::exp(v - m);
      for (std::size_t k = 0; k < terms.size(); ++k) {
        const double post = std::exp(terms[k] - m) / denom;
        const double g = gamma[j] * post;
        if (g == 0.0) continue;
        acc.occ[j][k] += g;
        for (std::size_t d = 0; d < seq[t].size(); ++d) {
          acc.mean_num[j][k][d] += g * seq[t][d];
          acc.sq_num[j][k][d] += g * seq[t][d] * seq[t][d];
        }
      }
    }
  }

  // Transition expectations over allowed arcs.
  for (std::size_t t = 0; t + 1 < T; ++t) {
    double norm = 0.0;
    std::vector<double> xi(N * N, 0.0);
    for (std::size_t i = 0; i < N; ++i)
      for (std::size_t j = i; j <= std::min(i + 1, N - 1); ++j) {
        const double v = alpha[t][i] * model.transition(i, j) * b[t + 1][j] *
                         beta[t + 1][j];
        xi[i * N + j] = v;
        norm += v;
      }
    if (norm <= 0.0) continue;
    for (std::size_t i = 0; i < N * N; ++i) acc.trans_num[i] += xi[i] / norm;
  }
  return loglik;
}

}  // namespace

BaumWelchResult baum_welch_train(const GmmHmm& init,
                                 const std::vector<FrameSeq>& sequences,
                                 const TrainOptions& opts) {
  std::size_t dim = 0;
  check_sequences(sequences, init.num_states(), &dim);
  if (dim != init.dim())
    throw DataError(strf("training frames are %zu-dimensional, model expects %zu",
                         dim, init.dim()));
  const std::vector<double> floor =
      global_variance_floor(sequences, dim, opts.variance_floor_factor);

  GmmHmm model = init;
  const std::size_t N = model.num_states();
  const std::size_t K = model.state(0).components.size();
  BaumWelchResult result;
  result.loglik_trace.reserve(opts.iterations);

  for (std::size_t iter = 0; iter < opts.iterations; ++iter) {
    Accumulators acc(N, K, dim);
    double total = 0.0;
    for (const auto& seq : sequences) total += accumulate_sequence(model, seq, acc);
    result.loglik_trace.push_back(total);

    // M-step: transitions (structure-preserving row renormalization).
    std::vector<double> trans(N * N, 0.0);
    for (std::size_t i = 0; i < N; ++i) {
      double row = 0.0;
      for (std::size_t j = i; j <= std::min(i + 1, N - 1); ++j)
        row += acc.trans_num[i * N + j];
      if (row <= 0.0) {
        for (std::size_t j = 0; j < N; ++j)
          trans[i * N + j] = model.transition(i, j);
      } else {
        for (std::size_t j = i; j <= std::min(i + 1, N - 1); ++j)
          trans[i * N + j] = acc.trans_num[i * N + j] / row;
      }
    }
    trans[(N - 1) * N + (N - 1)] = 1.0;

    std::vector<GmmState> states(N);
    for (std::size_t j = 0; j < N; ++j) {
      double occ_total = 0.0;
      for (std::size_t k = 0; k < K; ++k) occ_total += acc.occ[j][k];
      states[j].components.resize(K);
      for (std::size_t k = 0; k < K; ++k) {
        auto& comp = states[j].components[k];
        const auto& old = model.state(j).components[k];
        if (acc.occ[j][k] < 1e-10 || occ_total <= 0.0) {
          comp = old;  // starved component: keep previous parameters
          continue;
        }
        comp.weight = acc.occ[j][k] / occ_total;
        comp.mean.resize(dim);
        comp.var.resize(dim);
        for (std::size_t d = 0; d < dim; ++d) {
          comp.mean[d] = acc.mean_num[j][k][d] / acc.occ[j][k];
          const double ex2 = acc.sq_num[j][k][d] / acc.occ[j][k];
          comp.var[d] = std::max(ex2 - comp.mean[d] * comp.mean[d], floor[d]);
        }
      }
      double wsum = 0.0;
      for (const auto& comp : states[j].components) wsum += comp.weight;
      for (auto& comp : states[j].components) comp.weight /= wsum;
    }
    model = GmmHmm(model.label(), N, dim, std::move(trans), std::move(states));
  }
  result.model = std::move(model);
  return result;
}

BaumWelchResult train_gmm_hmm(EventLabel label,
                              const std::vector<FrameSeq>& sequences,
                              const TrainOptions& opts) {
  return baum_welch_train(init_gmm_hmm(label, sequences, opts), sequences, opts);
}

// --- decoding ---------------------------------------------------------------

ViterbiResult viterbi_decode(const GmmHmm& model, const FrameSeq& frames) {
  if (frames.empty()) throw DataError("cannot decode an empty sequence");
  const std::size_t T = frames.size();
  const std::size_t N = model.num_states();
  for (const auto& f : frames)
    if (f.size() != model.dim())
      throw DataError(strf("frame dimension %zu does not match model dimension %zu",
                           f.size(), model.dim()));

  std::vector<std::vector<double>> delta(T, std::vector<double>(N, kNegInf));
  std::vector<std::vector<std::size_t>> from(T, std::vector<std::size_t>(N, 0));

  delta[0][0] = gmm_log_likelihood(model.state(0), frames[0]);
  for (std::size_t t = 1; t < T; ++t)
    for (std::size_t j = 0; j < N; ++j) {
      double best = kNegInf;
      std::size_t arg = j;
      const double self = model.transition(j, j);
      if (self > 0.0 && delta[t - 1][j] > kNegInf) {
        best = delta[t - 1][j] + std::log(self);
        arg = j;
      }
      if (j > 0) {
        const double step = model.transition(j - 1, j);
        if (step > 0.0 && delta[t - 1][j - 1] > kNegInf) {
          const double cand = delta[t - 1][j - 1] + std::log(step);
          if (cand > best) {
            best = cand;
            arg = j - 1;
          }
        }
      }
      if (best > kNegInf)
        delta[t][j] = best + gmm_log_likelihood(model.state(j), frames[t]);
      from[t][j] = arg;
    }

  std::size_t end = 0;
  for (std::size_t j = 1; j < N; ++j)
    if (delta[T - 1][j] > delta[T - 1][end]) end = j;

  ViterbiResult r;
  r.log_score = delta[T - 1][end];
  r.path.resize(T);
  r.path[T - 1] = end;
  for (std::size_t t = T - 1; t-- > 0;) r.path[t] = from[t + 1][r.path[t + 1]];
  return r;
}

EpochScoreGrid::EpochScoreGrid(std::size_t epochs, std::size_t channels)
    : epochs_(epochs), channels_(channels), flat_(epochs * 2 * channels, 0.0) {}

std::vector<double> EpochScoreGrid::row(std::size_t e) const {
  if (e >= epochs_) throw DataError("epoch index out of range");
  return std::vector<double>(flat_.begin() + e * width(),
                             flat_.begin() + (e + 1) * width());
}

EpochScoreGrid epoch_scores(const GmmHmm& seiz, const GmmHmm& bckg,
                            const FeatureSequence& feats) {
  if (seiz.dim() != feats.dim() || bckg.dim() != feats.dim())
    throw DataError("model dimension does not match feature dimension");
  const std::size_t epochs = feats.epoch_count();
  EpochScoreGrid grid(epochs, feats.channels());
  FrameSeq frames;
  for (std::size_t e = 0; e < epochs; ++e) {
    const auto [lo, hi] = feats.epoch_frame_range(e);
    for (std::size_t c = 0; c < feats.channels(); ++c) {
      frames.assign(hi - lo, std::vector<double>(feats.dim()));
      for (std::size_t f = lo; f < hi; ++f)
        for (std::size_t d = 0; d < feats.dim(); ++d)
          frames[f - lo][d] = feats.at(f, c, d);
      grid.seiz(e, c) = viterbi_decode(seiz, frames).log_score;
      grid.bckg(e, c) = viterbi_decode(bckg, frames).log_score;
    }
  }
  return grid;
}

// --- serialization -----------------------------------------------------------

GmmHmm load_gmm_hmm(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw DataError("unreadable: cannot open '" + path + "'");
  char magic[4];
  is.read(magic, 4);
  if (is.gcount() != 4 || std::memcmp(magic, kHmmMagic, 4) != 0)
    throw DataError("malformed header: bad magic in '" + path + "'");
  if (read_u16(is) != kHmmVersion)
    throw DataError("malformed header: unsupported model file version");
  const EventLabel label = read_u8(is) ? EventLabel::Seiz : EventLabel::Bckg;
  const std::uint16_t N = read_u16(is);
  const std::uint16_t dim = read_u16(is);
  const std::uint16_t K = read_u16(is);
  std::vector<double> trans(static_cast<std::size_t>(N) * N);
  for (auto& v : trans) v = read_f64(is);
  std::vector<GmmState> states(N);
  for (auto& st : states) {
    st.components.resize(K);
    for (auto& c : st.components) {
      c.weight = read_f64(is);
      c.mean.resize(dim);
      c.var.resize(dim);
      for (auto& v : c.mean) v = read_f64(is);
      for (auto& v : c.var) v = read_f64(is);
    }
  }
  return GmmHmm(label, N, dim, std::move(trans), std::move(states));
}

void save_gmm_hmm(const GmmHmm& model, const std::string& path) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw DataError("write failed: cannot open '" + path + "'");
  os.write(kHmmMagic, 4);
  write_u16(os, kHmmVersion);
  write_u8(os, model.label() == EventLabel::Seiz ? 1 : 0);
  write_u16(os, static_cast<std::uint16_t>(model.num_states()));
  write_u16(os, static_cast<std::uint16_t>(model.dim()));
  write_u16(os, static_cast<std::uint16_t>(model.state(0).components.size()));
  for (double v : model.transitions()) write_f64(os, v);
  for (const auto& st : model.states())
    for (const auto& c : st.components) {
      write_f64(os, c.weight);
      for (double v : c.mean) write_f64(os, v);
      for (double v : c.var) write_f64(os, v);
    }
  if (!os) throw DataError("write failed for '" + path + "'");
}

}  // namespace ndet
