// Channel-independent sequential decoder: left-to-right diagonal-covariance
// GMM-HMMs, expectation-maximization training, Viterbi scoring, and the
// per-epoch two-model score grid.
#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "ndet/common.hpp"
#include "ndet/features.hpp"
#include "ndet/signal.hpp"

namespace ndet {

// frames x dim
using FrameSeq = std::vector<std::vector<double>>;

struct GmmComponent {
  double weight = 1.0;
  std::vector<double> mean;
  std::vector<double> var;  // diagonal covariance
};

struct GmmState {
  std::vector<GmmComponent> components;
};

// Left-to-right model: transitions allow self-loop and next-state only,
// the final state self-loops with probability 1, start is state 0.
class GmmHmm {
 public:
  GmmHmm() = default;
  GmmHmm(EventLabel label, std::size_t num_states, std::size_t dim,
         std::vector<double> transitions, std::vector<GmmState> states);

  EventLabel label() const { return label_; }
  std::size_t num_states() const { return states_.size(); }
  std::size_t dim() const { return dim_; }
  double transition(std::size_t i, std::size_t j) const {
    return transitions_[i * states_.size() + j];
  }
  const std::vector<double>& transitions() const { return transitions_; }
  const GmmState& state(std::size_t i) const { return states_[i]; }
  const std::vector<GmmState>& states() const { return states_; }

  void validate() const;  // throws DataError when invariants are broken

 private:
  EventLabel label_ = EventLabel::Bckg;
  std::size_t dim_ = 0;
  std::vector<double> transitions_;  // row-major num_states x num_states
  std::vector<GmmState> states_;
};

// Log mixture density of x under one state (log-sum-exp over components).
double gmm_log_likelihood(const GmmState& state, const std::vector<double>& x);

struct TrainOptions {
  std::size_t num_states = 3;
  std::size_t num_components = 8;
  std::size_t iterations = 20;
  double variance_floor_factor = 1e-3;  // times global per-dimension variance
  std::size_t kmeans_iterations = 10;
  double self_loop_init = 0.8;
  std::uint64_t seed = 1;
};

// Uniform-segmentation slices + seeded k-means per state.
GmmHmm init_gmm_hmm(EventLabel label, const std::vector<FrameSeq>& sequences,
                    const TrainOptions& opts);

struct BaumWelchResult {
  GmmHmm model;
  std::vector<double> loglik_trace;  // total log-likelihood per iteration
};

BaumWelchResult baum_welch_train(const GmmHmm& init,
                                 const std::vector<FrameSeq>& sequences,
                                 const TrainOptions& opts);

// Convenience: initialization followed by training.
BaumWelchResult train_gmm_hmm(EventLabel label,
                              const std::vector<FrameSeq>& sequences,
                              const TrainOptions& opts);

struct ViterbiResult {
  std::vector<std::size_t> path;
  double log_score = 0.0;
};

// Best monotone state path starting in state 0 (any end state allowed).
ViterbiResult viterbi_decode(const GmmHmm& model, const FrameSeq& frames);

// Per epoch x channel: both models' Viterbi log scores, flattened to
// width 2 * channels with seiz at even columns and bckg at odd columns.
class EpochScoreGrid {
 public:
  EpochScoreGrid() = default;
  EpochScoreGrid(std::size_t epochs, std::size_t channels);

  std::size_t epochs() const { return epochs_; }
  std::size_t channels() const { return channels_; }
  std::size_t width() const { return 2 * channels_; }

  double seiz(std::size_t e, std::size_t c) const { return flat_[e * width() + 2 * c]; }
  double bckg(std::size_t e, std::size_t c) const {
    return flat_[e * width() + 2 * c + 1];
  }
  double& seiz(std::size_t e, std::size_t c) { return flat_[e * width() + 2 * c]; }
  double& bckg(std::size_t e, std::size_t c) { return flat_[e * width() + 2 * c + 1]; }

  // One epoch's flattened score supervector (length 2 * channels).
  std::vector<double> row(std::size_t e) const;
  const std::vector<double>& flat() const { return flat_; }

 private:
  std::size_t epochs_ = 0;
  std::size_t channels_ = 0;
  std::vector<double> flat_;
};

// Fresh-start Viterbi over each whole-second epoch and channel.
EpochScoreGrid epoch_scores(const GmmHmm& seiz, const GmmHmm& bckg,
                            const FeatureSequence& feats);

GmmHmm load_gmm_hmm(const std::string& path);
void save_gmm_hmm(const GmmHmm& model, const std::string& path);

}  // namespace ndet
