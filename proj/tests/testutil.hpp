// Shared test helpers: deterministic data generators, a scratch-directory
// guard, and independent oracles (exhaustive path search, covariance
// eigendecomposition, finite differences) that deliberately avoid the
// library's own algorithms.
#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <limits>
#include <ostream>
#include <random>
#include <string>
#include <vector>

#include "ndet/hmm.hpp"
#include "ndet/nn/loss.hpp"
#include "ndet/nn/network.hpp"

namespace ndet_test {

// Absolute-tolerance comparator usable on either side of ==.
struct ApproxAbs {
  double target;
  double tol;
};

inline ApproxAbs approx_abs(double target, double tol) { return {target, tol}; }
inline bool operator==(double lhs, const ApproxAbs& a) {
  return std::fabs(lhs - a.target) <= a.tol;
}
inline bool operator==(const ApproxAbs& a, double rhs) { return rhs == a; }
inline std::ostream& operator<<(std::ostream& os, const ApproxAbs& a) {
  return os << a.target << " +/- " << a.tol;
}

// ---------------------------------------------------------------------------
// Scratch directories
// ---------------------------------------------------------------------------

class TempDir {
 public:
  TempDir() {
    std::string tmpl = (std::filesystem::temp_directory_path() / "ndet_test_XXXXXX").string();
    std::vector<char> buf(tmpl.begin(), tmpl.end());
    buf.push_back('\0');
    if (!mkdtemp(buf.data())) throw std::runtime_error("mkdtemp failed");
    path_ = buf.data();
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  const std::string& path() const { return path_; }
  std::string file(const std::string& name) const { return path_ + "/" + name; }

 private:
  std::string path_;
};

// ---------------------------------------------------------------------------
// Deterministic data
// ---------------------------------------------------------------------------

inline std::vector<double> rand_vec(std::mt19937_64& rng, std::size_t n, double lo = -1.0,
                                    double hi = 1.0) {
  std::uniform_real_distribution<double> d(lo, hi);
  std::vector<double> v(n);
  for (double& x : v) x = d(rng);
  return v;
}

inline std::vector<std::vector<double>> rand_rows(std::mt19937_64& rng, std::size_t rows,
                                                  std::size_t dim, double lo = -1.0,
                                                  double hi = 1.0) {
  std::vector<std::vector<double>> out(rows);
  for (auto& r : out) r = rand_vec(rng, dim, lo, hi);
  return out;
}

// Rows drawn from a zero-mean Gaussian whose per-axis standard deviations
// fall off geometrically, then rotated; gives a gapped spectrum with known
// principal subspace (the rotation's leading columns).
inline std::vector<std::vector<double>> gapped_gaussian_rows(std::mt19937_64& rng,
                                                             std::size_t rows, std::size_t dim,
                                                             double decay = 0.6) {
  Eigen::MatrixXd base = Eigen::MatrixXd::NullaryExpr(dim, dim, [&rng]() {
    std::normal_distribution<double> n;
    return n(rng);
  });
  const Eigen::HouseholderQR<Eigen::MatrixXd> qr(base);
  const Eigen::MatrixXd q = qr.householderQ();
  std::normal_distribution<double> n;
  std::vector<std::vector<double>> out(rows, std::vector<double>(dim));
  for (std::size_t r = 0; r < rows; ++r) {
    Eigen::VectorXd z(dim);
    double scale = 4.0;
    for (std::size_t d = 0; d < dim; ++d) {
      z[static_cast<Eigen::Index>(d)] = scale * n(rng);
      scale *= decay;
    }
    const Eigen::VectorXd x = q * z;
    for (std::size_t d = 0; d < dim; ++d) out[r][d] = x[static_cast<Eigen::Index>(d)];
  }
  return out;
}

// ---------------------------------------------------------------------------
// Decoder oracles
// ---------------------------------------------------------------------------

// Random admissible left-to-right model: self-loop/advance transitions,
// diagonal Gaussian mixtures with well-conditioned variances.
inline ndet::GmmHmm random_left_right_hmm(std::mt19937_64& rng, std::size_t n_states,
                                          std::size_t dim, std::size_t n_comps) {
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::vector<double> trans(n_states * n_states, 0.0);
  for (std::size_t i = 0; i + 1 < n_states; ++i) {
    const double self = 0.3 + 0.6 * unit(rng);
    trans[i * n_states + i] = self;
    trans[i * n_states + i + 1] = 1.0 - self;
  }
  trans[(n_states - 1) * n_states + (n_states - 1)] = 1.0;

  std::vector<ndet::GmmState> states(n_states);
  for (ndet::GmmState& st : states) {
    double wsum = 0.0;
    st.components.resize(n_comps);
    for (ndet::GmmComponent& c : st.components) {
      c.weight = 0.2 + unit(rng);
      wsum += c.weight;
      c.mean.resize(dim);
      c.var.resize(dim);
      for (std::size_t d = 0; d < dim; ++d) {
        c.mean[d] = -3.0 + 6.0 * unit(rng);
        c.var[d] = 0.3 + 1.7 * unit(rng);
      }
    }
    for (ndet::GmmComponent& c : st.components) c.weight /= wsum;
  }
  ndet::GmmHmm model(ndet::EventLabel::Seiz, n_states, dim, std::move(trans), std::move(states));
  model.validate();
  return model;
}

inline ndet::FrameSeq random_frames(std::mt19937_64& rng, std::size_t t, std::size_t dim) {
  ndet::FrameSeq seq(t);
  std::uniform_real_distribution<double> d(-3.0, 3.0);
  for (auto& f : seq) {
    f.resize(dim);
    for (double& x : f) x = d(rng);
  }
  return seq;
}

// Exhaustive search over every state sequence that starts in state 0 and
// follows nonzero transitions. O(num_states^T) — small T only.
inline ndet::ViterbiResult brute_force_viterbi(const ndet::GmmHmm& model,
                                               const ndet::FrameSeq& frames) {
  const std::size_t n = model.num_states();
  const std::size_t t_max = frames.size();
  // Emission table.
  std::vector<std::vector<double>> emit(t_max, std::vector<double>(n));
  for (std::size_t t = 0; t < t_max; ++t)
    for (std::size_t s = 0; s < n; ++s)
      emit[t][s] = ndet::gmm_log_likelihood(model.state(s), frames[t]);

  ndet::ViterbiResult best;
  best.log_score = -std::numeric_limits<double>::infinity();
  std::vector<std::size_t> path(t_max, 0);
  // Depth-first enumeration of every admissible path.
  auto recurse = [&](auto&& self, std::size_t t, std::size_t state, double score) -> void {
    path[t] = state;
    score += emit[t][state];
    if (t + 1 == t_max) {
      if (score > best.log_score) {
        best.log_score = score;
        best.path = path;
      }
      return;
    }
    for (std::size_t next = 0; next < n; ++next) {
      const double p = model.transition(state, next);
      if (p <= 0.0) continue;
      self(self, t + 1, next, score + std::log(p));
    }
  };
  if (t_max > 0) recurse(recurse, 0, 0, 0.0);
  return best;
}

// ---------------------------------------------------------------------------
// Linear-algebra oracles
// ---------------------------------------------------------------------------

// Descending eigenvalues of the sample covariance (1/(n-1) normalization)
// plus the matching eigenvectors as rows.
struct CovarianceEigen {
  std::vector<double> variances;
  std::vector<std::vector<double>> axes;
};

inline CovarianceEigen covariance_eigen_oracle(const std::vector<std::vector<double>>& data,
                                               std::size_t out_dim) {
  const std::size_t n = data.size();
  const std::size_t d = data[0].size();
  Eigen::MatrixXd x(n, d);
  for (std::size_t r = 0; r < n; ++r)
    for (std::size_t c = 0; c < d; ++c)
      x(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c)) = data[r][c];
  const Eigen::RowVectorXd mean = x.colwise().mean();
  x.rowwise() -= mean;
  const Eigen::MatrixXd cov = x.transpose() * x / static_cast<double>(n - 1);
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(cov);
  CovarianceEigen out;
  for (std::size_t k = 0; k < out_dim; ++k) {
    const Eigen::Index idx = static_cast<Eigen::Index>(d - 1 - k);  // ascending -> descending
    out.variances.push_back(eig.eigenvalues()[idx]);
    std::vector<double> axis(d);
    for (std::size_t c = 0; c < d; ++c) axis[c] = eig.eigenvectors()(static_cast<Eigen::Index>(c), idx);
    out.axes.push_back(std::move(axis));
  }
  return out;
}

// Largest principal angle (radians) between the row-span of a and of b.
inline double max_principal_angle(const std::vector<std::vector<double>>& a,
                                  const std::vector<std::vector<double>>& b) {
  const std::size_t k = a.size();
  const std::size_t d = a[0].size();
  auto to_cols = [d](const std::vector<std::vector<double>>& rows) {
    Eigen::MatrixXd m(d, rows.size());
    for (std::size_t j = 0; j < rows.size(); ++j)
      for (std::size_t i = 0; i < d; ++i)
        m(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = rows[j][i];
    // Orthonormalize defensively; inputs are near-orthonormal already.
    const Eigen::HouseholderQR<Eigen::MatrixXd> qr(m);
    return Eigen::MatrixXd(qr.householderQ() * Eigen::MatrixXd::Identity(
                                                   static_cast<Eigen::Index>(d),
                                                   static_cast<Eigen::Index>(rows.size())));
  };
  const Eigen::MatrixXd qa = to_cols(a);
  const Eigen::MatrixXd qb = to_cols(b);
  Eigen::JacobiSVD<Eigen::MatrixXd> svd(qa.transpose() * qb);
  const double cos_min = std::clamp(svd.singularValues()[static_cast<Eigen::Index>(k - 1)],
                                    -1.0, 1.0);
  return std::acos(cos_min);
}

// ---------------------------------------------------------------------------
// Finite-difference gradient oracle
// ---------------------------------------------------------------------------

struct GradCheckResult {
  double max_rel_err = 0.0;
  std::size_t checked = 0;
};

// Central differences against the analytic backward pass. The network must
// contain no stochastic layers (dropout rate 0 / noise 0 are fine: they are
// identity passthroughs that consume no randomness).
inline GradCheckResult fd_gradient_check(ndet::Network& net, const ndet::Tensor& x,
                                         const ndet::Tensor& target, ndet::LossKind loss,
                                         double h = 1e-5, std::size_t max_checks = 48,
                                         std::uint64_t pick_seed = 17) {
  auto loss_at = [&]() {
    const ndet::Tensor y = net.forward(x, true);
    return ndet::loss_eval(loss, y, target).loss;
  };
  net.zero_grads();
  const ndet::Tensor y = net.forward(x, true);
  const ndet::LossValue lv = ndet::loss_eval(loss, y, target);
  net.backward(lv.grad);

  std::vector<ndet::Tensor*> params = net.params();
  std::vector<ndet::Tensor*> grads = net.grads();
  std::size_t total = 0;
  for (const ndet::Tensor* p : params) total += p->size();

  // Spread a bounded number of probes across all parameters.
  std::mt19937_64 rng(pick_seed);
  std::vector<std::size_t> picks;
  if (total <= max_checks) {
    for (std::size_t i = 0; i < total; ++i) picks.push_back(i);
  } else {
    std::uniform_int_distribution<std::size_t> d(0, total - 1);
    for (std::size_t i = 0; i < max_checks; ++i) picks.push_back(d(rng));
  }

  GradCheckResult result;
  for (const std::size_t flat : picks) {
    // Locate the parameter tensor holding this flat index.
    std::size_t offset = flat;
    std::size_t which = 0;
    while (offset >= params[which]->size()) {
      offset -= params[which]->size();
      ++which;
    }
    double* slot = params[which]->data() + offset;
    const double saved = *slot;
    *slot = saved + h;
    const double up = loss_at();
    *slot = saved - h;
    const double down = loss_at();
    *slot = saved;
    const double fd = (up - down) / (2.0 * h);
    const double analytic = grads[which]->data()[offset];
    const double denom = std::max({std::fabs(fd), std::fabs(analytic), 1e-3});
    result.max_rel_err = std::max(result.max_rel_err, std::fabs(fd - analytic) / denom);
    ++result.checked;
  }
  return result;
}

}  // namespace ndet_test
