#include "ndet/features.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>

namespace ndet {

namespace {
constexpr char kFeatureMagic[4] = {'N', 'D', 'F', 'T'};
constexpr std::uint16_t kFeatureVersion = 1;

std::size_t next_pow2(std::size_t n) {
  std::size_t p = 1;
  while (p < n) p <<= 1;
  return p;
}
}  // namespace

void FeatureConfig::validate() const {
  if (!(frame_s > 0.0)) throw ConfigError("frame period must be positive");
  if (window_s < frame_s) throw ConfigError("window must be at least one frame long");
  if (base_dim < 2) throw ConfigError("base dimension must be at least 2");
  if (num_filters < base_dim)
    throw ConfigError("filterbank must be at least as large as the base dimension");
  if (total_dim < 2 * base_dim || total_dim > 3 * base_dim)
    throw ConfigError("total dimension must lie in [2*base_dim, 3*base_dim]");
  if (!(preemphasis >= 0.0 && preemphasis < 1.0))
    throw ConfigError("preemphasis coefficient must lie in [0, 1)");
  if (!(energy_floor > 0.0)) throw ConfigError("energy floor must be positive");
  if (delta_halfwidth == 0) throw ConfigError("delta halfwidth must be positive");
}

FeatureSequence::FeatureSequence(std::size_t frames, std::size_t channels,
                                 std::size_t dim, double frame_period_s,
                                 double window_s,
                                 std::vector<std::string> channel_labels)
    : frames_(frames),
      channels_(channels),
      dim_(dim),
      frame_period_s_(frame_period_s),
      window_s_(window_s),
      channel_labels_(std::move(channel_labels)),
      values_(frames * channels * dim, 0.0) {
  if (channel_labels_.size() != channels_)
    throw DataError("feature sequence channel label count mismatch");
}

std::size_t FeatureSequence::frames_per_epoch() const {
  return static_cast<std::size_t>(std::llround(1.0 / frame_period_s_));
}

std::size_t FeatureSequence::epoch_count() const {
  // A whole-second record of k seconds yields 10k - 1 frames; the last
  // epoch runs one frame short because the final window needs 0.2 s of data.
  return (frames_ + 1) / frames_per_epoch();
}

std::pair<std::size_t, std::size_t> FeatureSequence::epoch_frame_range(
    std::size_t e) const {
  if (e >= epoch_count()) throw DataError("epoch index out of range");
  const std::size_t fpe = frames_per_epoch();
  return {e * fpe, std::min(frames_, (e + 1) * fpe)};
}

bool FeatureSequence::operator==(const FeatureSequence& other) const {
  return frames_ == other.frames_ && channels_ == other.channels_ &&
         dim_ == other.dim_ && frame_period_s_ == other.frame_period_s_ &&
         window_s_ == other.window_s_ && channel_labels_ == other.channel_labels_ &&
         values_ == other.values_;
}

FeatureExtractor::FeatureExtractor(const FeatureConfig& cfg,
                                   std::uint32_t sample_rate_hz)
    : cfg_(cfg) {
  cfg_.validate();
  if (sample_rate_hz == 0) throw ConfigError("sample rate must be positive");
  window_n_ = static_cast<std::size_t>(std::llround(cfg_.window_s * sample_rate_hz));
  hop_n_ = static_cast<std::size_t>(std::llround(cfg_.frame_s * sample_rate_hz));
  if (window_n_ == 0 || hop_n_ == 0)
    throw ConfigError("window and frame must each cover at least one sample");
  fft_n_ = next_pow2(window_n_);

  hamming_.resize(window_n_);
  for (std::size_t i = 0; i < window_n_; ++i)
    hamming_[i] = 0.54 - 0.46 * std::cos(2.0 * M_PI * i / (window_n_ - 1));

  const std::size_t bins = fft_n_ / 2 + 1;
  dft_cos_.resize(bins * fft_n_);
  dft_sin_.resize(bins * fft_n_);
  for (std::size_t k = 0; k < bins; ++k)
    for (std::size_t t = 0; t < fft_n_; ++t) {
      const double w = 2.0 * M_PI * k * t / fft_n_;
      dft_cos_[k * fft_n_ + t] = std::cos(w);
      dft_sin_[k * fft_n_ + t] = std::sin(w);
    }

  // Triangular filters with edges spaced linearly from 0 to Nyquist.
  const double nyquist = sample_rate_hz / 2.0;
  const std::size_t nf = cfg_.num_filters;
  filters_.assign(nf * bins, 0.0);
  const double bin_hz = static_cast<double>(sample_rate_hz) / fft_n_;
  for (std::size_t m = 0; m < nf; ++m) {
    const double lo = nyquist * m / (nf + 1);
    const double mid = nyquist * (m + 1) / (nf + 1);
    const double hi = nyquist * (m + 2) / (nf + 1);
    for (std::size_t k = 0; k < bins; ++k) {
      const double f = k * bin_hz;
      double w = 0.0;
      if (f > lo && f < mid)
        w = (f - lo) / (mid - lo);
      else if (f >= mid && f < hi)
        w = (hi - f) / (hi - mid);
      filters_[m * bins + k] = w;
    }
  }

  // Orthonormal type-II cosine transform rows 1..base_dim-1.
  const std::size_t nc = cfg_.base_dim - 1;
  dct_.resize(nc * nf);
  const double scale = std::sqrt(2.0 / nf);
  for (std::size_t k = 0; k < nc; ++k)
    for (std::size_t m = 0; m < nf; ++m)
      dct_[k * nf + m] = scale * std::cos(M_PI * (k + 1) * (m + 0.5) / nf);
}

std::vector<double> FeatureExtractor::power_spectrum(
    const std::vector<double>& window) const {
  if (window.size() != window_n_)
    throw DataError(strf("window holds %zu samples, expected %zu", window.size(),
                         window_n_));
  std::vector<double> x(fft_n_, 0.0);
  x[0] = window[0];
  for (std::size_t i = 1; i < window_n_; ++i)
    x[i] = window[i] - cfg_.preemphasis * window[i - 1];
  for (std::size_t i = 0; i < window_n_; ++i) x[i] *= hamming_[i];

  const std::size_t bins = fft_n_ / 2 + 1;
  std::vector<double> power(bins);
  for (std::size_t k = 0; k < bins; ++k) {
    double re = 0.0, im = 0.0;
    const double* ck = &dft_cos_[k * fft_n_];
    const double* sk = &dft_sin_[k * fft_n_];
    for (std::size_t t = 0; t < fft_n_; ++t) {
      re += x[t] * ck[t];
      im -= x[t] * sk[t];
    }
    power[k] = re * re + im * im;
  }
  return power;
}

std::vector<double> FeatureExtractor::filterbank_energies(
    const std::vector<double>& window) const {
  const std::vector<double> power = power_spectrum(window);
  const std::size_t bins = power.size();
  std::vector<double> energies(cfg_.num_filters);
  for (std::size_t m = 0; m < cfg_.num_filters; ++m) {
    double e = 0.0;
    const double* fm = &filters_[m * bins];
    for (std::size_t k = 0; k < bins; ++k) e += fm[k] * power[k];
    energies[m] = std::max(e, cfg_.energy_floor);
  }
  return energies;
}

std::vector<double> FeatureExtractor::base_features(
    const std::vector<double>& window) const {
  if (window.size() != window_n_)
    throw DataError(strf("window holds %zu samples, expected %zu", window.size(),
                         window_n_));
  // Frame energy over the preemphasized (unwindowed) samples.
  double energy = 0.0;
  double prev = 0.0;
  for (std::size_t i = 0; i < window_n_; ++i) {
    const double y = i == 0 ? window[0] : window[i] - cfg_.preemphasis * prev;
    energy += y * y;
    prev = window[i];
  }
  energy = std::max(energy, cfg_.energy_floor);

  const std::vector<double> fb = filterbank_energies(window);
  std::vector<double> logfb(fb.size());
  for (std::size_t m = 0; m < fb.size(); ++m) logfb[m] = std::log(fb[m]);

  std::vector<double> out(cfg_.base_dim, 0.0);
  out[0] = std::log(energy);
  const std::size_t nc = cfg_.base_dim - 1;
  for (std::size_t k = 0; k < nc; ++k) {
    double c = 0.0;
    const double* row = &dct_[k * cfg_.num_filters];
    for (std::size_t m = 0; m < cfg_.num_filters; ++m) c += row[m] * logfb[m];
    out[k + 1] = c;
  }
  return out;
}

std::size_t frame_count(std::size_t samples, std::uint32_t sample_rate_hz,
                        const FeatureConfig& cfg) {
  const std::size_t win =
      static_cast<std::size_t>(std::llround(cfg.window_s * sample_rate_hz));
  const std::size_t hop =
      static_cast<std::size_t>(std::llround(cfg.frame_s * sample_rate_hz));
  if (samples < win)
    throw DataError(strf("record holds %zu samples, shorter than one %zu-sample "
                         "analysis window",
                         samples, win));
  return (samples - win) / hop + 1;
}

std::vector<std::vector<double>> frame_signal(const EegRecord& record,
                                              std::size_t channel,
                                              const FeatureConfig& cfg) {
  cfg.validate();
  if (channel >= record.channels()) throw DataError("channel index out of range");
  const std::size_t win =
      static_cast<std::size_t>(std::llround(cfg.window_s * record.sample_rate_hz()));
  const std::size_t hop =
      static_cast<std::size_t>(std::llround(cfg.frame_s * record.sample_rate_hz()));
  const std::size_t frames =
      frame_count(record.samples_per_channel(), record.sample_rate_hz(), cfg);
  std::vector<std::vector<double>> out(frames, std::vector<double>(win));
  for (std::size_t f = 0; f < frames; ++f)
    for (std::size_t i = 0; i < win; ++i)
      out[f][i] = record.microvolts(channel, f * hop + i);
  return out;
}

namespace {

// Regression delta over one column with replicated-boundary padding:
//   d_t = sum_{k=1..H} k * (x_{t+k} - x_{t-k}) / (2 * sum k^2)
std::vector<double> regression_delta(const std::vector<double>& x, std::size_t half) {
  const std::size_t n = x.size();
  double norm = 0.0;
  for (std::size_t k = 1; k <= half; ++k) norm += 2.0 * k * k;
  std::vector<double> d(n, 0.0);
  for (std::size_t t = 0; t < n; ++t) {
    double acc = 0.0;
    for (std::size_t k = 1; k <= half; ++k) {
      const std::size_t hi = std::min(t + k, n - 1);
      const std::size_t lo = t >= k ? t - k : 0;
      acc += k * (x[hi] - x[lo]);
    }
    d[t] = acc / norm;
  }
  return d;
}

}  // namespace

std::vector<std::vector<double>> append_derivatives(
    const std::vector<std::vector<double>>& base, const FeatureConfig& cfg) {
  cfg.validate();
  const std::size_t frames = base.size();
  if (frames < 2 * cfg.delta_halfwidth + 1)
    throw DataError(strf("derivative estimation needs at least %zu frames, got %zu",
                         2 * cfg.delta_halfwidth + 1, frames));
  for (const auto& row : base)
    if (row.size() != cfg.base_dim)
      throw DataError("base feature row has wrong dimension");

  const std::size_t dd_dim = cfg.total_dim - 2 * cfg.base_dim;
  std::vector<std::vector<double>> out(frames, std::vector<double>(cfg.total_dim));
  std::vector<double> col(frames);
  for (std::size_t j = 0; j < cfg.base_dim; ++j) {
    for (std::size_t t = 0; t < frames; ++t) col[t] = base[t][j];
    const std::vector<double> d1 = regression_delta(col, cfg.delta_halfwidth);
    for (std::size_t t = 0; t < frames; ++t) {
      out[t][j] = base[t][j];
      out[t][cfg.base_dim + j] = d1[t];
    }
    if (j < dd_dim) {
      const std::vector<double> d2 = regression_delta(d1, cfg.delta_halfwidth);
      for (std::size_t t = 0; t < frames; ++t) out[t][2 * cfg.base_dim + j] = d2[t];
    }
  }
  return out;
}

FeatureSequence extract_features(const EegRecord& record, const FeatureConfig& cfg) {
  cfg.validate();
  const FeatureExtractor fx(cfg, record.sample_rate_hz());
  const std::size_t frames =
      frame_count(record.samples_per_channel(), record.sample_rate_hz(), cfg);
  FeatureSequence seq(frames, record.channels(), cfg.total_dim, cfg.frame_s,
                      cfg.window_s, record.channel_labels());

  const std::size_t win = fx.window_samples();
  const std::size_t hop = fx.hop_samples();
  std::vector<double> window(win);
  std::vector<std::vector<double>> base(frames);
  for (std::size_t c = 0; c < record.channels(); ++c) {
    for (std::size_t f = 0; f < frames; ++f) {
      for (std::size_t i = 0; i < win; ++i)
        window[i] = record.microvolts(c, f * hop + i);
      base[f] = fx.base_features(window);
    }
    const std::vector<std::vector<double>> full = append_derivatives(base, cfg);
    for (std::size_t f = 0; f < frames; ++f)
      for (std::size_t d = 0; d < cfg.total_dim; ++d) seq.at(f, c, d) = full[f][d];
  }

  for (double v : seq.values())
    if (!std::isfinite(v)) throw NumericError("non-finite feature value");
  return seq;
}

FeatureSequence load_features(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw DataError("unreadable: cannot open '" + path + "'");
  char magic[4];
  is.read(magic, 4);
  if (is.gcount() != 4 || std::memcmp(magic, kFeatureMagic, 4) != 0)
    throw DataError("malformed header: bad magic in '" + path + "'");
  if (read_u16(is) != kFeatureVersion)
    throw DataError("malformed header: unsupported feature file version");
  const std::uint64_t frames = read_u64(is);
  const std::uint16_t channels = read_u16(is);
  const std::uint16_t dim = read_u16(is);
  const double frame_period = read_f64(is);
  const double window_s = read_f64(is);
  std::vector<std::string> labels(channels);
  for (auto& l : labels) l = read_lp_string(is);
  FeatureSequence seq(frames, channels, dim, frame_period, window_s,
                      std::move(labels));
  for (std::size_t f = 0; f < frames; ++f)
    for (std::size_t c = 0; c < channels; ++c)
      for (std::size_t d = 0; d < dim; ++d) seq.at(f, c, d) = read_f64(is);
  is.peek();
  if (!is.eof()) throw DataError("trailing bytes in feature file '" + path + "'");
  return seq;
}

void save_features(const FeatureSequence& seq, const std::string& path) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw DataError("write failed: cannot open '" + path + "'");
  os.write(kFeatureMagic, 4);
  write_u16(os, kFeatureVersion);
  write_u64(os, seq.frames());
  write_u16(os, static_cast<std::uint16_t>(seq.channels()));
  write_u16(os, static_cast<std::uint16_t>(seq.dim()));
  write_f64(os, seq.frame_period_s());
  write_f64(os, seq.window_s());
  for (const auto& l : seq.channel_labels()) write_lp_string(os, l);
  for (double v : seq.values()) write_f64(os, v);
  if (!os) throw DataError("write failed for '" + path + "'");
}

void export_features_csv(const FeatureSequence& seq, const std::string& path) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw DataError("write failed: cannot open '" + path + "'");
  os << "frame,channel";
  for (std::size_t d = 0; d < seq.dim(); ++d) os << ",v" << d;
  os << "\n";
  for (std::size_t f = 0; f < seq.frames(); ++f)
    for (std::size_t c = 0; c < seq.channels(); ++c) {
      os << f << "," << c;
      for (std::size_t d = 0; d < seq.dim(); ++d)
        os << strf(",%.17g", seq.at(f, c, d));
      os << "\n";
    }
  if (!os) throw DataError("write failed for '" + path + "'");
}

}  // namespace ndet
