#include "ndet/dimred.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>

namespace ndet {

namespace {
constexpr char kPcaMagic[4] = {'N', 'D', 'P', 'C'};
constexpr std::uint16_t kPcaVersion = 1;

Eigen::MatrixXd to_eigen(const std::vector<std::vector<double>>& rows) {
  if (rows.empty()) throw DataError("matrix has no rows");
  const std::size_t d = rows.front().size();
  if (d == 0) throw DataError("matrix has zero columns");
  Eigen::MatrixXd m(rows.size(), d);
  for (std::size_t i = 0; i < rows.size(); ++i) {
    if (rows[i].size() != d) throw DataError("rows differ in dimension");
    for (std::size_t j = 0; j < d; ++j) m(i, j) = rows[i][j];
  }
  return m;
}

// Largest-magnitude entry of each row forced positive.
void canonical_signs(Eigen::MatrixXd& rows) {
  for (Eigen::Index i = 0; i < rows.rows(); ++i) {
    Eigen::Index arg = 0;
    rows.row(i).cwiseAbs().maxCoeff(&arg);
    if (rows(i, arg) < 0.0) rows.row(i) = -rows.row(i);
  }
}

// Extends `rows` (r x d, orthonormal) to `target` rows using canonical basis
// directions, deterministically.
Eigen::MatrixXd complete_basis(const Eigen::MatrixXd& rows, Eigen::Index target) {
  const Eigen::Index d = rows.cols();
  Eigen::MatrixXd out(target, d);
  out.topRows(rows.rows()) = rows;
  Eigen::Index have = rows.rows();
  for (Eigen::Index j = 0; j < d && have < target; ++j) {
    Eigen::VectorXd v = Eigen::VectorXd::Zero(d);
    v(j) = 1.0;
    for (Eigen::Index i = 0; i < have; ++i)
      v -= out.row(i).dot(v) * out.row(i).transpose();
    const double norm = v.norm();
    if (norm < 1e-6) continue;
    out.row(have++) = v.transpose() / norm;
  }
  if (have < target)
    throw NumericError("cannot complete an orthonormal basis of the requested rank");
  return out;
}
}  // namespace

PcaModel::PcaModel(std::size_t input_dim, std::size_t output_dim)
    : input_dim_(input_dim), output_dim_(output_dim) {
  if (input_dim == 0) throw ConfigError("input dimension must be positive");
  if (output_dim == 0 || output_dim > input_dim)
    throw ConfigError(strf("output dimension %zu must lie in [1, %zu]", output_dim,
                           input_dim));
  mean_.assign(input_dim, 0.0);
}

void PcaModel::validate() const {
  if (samples_seen_ == 0) return;  // empty streaming model
  if (mean_.size() != input_dim_ || singular_values_.size() != output_dim_ ||
      components_.size() != output_dim_ * input_dim_)
    throw DataError("projection model shape mismatch");
  for (std::size_t i = 0; i + 1 < output_dim_; ++i)
    if (singular_values_[i] + 1e-12 < singular_values_[i + 1])
      throw DataError("singular values are not sorted descending");
  for (double v : singular_values_)
    if (!(v >= 0.0) || !std::isfinite(v))
      throw DataError("singular values must be non-negative and finite");
  for (std::size_t i = 0; i < output_dim_; ++i)
    for (std::size_t j = i; j < output_dim_; ++j) {
      double dot = 0.0;
      for (std::size_t k = 0; k < input_dim_; ++k)
        dot += component(i, k) * component(j, k);
      const double want = i == j ? 1.0 : 0.0;
      if (std::abs(dot - want) > 1e-8)
        throw DataError(strf("component rows %zu and %zu are not orthonormal "
                             "(dot %.3e)",
                             i, j, dot));
    }
}

PcaModel pca_fit(const std::vector<std::vector<double>>& data, std::size_t out_dim) {
  const Eigen::MatrixXd X = to_eigen(data);
  const Eigen::Index n = X.rows();
  const Eigen::Index d = X.cols();
  if (n < 2) throw DataError("fitting requires at least 2 samples");
  if (out_dim == 0 || static_cast<Eigen::Index>(out_dim) > std::min(n, d))
    throw ConfigError(strf("output dimension %zu must lie in [1, min(%ld, %ld)]",
                           out_dim, static_cast<long>(n), static_cast<long>(d)));

  const Eigen::VectorXd mean = X.colwise().mean();
  const Eigen::MatrixXd centered = X.rowwise() - mean.transpose();
  Eigen::BDCSVD<Eigen::MatrixXd> svd(centered, Eigen::ComputeThinV);

  Eigen::MatrixXd comps =
      svd.matrixV().leftCols(static_cast<Eigen::Index>(out_dim)).transpose();
  canonical_signs(comps);

  PcaModel model(static_cast<std::size_t>(d), out_dim);
  model.samples_seen_ = static_cast<std::uint64_t>(n);
  model.mean_.assign(mean.data(), mean.data() + d);
  model.singular_values_.resize(out_dim);
  for (std::size_t i = 0; i < out_dim; ++i)
    model.singular_values_[i] = svd.singularValues()(static_cast<Eigen::Index>(i));
  model.components_.resize(out_dim * d);
  for (std::size_t i = 0; i < out_dim; ++i)
    for (Eigen::Index j = 0; j < d; ++j)
      model.components_[i * d + j] = comps(static_cast<Eigen::Index>(i), j);
  model.validate();
  return model;
}

std::vector<double> pca_transform(const PcaModel& model, const std::vector<double>& x) {
  if (model.samples_seen() == 0) throw DataError("projection model is not fitted");
  if (x.size() != model.input_dim())
    throw DataError(strf("input dimension %zu does not match model dimension %zu",
                         x.size(), model.input_dim()));
  std::vector<double> y(model.output_dim(), 0.0);
  for (std::size_t i = 0; i < model.output_dim(); ++i) {
    double acc = 0.0;
    for (std::size_t j = 0; j < model.input_dim(); ++j)
      acc += model.component(i, j) * (x[j] - model.mean()[j]);
    y[i] = acc;
  }
  return y;
}

std::vector<std::vector<double>> pca_transform(
    const PcaModel& model, const std::vector<std::vector<double>>& rows) {
  std::vector<std::vector<double>> out;
  out.reserve(rows.size());
  for (const auto& r : rows) out.push_back(pca_transform(model, r));
  return out;
}

void ipca_partial_fit(PcaModel& model, const std::vector<std::vector<double>>& batch) {
  if (model.input_dim() == 0)
    throw ConfigError("streaming model must be constructed with explicit dimensions");
  const Eigen::MatrixXd B = to_eigen(batch);
  const Eigen::Index b = B.rows();
  const Eigen::Index d = B.cols();
  if (static_cast<std::size_t>(d) != model.input_dim())
    throw DataError(strf("batch dimension %ld does not match model dimension %zu",
                         static_cast<long>(d), model.input_dim()));

  const Eigen::VectorXd batch_mean = B.colwise().mean();
  const double n = static_cast<double>(model.samples_seen_);
  const double bb = static_cast<double>(b);

  Eigen::MatrixXd augmented;
  Eigen::VectorXd new_mean(d);
  if (model.samples_seen_ == 0) {
    augmented = B.rowwise() - batch_mean.transpose();
    new_mean = batch_mean;
  } else {
    Eigen::Map<const Eigen::VectorXd> old_mean(model.mean_.data(), d);
    const std::size_t q = model.output_dim_;
    augmented.resize(static_cast<Eigen::Index>(q) + b + 1, d);
    for (std::size_t i = 0; i < q; ++i)
      for (Eigen::Index j = 0; j < d; ++j)
        augmented(static_cast<Eigen::Index>(i), j) =
            model.singular_values_[i] * model.components_[i * d + j];
    augmented.middleRows(static_cast<Eigen::Index>(q), b) =
        B.rowwise() - batch_mean.transpose();
    // Mean-shift correction row from the running/batch mean difference.
    augmented.row(static_cast<Eigen::Index>(q) + b) =
        std::sqrt(n * bb / (n + bb)) * (batch_mean - old_mean).transpose();
    new_mean = (n * old_mean + bb * batch_mean) / (n + bb);
  }

  Eigen::BDCSVD<Eigen::MatrixXd> svd(augmented, Eigen::ComputeThinV);
  const Eigen::Index rank = std::min<Eigen::Index>(svd.singularValues().size(),
                                                   static_cast<Eigen::Index>(model.output_dim_));
  Eigen::MatrixXd comps = svd.matrixV().leftCols(rank).transpose();
  Eigen::VectorXd sv = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(model.output_dim_));
  sv.head(rank) = svd.singularValues().head(rank);
  if (rank < static_cast<Eigen::Index>(model.output_dim_))
    comps = complete_basis(comps, static_cast<Eigen::Index>(model.output_dim_));
  canonical_signs(comps);

  model.samples_seen_ += static_cast<std::uint64_t>(b);
  model.mean_.assign(new_mean.data(), new_mean.data() + d);
  model.singular_values_.assign(sv.data(), sv.data() + model.output_dim_);
  model.components_.resize(model.output_dim_ * d);
  for (std::size_t i = 0; i < model.output_dim_; ++i)
    for (Eigen::Index j = 0; j < d; ++j)
      model.components_[i * d + j] = comps(static_cast<Eigen::Index>(i), j);
  model.validate();
}

PcaModel load_pca(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw DataError("unreadable: cannot open '" + path + "'");
  char magic[4];
  is.read(magic, 4);
  if (is.gcount() != 4 || std::memcmp(magic, kPcaMagic, 4) != 0)
    throw DataError("malformed header: bad magic in '" + path + "'");
  if (read_u16(is) != kPcaVersion)
    throw DataError("malformed header: unsupported projection file version");
  const std::uint32_t input_dim = read_u32(is);
  const std::uint32_t output_dim = read_u32(is);
  const std::uint64_t seen = read_u64(is);
  PcaModel model(input_dim, output_dim);
  model.samples_seen_ = seen;
  for (auto& v : model.mean_) v = read_f64(is);
  if (seen > 0) {
    model.singular_values_.resize(output_dim);
    model.components_.resize(static_cast<std::size_t>(output_dim) * input_dim);
    for (auto& v : model.singular_values_) v = read_f64(is);
    for (auto& v : model.components_) v = read_f64(is);
  }
  model.validate();
  return model;
}

void save_pca(const PcaModel& model, const std::string& path) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw DataError("write failed: cannot open '" + path + "'");
  os.write(kPcaMagic, 4);
  write_u16(os, kPcaVersion);
  write_u32(os, static_cast<std::uint32_t>(model.input_dim()));
  write_u32(os, static_cast<std::uint32_t>(model.output_dim()));
  write_u64(os, model.samples_seen());
  for (double v : model.mean()) write_f64(os, v);
  if (model.samples_seen() > 0) {
    for (double v : model.singular_values()) write_f64(os, v);
    for (double v : model.components()) write_f64(os, v);
  }
  if (!os) throw DataError("write failed for '" + path + "'");
}

}  // namespace ndet
