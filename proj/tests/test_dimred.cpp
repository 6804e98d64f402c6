#include <cmath>
#include <numeric>
#include <random>

#include "doctest.h"
#include "ndet/dimred.hpp"
#include "testutil.hpp"

using namespace ndet;
using ndet_test::TempDir;

TEST_CASE("batch fit matches the covariance eigendecomposition") {
  std::mt19937_64 rng(41);
  const std::size_t n = 400, d = 12, k = 5;
  const auto data = ndet_test::gapped_gaussian_rows(rng, n, d);
  const PcaModel model = pca_fit(data, k);
  model.validate();
  REQUIRE(model.output_dim() == k);
  REQUIRE(model.singular_values().size() == k);

  const ndet_test::CovarianceEigen oracle = ndet_test::covariance_eigen_oracle(data, k);
  for (std::size_t i = 0; i < k; ++i) {
    // Explained variance per component: sigma_i^2 / (n - 1) against the
    // covariance eigenvalue.
    const double sv = model.singular_values()[i];
    const double var = sv * sv / static_cast<double>(n - 1);
    CHECK(var == doctest::Approx(oracle.variances[i]).epsilon(1e-9));
    // Axis alignment up to sign.
    double dot = 0.0;
    for (std::size_t c = 0; c < d; ++c) dot += model.component(i, c) * oracle.axes[i][c];
    CHECK(std::fabs(dot) == doctest::Approx(1.0).epsilon(1e-8));
  }
}

TEST_CASE("projection subtracts the mean and applies component rows") {
  std::mt19937_64 rng(43);
  const auto data = ndet_test::rand_rows(rng, 60, 7);
  const PcaModel model = pca_fit(data, 3);
  const std::vector<double> x = ndet_test::rand_vec(rng, 7);
  const std::vector<double> y = pca_transform(model, x);
  REQUIRE(y.size() == 3);
  for (std::size_t r = 0; r < 3; ++r) {
    double want = 0.0;
    for (std::size_t c = 0; c < 7; ++c)
      want += model.component(r, c) * (x[c] - model.mean()[c]);
    CHECK(y[r] == doctest::Approx(want).epsilon(1e-12));
  }

  // Projecting the training data reproduces the per-component variances.
  const auto projected = pca_transform(model, data);
  for (std::size_t r = 0; r < 3; ++r) {
    double acc = 0.0, mean = 0.0;
    for (const auto& row : projected) mean += row[r];
    mean /= projected.size();
    for (const auto& row : projected) acc += (row[r] - mean) * (row[r] - mean);
    const double sv = model.singular_values()[r];
    CHECK(acc / (projected.size() - 1) ==
          doctest::Approx(sv * sv / (data.size() - 1)).epsilon(1e-9));
  }
}

TEST_CASE("component rows are orthonormal and variances descend") {
  std::mt19937_64 rng(47);
  const auto data = ndet_test::gapped_gaussian_rows(rng, 150, 10);
  const PcaModel model = pca_fit(data, 6);
  for (std::size_t a = 0; a < 6; ++a) {
    for (std::size_t b = 0; b <= a; ++b) {
      double dot = 0.0;
      for (std::size_t c = 0; c < 10; ++c) dot += model.component(a, c) * model.component(b, c);
      CHECK(dot == ndet_test::approx_abs(a == b ? 1.0 : 0.0, 1e-9));
    }
    if (a > 0) CHECK(model.singular_values()[a] <= model.singular_values()[a - 1] + 1e-12);
  }
}

TEST_CASE("incremental updates converge to the batch subspace") {
  std::mt19937_64 rng(53);
  const std::size_t dim = 30, k = 6, batch = 50, batches = 10;
  const auto data = ndet_test::gapped_gaussian_rows(rng, batch * batches, dim, 0.7);

  PcaModel inc(dim, k);
  for (std::size_t b = 0; b < batches; ++b) {
    std::vector<std::vector<double>> chunk(data.begin() + b * batch,
                                           data.begin() + (b + 1) * batch);
    ipca_partial_fit(inc, chunk);
    inc.validate();
  }
  CHECK(inc.samples_seen() == batch * batches);

  const PcaModel full = pca_fit(data, k);
  auto rows_of = [&](const PcaModel& m) {
    std::vector<std::vector<double>> rows(k, std::vector<double>(dim));
    for (std::size_t r = 0; r < k; ++r)
      for (std::size_t c = 0; c < dim; ++c) rows[r][c] = m.component(r, c);
    return rows;
  };
  const double angle = ndet_test::max_principal_angle(rows_of(inc), rows_of(full));
  CHECK(angle < 0.05);

  // The incremental mean matches the batch mean closely.
  for (std::size_t c = 0; c < dim; ++c)
    CHECK(inc.mean()[c] == ndet_test::approx_abs(full.mean()[c], 1e-8));
}

TEST_CASE("rank-deficient batches pad with an orthonormal completion") {
  std::mt19937_64 rng(59);
  PcaModel model(8, 4);
  // Two centered rows span at most one direction; the remaining components
  // must still come back orthonormal with zero singular values.
  ipca_partial_fit(model, ndet_test::rand_rows(rng, 2, 8));
  model.validate();
  CHECK(model.samples_seen() == 2);
  CHECK(model.singular_values()[3] == ndet_test::approx_abs(0.0, 1e-9));
  // Follow-up batches rebuild a usable spectrum.
  ipca_partial_fit(model, ndet_test::rand_rows(rng, 20, 8));
  CHECK(model.samples_seen() == 22);
  CHECK(model.singular_values()[3] > 0.1);
}

TEST_CASE("model files round-trip exactly") {
  TempDir tmp;
  std::mt19937_64 rng(61);
  const PcaModel model = pca_fit(ndet_test::rand_rows(rng, 40, 9), 4);
  const std::string path = tmp.file("p.bin");
  save_pca(model, path);
  const PcaModel loaded = load_pca(path);
  CHECK(loaded.input_dim() == model.input_dim());
  CHECK(loaded.output_dim() == model.output_dim());
  CHECK(loaded.samples_seen() == model.samples_seen());
  CHECK(loaded.mean() == model.mean());
  CHECK(loaded.singular_values() == model.singular_values());
  CHECK(loaded.components() == model.components());
}

TEST_CASE("degenerate fits are rejected") {
  std::mt19937_64 rng(67);
  CHECK_THROWS_AS(pca_fit({}, 3), DataError);
  CHECK_THROWS_AS(pca_fit(ndet_test::rand_rows(rng, 5, 4), 6), ConfigError);
}
