// Linear dimensionality reduction: batch principal components and a
// constant-memory incremental variant (sequential Karhunen-Loeve updates).
#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "ndet/common.hpp"

namespace ndet {

// Mean + orthonormal projection rows + singular values of the centered data
// seen so far. Supports both one-shot fitting and streaming rank updates.
class PcaModel {
 public:
  PcaModel() = default;
  // Empty streaming model; the first partial_fit initializes it.
  PcaModel(std::size_t input_dim, std::size_t output_dim);

  std::size_t input_dim() const { return input_dim_; }
  std::size_t output_dim() const { return output_dim_; }
  std::uint64_t samples_seen() const { return samples_seen_; }
  const std::vector<double>& mean() const { return mean_; }
  const std::vector<double>& singular_values() const { return singular_values_; }
  // Row-major output_dim x input_dim.
  const std::vector<double>& components() const { return components_; }
  double component(std::size_t row, std::size_t col) const {
    return components_[row * input_dim_ + col];
  }

  void validate() const;  // orthonormality, ordering, shape

  friend PcaModel pca_fit(const std::vector<std::vector<double>>& data,
                          std::size_t out_dim);
  friend void ipca_partial_fit(PcaModel& model,
                               const std::vector<std::vector<double>>& batch);
  friend PcaModel load_pca(const std::string& path);

 private:
  std::size_t input_dim_ = 0;
  std::size_t output_dim_ = 0;
  std::uint64_t samples_seen_ = 0;
  std::vector<double> mean_;
  std::vector<double> singular_values_;
  std::vector<double> components_;
};

// Top right-singular directions of the mean-centered data.
PcaModel pca_fit(const std::vector<std::vector<double>>& data, std::size_t out_dim);

// y = components * (x - mean)
std::vector<double> pca_transform(const PcaModel& model, const std::vector<double>& x);
std::vector<std::vector<double>> pca_transform(
    const PcaModel& model, const std::vector<std::vector<double>>& rows);

// Rank-update with the new batch; memory stays O(batch + model).
void ipca_partial_fit(PcaModel& model, const std::vector<std::vector<double>>& batch);

PcaModel load_pca(const std::string& path);
void save_pca(const PcaModel& model, const std::string& path);

}  // namespace ndet
