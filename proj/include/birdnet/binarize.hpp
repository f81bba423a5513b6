#pragma once
// StepMiner binarization: one-step least-squares fit per feature, then
// B_ij = 1[X_ij > tau_j] packed into 64-bit words per column.

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "birdnet/dataset.hpp"

namespace birdnet {

struct StepFit {
  double threshold = 0.0;
  bool degenerate = false;
  // Number of values in the low segment (s*); 0 when degenerate.
  std::size_t split = 0;
};

StepFit fit_threshold(std::span<const double> values);

namespace detail {
// SSE(s) for s = 1..n-1 over the ascending-sorted input, via prefix sums.
// Element s-1 holds SSE(s).
std::vector<double> split_sse_profile(std::span<const double> sorted_values);
}  // namespace detail

struct BinarizationModel {
  std::vector<double> thresholds;
  std::vector<bool> degenerate;

  std::size_t dims() const { return thresholds.size(); }
};

struct BinarizationOptions {
  // A column whose most frequent value covers at least this fraction of rows is
  // marked degenerate. 1.0 keeps only exactly-constant columns degenerate.
  double near_constant_fraction = 0.99;
};

BinarizationModel fit_binarization(const Matrix& values, const BinarizationOptions& options = {});

class BinaryMatrix {
 public:
  BinaryMatrix() = default;
  BinaryMatrix(std::size_t rows, std::size_t cols);

  std::size_t rows() const { return rows_; }
  std::size_t cols() const { return cols_; }
  std::size_t words_per_column() const { return words_; }

  bool get(std::size_t row, std::size_t col) const {
    return (data_[col * words_ + row / 64] >> (row % 64)) & 1U;
  }
  void set(std::size_t row, std::size_t col, bool bit);

  std::span<const std::uint64_t> column(std::size_t col) const {
    return {data_.data() + col * words_, words_};
  }
  std::span<std::uint64_t> column(std::size_t col) { return {data_.data() + col * words_, words_}; }

  std::size_t count_ones(std::size_t col) const;

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::size_t words_ = 0;
  std::vector<std::uint64_t> data_;
};

BinaryMatrix binarize(const Matrix& values, const BinarizationModel& model);

// Two-column text table: feature name, threshold or DEGENERATE.
void write_thresholds(const std::filesystem::path& path, const BinarizationModel& model,
                      std::span<const std::string> feature_names);

}  // namespace birdnet
