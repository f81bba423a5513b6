#include "birdnet/binarize.hpp"

#include <algorithm>
#include <bit>
#include <fstream>
#include <stdexcept>

#include "birdnet/text_io.hpp"

namespace birdnet {

namespace detail {

std::vector<double> split_sse_profile(std::span<const double> sorted_values) {
  const auto n = sorted_values.size();
  std::vector<double> profile;
  if (n < 2) return profile;
  double mean = 0.0;
  for (double v : sorted_values) mean += v;
  mean /= static_cast<double>(n);
  double total = 0.0;
  for (double v : sorted_values) total += (v - mean) * (v - mean);

  profile.reserve(n - 1);
  double prefix = 0.0;
  const double nd = static_cast<double>(n);
  for (std::size_t s = 1; s < n; ++s) {
    prefix += sorted_values[s - 1] - mean;
    const double sd = static_cast<double>(s);
    const double between = prefix * prefix * nd / (sd * (nd - sd));
    profile.push_back(std::max(0.0, total - between));
  }
  return profile;
}

}  // namespace detail

StepFit fit_threshold(std::span<const double> values) {
  const auto n = values.size();
  if (n < 2) throw std::invalid_argument("fit_threshold needs at least 2 values");
  std::vector<double> sorted(values.begin(), values.end());
  std::sort(sorted.begin(), sorted.end());
  if (sorted.front() == sorted.back()) return {sorted.front(), true, 0};

  double mean = 0.0;
  for (double v : sorted) mean += v;
  mean /= static_cast<double>(n);

  // Minimising SSE(s) is maximising the between-segment sum of squares,
  // which for centred prefix sums S_s is S_s^2 * n / (s (n - s)).
  double best_score = -1.0;
  std::size_t best_split = 1;
  double prefix = 0.0;
  double best_prefix_raw = 0.0;
  double prefix_raw = 0.0;
  for (std::size_t s = 1; s < n; ++s) {
    prefix += sorted[s - 1] - mean;
    prefix_raw += sorted[s - 1];
    const double sd = static_cast<double>(s);
    const double score = prefix * prefix / (sd * (static_cast<double>(n) - sd));
    if (score > best_score) {
      best_score = score;
      best_split = s;
      best_prefix_raw = prefix_raw;
    }
  }
  double high_sum = 0.0;
  for (std::size_t i = best_split; i < n; ++i) high_sum += sorted[i];
  const double mean_low = best_prefix_raw / static_cast<double>(best_split);
  const double mean_high = high_sum / static_cast<double>(n - best_split);
  return {(mean_low + mean_high) / 2.0, false, best_split};
}

BinarizationModel fit_binarization(const Matrix& values, const BinarizationOptions& options) {
  BinarizationModel model;
  const auto n = static_cast<std::size_t>(values.rows());
  model.thresholds.resize(static_cast<std::size_t>(values.cols()));
  model.degenerate.resize(static_cast<std::size_t>(values.cols()));
  std::vector<double> column(n);
  for (Eigen::Index j = 0; j < values.cols(); ++j) {
    for (std::size_t i = 0; i < n; ++i) column[i] = values(static_cast<Eigen::Index>(i), j);
    auto fit = fit_threshold(column);
    if (!fit.degenerate && options.near_constant_fraction < 1.0) {
      std::sort(column.begin(), column.end());
      std::size_t longest = 1;
      std::size_t run = 1;
      double mode = column.front();
      for (std::size_t i = 1; i < n; ++i) {
        run = column[i] == column[i - 1] ? run + 1 : 1;
        if (run > longest) {
          longest = run;
          mode = column[i];
        }
      }
      if (static_cast<double>(longest) >= options.near_constant_fraction * static_cast<double>(n))
        fit = {mode, true, 0};
    }
    model.thresholds[static_cast<std::size_t>(j)] = fit.threshold;
    model.degenerate[static_cast<std::size_t>(j)] = fit.degenerate;
  }
  return model;
}

BinaryMatrix::BinaryMatrix(std::size_t rows, std::size_t cols)
    : rows_(rows), cols_(cols), words_((rows + 63) / 64), data_(words_ * cols, 0) {}

void BinaryMatrix::set(std::size_t row, std::size_t col, bool bit) {
  auto& word = data_[col * words_ + row / 64];
  const std::uint64_t mask = std::uint64_t{1} << (row % 64);
  word = bit ? (word | mask) : (word & ~mask);
}

std::size_t BinaryMatrix::count_ones(std::size_t col) const {
  std::size_t total = 0;
  for (auto w : column(col)) total += static_cast<std::size_t>(std::popcount(w));
  return total;
}

BinaryMatrix binarize(const Matrix& values, const BinarizationModel& model) {
  if (static_cast<std::size_t>(values.cols()) != model.dims())
    throw std::invalid_argument("binarize: matrix has " + std::to_string(values.cols()) +
                                " columns, model has " + std::to_string(model.dims()));
  const auto n = static_cast<std::size_t>(values.rows());
  BinaryMatrix bits(n, model.dims());
  for (std::size_t j = 0; j < model.dims(); ++j) {
    if (model.degenerate[j]) continue;
    auto words = bits.column(j);
    const double tau = model.thresholds[j];
    for (std::size_t i = 0; i < n; ++i) {
      if (values(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) > tau)
        words[i / 64] |= std::uint64_t{1} << (i % 64);
    }
  }
  return bits;
}

void write_thresholds(const std::filesystem::path& path, const BinarizationModel& model,
                      std::span<const std::string> feature_names) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write '" + path.string() + "'");
  out << "feature\tthreshold\n";
  for (std::size_t j = 0; j < model.dims(); ++j) {
    out << (j < feature_names.size() ? feature_names[j] : std::to_string(j)) << '\t'
        << (model.degenerate[j] ? std::string("DEGENERATE") : format_double(model.thresholds[j]))
        << '\n';
  }
}

}  // namespace birdnet
