#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Core>

namespace birdnet {

using Matrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Vector = Eigen::VectorXd;

class DataError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Real-valued n x d feature matrix with k-class labels.
struct LabeledDataset {
  Matrix values;
  std::vector<std::string> feature_names;
  std::vector<std::string> sample_ids;
  std::vector<int> labels;
  std::vector<std::string> class_names;

  std::size_t rows() const { return static_cast<std::size_t>(values.rows()); }
  std::size_t cols() const { return static_cast<std::size_t>(values.cols()); }
  std::size_t num_classes() const { return class_names.size(); }

  // Throws DataError when any invariant is broken.
  void validate() const;

  LabeledDataset select_rows(std::span<const std::size_t> rows) const;
  LabeledDataset select_columns(std::span<const std::size_t> cols) const;
  int class_index(const std::string& name) const;
};

struct CsvOptions {
  std::string label_column;
  // Column used as sample id; empty means row numbers are used.
  std::string id_column;
  // Columns ignored entirely (e.g. free-text metadata).
  std::vector<std::string> ignore_columns;
  // When set, rows with an empty/NA/non-finite feature cell are dropped and
  // counted instead of raising.
  bool drop_incomplete_rows = false;
};

struct CsvLoadReport {
  std::size_t rows_read = 0;
  std::size_t rows_rejected = 0;
};

LabeledDataset load_csv(const std::filesystem::path& path, const CsvOptions& options,
                        CsvLoadReport* report = nullptr);
LabeledDataset load_csv(const std::filesystem::path& path, const std::string& label_column);

// Affine per-feature map (x - mean) / stddev, population stddev.
struct Standardizer {
  std::vector<double> means;
  std::vector<double> stddevs;
  std::vector<bool> constant;

  Matrix apply(const Matrix& rows) const;
  std::size_t dims() const { return means.size(); }
};

Standardizer fit_standardizer(const Matrix& training_rows);

struct FoldPlan {
  std::vector<int> fold_of_sample;
  // val_mask[f][i] is true when sample i is held out for early stopping while
  // fold f is the test fold. Always false for samples of fold f itself.
  std::vector<std::vector<bool>> val_mask;
  std::uint64_t seed = 0;
  int folds = 0;

  std::vector<std::size_t> test_indices(int fold) const;
  std::vector<std::size_t> train_indices(int fold) const;  // includes validation rows
  std::vector<std::size_t> fit_indices(int fold) const;    // train minus validation
  std::vector<std::size_t> val_indices(int fold) const;
};

FoldPlan stratified_kfold(std::span<const int> labels, int folds, std::uint64_t seed,
                          double val_fraction = 0.15);

// Stratified subset of `pool` with round(fraction * |pool|) members, apportioned
// across classes by largest remainder. Returns the chosen indices, ascending.
std::vector<std::size_t> stratified_subset(std::span<const std::size_t> pool,
                                           std::span<const int> labels, double fraction,
                                           std::uint64_t seed);

struct HoldoutSplit {
  std::vector<std::size_t> train;
  std::vector<std::size_t> test;
};

HoldoutSplit stratified_holdout(std::span<const int> labels, double test_fraction,
                                std::uint64_t seed);

// One-way ANOVA F statistic per feature; +inf when within-class variance is zero
// and between-class variance is not, 0 when both vanish.
std::vector<double> anova_f_scores(const Matrix& values, std::span<const int> labels);

// Indices of the m features with the largest F, ties to the lower index.
std::vector<std::size_t> anova_f_select(const Matrix& values, std::span<const int> labels,
                                        std::size_t m);

void write_index_list(const std::filesystem::path& path, std::span<const std::size_t> indices);
std::vector<std::size_t> read_index_list(const std::filesystem::path& path);
void write_fold_plan(const std::filesystem::path& path, const FoldPlan& plan);

}  // namespace birdnet
