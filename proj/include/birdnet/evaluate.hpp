#pragma once
// Metrics and the end-to-end evaluation harness: stratified k-fold
// cross-validation of BIRDNet (optionally alongside its dense MatchedMLP
// counterpart) and the single 80/20 hold-out run used for rule extraction.

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "birdnet/builder.hpp"
#include "birdnet/dataset.hpp"
#include "birdnet/explain.hpp"
#include "birdnet/model_io.hpp"
#include "birdnet/trainer.hpp"

namespace birdnet {

// Rank AUROC of `scores` for positives vs the rest, ties at midrank.
// Returns NaN when either side is empty.
double auroc_binary(std::span<const double> scores, std::span<const bool> positive);

struct AurocReport {
  double macro = 0.0;
  std::vector<double> per_class;   // NaN for skipped classes
  std::vector<int> skipped_classes;
};

// One-vs-rest AUROC per score column, macro-averaged over the classes that have
// both positives and negatives. Throws when no class is evaluable.
AurocReport auroc_macro_ovr(const Matrix& scores, std::span<const int> labels);

// Argmax accuracy; ties go to the lowest class index.
double accuracy(const Matrix& scores, std::span<const int> labels);

struct CvConfig {
  int folds = 5;
  std::uint64_t seed = 42;
  double val_fraction = 0.15;
  // F-test preselection to this many features when d exceeds it; 0 disables.
  std::size_t preselect = 2000;
  BuildConfig build;
  TrainConfig train;
  bool run_matched = false;
  // When non-empty, fold models, histories and metric tables are written here.
  std::filesystem::path output_dir;
};

struct ModelMetrics {
  double auroc = 0.0;
  double accuracy = 0.0;
  std::vector<int> skipped_classes;
  ParamAccounting accounting;
  std::size_t best_epoch = 0;
  std::size_t epochs_run = 0;
};

struct FoldResult {
  int fold = 0;
  std::size_t train_rows = 0;  // rows used for fitting (validation excluded)
  std::size_t val_rows = 0;
  std::size_t test_rows = 0;
  std::size_t features = 0;    // after preselection
  ConstructionReport construction;
  ModelMetrics birdnet;
  std::optional<ModelMetrics> matched;
};

struct MeanStd {
  double mean = 0.0;
  double std = 0.0;  // population
};

MeanStd mean_std(std::span<const double> values);

struct CvResult {
  std::vector<FoldResult> folds;
  MeanStd auroc;
  MeanStd accuracy;
  std::optional<MeanStd> matched_auroc;
  std::optional<MeanStd> matched_accuracy;
  double mean_width = 0.0;
  double mean_bir_active = 0.0;
  double mean_total_active = 0.0;
  double mean_matched_total = 0.0;  // from matched_param_count, even without a matched run
  double ratio = 0.0;               // mean_matched_total / mean_total_active
};

// Fits the full per-fold pipeline and returns the trained bundle plus metrics
// on the test rows. Exposed for the CLI and for tests.
struct FoldArtifacts {
  FoldResult result;
  ModelBundle model;
  std::optional<ModelBundle> matched_model;
  TrainHistory history;
};

FoldArtifacts run_fold(const LabeledDataset& data, const FoldPlan& plan, int fold, const CvConfig& cfg);

CvResult cross_validate(const LabeledDataset& data, const CvConfig& cfg);

void write_fold_metrics_csv(const CvResult& result, const std::filesystem::path& path);
void write_summary_csv(const CvResult& result, const std::filesystem::path& path);
// Two human-readable tables: metrics (mean ± std) and parameter accounting.
std::string summary_table(const CvResult& result, const std::string& dataset_name);

// Preprocessing fitted on `rows` of `data`: optional F-test preselection, then
// standardization of the kept columns.
Preprocessor fit_preprocessor(const LabeledDataset& data, std::span<const std::size_t> rows,
                              std::size_t preselect);

// Preprocesses and builds on all of `train_rows`, then trains on train_rows
// minus `val_rows` with `val_rows` driving early stopping.
struct TrainedModel {
  ModelBundle model;
  BirNetwork untrained;  // network as constructed, before training
  ConstructionReport construction;
  TrainHistory history;
};

TrainedModel fit_model(const LabeledDataset& data, std::span<const std::size_t> train_rows,
                       std::span<const std::size_t> val_rows, const CvConfig& cfg, std::uint64_t seed);

struct RuleReport {
  HoldoutSplit split;
  TrainedModel trained;
  std::vector<RuleRecord> rules;
  double test_auroc = 0.0;
  double test_accuracy = 0.0;
};

// Single stratified split; the model is fitted on the training part and rules
// are measured only on the held-out part.
RuleReport holdout_rules_run(const LabeledDataset& data, const CvConfig& cfg, double test_fraction = 0.2,
                             std::size_t min_support = kDefaultMinSupport);

}  // namespace birdnet
