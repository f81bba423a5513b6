#include "birdnet/evaluate.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <memory>
#include <numeric>
#include <sstream>
#include <stdexcept>

#include "birdnet/text_io.hpp"

namespace birdnet {

double auroc_binary(std::span<const double> scores, std::span<const bool> positive) {
  if (scores.size() != positive.size()) throw std::invalid_argument("auroc: size mismatch");
  const std::size_t n = scores.size();
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](auto a, auto b) { return scores[a] < scores[b]; });

  double positive_rank_sum = 0.0;
  std::size_t n_pos = 0;
  for (std::size_t i = 0; i < n;) {
    std::size_t j = i;
    while (j < n && scores[order[j]] == scores[order[i]]) ++j;
    const double midrank = (static_cast<double>(i + 1) + static_cast<double>(j)) / 2.0;
    for (std::size_t t = i; t < j; ++t)
      if (positive[order[t]]) {
        positive_rank_sum += midrank;
        ++n_pos;
      }
    i = j;
  }
  const std::size_t n_neg = n - n_pos;
  if (n_pos == 0 || n_neg == 0) return std::numeric_limits<double>::quiet_NaN();
  const double p = static_cast<double>(n_pos);
  return (positive_rank_sum - p * (p + 1.0) / 2.0) / (p * static_cast<double>(n_neg));
}

AurocReport auroc_macro_ovr(const Matrix& scores, std::span<const int> labels) {
  if (static_cast<std::size_t>(scores.rows()) != labels.size())
    throw std::invalid_argument("auroc: label count does not match score rows");
  AurocReport report;
  std::vector<double> column(labels.size());
  std::unique_ptr<bool[]> positive(new bool[labels.size()]);
  double total = 0.0;
  std::size_t evaluated = 0;
  for (Eigen::Index c = 0; c < scores.cols(); ++c) {
    for (std::size_t r = 0; r < labels.size(); ++r) {
      column[r] = scores(static_cast<Eigen::Index>(r), c);
      positive[r] = labels[r] == c;
    }
    const double a = auroc_binary(column, std::span<const bool>(positive.get(), labels.size()));
    report.per_class.push_back(a);
    if (std::isnan(a)) {
      report.skipped_classes.push_back(static_cast<int>(c));
    } else {
      total += a;
      ++evaluated;
    }
  }
  if (evaluated == 0) throw std::invalid_argument("auroc: no class has both positives and negatives");
  report.macro = total / static_cast<double>(evaluated);
  return report;
}

double accuracy(const Matrix& scores, std::span<const int> labels) {
  if (static_cast<std::size_t>(scores.rows()) != labels.size())
    throw std::invalid_argument("accuracy: label count does not match score rows");
  if (labels.empty()) return 0.0;
  std::size_t correct = 0;
  for (Eigen::Index r = 0; r < scores.rows(); ++r) {
    Eigen::Index best = 0;
    for (Eigen::Index c = 1; c < scores.cols(); ++c)
      if (scores(r, c) > scores(r, best)) best = c;
    correct += best == labels[static_cast<std::size_t>(r)] ? 1 : 0;
  }
  return static_cast<double>(correct) / static_cast<double>(labels.size());
}

MeanStd mean_std(std::span<const double> values) {
  MeanStd out;
  if (values.empty()) return out;
  const double n = static_cast<double>(values.size());
  out.mean = std::accumulate(values.begin(), values.end(), 0.0) / n;
  double ss = 0.0;
  for (double v : values) ss += (v - out.mean) * (v - out.mean);
  out.std = std::sqrt(ss / n);
  return out;
}

Preprocessor fit_preprocessor(const LabeledDataset& data, std::span<const std::size_t> rows,
                              std::size_t preselect) {
  const auto subset = data.select_rows(rows);
  std::vector<std::size_t> kept(data.cols());
  std::iota(kept.begin(), kept.end(), 0);
  if (preselect > 0 && data.cols() > preselect) {
    kept = anova_f_select(subset.values, subset.labels, preselect);
    std::sort(kept.begin(), kept.end());
  }
  Preprocessor prep;
  for (auto c : kept) prep.selected_features.push_back(data.feature_names[c]);
  prep.standardizer = fit_standardizer(subset.select_columns(kept).values);
  return prep;
}

namespace {

std::vector<std::size_t> minus(std::span<const std::size_t> all, std::span<const std::size_t> removed) {
  std::vector<std::size_t> sorted(removed.begin(), removed.end());
  std::sort(sorted.begin(), sorted.end());
  std::vector<std::size_t> out;
  for (auto i : all)
    if (!std::binary_search(sorted.begin(), sorted.end(), i)) out.push_back(i);
  return out;
}

std::uint64_t train_seed(std::uint64_t seed) { return seed ^ 0x9e3779b97f4a7c15ULL; }

struct Split {
  Matrix features;
  std::vector<int> labels;
};

Split prepared(const LabeledDataset& data, const Preprocessor& prep, std::span<const std::size_t> rows) {
  const auto subset = data.select_rows(rows);
  return {prep.transform(subset), subset.labels};
}

ModelMetrics score(const BirNetwork& net, const Split& test, const TrainHistory& history) {
  const Matrix logits = predict_logits(net, test.features);
  const auto roc = auroc_macro_ovr(logits, test.labels);
  ModelMetrics m;
  m.auroc = roc.macro;
  m.skipped_classes = roc.skipped_classes;
  m.accuracy = accuracy(logits, test.labels);
  m.accounting = active_param_count(net);
  m.best_epoch = history.best_epoch;
  m.epochs_run = history.epochs.size();
  return m;
}

}  // namespace

TrainedModel fit_model(const LabeledDataset& data, std::span<const std::size_t> train_rows,
                       std::span<const std::size_t> val_rows, const CvConfig& cfg, std::uint64_t seed) {
  TrainedModel out;
  auto& bundle = out.model;
  bundle.class_names = data.class_names;
  bundle.preprocessor = fit_preprocessor(data, train_rows, cfg.preselect);

  const auto all = prepared(data, bundle.preprocessor, train_rows);
  BuildConfig build = cfg.build;
  build.seed = seed;
  auto built = build_birdnet(all.features, bundle.preprocessor.selected_features, data.num_classes(), build);
  out.construction = std::move(built.report);
  out.untrained = built.network;
  bundle.network = std::move(built.network);

  const auto fit_rows = minus(train_rows, val_rows);
  const auto fit = prepared(data, bundle.preprocessor, fit_rows);
  const auto val = prepared(data, bundle.preprocessor, val_rows);
  TrainConfig tc = cfg.train;
  tc.seed = train_seed(seed);
  out.history = train(bundle.network, {fit.features, fit.labels}, {val.features, val.labels}, tc);
  bundle.metadata["seed"] = std::to_string(seed);
  bundle.metadata["train_rows"] = std::to_string(fit_rows.size());
  bundle.metadata["val_rows"] = std::to_string(val_rows.size());
  bundle.metadata["best_epoch"] = std::to_string(out.history.best_epoch);
  return out;
}

FoldArtifacts run_fold(const LabeledDataset& data, const FoldPlan& plan, int fold, const CvConfig& cfg) {
  const auto train_rows = plan.train_indices(fold);
  const auto val_rows = plan.val_indices(fold);
  const auto test_rows = plan.test_indices(fold);
  const std::uint64_t seed = cfg.seed + static_cast<std::uint64_t>(fold);

  auto trained = fit_model(data, train_rows, val_rows, cfg, seed);
  trained.model.metadata["fold"] = std::to_string(fold);

  FoldArtifacts art;
  auto& r = art.result;
  r.fold = fold;
  r.train_rows = train_rows.size() - val_rows.size();
  r.val_rows = val_rows.size();
  r.test_rows = test_rows.size();
  r.features = trained.model.preprocessor.selected_features.size();
  r.construction = trained.construction;

  const auto test = prepared(data, trained.model.preprocessor, test_rows);
  r.birdnet = score(trained.model.network, test, trained.history);

  if (cfg.run_matched) {
    ModelBundle matched;
    matched.class_names = trained.model.class_names;
    matched.preprocessor = trained.model.preprocessor;
    matched.metadata = trained.model.metadata;
    matched.metadata["variant"] = "matched-mlp";
    matched.network = to_matched_mlp(trained.untrained, seed);
    const auto fit = prepared(data, matched.preprocessor, minus(train_rows, val_rows));
    const auto val = prepared(data, matched.preprocessor, val_rows);
    TrainConfig tc = cfg.train;
    tc.seed = train_seed(seed);
    const auto history = train(matched.network, {fit.features, fit.labels}, {val.features, val.labels}, tc);
    r.matched = score(matched.network, test, history);
    art.matched_model = std::move(matched);
  }
  art.history = std::move(trained.history);
  art.model = std::move(trained.model);
  return art;
}

CvResult cross_validate(const LabeledDataset& data, const CvConfig& cfg) {
  data.validate();
  const auto plan = stratified_kfold(data.labels, cfg.folds, cfg.seed, cfg.val_fraction);
  const auto& out_dir = cfg.output_dir;
  if (!out_dir.empty()) {
    std::filesystem::create_directories(out_dir / "models");
    write_fold_plan(out_dir / "folds.tsv", plan);
  }

  CvResult result;
  std::vector<double> aurocs, accs, m_aurocs, m_accs;
  for (int f = 0; f < cfg.folds; ++f) {
    auto art = run_fold(data, plan, f, cfg);
    const auto& r = art.result;
    aurocs.push_back(r.birdnet.auroc);
    accs.push_back(r.birdnet.accuracy);
    if (r.matched) {
      m_aurocs.push_back(r.matched->auroc);
      m_accs.push_back(r.matched->accuracy);
    }
    const auto& acc = r.birdnet.accounting;
    const auto matched_acc = matched_param_count(art.model.network);
    result.mean_width += static_cast<double>(acc.width);
    result.mean_bir_active += static_cast<double>(acc.bir_active);
    result.mean_total_active += static_cast<double>(acc.total_active);
    result.mean_matched_total += static_cast<double>(matched_acc.total_active);

    if (!out_dir.empty()) {
      const auto tag = "fold" + std::to_string(f);
      save_model(art.model, out_dir / "models" / (tag + ".json"));
      if (art.matched_model) save_model(*art.matched_model, out_dir / "models" / (tag + "_matched.json"));
      write_history_csv(art.history, out_dir / ("history_" + tag + ".csv"));
      std::ofstream(out_dir / ("construction_" + tag + ".tsv")) << r.construction.to_table();
    }
    result.folds.push_back(std::move(art.result));
  }
  const double folds = static_cast<double>(cfg.folds);
  result.mean_width /= folds;
  result.mean_bir_active /= folds;
  result.mean_total_active /= folds;
  result.mean_matched_total /= folds;
  result.ratio = result.mean_matched_total / result.mean_total_active;
  result.auroc = mean_std(aurocs);
  result.accuracy = mean_std(accs);
  if (!m_aurocs.empty()) {
    result.matched_auroc = mean_std(m_aurocs);
    result.matched_accuracy = mean_std(m_accs);
  }

  if (!out_dir.empty()) {
    write_fold_metrics_csv(result, out_dir / "fold_metrics.csv");
    write_summary_csv(result, out_dir / "summary.csv");
    std::ofstream(out_dir / "summary.txt") << summary_table(result, "dataset");
  }
  return result;
}

namespace {

std::string join_ints(const std::vector<int>& values) {
  std::string out;
  for (std::size_t i = 0; i < values.size(); ++i) out += (i ? ";" : "") + std::to_string(values[i]);
  return out;
}

void write_metrics_row(std::ostream& out, const FoldResult& r, const std::string& model, const ModelMetrics& m) {
  out << r.fold << ',' << model << ',' << format_double(m.auroc) << ',' << format_double(m.accuracy) << ','
      << r.train_rows << ',' << r.val_rows << ',' << r.test_rows << ',' << r.features << ','
      << m.accounting.width << ',' << m.accounting.bir_active << ',' << m.accounting.total_active << ','
      << m.best_epoch << ',' << m.epochs_run << ',' << join_ints(m.skipped_classes) << '\n';
}

std::string compact_count(double v) {
  if (v >= 1e6) return format_fixed(v / 1e6, 1) + "M";
  if (v >= 1e3) return format_fixed(v / 1e3, 1) + "k";
  return format_fixed(v, 0);
}

}  // namespace

void write_fold_metrics_csv(const CvResult& result, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write '" + path.string() + "'");
  out << "fold,model,auroc,accuracy,train_rows,val_rows,test_rows,features,width,bir_active,"
         "total_active,best_epoch,epochs_run,skipped_classes\n";
  for (const auto& r : result.folds) {
    write_metrics_row(out, r, "BIRDNet", r.birdnet);
    if (r.matched) write_metrics_row(out, r, "MatchedMLP", *r.matched);
  }
}

void write_summary_csv(const CvResult& result, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write '" + path.string() + "'");
  out << "model,auroc_mean,auroc_std,accuracy_mean,accuracy_std,width,bir_active,total_active,"
         "matched_total,ratio\n";
  out << "BIRDNet," << format_double(result.auroc.mean) << ',' << format_double(result.auroc.std) << ','
      << format_double(result.accuracy.mean) << ',' << format_double(result.accuracy.std) << ','
      << format_double(result.mean_width) << ',' << format_double(result.mean_bir_active) << ','
      << format_double(result.mean_total_active) << ',' << format_double(result.mean_matched_total) << ','
      << format_double(result.ratio) << '\n';
  if (result.matched_auroc)
    out << "MatchedMLP," << format_double(result.matched_auroc->mean) << ','
        << format_double(result.matched_auroc->std) << ',' << format_double(result.matched_accuracy->mean)
        << ',' << format_double(result.matched_accuracy->std) << ",,,"
        << format_double(result.mean_matched_total) << ",,\n";
}

std::string summary_table(const CvResult& result, const std::string& dataset_name) {
  auto pm = [](const MeanStd& v) { return format_fixed(v.mean, 3) + " ± " + format_fixed(v.std, 3); };
  std::ostringstream out;
  out << "Model        AUROC            Accuracy\n";
  out << "BIRDNet      " << pm(result.auroc) << "  " << pm(result.accuracy) << '\n';
  if (result.matched_auroc)
    out << "MatchedMLP   " << pm(*result.matched_auroc) << "  " << pm(*result.matched_accuracy) << '\n';
  out << '\n';
  out << "Dataset      Width    BIR act.  Total act.  MatchedMLP  Ratio\n";
  out << (dataset_name.empty() ? std::string("-") : dataset_name) << "      " << compact_count(result.mean_width)
      << "    " << compact_count(result.mean_bir_active) << "    " << compact_count(result.mean_total_active)
      << "    " << compact_count(result.mean_matched_total) << "    " << format_fixed(result.ratio, 1) << '\n';
  return out.str();
}

RuleReport holdout_rules_run(const LabeledDataset& data, const CvConfig& cfg, double test_fraction,
                             std::size_t min_support) {
  data.validate();
  RuleReport report;
  report.split = stratified_holdout(data.labels, test_fraction, cfg.seed);
  const auto val_rows = stratified_subset(report.split.train, data.labels, cfg.val_fraction, cfg.seed + 1);
  report.trained = fit_model(data, report.split.train, val_rows, cfg, cfg.seed);

  const auto& bundle = report.trained.model;
  const auto test = prepared(data, bundle.preprocessor, report.split.test);
  report.rules = extract_rules(bundle.network, test.features, test.labels, data.num_classes(), min_support);
  const Matrix logits = predict_logits(bundle.network, test.features);
  report.test_auroc = auroc_macro_ovr(logits, test.labels).macro;
  report.test_accuracy = accuracy(logits, test.labels);
  return report;
}

}  // namespace birdnet
