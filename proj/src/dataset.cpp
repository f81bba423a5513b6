#include "birdnet/dataset.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <limits>
#include <map>
#include <numeric>
#include <sstream>

#include "birdnet/rng.hpp"

namespace birdnet {

namespace {

std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
  return s;
}

std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> cells;
  std::string_view rest(line);
  while (true) {
    const auto comma = rest.find(',');
    cells.emplace_back(trim(rest.substr(0, comma)));
    if (comma == std::string_view::npos) break;
    rest.remove_prefix(comma + 1);
  }
  return cells;
}

bool parse_double(std::string_view cell, double& out) {
  if (cell.empty()) return false;
  if (cell.front() == '+') cell.remove_prefix(1);
  const auto* end = cell.data() + cell.size();
  const auto [ptr, ec] = std::from_chars(cell.data(), end, out);
  return ec == std::errc() && ptr == end;
}

bool all_equal(const auto& column) {
  const double first = column(0);
  for (Eigen::Index i = 1; i < column.size(); ++i)
    if (column(i) != first) return false;
  return true;
}

}  // namespace

void LabeledDataset::validate() const {
  const auto n = rows();
  const auto d = cols();
  if (n < 2) throw DataError("dataset needs at least 2 rows, got " + std::to_string(n));
  if (d < 2) throw DataError("dataset needs at least 2 features, got " + std::to_string(d));
  if (feature_names.size() != d) throw DataError("feature name count does not match columns");
  if (sample_ids.size() != n || labels.size() != n)
    throw DataError("sample id / label count does not match rows");
  for (int label : labels)
    if (label < 0 || static_cast<std::size_t>(label) >= class_names.size())
      throw DataError("label index out of range: " + std::to_string(label));
  if (!values.allFinite()) throw DataError("dataset contains non-finite values");
}

LabeledDataset LabeledDataset::select_rows(std::span<const std::size_t> rows) const {
  LabeledDataset out;
  out.values.resize(static_cast<Eigen::Index>(rows.size()), values.cols());
  out.feature_names = feature_names;
  out.class_names = class_names;
  for (std::size_t r = 0; r < rows.size(); ++r) {
    out.values.row(static_cast<Eigen::Index>(r)) = values.row(static_cast<Eigen::Index>(rows[r]));
    out.sample_ids.push_back(sample_ids[rows[r]]);
    out.labels.push_back(labels[rows[r]]);
  }
  return out;
}

LabeledDataset LabeledDataset::select_columns(std::span<const std::size_t> cols) const {
  LabeledDataset out;
  out.values.resize(values.rows(), static_cast<Eigen::Index>(cols.size()));
  for (std::size_t c = 0; c < cols.size(); ++c) {
    if (cols[c] >= this->cols()) throw DataError("column index out of range");
    out.values.col(static_cast<Eigen::Index>(c)) = values.col(static_cast<Eigen::Index>(cols[c]));
    out.feature_names.push_back(feature_names[cols[c]]);
  }
  out.sample_ids = sample_ids;
  out.labels = labels;
  out.class_names = class_names;
  return out;
}

int LabeledDataset::class_index(const std::string& name) const {
  const auto it = std::find(class_names.begin(), class_names.end(), name);
  if (it == class_names.end()) throw DataError("unknown class '" + name + "'");
  return static_cast<int>(it - class_names.begin());
}

LabeledDataset load_csv(const std::filesystem::path& path, const CsvOptions& options,
                        CsvLoadReport* report) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open CSV file '" + path.string() + "'");

  std::string line;
  if (!std::getline(in, line)) throw DataError("CSV file '" + path.string() + "' is empty");
  if (line.size() >= 3 && line.compare(0, 3, "\xEF\xBB\xBF") == 0) line.erase(0, 3);
  const auto header = split_csv_line(line);

  std::ptrdiff_t label_col = -1;
  std::ptrdiff_t id_col = -1;
  std::vector<std::size_t> feature_cols;
  for (std::size_t c = 0; c < header.size(); ++c) {
    if (header[c] == options.label_column) {
      label_col = static_cast<std::ptrdiff_t>(c);
    } else if (!options.id_column.empty() && header[c] == options.id_column) {
      id_col = static_cast<std::ptrdiff_t>(c);
    } else if (std::find(options.ignore_columns.begin(), options.ignore_columns.end(),
                         header[c]) == options.ignore_columns.end()) {
      feature_cols.push_back(c);
    }
  }
  if (label_col < 0)
    throw DataError("label column '" + options.label_column + "' not found in header");
  if (!options.id_column.empty() && id_col < 0)
    throw DataError("id column '" + options.id_column + "' not found in header");

  LabeledDataset ds;
  for (auto c : feature_cols) ds.feature_names.push_back(header[c]);
  std::map<std::string, int> class_lookup;
  std::vector<double> flat;
  CsvLoadReport local;

  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (trim(line).empty()) continue;
    ++local.rows_read;
    const auto cells = split_csv_line(line);
    if (cells.size() != header.size())
      throw DataError("row " + std::to_string(line_no) + ": expected " +
                      std::to_string(header.size()) + " cells, found " +
                      std::to_string(cells.size()));
    const auto& label = cells[static_cast<std::size_t>(label_col)];
    if (label.empty() || label == "NA" || label == "NaN")
      throw DataError("row " + std::to_string(line_no) + ": missing label in column '" +
                      options.label_column + "'");

    std::vector<double> row;
    row.reserve(feature_cols.size());
    bool incomplete = false;
    for (auto c : feature_cols) {
      double v = 0.0;
      if (!parse_double(cells[c], v) || !std::isfinite(v)) {
        if (!options.drop_incomplete_rows)
          throw DataError("row " + std::to_string(line_no) + ", column '" + header[c] +
                          "': non-numeric or non-finite value '" + cells[c] + "'");
        incomplete = true;
        break;
      }
      row.push_back(v);
    }
    if (incomplete) {
      ++local.rows_rejected;
      continue;
    }

    auto [it, inserted] = class_lookup.try_emplace(label, static_cast<int>(ds.class_names.size()));
    if (inserted) ds.class_names.push_back(label);
    ds.labels.push_back(it->second);
    ds.sample_ids.push_back(id_col >= 0 ? cells[static_cast<std::size_t>(id_col)]
                                        : std::to_string(ds.sample_ids.size()));
    flat.insert(flat.end(), row.begin(), row.end());
  }

  const auto n = static_cast<Eigen::Index>(ds.labels.size());
  const auto d = static_cast<Eigen::Index>(feature_cols.size());
  ds.values = Eigen::Map<const Matrix>(flat.data(), n, d);
  if (report) *report = local;
  ds.validate();
  return ds;
}

LabeledDataset load_csv(const std::filesystem::path& path, const std::string& label_column) {
  CsvOptions options;
  options.label_column = label_column;
  return load_csv(path, options);
}

Matrix Standardizer::apply(const Matrix& rows) const {
  if (static_cast<std::size_t>(rows.cols()) != dims())
    throw DataError("standardizer fitted on " + std::to_string(dims()) + " features, got " +
                    std::to_string(rows.cols()));
  Matrix out(rows.rows(), rows.cols());
  for (Eigen::Index j = 0; j < rows.cols(); ++j) {
    const auto ju = static_cast<std::size_t>(j);
    if (constant[ju]) {
      out.col(j).setZero();
    } else {
      out.col(j) = (rows.col(j).array() - means[ju]) / stddevs[ju];
    }
  }
  return out;
}

Standardizer fit_standardizer(const Matrix& training_rows) {
  if (training_rows.rows() < 2) throw DataError("standardizer needs at least 2 training rows");
  Standardizer s;
  const double n = static_cast<double>(training_rows.rows());
  for (Eigen::Index j = 0; j < training_rows.cols(); ++j) {
    const auto col = training_rows.col(j);
    const double mean = col.sum() / n;
    const bool constant = all_equal(col);
    const double var = constant ? 0.0 : (col.array() - mean).square().sum() / n;
    s.means.push_back(mean);
    s.stddevs.push_back(constant || var <= 0.0 ? 1.0 : std::sqrt(var));
    s.constant.push_back(constant || var <= 0.0);
  }
  return s;
}

std::vector<std::size_t> FoldPlan::test_indices(int fold) const {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < fold_of_sample.size(); ++i)
    if (fold_of_sample[i] == fold) out.push_back(i);
  return out;
}

std::vector<std::size_t> FoldPlan::train_indices(int fold) const {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < fold_of_sample.size(); ++i)
    if (fold_of_sample[i] != fold) out.push_back(i);
  return out;
}

std::vector<std::size_t> FoldPlan::fit_indices(int fold) const {
  std::vector<std::size_t> out;
  const auto& mask = val_mask.at(static_cast<std::size_t>(fold));
  for (std::size_t i = 0; i < fold_of_sample.size(); ++i)
    if (fold_of_sample[i] != fold && !mask[i]) out.push_back(i);
  return out;
}

std::vector<std::size_t> FoldPlan::val_indices(int fold) const {
  std::vector<std::size_t> out;
  const auto& mask = val_mask.at(static_cast<std::size_t>(fold));
  for (std::size_t i = 0; i < fold_of_sample.size(); ++i)
    if (mask[i]) out.push_back(i);
  return out;
}

namespace {

std::vector<std::vector<std::size_t>> group_by_class(std::span<const std::size_t> pool,
                                                     std::span<const int> labels) {
  int k = 0;
  for (auto i : pool) k = std::max(k, labels[i] + 1);
  std::vector<std::vector<std::size_t>> groups(static_cast<std::size_t>(k));
  for (auto i : pool) groups[static_cast<std::size_t>(labels[i])].push_back(i);
  return groups;
}

std::vector<std::size_t> stratified_subset_with(std::span<const std::size_t> pool,
                                                std::span<const int> labels, double fraction,
                                                Rng& rng) {
  auto groups = group_by_class(pool, labels);
  const auto target = static_cast<std::size_t>(std::llround(fraction * static_cast<double>(pool.size())));

  std::vector<std::size_t> quota(groups.size());
  std::vector<std::pair<double, std::size_t>> remainders;
  std::size_t assigned = 0;
  for (std::size_t c = 0; c < groups.size(); ++c) {
    const double exact = fraction * static_cast<double>(groups[c].size());
    quota[c] = static_cast<std::size_t>(std::floor(exact));
    assigned += quota[c];
    if (!groups[c].empty()) remainders.emplace_back(exact - std::floor(exact), c);
  }
  std::stable_sort(remainders.begin(), remainders.end(),
                   [](const auto& a, const auto& b) { return a.first > b.first; });
  for (std::size_t r = 0; assigned < target && r < remainders.size(); ++r) {
    const auto c = remainders[r].second;
    if (quota[c] < groups[c].size()) {
      ++quota[c];
      ++assigned;
    }
  }

  std::vector<std::size_t> chosen;
  for (std::size_t c = 0; c < groups.size(); ++c) {
    rng.shuffle(std::span(groups[c]));
    chosen.insert(chosen.end(), groups[c].begin(),
                  groups[c].begin() + static_cast<std::ptrdiff_t>(quota[c]));
  }
  std::sort(chosen.begin(), chosen.end());
  return chosen;
}

}  // namespace

FoldPlan stratified_kfold(std::span<const int> labels, int folds, std::uint64_t seed,
                          double val_fraction) {
  if (folds < 2) throw DataError("stratified_kfold needs at least 2 folds");
  const auto n = labels.size();
  std::vector<std::size_t> all(n);
  std::iota(all.begin(), all.end(), 0);
  auto groups = group_by_class(all, labels);
  for (std::size_t c = 0; c < groups.size(); ++c) {
    if (!groups[c].empty() && groups[c].size() < static_cast<std::size_t>(folds))
      throw DataError("class " + std::to_string(c) + " has " + std::to_string(groups[c].size()) +
                      " samples, fewer than the " + std::to_string(folds) + " folds requested");
  }

  Rng rng(seed);
  FoldPlan plan;
  plan.seed = seed;
  plan.folds = folds;
  plan.fold_of_sample.assign(n, -1);
  std::size_t offset = 0;
  for (auto& group : groups) {
    rng.shuffle(std::span(group));
    for (std::size_t pos = 0; pos < group.size(); ++pos)
      plan.fold_of_sample[group[pos]] = static_cast<int>((offset + pos) % static_cast<std::size_t>(folds));
    offset += group.size();
  }

  plan.val_mask.assign(static_cast<std::size_t>(folds), std::vector<bool>(n, false));
  for (int f = 0; f < folds; ++f) {
    const auto pool = plan.train_indices(f);
    for (auto i : stratified_subset_with(pool, labels, val_fraction, rng))
      plan.val_mask[static_cast<std::size_t>(f)][i] = true;
  }
  return plan;
}

std::vector<std::size_t> stratified_subset(std::span<const std::size_t> pool,
                                           std::span<const int> labels, double fraction,
                                           std::uint64_t seed) {
  Rng rng(seed);
  return stratified_subset_with(pool, labels, fraction, rng);
}

HoldoutSplit stratified_holdout(std::span<const int> labels, double test_fraction,
                                std::uint64_t seed) {
  if (!(test_fraction > 0.0 && test_fraction < 1.0))
    throw DataError("holdout fraction must lie in (0, 1)");
  std::vector<std::size_t> all(labels.size());
  std::iota(all.begin(), all.end(), 0);
  HoldoutSplit split;
  split.test = stratified_subset(all, labels, test_fraction, seed);
  std::vector<bool> is_test(labels.size(), false);
  for (auto i : split.test) is_test[i] = true;
  for (auto i : all)
    if (!is_test[i]) split.train.push_back(i);
  return split;
}

std::vector<double> anova_f_scores(const Matrix& values, std::span<const int> labels) {
  if (static_cast<std::size_t>(values.rows()) != labels.size())
    throw DataError("anova: label count does not match rows");
  int k_max = 0;
  for (int l : labels) k_max = std::max(k_max, l + 1);
  std::vector<double> counts(static_cast<std::size_t>(k_max), 0.0);
  for (int l : labels) counts[static_cast<std::size_t>(l)] += 1.0;
  const auto present = std::count_if(counts.begin(), counts.end(), [](double c) { return c > 0; });
  if (present < 2) throw DataError("anova F-test needs at least 2 classes in the training rows");

  const double n = static_cast<double>(labels.size());
  const double k = static_cast<double>(present);
  std::vector<double> scores;
  scores.reserve(static_cast<std::size_t>(values.cols()));
  std::vector<double> class_mean(counts.size());
  for (Eigen::Index j = 0; j < values.cols(); ++j) {
    const auto col = values.col(j);
    if (all_equal(col)) {
      scores.push_back(0.0);
      continue;
    }
    std::fill(class_mean.begin(), class_mean.end(), 0.0);
    for (Eigen::Index i = 0; i < col.size(); ++i)
      class_mean[static_cast<std::size_t>(labels[static_cast<std::size_t>(i)])] += col(i);
    const double grand = col.sum() / n;
    double between = 0.0;
    for (std::size_t c = 0; c < counts.size(); ++c) {
      if (counts[c] == 0.0) continue;
      class_mean[c] /= counts[c];
      between += counts[c] * (class_mean[c] - grand) * (class_mean[c] - grand);
    }
    double within = 0.0;
    for (Eigen::Index i = 0; i < col.size(); ++i) {
      const double dev = col(i) - class_mean[static_cast<std::size_t>(labels[static_cast<std::size_t>(i)])];
      within += dev * dev;
    }
    if (between == 0.0) {
      scores.push_back(0.0);
    } else if (within == 0.0 || n <= k) {
      scores.push_back(std::numeric_limits<double>::infinity());
    } else {
      scores.push_back((between / (k - 1.0)) / (within / (n - k)));
    }
  }
  return scores;
}

std::vector<std::size_t> anova_f_select(const Matrix& values, std::span<const int> labels,
                                        std::size_t m) {
  if (m > static_cast<std::size_t>(values.cols()))
    throw DataError("anova_f_select: requested " + std::to_string(m) + " of " +
                    std::to_string(values.cols()) + " features");
  const auto scores = anova_f_scores(values, labels);
  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });
  order.resize(m);
  return order;
}

void write_index_list(const std::filesystem::path& path, std::span<const std::size_t> indices) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write '" + path.string() + "'");
  for (auto i : indices) out << i << '\n';
}

std::vector<std::size_t> read_index_list(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot read '" + path.string() + "'");
  std::vector<std::size_t> out;
  std::size_t v = 0;
  while (in >> v) out.push_back(v);
  return out;
}

void write_fold_plan(const std::filesystem::path& path, const FoldPlan& plan) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write '" + path.string() + "'");
  out << "# sample\tfold\tvalidation_in_folds  seed=" << plan.seed << " folds=" << plan.folds << '\n';
  for (std::size_t i = 0; i < plan.fold_of_sample.size(); ++i) {
    out << i << '\t' << plan.fold_of_sample[i] << '\t';
    bool first = true;
    for (std::size_t f = 0; f < plan.val_mask.size(); ++f) {
      if (!plan.val_mask[f][i]) continue;
      out << (first ? "" : ",") << f;
      first = false;
    }
    if (first) out << '-';
    out << '\n';
  }
}

}  // namespace birdnet
