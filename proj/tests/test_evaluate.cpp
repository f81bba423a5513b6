#include <doctest.h>

#include <fstream>
#include <memory>
#include <numeric>
#include <sstream>

#include "birdnet/evaluate.hpp"
#include "support.hpp"

using namespace birdnet;
using namespace testing_support;

namespace {

// Pairwise oracle: P(score_pos > score_neg) + 0.5 P(tie).
double pairwise_auroc(std::span<const double> s, std::span<const bool> pos) {
  double wins = 0.0;
  double pairs = 0.0;
  for (std::size_t i = 0; i < s.size(); ++i)
    for (std::size_t j = 0; j < s.size(); ++j) {
      if (!pos[i] || pos[j]) continue;
      pairs += 1.0;
      wins += s[i] > s[j] ? 1.0 : (s[i] == s[j] ? 0.5 : 0.0);
    }
  return wins / pairs;
}

std::string slurp(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

CvConfig small_cv() {
  CvConfig cfg;
  cfg.folds = 3;
  cfg.train.epochs_max = 6;
  cfg.train.batch_size = 16;
  cfg.build.mining.h_max = 40;
  return cfg;
}

}  // namespace

TEST_CASE("AUROC worked examples") {
  const std::vector<double> s{0.1, 0.4, 0.35, 0.8};
  bool a[4] = {false, false, true, true};
  CHECK(auroc_binary(s, std::span<const bool>(a, 4)) == 0.75);
  bool b[4] = {false, true, false, true};
  CHECK(auroc_binary(s, std::span<const bool>(b, 4)) == 1.0);
  bool none[4] = {false, false, false, false};
  CHECK(std::isnan(auroc_binary(s, std::span<const bool>(none, 4))));
  const std::vector<double> tied{0.5, 0.5};
  bool t[2] = {true, false};
  CHECK(auroc_binary(tied, std::span<const bool>(t, 2)) == 0.5);
}

TEST_CASE("property: rank AUROC equals the pairwise oracle and is monotone-invariant") {
  Rng rng(8);
  for (int trial = 0; trial < 300; ++trial) {
    const std::size_t n = 2 + rng.below(30);
    std::vector<double> s(n);
    std::unique_ptr<bool[]> pos(new bool[n]);
    bool any_pos = false, any_neg = false;
    for (std::size_t i = 0; i < n; ++i) {
      s[i] = static_cast<double>(rng.below(6)) + (trial % 2 ? rng.normal() : 0.0);
      pos[i] = rng.uniform() < 0.4;
      (pos[i] ? any_pos : any_neg) = true;
    }
    std::span<const bool> p(pos.get(), n);
    if (!any_pos || !any_neg) {
      CHECK(std::isnan(auroc_binary(s, p)));
      continue;
    }
    const double value = auroc_binary(s, p);
    CHECK(value == doctest::Approx(pairwise_auroc(s, p)).epsilon(1e-12));
    std::vector<double> mapped(s);
    for (auto& v : mapped) v = std::exp(0.3 * v) * 5.0 - 2.0;
    CHECK(auroc_binary(mapped, p) == doctest::Approx(value).epsilon(1e-12));
  }
}

TEST_CASE("macro AUROC skips classes without positives") {
  Matrix scores(4, 3);
  scores << 0.9, 0.1, 0.0, 0.2, 0.8, 0.0, 0.6, 0.4, 0.0, 0.3, 0.7, 0.0;
  const std::vector<int> y{0, 1, 0, 1};
  const auto r = auroc_macro_ovr(scores, y);
  CHECK(r.skipped_classes == std::vector<int>{2});
  CHECK(r.macro == 1.0);
  CHECK(std::isnan(r.per_class[2]));
  const std::vector<int> one_class{0, 0, 0, 0};
  CHECK_THROWS(auroc_macro_ovr(scores, one_class));
}

TEST_CASE("accuracy with lowest-index tie breaking") {
  Matrix scores(3, 2);
  scores << 0.5, 0.5, 0.2, 0.8, 0.9, 0.1;
  CHECK(accuracy(scores, std::vector<int>{0, 1, 0}) == 1.0);
  CHECK(accuracy(scores, std::vector<int>{1, 1, 1}) == doctest::Approx(1.0 / 3.0));
}

TEST_CASE("mean and population std") {
  const std::vector<double> v{1.0, 3.0};
  const auto m = mean_std(v);
  CHECK(m.mean == 2.0);
  CHECK(m.std == 1.0);
}

TEST_CASE("cross-validation end to end: shapes, accounting and determinism") {
  const auto data = latent_program_dataset(150, 30, 3, 5, 0.05, 21);
  auto cfg = small_cv();
  cfg.run_matched = true;
  cfg.output_dir = scratch_dir("cv_a");
  const auto a = cross_validate(data, cfg);
  REQUIRE(a.folds.size() == 3);
  for (const auto& f : a.folds) {
    CHECK(f.test_rows == 50);
    CHECK(f.train_rows + f.val_rows == 100);
    CHECK(f.birdnet.auroc > 0.5);
    REQUIRE(f.matched.has_value());
    CHECK(f.matched->accounting.bir_active > f.birdnet.accounting.bir_active);
  }
  CHECK(a.ratio > 1.0);
  CHECK(a.matched_auroc.has_value());
  for (const char* name : {"fold_metrics.csv", "summary.csv", "summary.txt", "folds.tsv", "models/fold0.json"})
    CHECK(std::filesystem::exists(cfg.output_dir / name));

  auto again = cfg;
  again.output_dir = scratch_dir("cv_b");
  const auto b = cross_validate(data, again);
  CHECK(a.auroc.mean == b.auroc.mean);
  for (const char* name : {"fold_metrics.csv", "summary.csv", "models/fold1.json", "models/fold1_matched.json"})
    CHECK(slurp(cfg.output_dir / name) == slurp(again.output_dir / name));
  CHECK(summary_table(a, "toy").find("toy") != std::string::npos);
}

TEST_CASE("preprocessing sees only training rows") {
  auto data = latent_program_dataset(120, 30, 3, 5, 0.05, 22);
  std::vector<std::size_t> rows(80);
  std::iota(rows.begin(), rows.end(), 0);
  const auto before = fit_preprocessor(data, rows, 10);
  CHECK(before.selected_features.size() == 10);
  for (Eigen::Index r = 80; r < 120; ++r) data.values.row(r).setConstant(42.0);
  const auto after = fit_preprocessor(data, rows, 10);
  CHECK(before.selected_features == after.selected_features);
  CHECK(before.standardizer.means == after.standardizer.means);
  CHECK(fit_preprocessor(data, rows, 0).selected_features.size() == 30);
}

TEST_CASE("hold-out rules run: rules measured on disjoint test rows") {
  const auto data = latent_program_dataset(200, 24, 2, 4, 0.02, 23);
  auto cfg = small_cv();
  const auto report = holdout_rules_run(data, cfg, 0.2, 5);
  CHECK(report.split.test.size() == 40);
  std::vector<bool> in_train(200, false);
  for (auto i : report.split.train) in_train[i] = true;
  for (auto i : report.split.test) CHECK_FALSE(in_train[i]);
  CHECK_FALSE(report.rules.empty());
  for (const auto& r : report.rules) CHECK(r.support <= 40);
  CHECK(report.test_auroc > 0.5);
}
