#include <doctest.h>

#include <fstream>
#include <numeric>

#include "birdnet/dataset.hpp"
#include "support.hpp"

using namespace birdnet;
using namespace testing_support;

namespace {

std::filesystem::path write_file(const std::string& name, const std::string& text) {
  const auto dir = scratch_dir("dataset");
  const auto path = dir / name;
  std::ofstream(path) << text;
  return path;
}

}  // namespace

TEST_CASE("load_csv factorizes labels by first appearance") {
  const auto path = write_file("tiny.csv", "x,y,label\n1,2,a\n3,4,b\n5,6,a\n");
  const auto data = load_csv(path, "label");
  CHECK(data.rows() == 3);
  CHECK(data.cols() == 2);
  CHECK(data.num_classes() == 2);
  CHECK(data.labels == std::vector<int>{0, 1, 0});
  CHECK(data.class_names == std::vector<std::string>{"a", "b"});
  CHECK(data.values(2, 1) == 6.0);
}

TEST_CASE("load_csv rejects NA cells and names the cell") {
  const auto path = write_file("na.csv", "x,y,label\n1,2,a\n3,NA,b\n");
  try {
    load_csv(path, "label");
    FAIL("expected DataError");
  } catch (const DataError& e) {
    const std::string what = e.what();
    CHECK(what.find("y") != std::string::npos);
    CHECK(what.find("3") != std::string::npos);
  }
}

TEST_CASE("load_csv can drop incomplete rows and ignore columns") {
  const auto path = write_file("drop.csv", "id,x,y,note,label\ns1,1,2,hi,a\ns2,3,,yo,b\ns3,5,6,ok,b\n");
  CsvOptions options{"label", "id", {"note"}, true};
  CsvLoadReport report;
  const auto data = load_csv(path, options, &report);
  CHECK(report.rows_read == 3);
  CHECK(report.rows_rejected == 1);
  CHECK(data.rows() == 2);
  CHECK(data.sample_ids == std::vector<std::string>{"s1", "s3"});
  CHECK(data.feature_names == std::vector<std::string>{"x", "y"});
}

TEST_CASE("load_csv errors on a missing label column") {
  const auto path = write_file("nolabel.csv", "x,y\n1,2\n");
  CHECK_THROWS_AS(load_csv(path, "label"), DataError);
}

TEST_CASE("stratified_kfold balances a 5+5 label vector perfectly") {
  const std::vector<int> labels{0, 0, 0, 0, 0, 1, 1, 1, 1, 1};
  const auto plan = stratified_kfold(labels, 5, 42);
  for (int f = 0; f < 5; ++f) {
    const auto test = plan.test_indices(f);
    REQUIRE(test.size() == 2);
    CHECK(labels[test[0]] + labels[test[1]] == 1);
  }
}

TEST_CASE("stratified_kfold rejects a class smaller than the fold count") {
  const std::vector<int> labels{0, 0, 0, 0, 0, 0, 1, 1, 1};
  CHECK_THROWS_AS(stratified_kfold(labels, 5, 1), DataError);
}

TEST_CASE("stratified_kfold on 1080 mice-shaped labels: sizes and stratification") {
  // Class sizes of the mice protein data set.
  const std::vector<int> sizes{150, 135, 150, 135, 135, 105, 135, 135};
  std::vector<int> labels;
  for (std::size_t c = 0; c < sizes.size(); ++c) labels.insert(labels.end(), sizes[c], static_cast<int>(c));
  Rng rng(5);
  rng.shuffle(std::span(labels));
  const auto plan = stratified_kfold(labels, 5, 42);
  std::vector<std::vector<int>> count(5, std::vector<int>(sizes.size(), 0));
  for (std::size_t i = 0; i < labels.size(); ++i) ++count[static_cast<std::size_t>(plan.fold_of_sample[i])][static_cast<std::size_t>(labels[i])];
  for (int f = 0; f < 5; ++f) {
    const int total = std::accumulate(count[f].begin(), count[f].end(), 0);
    CHECK(std::abs(total - 216) <= 1);
    for (std::size_t c = 0; c < sizes.size(); ++c)
      CHECK(std::abs(count[f][c] - sizes[c] / 5.0) <= 1.0);
  }
}

TEST_CASE("fold plan: validation rows are stratified, disjoint from test, deterministic") {
  const auto data = latent_program_dataset(200, 4, 4, 2, 0.0, 3);
  const auto a = stratified_kfold(data.labels, 5, 9);
  const auto b = stratified_kfold(data.labels, 5, 9);
  CHECK(a.fold_of_sample == b.fold_of_sample);
  CHECK(a.val_mask == b.val_mask);
  for (int f = 0; f < 5; ++f) {
    const auto val = a.val_indices(f);
    const auto fit = a.fit_indices(f);
    const auto train = a.train_indices(f);
    CHECK(val.size() + fit.size() == train.size());
    CHECK(val.size() == 24);  // round(0.15 * 160)
    for (auto i : val) CHECK(a.fold_of_sample[i] != f);
  }
}

TEST_CASE("stratified_holdout gives 864/216 for n=1080") {
  std::vector<int> labels(1080);
  for (std::size_t i = 0; i < labels.size(); ++i) labels[i] = static_cast<int>(i % 8);
  const auto split = stratified_holdout(labels, 0.2, 42);
  CHECK(split.train.size() == 864);
  CHECK(split.test.size() == 216);
}

TEST_CASE("standardizer: constant column and population stddev") {
  Matrix x(3, 2);
  x << 2, 0, 2, 10, 2, 5;
  const auto s = fit_standardizer(x.topRows(2));
  CHECK(s.constant[0]);
  CHECK_FALSE(s.constant[1]);
  CHECK(s.means[1] == 5.0);
  CHECK(s.stddevs[1] == 5.0);
  const Matrix y = s.apply(x.topRows(2));
  CHECK(y(0, 0) == 0.0);
  CHECK(y(1, 0) == 0.0);
  CHECK(y(0, 1) == -1.0);
  CHECK(y(1, 1) == 1.0);
}

TEST_CASE("standardizer and F-test ignore rows outside the training set") {
  auto data = latent_program_dataset(120, 10, 3, 5, 0.1, 4);
  std::vector<std::size_t> train(80);
  std::iota(train.begin(), train.end(), 0);
  const auto before_s = fit_standardizer(data.select_rows(train).values);
  const auto sub = data.select_rows(train);
  const auto before_f = anova_f_select(sub.values, sub.labels, 4);
  for (Eigen::Index r = 80; r < 120; ++r) data.values.row(r).setConstant(1e6);
  const auto after = data.select_rows(train);
  CHECK(fit_standardizer(after.values).means == before_s.means);
  CHECK(anova_f_select(after.values, after.labels, 4) == before_f);
}

TEST_CASE("anova F: constant ranks last, label indicator ranks first") {
  Matrix x(6, 3);
  x << 1, 0, 0.3, 1, 0, -0.2, 1, 0, 0.5, 1, 1, 0.1, 1, 1, -0.4, 1, 1, 0.2;
  const std::vector<int> y{0, 0, 0, 1, 1, 1};
  const auto f = anova_f_scores(x, y);
  CHECK(f[0] == 0.0);
  CHECK(std::isinf(f[1]));
  const auto order = anova_f_select(x, y, 3);
  CHECK(order.front() == 1);
  CHECK(order.back() == 0);
}

TEST_CASE("anova F matches the textbook formula and finds the label-correlated feature") {
  Rng rng(17);
  const std::size_t n = 90;
  Matrix x(n, 6);
  std::vector<int> y(n);
  for (std::size_t i = 0; i < n; ++i) {
    y[i] = static_cast<int>(i % 3);
    for (int j = 0; j < 5; ++j) x(static_cast<Eigen::Index>(i), j) = rng.normal();
    x(static_cast<Eigen::Index>(i), 5) = y[i] + 0.01 * rng.normal();
  }
  const auto f = anova_f_scores(x, y);
  for (int j = 0; j < 6; ++j) {
    double grand = x.col(j).mean();
    double ssb = 0, ssw = 0;
    for (int c = 0; c < 3; ++c) {
      double sum = 0;
      int cnt = 0;
      for (std::size_t i = 0; i < n; ++i)
        if (y[i] == c) sum += x(static_cast<Eigen::Index>(i), j), ++cnt;
      const double mean = sum / cnt;
      ssb += cnt * (mean - grand) * (mean - grand);
      for (std::size_t i = 0; i < n; ++i)
        if (y[i] == c) ssw += std::pow(x(static_cast<Eigen::Index>(i), j) - mean, 2);
    }
    const double expected = (ssb / 2.0) / (ssw / (n - 3.0));
    CHECK(f[static_cast<std::size_t>(j)] == doctest::Approx(expected).epsilon(1e-9));
  }
  CHECK(anova_f_select(x, y, 1) == std::vector<std::size_t>{5});
}

TEST_CASE("index lists round-trip") {
  const auto dir = scratch_dir("index");
  const std::vector<std::size_t> idx{3, 1, 4, 1, 5};
  write_index_list(dir / "i.txt", idx);
  CHECK(read_index_list(dir / "i.txt") == idx);
}
