// birdnet command-line front end.
//
//   birdnet mine    --data X.csv --label class --p-star 1e-6 --pi 0.05 --out run/
//   birdnet eval    --data X.csv --label class --cv 5 --seed 42 --out run/
//   birdnet explain --model run/model.json --data X.csv --label class --instance 17 --class c-CS-m
//
// Every option may also come from an INI file given with --config; flags on the
// command line take precedence. Each run writes manifest.ini with the effective
// configuration, which can be fed back through --config to repeat the run.

#include <CLI11.hpp>

#include <cstdlib>
#include <fstream>
#include <iostream>
#include <limits>
#include <numeric>
#include <string>
#include <vector>

#include "birdnet/binarize.hpp"
#include "birdnet/builder.hpp"
#include "birdnet/dataset.hpp"
#include "birdnet/evaluate.hpp"
#include "birdnet/explain.hpp"
#include "birdnet/mining.hpp"
#include "birdnet/model_io.hpp"
#include "birdnet/text_io.hpp"
#include "birdnet/trainer.hpp"

namespace fs = std::filesystem;
using namespace birdnet;

namespace {

struct Options {
  std::string data;
  std::string label = "class";
  std::string id_column;
  std::vector<std::string> ignore_columns;
  bool drop_incomplete = false;
  std::string out = "birdnet_out";
  std::string model;

  std::size_t preselect = 2000;
  double p_star = 1e-6;
  double pi = 0.05;
  std::size_t h_max = 5000;
  std::size_t mu = 10;
  std::size_t min_support = 5;
  std::size_t depth = 2;
  std::vector<std::size_t> head_width{32};
  double init_scale = 0.5;
  std::size_t threads = 1;

  TrainConfig train;
  std::uint64_t seed = 42;
  int cv = 5;
  double val_fraction = 0.15;
  double test_fraction = 0.2;
  bool matched = false;

  std::size_t rule_min_support = kDefaultMinSupport;
  std::string instance;
  std::string target_class;
  std::size_t layer = 0;
};

void add_options(CLI::App& app, Options& o) {
  app.add_option("--data", o.data, "Input CSV (rows = samples, one label column)")->group("Data");
  app.add_option("--label", o.label, "Name of the label column")->capture_default_str()->group("Data");
  app.add_option("--id-column,--id_column", o.id_column, "Column holding sample ids")->group("Data");
  app.add_option("--ignore,--ignore_columns", o.ignore_columns, "Columns to ignore")->group("Data");
  app.add_flag("--drop-incomplete,--drop_incomplete", o.drop_incomplete,
               "Drop rows with missing values instead of failing")->group("Data");
  app.add_option("--out,-o", o.out, "Output directory")->capture_default_str()->group("Data");
  app.add_option("--model", o.model, "Model file written by build/train/rules")->group("Data");
  app.add_option("--preselect", o.preselect, "F-test preselection size when d exceeds it (0 = off)")
      ->capture_default_str()->group("Preprocessing");

  app.add_option("--p-star,--p_star", o.p_star, "Binomial significance threshold")
      ->capture_default_str()->check(CLI::Range(0.0, 1.0))->group("Mining");
  app.add_option("--pi", o.pi, "Maximum exception fraction")
      ->capture_default_str()->check(CLI::Range(0.0, 1.0))->group("Mining");
  app.add_option("--h-max,--h_max", o.h_max, "Maximum units per BIR layer")->capture_default_str()->group("Mining");
  app.add_option("--mu", o.mu, "Minimum implications to add a layer")->capture_default_str()->group("Mining");
  app.add_option("--min-antecedent,--min_antecedent", o.min_support, "Minimum antecedent support")
      ->capture_default_str()->group("Mining");
  app.add_option("--depth,-L", o.depth, "Maximum number of BIR layers")->capture_default_str()->group("Mining");
  app.add_option("--threads", o.threads, "Worker threads for mining")->capture_default_str()->group("Mining");

  app.add_option("--head-width,--head_width", o.head_width, "Hidden widths of the classifier head")
      ->capture_default_str()->group("Model");
  app.add_option("--init-scale,--init_scale", o.init_scale, "Scale of BIR weight initialisation")
      ->capture_default_str()->group("Model");
  app.add_option("--dropout", o.train.dropout, "Dropout after each BIR layer")
      ->capture_default_str()->check(CLI::Range(0.0, 0.999))->group("Model");

  app.add_option("--lr", o.train.learning_rate, "AdamW learning rate")->capture_default_str()->group("Training");
  app.add_option("--weight-decay,--weight_decay", o.train.weight_decay, "AdamW weight decay")
      ->capture_default_str()->group("Training");
  app.add_option("--epochs", o.train.epochs_max, "Maximum epochs")->capture_default_str()->group("Training");
  app.add_option("--batch-size,--batch_size", o.train.batch_size, "Mini-batch size")
      ->capture_default_str()->group("Training");
  app.add_option("--patience", o.train.patience, "Early-stopping patience in epochs")
      ->capture_default_str()->group("Training");
  app.add_option("--clip", o.train.clip_norm, "Global gradient-norm clip")->capture_default_str()->group("Training");
  app.add_option("--seed", o.seed, "Random seed")->capture_default_str()->group("Training");
  app.add_option("--val-fraction,--val_fraction", o.val_fraction, "Validation share for early stopping")
      ->capture_default_str()->group("Training");

  app.add_option("--cv", o.cv, "Number of cross-validation folds")->capture_default_str()->group("Evaluation");
  app.add_option("--test-fraction,--test_fraction", o.test_fraction, "Held-out share for rules")
      ->capture_default_str()->group("Evaluation");
  app.add_flag("--matched", o.matched, "Also train the dense MatchedMLP counterpart")->group("Evaluation");
  app.add_option("--rule-min-support,--rule_min_support", o.rule_min_support, "Minimum unit support for rules")
      ->capture_default_str()->group("Evaluation");
  app.add_option("--instance", o.instance, "Row index (0-based) or sample id to explain")->group("Explain");
  app.add_option("--class", o.target_class, "Class to explain (default: predicted)")->group("Explain");
  app.add_option("--layer", o.layer, "BIR layer to export as a graph")->capture_default_str()->group("Explain");
}

LabeledDataset load(const Options& o) {
  if (o.data.empty()) throw std::invalid_argument("--data is required");
  CsvOptions csv;
  csv.label_column = o.label;
  csv.id_column = o.id_column;
  csv.ignore_columns = o.ignore_columns;
  csv.drop_incomplete_rows = o.drop_incomplete;
  CsvLoadReport report;
  auto data = load_csv(o.data, csv, &report);
  if (report.rows_rejected > 0)
    std::cerr << "dropped " << report.rows_rejected << " incomplete rows of " << report.rows_read << '\n';
  return data;
}

CvConfig cv_config(const Options& o) {
  CvConfig cfg;
  cfg.folds = o.cv;
  cfg.seed = o.seed;
  cfg.val_fraction = o.val_fraction;
  cfg.preselect = o.preselect;
  cfg.run_matched = o.matched;
  auto& m = cfg.build.mining;
  m.p_star = o.p_star;
  m.pi = o.pi;
  m.h_max = o.h_max;
  m.mu = o.mu;
  m.min_support = o.min_support;
  m.threads = o.threads;
  m.validate();
  cfg.build.max_depth = o.depth;
  cfg.build.head_hidden = o.head_width;
  cfg.build.dropout = o.train.dropout;
  cfg.build.init_scale = o.init_scale;
  cfg.build.seed = o.seed;
  cfg.train = o.train;
  cfg.train.seed = o.seed;
  cfg.train.validate();
  return cfg;
}

// Fails before anything is written when a required input is missing.
void check_inputs(const std::string& command, const Options& o) {
  const auto require = [](const std::string& value, const char* flag) {
    if (value.empty()) throw std::invalid_argument(std::string(flag) + " is required");
    if (!fs::exists(value)) throw std::invalid_argument(std::string(flag) + " file '" + value + "' does not exist");
  };
  if (command != "export-graph") require(o.data, "--data");
  if (command == "explain" || command == "export-graph") require(o.model, "--model");
  cv_config(o);
}

fs::path prepare_out(const Options& o) {
  fs::path out(o.out);
  fs::create_directories(out);
  return out;
}

void write_manifest(const CLI::App& app, const CLI::App& sub, const fs::path& out) {
  std::ofstream m(out / "manifest.ini");
  m << "; birdnet " << BIRDNET_VERSION << '\n';
  m << "; command: " << sub.get_name() << '\n';
  m << app.config_to_str(true, false);
}

std::vector<std::size_t> all_rows(const LabeledDataset& data) {
  std::vector<std::size_t> rows(data.rows());
  std::iota(rows.begin(), rows.end(), 0);
  return rows;
}

int cmd_mine(const Options& o, const fs::path& out) {
  const auto data = load(o);
  const auto cfg = cv_config(o);
  const auto prep = fit_preprocessor(data, all_rows(data), o.preselect);
  const Matrix x = prep.transform(data);
  const auto model = fit_binarization(x, cfg.build.binarization);
  write_thresholds(out / "thresholds.tsv", model, prep.selected_features);
  const auto graph = mine_birs(binarize(x, model), cfg.build.mining, prep.selected_features);
  write_edge_list(graph, out / "edges.tsv");
  export_graph(graph, out / "graph.dot");
  std::cout << "mined " << graph.edges.size() << " implications over " << graph.vertices.size()
            << " features\n";
  for (std::size_t t = 0; t < kNumBirTypes; ++t)
    std::cout << "  " << to_string(static_cast<BirType>(t)) << ": " << graph.type_counts[t] << '\n';
  return 0;
}

int cmd_build(const Options& o, const fs::path& out) {
  const auto data = load(o);
  const auto cfg = cv_config(o);
  ModelBundle bundle;
  bundle.class_names = data.class_names;
  bundle.preprocessor = fit_preprocessor(data, all_rows(data), o.preselect);
  auto built = build_birdnet(bundle.preprocessor.transform(data), bundle.preprocessor.selected_features,
                             data.num_classes(), cfg.build);
  bundle.network = std::move(built.network);
  bundle.metadata["state"] = "untrained";
  save_model(bundle, out / "model.json");
  std::ofstream(out / "construction.tsv") << built.report.to_table();
  std::cout << built.report.to_table();
  const auto acc = active_param_count(bundle.network);
  std::cout << "width " << acc.width << ", bir_active " << acc.bir_active << ", total_active "
            << acc.total_active << '\n';
  return 0;
}

int cmd_train(const Options& o, const fs::path& out) {
  const auto data = load(o);
  const auto cfg = cv_config(o);
  const auto rows = all_rows(data);
  const auto val = stratified_subset(rows, data.labels, cfg.val_fraction, cfg.seed + 1);
  const auto trained = fit_model(data, rows, val, cfg, cfg.seed);
  save_model(trained.model, out / "model.json");
  write_history_csv(trained.history, out / "history.csv");
  std::ofstream(out / "construction.tsv") << trained.construction.to_table();
  std::cout << "trained " << trained.history.epochs.size() << " epochs, best epoch "
            << trained.history.best_epoch << " (val loss " << format_fixed(trained.history.best_val_loss, 4)
            << ")\n";
  return 0;
}

int cmd_eval(const Options& o, const fs::path& out, bool matched) {
  const auto data = load(o);
  auto cfg = cv_config(o);
  cfg.run_matched = cfg.run_matched || matched;
  cfg.output_dir = out;
  const auto result = cross_validate(data, cfg);
  std::cout << summary_table(result, fs::path(o.data).stem().string());
  return 0;
}

int cmd_rules(const Options& o, const fs::path& out) {
  const auto data = load(o);
  const auto cfg = cv_config(o);
  const auto report = holdout_rules_run(data, cfg, o.test_fraction, o.rule_min_support);
  save_model(report.trained.model, out / "model.json");
  write_index_list(out / "train_rows.txt", report.split.train);
  write_index_list(out / "test_rows.txt", report.split.test);
  write_rules_csv(report.rules, data.class_names, out / "rules.csv");
  std::cout << "held-out AUROC " << format_fixed(report.test_auroc, 3) << ", accuracy "
            << format_fixed(report.test_accuracy, 3) << ", " << report.rules.size() << " rule records\n";
  int last = -1;
  std::size_t shown = 0;
  for (const auto& r : report.rules) {
    if (r.class_index != last) {
      last = r.class_index;
      shown = 0;
      std::cout << data.class_names[static_cast<std::size_t>(last)] << ":\n";
    }
    if (shown++ < 3)
      std::cout << "  " << r.rule << "  precision " << format_fixed(r.precision, 3) << "  lift "
                << format_fixed(r.lift, 2) << "  support " << r.support << '\n';
  }
  return 0;
}

std::size_t resolve_instance(const LabeledDataset& data, const std::string& key) {
  for (std::size_t i = 0; i < data.sample_ids.size(); ++i)
    if (data.sample_ids[i] == key) return i;
  std::size_t pos = 0;
  const auto index = std::stoull(key, &pos);
  if (pos != key.size() || index >= data.rows())
    throw std::invalid_argument("instance '" + key + "' is neither a sample id nor a row index");
  return static_cast<std::size_t>(index);
}

int cmd_explain(const Options& o, const fs::path& out) {
  if (o.model.empty()) throw std::invalid_argument("--model is required");
  if (o.instance.empty()) throw std::invalid_argument("--instance is required");
  const auto bundle = load_model(o.model);
  const auto data = load(o);
  const auto row = resolve_instance(data, o.instance);
  const Matrix x = bundle.preprocessor.transform(data.select_rows(std::vector<std::size_t>{row}));
  int target = -1;
  if (!o.target_class.empty()) {
    for (std::size_t c = 0; c < bundle.class_names.size(); ++c)
      if (bundle.class_names[c] == o.target_class) target = static_cast<int>(c);
    if (target < 0) throw std::invalid_argument("unknown class '" + o.target_class + "'");
  } else {
    const Matrix logits = predict_logits(bundle.network, x);
    Eigen::Index best = 0;
    logits.row(0).maxCoeff(&best);
    target = static_cast<int>(best);
  }
  auto trace = lrp_explain(bundle.network, std::span<const double>(x.data(), static_cast<std::size_t>(x.cols())),
                           target);
  trace.instance_id = data.sample_ids.empty() ? std::to_string(row) : data.sample_ids[row];
  const auto text = trace_report(trace, bundle.class_names);
  std::ofstream(out / ("trace_" + trace.instance_id + ".txt")) << text;
  std::cout << text;
  return 0;
}

int cmd_export_graph(const Options& o, const fs::path& out) {
  if (o.model.empty()) throw std::invalid_argument("--model is required");
  const auto bundle = load_model(o.model);
  const auto& net = bundle.network;
  if (o.layer >= net.layers.size())
    throw std::invalid_argument("model has " + std::to_string(net.layers.size()) + " BIR layers");
  ImplicationGraph graph;
  graph.vertices = net.input_names(o.layer);
  graph.edges = net.layers[o.layer].bindings;
  graph.recount();
  const auto stem = "layer" + std::to_string(o.layer);
  export_graph(graph, out / (stem + ".dot"));
  write_edge_list(graph, out / (stem + "_edges.tsv"));
  std::cout << "exported " << graph.edges.size() << " edges of layer " << o.layer << '\n';
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"BIRDNet: Boolean implication networks for tabular classification"};
  app.set_version_flag("--version", BIRDNET_VERSION);
  app.set_config("--config", "", "INI file of option values (flags override it)");
  app.require_subcommand(1);
  Options o;
  add_options(app, o);

  const std::vector<std::pair<std::string, std::string>> commands = {
      {"mine", "Mine implications from a dataset; writes edges.tsv, graph.dot, thresholds.tsv"},
      {"build", "Construct an untrained network; writes model.json and construction.tsv"},
      {"train", "Build and train on the whole dataset; writes model.json and history.csv"},
      {"eval", "Stratified k-fold cross-validation; writes fold_metrics.csv, summary.csv, models/"},
      {"rules", "Hold-out split, training and per-class rule extraction; writes rules.csv"},
      {"explain", "LRP relevance trace for one instance; writes trace_<id>.txt"},
      {"export-graph", "Export a model layer's bindings as DOT and edge list"},
      {"matched-mlp", "Cross-validation of BIRDNet alongside its dense MatchedMLP counterpart"},
  };
  std::vector<CLI::App*> subs;
  for (const auto& [name, help] : commands) subs.push_back(app.add_subcommand(name, help)->fallthrough());

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e);
  }

  const CLI::App* chosen = nullptr;
  for (auto* s : subs)
    if (s->parsed()) chosen = s;
  const auto name = chosen->get_name();
  try {
    check_inputs(name, o);
    const auto out = prepare_out(o);
    write_manifest(app, *chosen, out);
    if (name == "mine") return cmd_mine(o, out);
    if (name == "build") return cmd_build(o, out);
    if (name == "train") return cmd_train(o, out);
    if (name == "eval") return cmd_eval(o, out, false);
    if (name == "rules") return cmd_rules(o, out);
    if (name == "explain") return cmd_explain(o, out);
    if (name == "export-graph") return cmd_export_graph(o, out);
    if (name == "matched-mlp") return cmd_eval(o, out, true);
  } catch (const std::exception& e) {
    std::cerr << "birdnet " << name << ": error: " << e.what() << '\n';
    return 1;
  }
  return 1;
}
