#include "birdnet/builder.hpp"

#include <limits>
#include <sstream>

namespace birdnet {

BuildResult build_birdnet(const Matrix& training_rows, std::span<const std::string> feature_names,
                          std::size_t num_classes, const BuildConfig& cfg) {
  if (training_rows.rows() < 2 || training_rows.cols() < 2)
    throw std::invalid_argument("build_birdnet needs at least 2 rows and 2 features");
  cfg.mining.validate();

  BuildResult result;
  auto& net = result.network;
  net.input_dim = static_cast<std::size_t>(training_rows.cols());
  net.feature_names.assign(feature_names.begin(), feature_names.end());
  net.num_classes = num_classes;
  net.init_scale = cfg.init_scale;

  Rng rng(cfg.seed);
  Matrix representation = training_rows;
  for (std::size_t l = 0; l < cfg.max_depth; ++l) {
    LayerReport report;
    report.layer = l;
    report.input_dim = static_cast<std::size_t>(representation.cols());

    const auto model = fit_binarization(representation, cfg.binarization);
    for (bool d : model.degenerate) report.degenerate_inputs += d ? 1 : 0;
    const auto bits = binarize(representation, model);
    const auto graph = mine_birs(bits, cfg.mining);
    report.mined = graph.edges.size();
    report.mined_types = graph.type_counts;

    auto spec = deduplicate_and_cap(graph, std::numeric_limits<std::size_t>::max());
    report.after_dedup = spec.size();
    if (spec.size() > cfg.mining.h_max) spec.resize(cfg.mining.h_max);
    report.kept = spec.size();
    for (const auto& e : spec) ++report.kept_types[static_cast<std::size_t>(e.type)];

    if (spec.size() < cfg.mining.mu) {
      result.report.layers.push_back(report);
      break;
    }
    report.accepted = true;
    result.report.layers.push_back(report);
    net.layers.push_back(build_bir_layer(spec, report.input_dim, rng, cfg.init_scale, cfg.dropout));
    representation = layer_activations(net, training_rows, net.layers.size() - 1, BnStats::Batch);
  }

  if (net.layers.empty()) {
    const auto found = result.report.layers.empty() ? 0 : result.report.layers.front().kept;
    throw BuildError("no BIR layer could be built: layer 0 yielded " + std::to_string(found) +
                     " implications, fewer than mu=" + std::to_string(cfg.mining.mu) +
                     "; consider relaxing p_star or pi, or lowering mu");
  }

  net.head = make_dense_head(net.output_dim_of_stack(), cfg.head_hidden, num_classes, rng);
  result.report.depth = net.layers.size();
  net.check_invariants();
  return result;
}

std::string ConstructionReport::to_table() const {
  std::ostringstream out;
  out << "layer\tinput_dim\tdegenerate\tmined\tafter_dedup\tkept\taccepted";
  for (std::size_t t = 0; t < kNumBirTypes; ++t) out << "\tkept_" << to_string(static_cast<BirType>(t));
  out << '\n';
  for (const auto& r : layers) {
    out << r.layer << '\t' << r.input_dim << '\t' << r.degenerate_inputs << '\t' << r.mined << '\t'
        << r.after_dedup << '\t' << r.kept << '\t' << (r.accepted ? "yes" : "no");
    for (auto c : r.kept_types) out << '\t' << c;
    out << '\n';
  }
  return out.str();
}

}  // namespace birdnet
