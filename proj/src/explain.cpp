#include "birdnet/explain.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>
#include <stdexcept>

#include "birdnet/text_io.hpp"

namespace birdnet {

ActivityMatrix unit_activity(const BirNetwork& net, const Matrix& rows) {
  if (net.layers.empty()) throw std::invalid_argument("unit_activity: network has no BIR layer");
  if (static_cast<std::size_t>(rows.cols()) != net.input_dim)
    throw std::invalid_argument("unit_activity: rows have " + std::to_string(rows.cols()) +
                                " columns, network expects " + std::to_string(net.input_dim));
  if (rows.rows() == 0) return ActivityMatrix(0, static_cast<Eigen::Index>(net.layers.front().width()));
  const Matrix out = layer_activations(net, rows, 0, BnStats::Running);
  return (out.array() > 0.0).matrix();
}

std::vector<RuleRecord> extract_rules(const BirNetwork& net, const Matrix& heldout_rows,
                                      std::span<const int> heldout_labels, std::size_t num_classes,
                                      std::size_t min_support) {
  const auto m = static_cast<std::size_t>(heldout_rows.rows());
  if (m == 0) throw std::invalid_argument("extract_rules: held-out set is empty");
  if (heldout_labels.size() != m) throw std::invalid_argument("extract_rules: label count does not match rows");

  std::vector<std::size_t> class_size(num_classes, 0);
  for (int y : heldout_labels) {
    if (y < 0 || static_cast<std::size_t>(y) >= num_classes)
      throw std::invalid_argument("extract_rules: label out of range");
    ++class_size[static_cast<std::size_t>(y)];
  }

  const auto active = unit_activity(net, heldout_rows);
  const auto& layer = net.layers.front();
  const auto names = net.input_names(0);
  std::vector<RuleRecord> rules;
  std::vector<std::size_t> hits(num_classes);
  for (std::size_t k = 0; k < layer.width(); ++k) {
    std::fill(hits.begin(), hits.end(), 0);
    std::size_t support = 0;
    for (std::size_t r = 0; r < m; ++r) {
      if (!active(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(k))) continue;
      ++support;
      ++hits[static_cast<std::size_t>(heldout_labels[r])];
    }
    if (support < min_support || support == 0) continue;
    const auto& b = layer.bindings[k];
    const auto text = rule_text(b, names.at(b.source), names.at(b.target));
    for (std::size_t c = 0; c < num_classes; ++c) {
      if (class_size[c] == 0) continue;
      RuleRecord rec;
      rec.unit = k;
      rec.implication = b;
      rec.rule = text;
      rec.class_index = static_cast<int>(c);
      rec.support = support;
      rec.precision = static_cast<double>(hits[c]) / static_cast<double>(support);
      rec.recall = static_cast<double>(hits[c]) / static_cast<double>(class_size[c]);
      rec.lift = rec.precision / (static_cast<double>(class_size[c]) / static_cast<double>(m));
      rules.push_back(std::move(rec));
    }
  }
  std::sort(rules.begin(), rules.end(), [](const RuleRecord& a, const RuleRecord& b) {
    if (a.class_index != b.class_index) return a.class_index < b.class_index;
    if (a.precision != b.precision) return a.precision > b.precision;
    if (a.lift != b.lift) return a.lift > b.lift;
    return a.unit < b.unit;
  });
  return rules;
}

namespace {

std::string csv_field(const std::string& s) {
  if (s.find_first_of(",\"\n") == std::string::npos) return s;
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out += '"';
    out += c;
  }
  return out + "\"";
}

std::string class_label(std::span<const std::string> class_names, int c) {
  const auto i = static_cast<std::size_t>(c);
  return i < class_names.size() ? class_names[i] : std::to_string(c);
}

}  // namespace

void write_rules_csv(const std::vector<RuleRecord>& rules, std::span<const std::string> class_names,
                     const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write '" + path.string() + "'");
  out << "class,rule,precision,recall,lift,support,unit\n";
  for (const auto& r : rules)
    out << csv_field(class_label(class_names, r.class_index)) << ',' << csv_field(r.rule) << ','
        << format_double(r.precision) << ',' << format_double(r.recall) << ','
        << format_double(r.lift) << ',' << r.support << ',' << r.unit << '\n';
}

double RelevanceTrace::layer_total(std::size_t layer) const {
  double total = 0.0;
  for (const auto& u : layers.at(layer)) total += u.relevance;
  return total;
}

namespace {

double stabilise(double z, double epsilon) { return z + (z >= 0.0 ? epsilon : -epsilon); }

bool looks_untrained(const BirNetwork& net) {
  for (const auto& layer : net.layers)
    if (!(layer.running_mean.array() == 0.0).all() || !(layer.running_var.array() == 1.0).all())
      return false;
  return true;
}

std::string short_name(std::size_t layer, std::size_t index, const std::vector<std::string>& features) {
  if (layer == 0) return features.at(index);
  return "L" + std::to_string(layer - 1) + "/u" + std::to_string(index);
}

}  // namespace

RelevanceTrace lrp_explain(const BirNetwork& net, std::span<const double> instance, int target_class,
                           double epsilon) {
  if (instance.size() != net.input_dim)
    throw std::invalid_argument("lrp_explain: instance has " + std::to_string(instance.size()) +
                                " values, network expects " + std::to_string(net.input_dim));
  if (target_class < 0 || static_cast<std::size_t>(target_class) >= net.num_classes)
    throw std::invalid_argument("lrp_explain: target class out of range");
  if (net.layers.empty() || net.head.empty())
    throw std::invalid_argument("lrp_explain: network needs BIR layers and a head");

  Matrix row(1, static_cast<Eigen::Index>(instance.size()));
  for (std::size_t i = 0; i < instance.size(); ++i) row(0, static_cast<Eigen::Index>(i)) = instance[i];
  const auto cache = forward(net, row, kEvalMode);

  RelevanceTrace trace;
  trace.untrained = looks_untrained(net);
  const Vector logits = cache.logits.row(0).transpose();
  const Vector prob = (logits.array() - logits.maxCoeff()).exp().matrix();
  const double norm = prob.sum();
  Eigen::Index best = 0;
  for (Eigen::Index c = 1; c < logits.size(); ++c)
    if (logits(c) > logits(best)) best = c;
  trace.predicted_class = static_cast<int>(best);
  trace.predicted_probability = prob(best) / norm;
  trace.target_class = target_class;
  trace.target_probability = prob(target_class) / norm;
  trace.target_logit = logits(target_class);

  Vector relevance = Vector::Zero(logits.size());
  relevance(target_class) = trace.target_logit;

  // Head, top down.
  for (std::size_t l = net.head.weights.size(); l-- > 0;) {
    const Matrix& w = net.head.weights[l];
    const Vector& b = net.head.biases[l];
    const Vector a = cache.head_inputs[l].row(0).transpose();
    const Vector z = cache.head_pre[l].row(0).transpose();
    Vector below = Vector::Zero(a.size());
    for (Eigen::Index j = 0; j < w.rows(); ++j) {
      if (relevance(j) == 0.0) continue;
      Eigen::Index contributors = 0;
      for (Eigen::Index i = 0; i < a.size(); ++i) contributors += a(i) * w(j, i) != 0.0 ? 1 : 0;
      if (contributors == 0) {
        trace.head_absorbed += relevance(j);
        continue;
      }
      const double share = b(j) / static_cast<double>(contributors);
      const double scale = relevance(j) / stabilise(z(j), epsilon);
      for (Eigen::Index i = 0; i < a.size(); ++i) {
        const double c = a(i) * w(j, i);
        if (c != 0.0) below(i) += (c + share) * scale;
      }
    }
    relevance = std::move(below);
  }

  // BIR layers with BN folded in, top down. messages[l][k] holds the relevance
  // sent from unit k to each of its inputs (source, target) or all inputs.
  const auto features = net.input_names(0);
  const std::size_t depth = net.layers.size();
  trace.layers.resize(depth);
  trace.absorbed.assign(depth, 0.0);
  std::vector<std::vector<Vector>> messages(depth);
  for (std::size_t l = depth; l-- > 0;) {
    const auto& layer = net.layers[l];
    const auto& c = cache.layers[l];
    const Vector a = c.input.row(0).transpose();
    const std::size_t h = layer.width();
    auto& units = trace.layers[l];
    units.resize(h);
    for (std::size_t k = 0; k < h; ++k) {
      const auto& bind = layer.bindings[k];
      units[k].unit = k;
      units[k].binding = bind;
      units[k].rule = rule_text(bind, short_name(l, bind.source, features), short_name(l, bind.target, features));
      units[k].relevance = relevance(static_cast<Eigen::Index>(k));
    }

    Vector below = Vector::Zero(a.size());
    auto& sent = messages[l];
    sent.assign(h, Vector());
    for (std::size_t k = 0; k < h; ++k) {
      const auto kk = static_cast<Eigen::Index>(k);
      const double r = relevance(kk);
      const double scale_bn = layer.bn_gamma(kk) * c.inv_std(kk);
      const double folded_bias = scale_bn * (layer.bias(kk) - layer.running_mean(kk)) + layer.bn_beta(kk);
      const double z = c.post_bn(0, kk);
      std::vector<std::pair<std::size_t, double>> contrib;
      if (layer.masked) {
        const auto& bind = layer.bindings[k];
        contrib = {{bind.source, scale_bn * layer.weight(kk, 0) * a(static_cast<Eigen::Index>(bind.source))},
                   {bind.target, scale_bn * layer.weight(kk, 1) * a(static_cast<Eigen::Index>(bind.target))}};
      } else {
        for (Eigen::Index i = 0; i < a.size(); ++i)
          contrib.emplace_back(static_cast<std::size_t>(i), scale_bn * layer.weight(kk, i) * a(i));
      }
      Vector msg = Vector::Zero(static_cast<Eigen::Index>(contrib.size()));
      std::size_t contributors = 0;
      for (const auto& [i, v] : contrib) contributors += v != 0.0 ? 1 : 0;
      if (r != 0.0 && contributors == 0) trace.absorbed[l] += r;
      if (r != 0.0 && contributors > 0) {
        const double share = folded_bias / static_cast<double>(contributors);
        const double scale = r / stabilise(z, epsilon);
        for (std::size_t t = 0; t < contrib.size(); ++t) {
          if (contrib[t].second == 0.0) continue;
          msg(static_cast<Eigen::Index>(t)) = (contrib[t].second + share) * scale;
          below(static_cast<Eigen::Index>(contrib[t].first)) += msg(static_cast<Eigen::Index>(t));
        }
      }
      sent[k] = std::move(msg);
    }
    relevance = std::move(below);
  }
  trace.feature_relevance.assign(relevance.data(), relevance.data() + relevance.size());

  // Argmax chain: top layer by unit relevance, then by the message into the chosen unit.
  std::vector<std::size_t> chain(depth);
  {
    const auto& top = trace.layers.back();
    std::size_t pick = 0;
    for (std::size_t k = 1; k < top.size(); ++k)
      if (top[k].relevance > top[pick].relevance) pick = k;
    chain[depth - 1] = pick;
  }
  for (std::size_t l = depth - 1; l > 0; --l) {
    const auto& layer = net.layers[l];
    const auto& msg = messages[l][chain[l]];
    Eigen::Index pick = 0;
    for (Eigen::Index t = 1; t < msg.size(); ++t)
      if (msg(t) > msg(pick)) pick = t;
    chain[l - 1] = layer.masked ? (pick == 0 ? layer.bindings[chain[l]].source : layer.bindings[chain[l]].target)
                                : static_cast<std::size_t>(pick);
  }
  trace.chain = std::move(chain);
  return trace;
}

std::string trace_chain_text(const RelevanceTrace& trace, std::span<const std::string> class_names) {
  std::ostringstream out;
  for (std::size_t l = 0; l < trace.chain.size(); ++l) {
    const auto& u = trace.layers.at(l).at(trace.chain[l]);
    if (l > 0) out << " ⇝ ";
    out << "[L" << l << "/u" << u.unit << "] " << u.rule;
  }
  out << " ⇝ class = " << class_label(class_names, trace.target_class) << " ("
      << format_fixed(trace.target_probability, 3) << ")";
  return out.str();
}

std::string trace_report(const RelevanceTrace& trace, std::span<const std::string> class_names,
                         std::size_t top_units) {
  std::ostringstream out;
  if (!trace.instance_id.empty()) out << "instance: " << trace.instance_id << '\n';
  out << "predicted: " << class_label(class_names, trace.predicted_class) << " ("
      << format_fixed(trace.predicted_probability, 3) << ")\n";
  out << "target: " << class_label(class_names, trace.target_class) << " logit "
      << format_double(trace.target_logit) << '\n';
  if (trace.untrained) out << "warning: network appears untrained (BN running statistics at initial values)\n";
  out << "chain: " << trace_chain_text(trace, class_names) << '\n';
  for (std::size_t l = 0; l < trace.layers.size(); ++l) {
    std::vector<const UnitRelevance*> order;
    for (const auto& u : trace.layers[l]) order.push_back(&u);
    std::stable_sort(order.begin(), order.end(),
                     [](const UnitRelevance* a, const UnitRelevance* b) { return a->relevance > b->relevance; });
    out << "layer " << l << " (total relevance " << format_double(trace.layer_total(l));
    if (l < trace.absorbed.size() && trace.absorbed[l] != 0.0)
      out << ", bias-only units hold " << format_double(trace.absorbed[l]);
    out << "):\n";
    for (std::size_t i = 0; i < std::min(top_units, order.size()); ++i)
      out << "  L" << l << "/u" << order[i]->unit << '\t' << order[i]->rule << '\t'
          << format_double(order[i]->relevance) << '\n';
  }
  return out.str();
}

}  // namespace birdnet
