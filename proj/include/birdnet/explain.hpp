#pragma once
// Symbolic read-out of a trained network: per-class rules from first-layer
// units on held-out rows, and epsilon-LRP relevance traces for single rows.

#include <cstddef>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "birdnet/network.hpp"

namespace birdnet {

// rows x first-layer units; true where the post-ReLU output is positive
// (eval mode: running BN statistics, no dropout).
using ActivityMatrix = Eigen::Matrix<bool, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

ActivityMatrix unit_activity(const BirNetwork& net, const Matrix& rows);

struct RuleRecord {
  std::size_t unit = 0;
  Implication implication;
  std::string rule;  // e.g. "A→¬B" over feature names
  int class_index = 0;
  double precision = 0.0;
  double recall = 0.0;
  double lift = 0.0;
  std::size_t support = 0;
};

inline constexpr std::size_t kDefaultMinSupport = 10;

// One record per (unit, class present in `labels`) for units active on at least
// `min_support` rows; sorted by class, precision desc, lift desc, unit.
std::vector<RuleRecord> extract_rules(const BirNetwork& net, const Matrix& heldout_rows,
                                      std::span<const int> heldout_labels, std::size_t num_classes,
                                      std::size_t min_support = kDefaultMinSupport);

void write_rules_csv(const std::vector<RuleRecord>& rules, std::span<const std::string> class_names,
                     const std::filesystem::path& path);

struct UnitRelevance {
  std::size_t unit = 0;
  Implication binding;
  std::string rule;  // deeper layers name their inputs "L{l}/u{k}"
  double relevance = 0.0;
};

struct RelevanceTrace {
  std::string instance_id;
  int predicted_class = 0;
  double predicted_probability = 0.0;
  int target_class = 0;
  double target_probability = 0.0;
  double target_logit = 0.0;
  // One entry per BIR layer, units in index order.
  std::vector<std::vector<UnitRelevance>> layers;
  std::vector<double> feature_relevance;
  // Relevance held by units whose inputs contribute nothing (bias-only
  // activations); absorbed[l] is lost between layer l and the layer below,
  // head_absorbed between the logits and the last BIR layer.
  std::vector<double> absorbed;
  double head_absorbed = 0.0;
  // chain[l] is the chosen unit of layer l, from layer 0 upwards.
  std::vector<std::size_t> chain;
  // Set when every BN running statistic still holds its initial value.
  bool untrained = false;

  double layer_total(std::size_t layer) const;
};

inline constexpr double kLrpEpsilon = 1e-6;

// Epsilon-rule LRP of the target logit. BN is folded into the preceding BIR
// linear map; each bias is shared equally among the inputs that contribute to
// its unit, so relevance is conserved up to the epsilon stabiliser.
RelevanceTrace lrp_explain(const BirNetwork& net, std::span<const double> instance, int target_class,
                           double epsilon = kLrpEpsilon);

// "rule ⇝ rule ⇝ class = name (p)"
std::string trace_chain_text(const RelevanceTrace& trace, std::span<const std::string> class_names);
// Chain line followed by the top units of each layer.
std::string trace_report(const RelevanceTrace& trace, std::span<const std::string> class_names,
                         std::size_t top_units = 5);

}  // namespace birdnet
