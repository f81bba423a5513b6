#pragma once
// Greedy layer-wise construction: binarize the current representation, mine
// implications, keep the top h_max, stack a BIR layer (+BN, ReLU, dropout),
// recompute the representation and repeat until max depth or until fewer than
// mu implications survive. A dense head is attached last.

#include <array>
#include <cstddef>
#include <cstdint>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "birdnet/binarize.hpp"
#include "birdnet/mining.hpp"
#include "birdnet/network.hpp"

namespace birdnet {

class BuildError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct BuildConfig {
  MiningConfig mining;
  BinarizationOptions binarization;
  std::size_t max_depth = 2;
  std::vector<std::size_t> head_hidden{32};
  double dropout = 0.3;
  double init_scale = 0.5;
  std::uint64_t seed = 42;
};

struct LayerReport {
  std::size_t layer = 0;
  std::size_t input_dim = 0;
  std::size_t degenerate_inputs = 0;
  std::size_t mined = 0;
  std::size_t after_dedup = 0;
  std::size_t kept = 0;
  std::array<std::size_t, kNumBirTypes> mined_types{};
  std::array<std::size_t, kNumBirTypes> kept_types{};
  bool accepted = false;
};

struct ConstructionReport {
  std::vector<LayerReport> layers;  // includes the rejected final attempt, if any
  std::size_t depth = 0;

  std::string to_table() const;
};

struct BuildResult {
  BirNetwork network;
  ConstructionReport report;
};

BuildResult build_birdnet(const Matrix& training_rows, std::span<const std::string> feature_names,
                          std::size_t num_classes, const BuildConfig& cfg);

}  // namespace birdnet
