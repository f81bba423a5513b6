#pragma once
// Self-describing JSON model files. Doubles are written in shortest
// round-trip form, so save/load reproduces every parameter bit-exactly.

#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "birdnet/dataset.hpp"
#include "birdnet/network.hpp"

namespace birdnet {

// Maps raw dataset columns to network inputs: column selection by name, then
// standardization.
struct Preprocessor {
  std::vector<std::string> selected_features;
  Standardizer standardizer;

  bool empty() const { return selected_features.empty(); }
  Matrix transform(const LabeledDataset& data) const;
};

struct ModelBundle {
  BirNetwork network;
  Preprocessor preprocessor;
  std::vector<std::string> class_names;
  std::map<std::string, std::string> metadata;
};

void save_model(const ModelBundle& bundle, const std::filesystem::path& path);
ModelBundle load_model(const std::filesystem::path& path);

std::string serialize_model(const ModelBundle& bundle);
ModelBundle deserialize_model(const std::string& text);

}  // namespace birdnet
