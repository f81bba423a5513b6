#include "birdnet/model_io.hpp"

#include <algorithm>
#include <fstream>
#include <sstream>
#include <stdexcept>

#include <json.hpp>

namespace birdnet {

using nlohmann::json;

namespace {

constexpr const char* kFormat = "birdnet-model";
constexpr int kFormatVersion = 1;

template <typename Dense>
json to_json_array(const Dense& tensor) {
  json out = json::array();
  for (Eigen::Index i = 0; i < tensor.size(); ++i) out.push_back(tensor.data()[i]);
  return out;
}

Vector vector_from(const json& j) {
  Vector v(static_cast<Eigen::Index>(j.size()));
  for (std::size_t i = 0; i < j.size(); ++i) v(static_cast<Eigen::Index>(i)) = j[i].get<double>();
  return v;
}

Matrix matrix_from(const json& j, Eigen::Index rows, Eigen::Index cols) {
  if (static_cast<Eigen::Index>(j.size()) != rows * cols)
    throw std::runtime_error("model file: tensor size does not match its declared shape");
  Matrix m(rows, cols);
  for (std::size_t i = 0; i < j.size(); ++i) m.data()[i] = j[i].get<double>();
  return m;
}

json implication_to_json(const Implication& imp) {
  return json::array({imp.source, imp.target, std::string(to_string(imp.type)), imp.log_p,
                      imp.exceptions, imp.exception_fraction, imp.antecedent_support});
}

Implication implication_from(const json& j) {
  return {j.at(0).get<std::size_t>(), j.at(1).get<std::size_t>(),
          parse_bir_type(j.at(2).get<std::string>()), j.at(3).get<double>(),
          j.at(4).get<std::size_t>(), j.at(5).get<double>(), j.at(6).get<std::size_t>()};
}

json network_to_json(const BirNetwork& net) {
  json j;
  j["input_dim"] = net.input_dim;
  j["feature_names"] = net.feature_names;
  j["num_classes"] = net.num_classes;
  j["bn_epsilon"] = net.bn_epsilon;
  j["bn_momentum"] = net.bn_momentum;
  j["init_scale"] = net.init_scale;
  j["layers"] = json::array();
  for (const auto& layer : net.layers) {
    json l;
    l["input_dim"] = layer.input_dim;
    l["masked"] = layer.masked;
    l["dropout"] = layer.dropout;
    l["bindings"] = json::array();
    for (const auto& b : layer.bindings) l["bindings"].push_back(implication_to_json(b));
    if (layer.masked) {
      l["mask"] = json::array();
      for (const auto& b : layer.bindings) l["mask"].push_back(json::array({b.source, b.target}));
    }
    l["weights"] = to_json_array(layer.weight);
    l["bias"] = to_json_array(layer.bias);
    l["bn_gamma"] = to_json_array(layer.bn_gamma);
    l["bn_beta"] = to_json_array(layer.bn_beta);
    l["bn_running_mean"] = to_json_array(layer.running_mean);
    l["bn_running_var"] = to_json_array(layer.running_var);
    j["layers"].push_back(std::move(l));
  }
  j["head"] = json::array();
  for (std::size_t l = 0; l < net.head.weights.size(); ++l) {
    json h;
    h["rows"] = net.head.weights[l].rows();
    h["cols"] = net.head.weights[l].cols();
    h["weights"] = to_json_array(net.head.weights[l]);
    h["bias"] = to_json_array(net.head.biases[l]);
    j["head"].push_back(std::move(h));
  }
  return j;
}

BirNetwork network_from(const json& j) {
  BirNetwork net;
  net.input_dim = j.at("input_dim").get<std::size_t>();
  net.feature_names = j.at("feature_names").get<std::vector<std::string>>();
  net.num_classes = j.at("num_classes").get<std::size_t>();
  net.bn_epsilon = j.at("bn_epsilon").get<double>();
  net.bn_momentum = j.at("bn_momentum").get<double>();
  net.init_scale = j.at("init_scale").get<double>();
  for (const auto& l : j.at("layers")) {
    BirLayer layer;
    layer.input_dim = l.at("input_dim").get<std::size_t>();
    layer.masked = l.at("masked").get<bool>();
    layer.dropout = l.at("dropout").get<double>();
    for (const auto& b : l.at("bindings")) layer.bindings.push_back(implication_from(b));
    const auto h = static_cast<Eigen::Index>(layer.bindings.size());
    if (layer.masked) {
      const auto& mask = l.at("mask");
      if (mask.size() != layer.bindings.size())
        throw std::runtime_error("model file: mask and bindings disagree in length");
      for (std::size_t k = 0; k < mask.size(); ++k) {
        if (mask[k].at(0).get<std::size_t>() != layer.bindings[k].source ||
            mask[k].at(1).get<std::size_t>() != layer.bindings[k].target)
          throw std::runtime_error("model file: mask entry " + std::to_string(k) +
                                   " does not match its binding");
      }
    }
    const Eigen::Index cols = layer.masked ? 2 : static_cast<Eigen::Index>(layer.input_dim);
    layer.weight = matrix_from(l.at("weights"), h, cols);
    layer.bias = vector_from(l.at("bias"));
    layer.bn_gamma = vector_from(l.at("bn_gamma"));
    layer.bn_beta = vector_from(l.at("bn_beta"));
    layer.running_mean = vector_from(l.at("bn_running_mean"));
    layer.running_var = vector_from(l.at("bn_running_var"));
    net.layers.push_back(std::move(layer));
  }
  for (const auto& h : j.at("head")) {
    const auto rows = h.at("rows").get<Eigen::Index>();
    const auto cols = h.at("cols").get<Eigen::Index>();
    net.head.weights.push_back(matrix_from(h.at("weights"), rows, cols));
    net.head.biases.push_back(vector_from(h.at("bias")));
  }
  net.check_invariants();
  return net;
}

}  // namespace

Matrix Preprocessor::transform(const LabeledDataset& data) const {
  std::vector<std::size_t> columns;
  for (const auto& name : selected_features) {
    const auto it = std::find(data.feature_names.begin(), data.feature_names.end(), name);
    if (it == data.feature_names.end())
      throw DataError("dataset lacks feature '" + name + "' required by the model");
    columns.push_back(static_cast<std::size_t>(it - data.feature_names.begin()));
  }
  Matrix selected(data.values.rows(), static_cast<Eigen::Index>(columns.size()));
  for (std::size_t c = 0; c < columns.size(); ++c)
    selected.col(static_cast<Eigen::Index>(c)) = data.values.col(static_cast<Eigen::Index>(columns[c]));
  return standardizer.dims() == 0 ? selected : standardizer.apply(selected);
}

std::string serialize_model(const ModelBundle& bundle) {
  json j;
  j["format"] = kFormat;
  j["format_version"] = kFormatVersion;
  j["code_version"] = BIRDNET_VERSION;
  j["metadata"] = bundle.metadata;
  j["class_names"] = bundle.class_names;
  json prep;
  prep["selected_features"] = bundle.preprocessor.selected_features;
  prep["means"] = bundle.preprocessor.standardizer.means;
  prep["stddevs"] = bundle.preprocessor.standardizer.stddevs;
  prep["constant"] = bundle.preprocessor.standardizer.constant;
  prep["stddev_convention"] = "population";
  j["preprocessing"] = std::move(prep);
  j["network"] = network_to_json(bundle.network);
  return j.dump(1) + "\n";
}

ModelBundle deserialize_model(const std::string& text) {
  const json j = json::parse(text);
  if (j.value("format", std::string{}) != kFormat)
    throw std::runtime_error("not a birdnet model file");
  if (j.at("format_version").get<int>() != kFormatVersion)
    throw std::runtime_error("unsupported model format version");
  ModelBundle bundle;
  bundle.metadata = j.at("metadata").get<std::map<std::string, std::string>>();
  bundle.class_names = j.at("class_names").get<std::vector<std::string>>();
  const auto& prep = j.at("preprocessing");
  bundle.preprocessor.selected_features = prep.at("selected_features").get<std::vector<std::string>>();
  bundle.preprocessor.standardizer.means = prep.at("means").get<std::vector<double>>();
  bundle.preprocessor.standardizer.stddevs = prep.at("stddevs").get<std::vector<double>>();
  bundle.preprocessor.standardizer.constant = prep.at("constant").get<std::vector<bool>>();
  bundle.network = network_from(j.at("network"));
  return bundle;
}

void save_model(const ModelBundle& bundle, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write model '" + path.string() + "'");
  out << serialize_model(bundle);
  if (!out) throw std::runtime_error("failed writing model '" + path.string() + "'");
}

ModelBundle load_model(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot read model '" + path.string() + "'");
  std::ostringstream buffer;
  buffer << in.rdbuf();
  return deserialize_model(buffer.str());
}

}  // namespace birdnet
