#pragma once
// Masked BIR layers, BatchNorm, ReLU, dropout and a dense classifier head,
// with hand-derived gradients.
//
// A masked layer stores only its mask-allowed weights: row k of `weight` is
// (w[k, source_k], w[k, target_k]). W entries outside the mask therefore have
// no storage and are exactly zero by construction; dense_weight() materialises
// W (.) M when a full h x d view is needed. A dense layer (MatchedMLP) stores
// the full h x d matrix.

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "birdnet/dataset.hpp"
#include "birdnet/mining.hpp"
#include "birdnet/rng.hpp"

namespace birdnet {

struct BirLayer {
  std::size_t input_dim = 0;
  std::vector<Implication> bindings;
  bool masked = true;
  Matrix weight;  // h x 2 when masked, h x input_dim when dense
  Vector bias;
  Vector bn_gamma;
  Vector bn_beta;
  Vector running_mean;
  Vector running_var;
  double dropout = 0.3;

  std::size_t width() const { return static_cast<std::size_t>(bias.size()); }
  std::size_t active_weights() const;
  double active_fraction() const;
  bool mask(std::size_t unit, std::size_t input) const;
  Matrix dense_weight() const;
};

struct DenseHead {
  std::vector<Matrix> weights;  // out x in
  std::vector<Vector> biases;

  bool empty() const { return weights.empty(); }
  std::size_t input_dim() const;
  std::size_t output_dim() const;
  std::size_t parameter_count() const;
};

struct BirNetwork {
  std::size_t input_dim = 0;
  std::vector<std::string> feature_names;
  std::vector<BirLayer> layers;
  DenseHead head;
  std::size_t num_classes = 0;
  double bn_epsilon = 1e-5;
  double bn_momentum = 0.1;
  double init_scale = 0.5;

  std::size_t depth() const { return layers.size(); }
  std::size_t output_dim_of_stack() const { return layers.empty() ? input_dim : layers.back().width(); }
  // Names of the inputs seen by BIR layer `layer`.
  std::vector<std::string> input_names(std::size_t layer) const;
  std::string input_name(std::size_t layer, std::size_t index) const;
  // "L{layer}/u{unit}:{type}({source},{target})"
  std::string unit_name(std::size_t layer, std::size_t unit) const;
  void check_invariants() const;
};

// Active weights get |N(0,1)| * init_scale with type-determined signs:
// T0/T4 (+,+), T1 (-,-), T2/T5 (+,-), T3 (-,+).
BirLayer build_bir_layer(std::span<const Implication> spec, std::size_t input_dim, Rng& rng,
                         double init_scale = 0.5, double dropout = 0.3);
BirLayer build_bir_layer(std::span<const Implication> spec, std::size_t input_dim,
                         std::uint64_t seed, double init_scale = 0.5, double dropout = 0.3);

// hidden widths followed by a linear map to `classes` logits; Kaiming-normal init.
DenseHead make_dense_head(std::size_t input_dim, std::span<const std::size_t> hidden,
                          std::size_t classes, Rng& rng);

enum class BnStats { Batch, Running };

struct ForwardOptions {
  BnStats bn = BnStats::Running;
  bool dropout = false;
};

inline constexpr ForwardOptions kTrainMode{BnStats::Batch, true};
inline constexpr ForwardOptions kEvalMode{BnStats::Running, false};
// Batch statistics without dropout; used while constructing the network.
inline constexpr ForwardOptions kBatchStatsMode{BnStats::Batch, false};

struct LayerCache {
  Matrix input;
  Matrix pre_bn;    // z = (W (.) M) x + b
  Matrix xhat;
  Vector inv_std;
  Vector batch_mean;
  Vector batch_var;  // biased
  Matrix post_bn;
  Matrix drop_scale;  // empty when dropout is off
  Matrix output;
};

struct ForwardCache {
  ForwardOptions options;
  const BirNetwork* network = nullptr;
  std::vector<LayerCache> layers;
  std::vector<Matrix> head_inputs;
  std::vector<Matrix> head_pre;
  Matrix logits;
};

// `rng` is required when options.dropout is set.
ForwardCache forward(const BirNetwork& net, const Matrix& batch, ForwardOptions options,
                     Rng* rng = nullptr);

Matrix predict_logits(const BirNetwork& net, const Matrix& batch);

// Post-activation output of BIR layer `layer` (dropout never applied).
Matrix layer_activations(const BirNetwork& net, const Matrix& batch, std::size_t layer,
                         BnStats bn);

// Running-average update from a batch-statistics forward pass.
void commit_batch_statistics(BirNetwork& net, const ForwardCache& cache);

struct LayerGradients {
  Matrix weight;  // same shape as BirLayer::weight
  Vector bias;
  Vector bn_gamma;
  Vector bn_beta;
};

struct Gradients {
  std::vector<LayerGradients> layers;
  std::vector<Matrix> head_weights;
  std::vector<Vector> head_biases;

  double squared_norm() const;
  void scale(double factor);
};

Gradients backward(const BirNetwork& net, const ForwardCache& cache, const Matrix& dlogits);

// W-shaped gradient view of a layer; entries outside the mask are 0.
Matrix dense_weight_gradient(const BirLayer& layer, const Matrix& compact_gradient);

// Parameter tensors in a fixed order, paired with the matching gradient tensors.
std::vector<std::span<double>> parameter_views(BirNetwork& net);
std::vector<std::span<double>> gradient_views(Gradients& grads);
Gradients zero_gradients(const BirNetwork& net);

struct ParamAccounting {
  std::size_t width = 0;          // BIR units over all layers
  std::size_t bir_weights = 0;    // mask-allowed (or dense) weights in BIR layers
  std::size_t bir_active = 0;     // bir_weights + BIR biases
  std::size_t bn_params = 0;      // gamma + beta
  std::size_t head_params = 0;
  std::size_t total_active = 0;   // bir_active + bn_params + head_params
};

ParamAccounting active_param_count(const BirNetwork& net);

// Accounting of to_matched_mlp(net) without materialising the dense weights.
ParamAccounting matched_param_count(const BirNetwork& net);

// Dense counterpart: same shapes, BN, dropout and head, all-true masks, BIR
// positions re-initialised with N(0, 2 / fan_in).
BirNetwork to_matched_mlp(const BirNetwork& net, std::uint64_t seed);

}  // namespace birdnet
