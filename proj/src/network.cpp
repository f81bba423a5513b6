#include "birdnet/network.hpp"

#include <cmath>
#include <stdexcept>

namespace birdnet {

std::size_t BirLayer::active_weights() const {
  return masked ? 2 * width() : width() * input_dim;
}

double BirLayer::active_fraction() const {
  const double nominal = static_cast<double>(width()) * static_cast<double>(input_dim);
  return nominal == 0.0 ? 0.0 : static_cast<double>(active_weights()) / nominal;
}

bool BirLayer::mask(std::size_t unit, std::size_t input) const {
  if (!masked) return true;
  const auto& b = bindings.at(unit);
  return input == b.source || input == b.target;
}

Matrix BirLayer::dense_weight() const {
  if (!masked) return weight;
  Matrix dense = Matrix::Zero(static_cast<Eigen::Index>(width()), static_cast<Eigen::Index>(input_dim));
  for (std::size_t k = 0; k < width(); ++k) {
    const auto row = static_cast<Eigen::Index>(k);
    dense(row, static_cast<Eigen::Index>(bindings[k].source)) = weight(row, 0);
    dense(row, static_cast<Eigen::Index>(bindings[k].target)) = weight(row, 1);
  }
  return dense;
}

std::size_t DenseHead::input_dim() const {
  return weights.empty() ? 0 : static_cast<std::size_t>(weights.front().cols());
}

std::size_t DenseHead::output_dim() const {
  return weights.empty() ? 0 : static_cast<std::size_t>(weights.back().rows());
}

std::size_t DenseHead::parameter_count() const {
  std::size_t total = 0;
  for (std::size_t l = 0; l < weights.size(); ++l)
    total += static_cast<std::size_t>(weights[l].size() + biases[l].size());
  return total;
}

std::string BirNetwork::input_name(std::size_t layer, std::size_t index) const {
  if (layer > 0) return unit_name(layer - 1, index);
  if (feature_names.size() == input_dim) return feature_names.at(index);
  return "x" + std::to_string(index);
}

std::vector<std::string> BirNetwork::input_names(std::size_t layer) const {
  const std::size_t count = layer == 0 ? input_dim : layers.at(layer - 1).width();
  std::vector<std::string> names;
  names.reserve(count);
  for (std::size_t k = 0; k < count; ++k) names.push_back(input_name(layer, k));
  return names;
}

std::string BirNetwork::unit_name(std::size_t layer, std::size_t unit) const {
  const auto& b = layers.at(layer).bindings.at(unit);
  return "L" + std::to_string(layer) + "/u" + std::to_string(unit) + ":" +
         std::string(to_string(b.type)) + "(" + input_name(layer, b.source) + "," +
         input_name(layer, b.target) + ")";
}

void BirNetwork::check_invariants() const {
  std::size_t dim = input_dim;
  for (std::size_t l = 0; l < layers.size(); ++l) {
    const auto& layer = layers[l];
    const auto where = "layer " + std::to_string(l) + ": ";
    if (layer.input_dim != dim) throw std::logic_error(where + "input dimension mismatch");
    const auto h = static_cast<Eigen::Index>(layer.width());
    if (layer.bindings.size() != layer.width()) throw std::logic_error(where + "binding count mismatch");
    if (layer.weight.rows() != h || layer.weight.cols() != (layer.masked ? 2 : static_cast<Eigen::Index>(dim)))
      throw std::logic_error(where + "weight shape mismatch");
    if (layer.bn_gamma.size() != h || layer.bn_beta.size() != h || layer.running_mean.size() != h ||
        layer.running_var.size() != h)
      throw std::logic_error(where + "BatchNorm shape mismatch");
    for (const auto& b : layer.bindings) {
      if (b.source >= dim || b.target >= dim || b.source == b.target)
        throw std::logic_error(where + "binding does not name two distinct inputs");
    }
    if (layer.masked && layer.active_fraction() > 2.0 / static_cast<double>(dim))
      throw std::logic_error(where + "active weight fraction exceeds 2/d");
    dim = layer.width();
  }
  if (!head.empty() && head.input_dim() != dim) throw std::logic_error("head input dimension mismatch");
  if (!head.empty() && head.output_dim() != num_classes)
    throw std::logic_error("head output dimension does not match class count");
}

BirLayer build_bir_layer(std::span<const Implication> spec, std::size_t input_dim, Rng& rng,
                         double init_scale, double dropout) {
  if (spec.empty()) throw std::invalid_argument("build_bir_layer: empty implication list");
  BirLayer layer;
  layer.input_dim = input_dim;
  layer.masked = true;
  layer.dropout = dropout;
  const auto h = static_cast<Eigen::Index>(spec.size());
  layer.weight.resize(h, 2);
  layer.bias = Vector::Zero(h);
  layer.bn_gamma = Vector::Ones(h);
  layer.bn_beta = Vector::Zero(h);
  layer.running_mean = Vector::Zero(h);
  layer.running_var = Vector::Ones(h);
  for (std::size_t k = 0; k < spec.size(); ++k) {
    const auto& imp = spec[k];
    if (imp.source >= input_dim || imp.target >= input_dim)
      throw std::out_of_range("build_bir_layer: implication " + std::to_string(k) +
                              " references an input outside [0, " + std::to_string(input_dim) + ")");
    if (imp.source == imp.target)
      throw std::invalid_argument("build_bir_layer: implication " + std::to_string(k) + " is a self-loop");
    double sign_source = 1.0;
    double sign_target = 1.0;
    switch (imp.type) {
      case BirType::T0:
      case BirType::T4: break;
      case BirType::T1: sign_source = sign_target = -1.0; break;
      case BirType::T2:
      case BirType::T5: sign_target = -1.0; break;
      case BirType::T3: sign_source = -1.0; break;
    }
    const auto row = static_cast<Eigen::Index>(k);
    layer.weight(row, 0) = sign_source * std::abs(rng.normal()) * init_scale;
    layer.weight(row, 1) = sign_target * std::abs(rng.normal()) * init_scale;
    layer.bindings.push_back(imp);
  }
  return layer;
}

BirLayer build_bir_layer(std::span<const Implication> spec, std::size_t input_dim,
                         std::uint64_t seed, double init_scale, double dropout) {
  Rng rng(seed);
  return build_bir_layer(spec, input_dim, rng, init_scale, dropout);
}

DenseHead make_dense_head(std::size_t input_dim, std::span<const std::size_t> hidden,
                          std::size_t classes, Rng& rng) {
  if (classes == 0) throw std::invalid_argument("dense head needs at least one output");
  DenseHead head;
  std::size_t in = input_dim;
  for (std::size_t l = 0; l <= hidden.size(); ++l) {
    const bool last = l == hidden.size();
    const std::size_t out = last ? classes : hidden[l];
    const double stddev = std::sqrt((last ? 1.0 : 2.0) / static_cast<double>(std::max<std::size_t>(in, 1)));
    Matrix w(static_cast<Eigen::Index>(out), static_cast<Eigen::Index>(in));
    for (Eigen::Index i = 0; i < w.size(); ++i) w.data()[i] = rng.normal() * stddev;
    head.weights.push_back(std::move(w));
    head.biases.push_back(Vector::Zero(static_cast<Eigen::Index>(out)));
    in = out;
  }
  return head;
}

namespace {

Matrix linear_forward(const BirLayer& layer, const Matrix& x) {
  const auto m = x.rows();
  const auto h = static_cast<Eigen::Index>(layer.width());
  if (!layer.masked) {
    Matrix z = x * layer.weight.transpose();
    z.rowwise() += layer.bias.transpose();
    return z;
  }
  Matrix z(m, h);
  for (Eigen::Index r = 0; r < m; ++r) {
    for (Eigen::Index k = 0; k < h; ++k) {
      const auto& b = layer.bindings[static_cast<std::size_t>(k)];
      z(r, k) = layer.weight(k, 0) * x(r, static_cast<Eigen::Index>(b.source)) +
                layer.weight(k, 1) * x(r, static_cast<Eigen::Index>(b.target)) + layer.bias(k);
    }
  }
  return z;
}

void bir_layer_forward(const BirLayer& layer, const Matrix& x, BnStats bn, double eps,
                       LayerCache& c) {
  const auto m = x.rows();
  c.pre_bn = linear_forward(layer, x);
  if (bn == BnStats::Batch) {
    if (m < 2) throw std::invalid_argument("batch-statistics BatchNorm needs at least 2 rows");
    c.batch_mean = c.pre_bn.colwise().mean().transpose();
    Matrix centered = c.pre_bn.rowwise() - c.batch_mean.transpose();
    c.batch_var = centered.array().square().colwise().mean().transpose();
    c.inv_std = (c.batch_var.array() + eps).rsqrt().matrix();
    c.xhat = centered.array().rowwise() * c.inv_std.transpose().array();
  } else {
    c.inv_std = (layer.running_var.array() + eps).rsqrt().matrix();
    Matrix centered = c.pre_bn.rowwise() - layer.running_mean.transpose();
    c.xhat = centered.array().rowwise() * c.inv_std.transpose().array();
  }
  c.post_bn = (c.xhat.array().rowwise() * layer.bn_gamma.transpose().array()).rowwise() +
              layer.bn_beta.transpose().array();
}

}  // namespace

ForwardCache forward(const BirNetwork& net, const Matrix& batch, ForwardOptions options, Rng* rng) {
  if (static_cast<std::size_t>(batch.cols()) != net.input_dim)
    throw std::invalid_argument("forward: batch has " + std::to_string(batch.cols()) +
                                " columns, network expects " + std::to_string(net.input_dim));
  if (options.dropout && rng == nullptr) throw std::invalid_argument("forward: dropout needs an Rng");

  ForwardCache cache;
  cache.options = options;
  cache.network = &net;
  cache.layers.resize(net.layers.size());
  Matrix x = batch;
  for (std::size_t l = 0; l < net.layers.size(); ++l) {
    const auto& layer = net.layers[l];
    auto& c = cache.layers[l];
    c.input = std::move(x);
    bir_layer_forward(layer, c.input, options.bn, net.bn_epsilon, c);
    c.output = c.post_bn.cwiseMax(0.0);
    if (options.dropout && layer.dropout > 0.0) {
      const double keep = 1.0 - layer.dropout;
      c.drop_scale.resize(c.output.rows(), c.output.cols());
      for (Eigen::Index i = 0; i < c.drop_scale.size(); ++i)
        c.drop_scale.data()[i] = rng->uniform() < keep ? 1.0 / keep : 0.0;
      c.output.array() *= c.drop_scale.array();
    }
    x = c.output;
  }
  for (std::size_t l = 0; l < net.head.weights.size(); ++l) {
    cache.head_inputs.push_back(x);
    Matrix pre = x * net.head.weights[l].transpose();
    pre.rowwise() += net.head.biases[l].transpose();
    x = l + 1 < net.head.weights.size() ? Matrix(pre.cwiseMax(0.0)) : pre;
    cache.head_pre.push_back(std::move(pre));
  }
  cache.logits = std::move(x);
  return cache;
}

Matrix predict_logits(const BirNetwork& net, const Matrix& batch) {
  return forward(net, batch, kEvalMode).logits;
}

Matrix layer_activations(const BirNetwork& net, const Matrix& batch, std::size_t layer, BnStats bn) {
  if (layer >= net.layers.size()) throw std::out_of_range("layer_activations: no such layer");
  Matrix x = batch;
  for (std::size_t l = 0; l <= layer; ++l) {
    LayerCache c;
    bir_layer_forward(net.layers[l], x, bn, net.bn_epsilon, c);
    x = c.post_bn.cwiseMax(0.0);
  }
  return x;
}

void commit_batch_statistics(BirNetwork& net, const ForwardCache& cache) {
  if (cache.options.bn != BnStats::Batch || cache.network != &net)
    throw std::invalid_argument("commit_batch_statistics: cache is not a batch-statistics pass of this network");
  const double momentum = net.bn_momentum;
  for (std::size_t l = 0; l < net.layers.size(); ++l) {
    auto& layer = net.layers[l];
    const auto& c = cache.layers[l];
    const double m = static_cast<double>(c.input.rows());
    layer.running_mean = (1.0 - momentum) * layer.running_mean + momentum * c.batch_mean;
    layer.running_var = (1.0 - momentum) * layer.running_var + momentum * c.batch_var * (m / (m - 1.0));
  }
}

double Gradients::squared_norm() const {
  double total = 0.0;
  for (const auto& g : layers)
    total += g.weight.squaredNorm() + g.bias.squaredNorm() + g.bn_gamma.squaredNorm() + g.bn_beta.squaredNorm();
  for (const auto& w : head_weights) total += w.squaredNorm();
  for (const auto& b : head_biases) total += b.squaredNorm();
  return total;
}

void Gradients::scale(double factor) {
  for (auto& g : layers) {
    g.weight *= factor;
    g.bias *= factor;
    g.bn_gamma *= factor;
    g.bn_beta *= factor;
  }
  for (auto& w : head_weights) w *= factor;
  for (auto& b : head_biases) b *= factor;
}

Gradients backward(const BirNetwork& net, const ForwardCache& cache, const Matrix& dlogits) {
  if (cache.network != &net || cache.layers.size() != net.layers.size() ||
      cache.head_pre.size() != net.head.weights.size())
    throw std::invalid_argument("backward: cache does not belong to this network");
  if (dlogits.rows() != cache.logits.rows() || dlogits.cols() != cache.logits.cols())
    throw std::invalid_argument("backward: dlogits shape does not match the cached logits");

  Gradients grads;
  grads.layers.resize(net.layers.size());
  grads.head_weights.resize(net.head.weights.size());
  grads.head_biases.resize(net.head.biases.size());

  Matrix g = dlogits;
  for (std::size_t l = net.head.weights.size(); l-- > 0;) {
    grads.head_weights[l] = g.transpose() * cache.head_inputs[l];
    grads.head_biases[l] = g.colwise().sum().transpose();
    Matrix g_in = g * net.head.weights[l];
    if (l > 0) g_in.array() *= (cache.head_pre[l - 1].array() > 0.0).cast<double>();
    g = std::move(g_in);
  }

  for (std::size_t l = net.layers.size(); l-- > 0;) {
    const auto& layer = net.layers[l];
    const auto& c = cache.layers[l];
    auto& lg = grads.layers[l];
    if (c.drop_scale.size() > 0) g.array() *= c.drop_scale.array();
    g.array() *= (c.post_bn.array() > 0.0).cast<double>();

    lg.bn_gamma = (g.array() * c.xhat.array()).colwise().sum().transpose();
    lg.bn_beta = g.colwise().sum().transpose();
    Matrix dxhat = g.array().rowwise() * layer.bn_gamma.transpose().array();
    Matrix dz;
    if (cache.options.bn == BnStats::Batch) {
      const double m = static_cast<double>(g.rows());
      const Vector sum_dxhat = dxhat.colwise().sum().transpose();
      const Vector sum_dxhat_xhat = (dxhat.array() * c.xhat.array()).colwise().sum().transpose();
      Matrix inner = m * dxhat;
      inner.rowwise() -= sum_dxhat.transpose();
      inner.array() -= c.xhat.array().rowwise() * sum_dxhat_xhat.transpose().array();
      dz = inner.array().rowwise() * (c.inv_std.transpose().array() / m);
    } else {
      dz = dxhat.array().rowwise() * c.inv_std.transpose().array();
    }
    lg.bias = dz.colwise().sum().transpose();

    Matrix d_input;
    if (layer.masked) {
      lg.weight = Matrix::Zero(layer.weight.rows(), 2);
      d_input = Matrix::Zero(c.input.rows(), c.input.cols());
      for (Eigen::Index r = 0; r < dz.rows(); ++r) {
        for (Eigen::Index k = 0; k < dz.cols(); ++k) {
          const auto& b = layer.bindings[static_cast<std::size_t>(k)];
          const auto s = static_cast<Eigen::Index>(b.source);
          const auto t = static_cast<Eigen::Index>(b.target);
          const double d = dz(r, k);
          lg.weight(k, 0) += d * c.input(r, s);
          lg.weight(k, 1) += d * c.input(r, t);
          d_input(r, s) += d * layer.weight(k, 0);
          d_input(r, t) += d * layer.weight(k, 1);
        }
      }
    } else {
      lg.weight = dz.transpose() * c.input;
      d_input = dz * layer.weight;
    }
    g = std::move(d_input);
  }
  return grads;
}

Matrix dense_weight_gradient(const BirLayer& layer, const Matrix& compact_gradient) {
  if (!layer.masked) return compact_gradient;
  Matrix dense = Matrix::Zero(static_cast<Eigen::Index>(layer.width()), static_cast<Eigen::Index>(layer.input_dim));
  for (std::size_t k = 0; k < layer.width(); ++k) {
    const auto row = static_cast<Eigen::Index>(k);
    dense(row, static_cast<Eigen::Index>(layer.bindings[k].source)) = compact_gradient(row, 0);
    dense(row, static_cast<Eigen::Index>(layer.bindings[k].target)) = compact_gradient(row, 1);
  }
  return dense;
}

namespace {

template <typename Dense>
std::span<double> view(Dense& tensor) {
  return {tensor.data(), static_cast<std::size_t>(tensor.size())};
}

}  // namespace

std::vector<std::span<double>> parameter_views(BirNetwork& net) {
  std::vector<std::span<double>> views;
  for (auto& layer : net.layers) {
    views.push_back(view(layer.weight));
    views.push_back(view(layer.bias));
    views.push_back(view(layer.bn_gamma));
    views.push_back(view(layer.bn_beta));
  }
  for (std::size_t l = 0; l < net.head.weights.size(); ++l) {
    views.push_back(view(net.head.weights[l]));
    views.push_back(view(net.head.biases[l]));
  }
  return views;
}

std::vector<std::span<double>> gradient_views(Gradients& grads) {
  std::vector<std::span<double>> views;
  for (auto& g : grads.layers) {
    views.push_back(view(g.weight));
    views.push_back(view(g.bias));
    views.push_back(view(g.bn_gamma));
    views.push_back(view(g.bn_beta));
  }
  for (std::size_t l = 0; l < grads.head_weights.size(); ++l) {
    views.push_back(view(grads.head_weights[l]));
    views.push_back(view(grads.head_biases[l]));
  }
  return views;
}

Gradients zero_gradients(const BirNetwork& net) {
  Gradients grads;
  for (const auto& layer : net.layers) {
    grads.layers.push_back({Matrix::Zero(layer.weight.rows(), layer.weight.cols()),
                            Vector::Zero(layer.bias.size()), Vector::Zero(layer.bn_gamma.size()),
                            Vector::Zero(layer.bn_beta.size())});
  }
  for (std::size_t l = 0; l < net.head.weights.size(); ++l) {
    grads.head_weights.push_back(Matrix::Zero(net.head.weights[l].rows(), net.head.weights[l].cols()));
    grads.head_biases.push_back(Vector::Zero(net.head.biases[l].size()));
  }
  return grads;
}

ParamAccounting active_param_count(const BirNetwork& net) {
  ParamAccounting acc;
  for (const auto& layer : net.layers) {
    acc.width += layer.width();
    acc.bir_weights += layer.active_weights();
    acc.bir_active += layer.active_weights() + layer.width();
    acc.bn_params += 2 * layer.width();
  }
  acc.head_params = net.head.parameter_count();
  acc.total_active = acc.bir_active + acc.bn_params + acc.head_params;
  return acc;
}

ParamAccounting matched_param_count(const BirNetwork& net) {
  ParamAccounting acc;
  for (const auto& layer : net.layers) {
    const auto dense_weights = layer.width() * layer.input_dim;
    acc.width += layer.width();
    acc.bir_weights += dense_weights;
    acc.bir_active += dense_weights + layer.width();
    acc.bn_params += 2 * layer.width();
  }
  acc.head_params = net.head.parameter_count();
  acc.total_active = acc.bir_active + acc.bn_params + acc.head_params;
  return acc;
}

BirNetwork to_matched_mlp(const BirNetwork& net, std::uint64_t seed) {
  BirNetwork dense = net;
  Rng rng(seed);
  for (auto& layer : dense.layers) {
    layer.masked = false;
    const double stddev = std::sqrt(2.0 / static_cast<double>(layer.input_dim));
    layer.weight.resize(static_cast<Eigen::Index>(layer.width()), static_cast<Eigen::Index>(layer.input_dim));
    for (Eigen::Index i = 0; i < layer.weight.size(); ++i) layer.weight.data()[i] = rng.normal() * stddev;
  }
  return dense;
}

}  // namespace birdnet
