#include "birdnet/trainer.hpp"

#include <cmath>
#include <fstream>
#include <limits>
#include <numbers>
#include <numeric>
#include <stdexcept>

#include "birdnet/text_io.hpp"

namespace birdnet {

void TrainConfig::validate() const {
  if (!(learning_rate > 0.0)) throw std::invalid_argument("learning_rate must be positive");
  if (weight_decay < 0.0) throw std::invalid_argument("weight_decay must be non-negative");
  if (epochs_max == 0) throw std::invalid_argument("epochs_max must be positive");
  if (batch_size < 2) throw std::invalid_argument("batch_size must be at least 2");
  if (patience == 0) throw std::invalid_argument("patience must be at least 1");
  if (!(clip_norm > 0.0)) throw std::invalid_argument("clip_norm must be positive");
  if (!(dropout >= 0.0 && dropout < 1.0)) throw std::invalid_argument("dropout must lie in [0, 1)");
}

namespace {

void check_labels(const Matrix& logits, std::span<const int> labels) {
  if (static_cast<std::size_t>(logits.rows()) != labels.size())
    throw std::invalid_argument("cross_entropy: label count does not match logits rows");
  for (int l : labels)
    if (l < 0 || l >= logits.cols()) throw std::invalid_argument("cross_entropy: label out of range");
}

}  // namespace

double cross_entropy(const Matrix& logits, std::span<const int> labels) {
  check_labels(logits, labels);
  double total = 0.0;
  for (Eigen::Index r = 0; r < logits.rows(); ++r) {
    const double top = logits.row(r).maxCoeff();
    const double lse = top + std::log((logits.row(r).array() - top).exp().sum());
    total += lse - logits(r, labels[static_cast<std::size_t>(r)]);
  }
  return total / static_cast<double>(logits.rows());
}

Matrix cross_entropy_gradient(const Matrix& logits, std::span<const int> labels) {
  check_labels(logits, labels);
  Matrix grad(logits.rows(), logits.cols());
  const double m = static_cast<double>(logits.rows());
  for (Eigen::Index r = 0; r < logits.rows(); ++r) {
    const double top = logits.row(r).maxCoeff();
    auto e = (logits.row(r).array() - top).exp();
    grad.row(r) = e / e.sum();
    grad(r, labels[static_cast<std::size_t>(r)]) -= 1.0;
  }
  return grad / m;
}

double clip_global_norm(Gradients& grads, double max_norm) {
  const double norm = std::sqrt(grads.squared_norm());
  if (norm > max_norm) grads.scale(max_norm / norm);
  return norm;
}

AdamW::AdamW(BirNetwork& net, const TrainConfig& cfg)
    : beta1_(cfg.beta1), beta2_(cfg.beta2), epsilon_(cfg.adam_epsilon), weight_decay_(cfg.weight_decay) {
  for (const auto& view : parameter_views(net)) {
    first_.emplace_back(view.size(), 0.0);
    second_.emplace_back(view.size(), 0.0);
  }
}

void AdamW::step(BirNetwork& net, Gradients& grads, double learning_rate) {
  auto params = parameter_views(net);
  auto gradients = gradient_views(grads);
  if (params.size() != first_.size() || gradients.size() != params.size())
    throw std::invalid_argument("AdamW: parameter layout changed since construction");
  ++step_;
  const double t = static_cast<double>(step_);
  const double correction1 = 1.0 - std::pow(beta1_, t);
  const double correction2 = 1.0 - std::pow(beta2_, t);
  for (std::size_t p = 0; p < params.size(); ++p) {
    auto values = params[p];
    const auto g = gradients[p];
    auto& m = first_[p];
    auto& v = second_[p];
    if (values.size() != g.size() || values.size() != m.size())
      throw std::invalid_argument("AdamW: tensor size mismatch");
    for (std::size_t i = 0; i < values.size(); ++i) {
      values[i] -= learning_rate * weight_decay_ * values[i];
      m[i] = beta1_ * m[i] + (1.0 - beta1_) * g[i];
      v[i] = beta2_ * v[i] + (1.0 - beta2_) * g[i] * g[i];
      const double m_hat = m[i] / correction1;
      const double v_hat = v[i] / correction2;
      values[i] -= learning_rate * m_hat / (std::sqrt(v_hat) + epsilon_);
    }
  }
}

double cosine_learning_rate(double base, std::size_t epoch_index, std::size_t total_epochs) {
  const double progress = static_cast<double>(epoch_index) / static_cast<double>(total_epochs);
  return base * (1.0 + std::cos(std::numbers::pi * progress)) / 2.0;
}

EarlyStopper::EarlyStopper(std::size_t patience)
    : patience_(patience), best_loss_(std::numeric_limits<double>::infinity()) {
  if (patience == 0) throw std::invalid_argument("patience must be at least 1");
}

bool EarlyStopper::observe(std::size_t epoch, double val_loss) {
  if (val_loss < best_loss_) {
    best_loss_ = val_loss;
    best_epoch_ = epoch;
    since_best_ = 0;
    return true;
  }
  ++since_best_;
  return false;
}

namespace {

double accuracy_of(const Matrix& logits, std::span<const int> labels) {
  std::size_t correct = 0;
  for (Eigen::Index r = 0; r < logits.rows(); ++r) {
    Eigen::Index best = 0;
    for (Eigen::Index c = 1; c < logits.cols(); ++c)
      if (logits(r, c) > logits(r, best)) best = c;
    if (best == labels[static_cast<std::size_t>(r)]) ++correct;
  }
  return static_cast<double>(correct) / static_cast<double>(labels.size());
}

}  // namespace

TrainHistory train(BirNetwork& net, TrainData train_rows, TrainData val_rows, const TrainConfig& cfg) {
  cfg.validate();
  const auto n = static_cast<std::size_t>(train_rows.features.rows());
  if (n < 2 || val_rows.features.rows() == 0)
    throw std::invalid_argument("train: training set needs at least 2 rows and validation at least 1");
  if (train_rows.labels.size() != n ||
      val_rows.labels.size() != static_cast<std::size_t>(val_rows.features.rows()))
    throw std::invalid_argument("train: label count does not match rows");

  for (auto& layer : net.layers) layer.dropout = cfg.dropout;
  Rng rng(cfg.seed);
  AdamW optimizer(net, cfg);
  EarlyStopper stopper(cfg.patience);
  BirNetwork best = net;
  TrainHistory history;

  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  const auto cols = train_rows.features.cols();

  for (std::size_t epoch = 0; epoch < cfg.epochs_max; ++epoch) {
    const double lr = cosine_learning_rate(cfg.learning_rate, epoch, cfg.epochs_max);
    rng.shuffle(std::span(order));
    double loss_sum = 0.0;
    std::size_t loss_rows = 0;
    for (std::size_t start = 0; start < n; start += cfg.batch_size) {
      const std::size_t stop = std::min(n, start + cfg.batch_size);
      // A trailing single row cannot provide batch statistics.
      if (stop - start < 2) continue;
      Matrix batch(static_cast<Eigen::Index>(stop - start), cols);
      std::vector<int> labels;
      for (std::size_t i = start; i < stop; ++i) {
        batch.row(static_cast<Eigen::Index>(i - start)) = train_rows.features.row(static_cast<Eigen::Index>(order[i]));
        labels.push_back(train_rows.labels[order[i]]);
      }
      const auto cache = forward(net, batch, kTrainMode, &rng);
      loss_sum += cross_entropy(cache.logits, labels) * static_cast<double>(labels.size());
      loss_rows += labels.size();
      auto grads = backward(net, cache, cross_entropy_gradient(cache.logits, labels));
      clip_global_norm(grads, cfg.clip_norm);
      commit_batch_statistics(net, cache);
      optimizer.step(net, grads, lr);
    }

    const auto val_logits = predict_logits(net, val_rows.features);
    EpochRecord record;
    record.epoch = epoch + 1;
    record.train_loss = loss_rows ? loss_sum / static_cast<double>(loss_rows) : 0.0;
    record.val_loss = cross_entropy(val_logits, val_rows.labels);
    record.val_accuracy = accuracy_of(val_logits, val_rows.labels);
    history.epochs.push_back(record);
    if (stopper.observe(record.epoch, record.val_loss)) best = net;
    if (stopper.should_stop()) {
      history.stopped_early = record.epoch < cfg.epochs_max;
      break;
    }
  }

  net = std::move(best);
  history.best_epoch = stopper.best_epoch();
  history.best_val_loss = stopper.best_loss();
  history.optimizer_steps = optimizer.steps();
  return history;
}

void write_history_csv(const TrainHistory& history, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write '" + path.string() + "'");
  out << "epoch,train_loss,val_loss,val_acc\n";
  for (const auto& e : history.epochs)
    out << e.epoch << ',' << format_double(e.train_loss) << ',' << format_double(e.val_loss) << ','
        << format_double(e.val_accuracy) << '\n';
}

}  // namespace birdnet
