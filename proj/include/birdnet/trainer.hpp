#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include "birdnet/network.hpp"

namespace birdnet {

struct TrainConfig {
  double learning_rate = 1e-3;
  double weight_decay = 1e-4;
  std::size_t epochs_max = 200;
  std::size_t batch_size = 64;
  std::size_t patience = 20;
  double clip_norm = 1.0;
  double dropout = 0.3;
  std::uint64_t seed = 42;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_epsilon = 1e-8;

  void validate() const;
};

struct EpochRecord {
  std::size_t epoch = 0;  // 1-based
  double train_loss = 0.0;
  double val_loss = 0.0;
  double val_accuracy = 0.0;
};

struct TrainHistory {
  std::vector<EpochRecord> epochs;
  std::size_t best_epoch = 0;
  double best_val_loss = 0.0;
  bool stopped_early = false;
  std::size_t optimizer_steps = 0;
};

// Mean negative log-softmax of the true class.
double cross_entropy(const Matrix& logits, std::span<const int> labels);
// d(mean cross-entropy)/d(logits) = (softmax - onehot) / m.
Matrix cross_entropy_gradient(const Matrix& logits, std::span<const int> labels);

// Scales gradients in place so their global L2 norm is at most max_norm.
// Returns the norm before clipping.
double clip_global_norm(Gradients& grads, double max_norm);

// Decoupled-weight-decay Adam over the network's parameter tensors.
class AdamW {
 public:
  AdamW(BirNetwork& net, const TrainConfig& cfg);
  void step(BirNetwork& net, Gradients& grads, double learning_rate);
  std::size_t steps() const { return step_; }

 private:
  double beta1_;
  double beta2_;
  double epsilon_;
  double weight_decay_;
  std::size_t step_ = 0;
  std::vector<std::vector<double>> first_;
  std::vector<std::vector<double>> second_;
};

// Cosine annealing over `total_epochs`, no restarts.
double cosine_learning_rate(double base, std::size_t epoch_index, std::size_t total_epochs);

// Validation-loss early stopping; epochs are numbered from 1.
class EarlyStopper {
 public:
  explicit EarlyStopper(std::size_t patience);
  // Records an epoch; returns true when it is the new best.
  bool observe(std::size_t epoch, double val_loss);
  bool should_stop() const { return since_best_ >= patience_; }
  std::size_t best_epoch() const { return best_epoch_; }
  double best_loss() const { return best_loss_; }

 private:
  std::size_t patience_;
  std::size_t best_epoch_ = 0;
  double best_loss_;
  std::size_t since_best_ = 0;
};

struct TrainData {
  const Matrix& features;
  std::span<const int> labels;
};

// Trains in place; the parameters with the lowest validation loss are restored
// before returning. cfg.dropout overrides the dropout rate of every BIR layer.
TrainHistory train(BirNetwork& net, TrainData train_rows, TrainData val_rows, const TrainConfig& cfg);

void write_history_csv(const TrainHistory& history, const std::filesystem::path& path);

}  // namespace birdnet
