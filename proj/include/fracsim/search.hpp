#pragma once

#include "fracsim/autodiff.hpp"
#include "fracsim/dataset.hpp"
#include "fracsim/fracbits.hpp"
#include "fracsim/model.hpp"
#include "fracsim/tasks.hpp"

#include <cstdint>
#include <optional>
#include <random>
#include <string>
#include <vector>

namespace fracsim {

/// One optimization step's worth of training items.
struct Batch {
  std::vector<Index> items;
  std::vector<int> labels;
  std::optional<Episode> episode;
};

/// Accuracy objective and evaluation protocol of a training task.
class Task {
 public:
  virtual ~Task() = default;

  /// "generic" or "fewshot".
  virtual std::string kind() const = 0;
  virtual const Dataset& data() const = 0;
  virtual std::vector<Batch> epoch_batches(std::mt19937_64& rng) const = 0;
  /// Accuracy loss of one batch given the network outputs for batch.items.
  virtual NodeId loss(Graph& g, NodeId outputs, const Batch& batch, double* accuracy) const = 0;
  virtual EvalResult evaluate(const BatchModel& model, std::uint64_t seed) const = 0;
};

/// Closed-set classification with softmax cross-entropy minibatches.
class GenericTask : public Task {
 public:
  explicit GenericTask(const Dataset& data, int batch_size = 32, int eval_rounds = 100, int samples_per_round = 60);

  std::string kind() const override { return "generic"; }
  const Dataset& data() const override { return data_; }
  std::vector<Batch> epoch_batches(std::mt19937_64& rng) const override;
  NodeId loss(Graph& g, NodeId outputs, const Batch& batch, double* accuracy) const override;
  EvalResult evaluate(const BatchModel& model, std::uint64_t seed) const override;

 private:
  const Dataset& data_;
  int batch_size_;
  int eval_rounds_;
  int samples_per_round_;
};

/// Episodic training with the prototypical loss; the network outputs embeddings.
class FewShotTask : public Task {
 public:
  FewShotTask(const Dataset& data, EpisodeConfig episode = {}, int episodes_per_epoch = 40, int eval_rounds = 100);

  std::string kind() const override { return "fewshot"; }
  const Dataset& data() const override { return data_; }
  std::vector<Batch> epoch_batches(std::mt19937_64& rng) const override;
  NodeId loss(Graph& g, NodeId outputs, const Batch& batch, double* accuracy) const override;
  EvalResult evaluate(const BatchModel& model, std::uint64_t seed) const override;

 private:
  const Dataset& data_;
  EpisodeConfig episode_;
  int episodes_per_epoch_;
  int eval_rounds_;
};

struct TrainConfig {
  int epochs_float = 15;
  int epochs_search = 5;
  int epochs_finetune = 10;
  double weight_lr = 0.05;
  double bit_lr = 0.02;
  double momentum = 0.9;
  int calibration_batches = 4;
  /// Fine-tuning starts at weight_lr * finetune_lr_scale.
  double finetune_lr_scale = 0.2;
  /// Cosine decay of the weight learning rate over the float and fine-tune
  /// phases (the search phase keeps it constant).
  bool cosine_decay = true;

  void validate() const;
};

struct HistoryEntry {
  std::string phase;  // float, search, finetune
  int epoch = 0;
  double loss = 0.0;
  double acc_loss = 0.0;
  double size_loss = 0.0;
  double train_accuracy = 0.0;
  double val_accuracy = 0.0;
  double footprint_bytes = 0.0;
  std::vector<double> bits;  // per weight layer
};

struct TrainResult {
  EvalResult eval;
  std::vector<HistoryEntry> history;
};

/// Float training from the network's current weights.
TrainResult train_float(Network& net, const Task& task, const TrainConfig& cfg, std::uint64_t seed);

struct SearchConfig {
  TrainConfig train;
  SizeLossConfig size;
  /// Fixed-bitwidth QAT: every weight layer frozen at this bitwidth.
  std::optional<int> pinned_bits;
};

struct SearchResult {
  std::vector<std::string> layer_names;  // weight layers in model order
  std::vector<int> bits;
  EvalResult eval;
  std::int64_t footprint_bytes = 0;
  std::vector<HistoryEntry> history;
};

/// Quantization-aware training of a float-trained network.
///
/// Search phase: weights and the fractional bitwidths of searchable layers
/// are trained jointly on acc_loss + beta * size_loss. Bitwidths are clamped
/// to [2, 8] after every step, and a layer's weight scales are recalibrated
/// when its bitwidth changes integer bracket. Then every bitwidth is rounded
/// half up and frozen, scales are recalibrated, and the weights are
/// fine-tuned. With `pinned_bits` the same schedule runs without search.
/// Throws NonFiniteLossError naming the epoch and the first layer with a
/// non-finite output.
SearchResult run_search(Network& net, const Task& task, const SearchConfig& cfg, std::uint64_t seed);

/// Footprint of a frozen network under the size-loss accounting.
std::int64_t network_footprint(const Network& net, const SizeLossConfig& cfg);

/// Smallest reachable footprint (every weight layer at 2 bits).
std::int64_t min_feasible_footprint(const ModelSpec& spec, const SizeLossConfig& cfg);
/// Footprint with every weight layer at `bits`.
std::int64_t uniform_footprint(const ModelSpec& spec, int bits, const SizeLossConfig& cfg);

}  // namespace fracsim
