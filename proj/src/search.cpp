#include "fracsim/search.hpp"

#include "fracsim/errors.hpp"
#include "fracsim/optim.hpp"
#include "fracsim/seeding.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <numeric>

namespace fracsim {

namespace {

double argmax_accuracy(const RealTensor& logits, std::span<const int> labels) {
  const Index classes = logits.dim(1);
  int correct = 0;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    Index best = 0;
    logits.data().segment(static_cast<Index>(i) * classes, classes).maxCoeff(&best);
    correct += best == labels[i] ? 1 : 0;
  }
  return static_cast<double>(correct) / static_cast<double>(labels.size());
}

std::vector<RealTensor> calibration_inputs(const Task& task, int count, std::uint64_t seed) {
  std::mt19937_64 rng(derive_seed(seed, "calibration"));
  std::vector<RealTensor> out;
  for (const Batch& b : task.epoch_batches(rng)) {
    if (static_cast<int>(out.size()) >= count) break;
    out.push_back(task.data().gather(b.items));
  }
  return out;
}

std::string first_non_finite_layer(const Network& net, const Graph& g, const ForwardTrace& trace) {
  const auto& layers = net.spec().layers;
  for (std::size_t i = 0; i < layers.size(); ++i) {
    const LayerParams& p = net.params()[i];
    for (const RealTensor& w : p.weights) {
      if (!w.all_finite()) return layers[i].name + " (weights)";
    }
    if (i < trace.outputs.size() && !g.value(trace.outputs[i]).all_finite()) return layers[i].name;
  }
  return "none (loss only)";
}

// One training epoch. Bit states of searching layers are updated when
// `bit_velocity` is given; activation maxima are collected in `act_max`.
HistoryEntry run_epoch(Network& net, const Task& task, Sgd& opt, const std::string& phase, int epoch,
                       const SizeLossConfig* size, double bit_lr, double momentum,
                       std::vector<double>* bit_velocity, std::vector<double>* act_max, std::mt19937_64& rng) {
  const auto weight_layers = weight_layer_indices(net.spec());
  std::vector<RealTensor*> params = net.parameter_list();
  HistoryEntry entry;
  entry.phase = phase;
  entry.epoch = epoch;
  const auto batches = task.epoch_batches(rng);
  for (const Batch& batch : batches) {
    Graph g;
    const BoundParams bound = net.bind(g, true, bit_velocity != nullptr);
    const NodeId x = g.constant(task.data().gather(batch.items));
    ForwardTrace trace;
    const NodeId out = net.forward(g, bound, x, &trace, act_max);
    double accuracy = 0.0;
    const NodeId acc_loss = task.loss(g, out, batch, &accuracy);
    NodeId loss = acc_loss;
    double size_value = 0.0;
    if (size) {
      std::vector<std::optional<NodeId>> bit_nodes;
      for (std::size_t i : weight_layers) bit_nodes.push_back(bound.bits[i]);
      const NodeId sl = size_loss(g, bit_nodes, size_terms(net.spec(), net.current_bits()), *size);
      size_value = g.value(sl)[0];
      if (bit_velocity) loss = add(g, acc_loss, scale(g, sl, size->beta));
    }
    const double loss_value = g.value(loss)[0];
    if (!std::isfinite(loss_value)) {
      throw NonFiniteLossError("non-finite loss in " + phase + " epoch " + std::to_string(epoch) +
                               "; first non-finite layer: " + first_non_finite_layer(net, g, trace));
    }
    g.backward(loss);
    net.collect_grads(g, bound);
    opt.step(params);
    if (bit_velocity) {
      for (std::size_t i : weight_layers) {
        LayerBitwidthState& s = net.bit_states()[i];
        if (s.n_frozen) continue;
        if (!std::isfinite(s.grad_n)) {
          throw NonFiniteLossError("non-finite bitwidth gradient in " + phase + " epoch " + std::to_string(epoch) +
                                   " at layer " + net.spec().layers[i].name);
        }
        const double before = std::floor(s.n_frac);
        double& v = (*bit_velocity)[i];
        v = momentum * v + s.grad_n;
        s.n_frac -= bit_lr * v;
        s.clamp();
        if (std::floor(s.n_frac) != before) net.recalibrate_weights(i);
      }
    }
    entry.loss += loss_value;
    entry.acc_loss += g.value(acc_loss)[0];
    entry.size_loss += size_value;
    entry.train_accuracy += accuracy;
  }
  const double count = static_cast<double>(std::max<std::size_t>(batches.size(), 1));
  entry.loss /= count;
  entry.acc_loss /= count;
  entry.size_loss /= count;
  entry.train_accuracy /= count;
  return entry;
}

void finish_entry(HistoryEntry& entry, const Network& net, const Task& task, const SizeLossConfig& size,
                  std::uint64_t eval_seed) {
  entry.bits = net.current_bits();
  entry.footprint_bytes = fractional_footprint(size_terms(net.spec(), entry.bits), size);
  entry.val_accuracy = task.evaluate([&net](const RealTensor& x) { return net.infer(x); }, eval_seed).mean_accuracy;
}

double phase_lr(const TrainConfig& cfg, double base, int epoch, int epochs) {
  if (!cfg.cosine_decay || epochs <= 1) return base;
  return base * 0.5 * (1.0 + std::cos(std::numbers::pi * epoch / epochs));
}

void update_activation_scales(Network& net, const std::vector<double>& act_max) {
  auto& scales = net.activation_scales();
  for (std::size_t i = 0; i < act_max.size(); ++i) {
    if (act_max[i] > 0.0) scales[i] = act_max[i] / max_code(kActivationBits);
  }
}

}  // namespace

GenericTask::GenericTask(const Dataset& data, int batch_size, int eval_rounds, int samples_per_round)
    : data_(data), batch_size_(batch_size), eval_rounds_(eval_rounds), samples_per_round_(samples_per_round) {
  if (batch_size < 1) throw ConfigError("batch_size must be >= 1");
}

std::vector<Batch> GenericTask::epoch_batches(std::mt19937_64& rng) const {
  std::vector<Index> order = data_.train_indices;
  std::shuffle(order.begin(), order.end(), rng);
  std::vector<Batch> batches;
  for (std::size_t start = 0; start < order.size(); start += static_cast<std::size_t>(batch_size_)) {
    const std::size_t end = std::min(order.size(), start + static_cast<std::size_t>(batch_size_));
    Batch b;
    b.items.assign(order.begin() + static_cast<std::ptrdiff_t>(start), order.begin() + static_cast<std::ptrdiff_t>(end));
    b.labels = data_.gather_labels(b.items);
    batches.push_back(std::move(b));
  }
  return batches;
}

NodeId GenericTask::loss(Graph& g, NodeId outputs, const Batch& batch, double* accuracy) const {
  if (accuracy) *accuracy = argmax_accuracy(g.value(outputs), batch.labels);
  return softmax_cross_entropy(g, outputs, batch.labels);
}

EvalResult GenericTask::evaluate(const BatchModel& model, std::uint64_t seed) const {
  return evaluate_generic(model, data_, eval_rounds_, samples_per_round_, seed);
}

FewShotTask::FewShotTask(const Dataset& data, EpisodeConfig episode, int episodes_per_epoch, int eval_rounds)
    : data_(data), episode_(episode), episodes_per_epoch_(episodes_per_epoch), eval_rounds_(eval_rounds) {
  if (episodes_per_epoch < 1) throw ConfigError("episodes_per_epoch must be >= 1");
}

std::vector<Batch> FewShotTask::epoch_batches(std::mt19937_64& rng) const {
  std::vector<Batch> batches;
  for (int e = 0; e < episodes_per_epoch_; ++e) {
    Batch b;
    b.episode = sample_episode(data_, data_.train_indices, episode_, rng);
    b.items = b.episode->items();
    batches.push_back(std::move(b));
  }
  return batches;
}

NodeId FewShotTask::loss(Graph& g, NodeId outputs, const Batch& batch, double* accuracy) const {
  if (!batch.episode) throw std::invalid_argument("few-shot batch without an episode");
  return prototypical_loss(g, outputs, *batch.episode, accuracy);
}

EvalResult FewShotTask::evaluate(const BatchModel& model, std::uint64_t seed) const {
  return evaluate_fewshot(model, data_, eval_rounds_, episode_, seed);
}

void TrainConfig::validate() const {
  if (epochs_float < 0) throw ConfigError("train.epochs_float must be >= 0");
  if (epochs_search < 1) throw ConfigError("train.epochs_search must be >= 1");
  if (epochs_finetune < 1) throw ConfigError("train.epochs_finetune must be >= 1");
  if (!(weight_lr > 0.0)) throw ConfigError("train.weight_lr must be positive");
  if (!(bit_lr > 0.0)) throw ConfigError("train.bit_lr must be positive");
  if (momentum < 0.0 || momentum >= 1.0) throw ConfigError("train.momentum must lie in [0,1)");
  if (calibration_batches < 1) throw ConfigError("train.calibration_batches must be >= 1");
  if (!(finetune_lr_scale > 0.0)) throw ConfigError("train.finetune_lr_scale must be positive");
}

TrainResult train_float(Network& net, const Task& task, const TrainConfig& cfg, std::uint64_t seed) {
  if (net.mode() != QuantMode::Float) throw std::logic_error("train_float needs a network in float mode");
  Sgd opt(cfg.weight_lr, cfg.momentum);
  std::mt19937_64 rng(derive_seed(seed, "float"));
  const std::uint64_t eval_seed = derive_seed(seed, "eval");
  SizeLossConfig accounting;
  accounting.s_target_bytes = 1.0;
  TrainResult result;
  for (int epoch = 0; epoch < cfg.epochs_float; ++epoch) {
    opt.set_learning_rate(phase_lr(cfg, cfg.weight_lr, epoch, cfg.epochs_float));
    HistoryEntry entry = run_epoch(net, task, opt, "float", epoch, nullptr, 0.0, 0.0, nullptr, nullptr, rng);
    finish_entry(entry, net, task, accounting, eval_seed);
    result.history.push_back(std::move(entry));
  }
  result.eval = task.evaluate([&net](const RealTensor& x) { return net.infer(x); }, eval_seed);
  return result;
}

SearchResult run_search(Network& net, const Task& task, const SearchConfig& cfg, std::uint64_t seed) {
  cfg.train.validate();
  cfg.size.validate();
  if (net.mode() != QuantMode::Float) throw std::logic_error("run_search starts from a float network");
  net.begin_quantization(cfg.pinned_bits, calibration_inputs(task, cfg.train.calibration_batches, seed));

  const auto weight_layers = weight_layer_indices(net.spec());
  const std::uint64_t eval_seed = derive_seed(seed, "eval");
  std::mt19937_64 rng(derive_seed(seed, "search"));
  SearchResult result;

  Sgd search_opt(cfg.train.weight_lr, cfg.train.momentum);
  std::vector<double> bit_velocity(net.spec().layers.size(), 0.0);
  for (int epoch = 0; epoch < cfg.train.epochs_search; ++epoch) {
    std::vector<double> act_max(net.spec().layers.size(), 0.0);
    HistoryEntry entry = run_epoch(net, task, search_opt, "search", epoch, &cfg.size, cfg.train.bit_lr,
                                   cfg.train.momentum, &bit_velocity, &act_max, rng);
    update_activation_scales(net, act_max);
    finish_entry(entry, net, task, cfg.size, eval_seed);
    result.history.push_back(std::move(entry));
  }

  std::vector<LayerBitwidthState> states;
  for (std::size_t i : weight_layers) states.push_back(net.bit_states()[i]);
  round_and_freeze(states);
  for (std::size_t k = 0; k < weight_layers.size(); ++k) net.bit_states()[weight_layers[k]] = states[k];
  net.recalibrate_all_weights();

  const double finetune_lr = cfg.train.weight_lr * cfg.train.finetune_lr_scale;
  Sgd finetune_opt(finetune_lr, cfg.train.momentum);
  for (int epoch = 0; epoch < cfg.train.epochs_finetune; ++epoch) {
    finetune_opt.set_learning_rate(phase_lr(cfg.train, finetune_lr, epoch, cfg.train.epochs_finetune));
    std::vector<double> act_max(net.spec().layers.size(), 0.0);
    HistoryEntry entry = run_epoch(net, task, finetune_opt, "finetune", epoch, &cfg.size, 0.0, 0.0, nullptr,
                                   &act_max, rng);
    update_activation_scales(net, act_max);
    finish_entry(entry, net, task, cfg.size, eval_seed);
    result.history.push_back(std::move(entry));
  }

  for (std::size_t i : weight_layers) result.layer_names.push_back(net.spec().layers[i].name);
  result.bits = net.frozen_bits();
  result.eval = task.evaluate([&net](const RealTensor& x) { return net.infer(x); }, eval_seed);
  result.footprint_bytes = network_footprint(net, cfg.size);
  return result;
}

std::int64_t network_footprint(const Network& net, const SizeLossConfig& cfg) {
  std::vector<double> bits;
  for (int b : net.frozen_bits()) bits.push_back(b);
  return frozen_footprint(size_terms(net.spec(), bits), cfg);
}

std::int64_t uniform_footprint(const ModelSpec& spec, int bits, const SizeLossConfig& cfg) {
  const std::vector<double> uniform(weight_layer_indices(spec).size(), static_cast<double>(bits));
  return frozen_footprint(size_terms(spec, uniform), cfg);
}

std::int64_t min_feasible_footprint(const ModelSpec& spec, const SizeLossConfig& cfg) {
  return uniform_footprint(spec, kMinWeightBits, cfg);
}

}  // namespace fracsim
