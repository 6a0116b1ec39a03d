#include "fracsim/config.hpp"

#include "fracsim/errors.hpp"
#include "fracsim/seeding.hpp"
#include "fracsim/serialize.hpp"

#include <fstream>
#include <initializer_list>
#include <set>

namespace fracsim {

using nlohmann::json;

namespace {

std::string field(const std::string& section, const std::string& key) {
  return section.empty() ? key : section + "." + key;
}

void check_object(const json& obj, const std::string& section) {
  if (!obj.is_object()) throw ConfigError("config field '" + section + "' must be an object");
}

void check_keys(const json& obj, const std::string& section, std::initializer_list<const char*> known) {
  check_object(obj, section.empty() ? "<root>" : section);
  const std::set<std::string> allowed(known.begin(), known.end());
  for (const auto& [key, value] : obj.items()) {
    if (!allowed.contains(key)) throw ConfigError("unknown config field '" + field(section, key) + "'");
  }
}

template <typename T>
void read(const json& obj, const std::string& section, const char* key, T& out) {
  const auto it = obj.find(key);
  if (it == obj.end()) return;
  const bool ok = [&] {
    if constexpr (std::is_same_v<T, bool>) return it->is_boolean();
    else if constexpr (std::is_integral_v<T>) return it->is_number_integer();
    else if constexpr (std::is_floating_point_v<T>) return it->is_number();
    else return it->is_string();
  }();
  if (!ok) throw ConfigError("config field '" + field(section, key) + "' has the wrong type");
  out = it->get<T>();
}

void read_seed(const json& obj, const std::string& section, const char* key, std::uint64_t& out) {
  const auto it = obj.find(key);
  if (it == obj.end()) return;
  if (!it->is_number_unsigned()) {
    throw ConfigError("config field '" + field(section, key) + "' must be a non-negative integer");
  }
  out = it->get<std::uint64_t>();
}

const json& section_of(const json& doc, const char* name) {
  static const json empty = json::object();
  const auto it = doc.find(name);
  return it == doc.end() ? empty : *it;
}

TaskKind task_from_string(const std::string& name) {
  if (name == "generic") return TaskKind::Generic;
  if (name == "fewshot") return TaskKind::FewShot;
  throw ConfigError("config field 'task' must be 'generic' or 'fewshot', got '" + name + "'");
}

QuantKind quant_from_string(const std::string& name) {
  if (name == "float") return QuantKind::Float;
  if (name == "fixed") return QuantKind::Fixed;
  if (name == "fracbits") return QuantKind::FracBits;
  throw ConfigError("config field 'quant.mode' must be float, fixed or fracbits, got '" + name + "'");
}

}  // namespace

std::string to_string(TaskKind kind) { return kind == TaskKind::Generic ? "generic" : "fewshot"; }

std::string to_string(QuantKind kind) {
  switch (kind) {
    case QuantKind::Float: return "float";
    case QuantKind::Fixed: return "fixed";
    case QuantKind::FracBits: return "fracbits";
  }
  return "unknown";
}

RunConfig default_config(TaskKind task) {
  RunConfig cfg;
  cfg.task = task;
  if (task == TaskKind::FewShot) {
    cfg.dataset.num_classes = 20;
    cfg.dataset.samples_per_class = 100;
    // Episodes are fewer optimizer steps per epoch than minibatches; the
    // search keeps the 1:2 search to fine-tune ratio at twice the length.
    cfg.train.epochs_search = 10;
    cfg.train.epochs_finetune = 20;
  }
  return cfg;
}

void RunConfig::validate() const {
  const auto require = [](bool ok, const std::string& what) {
    if (!ok) throw ConfigError("config field " + what);
  };
  require(model.width_scale > 0.0, "'model.width_scale' must be positive");
  require(model.hidden >= 1, "'model.hidden' must be >= 1");
  require(model.embed_dim >= 4, "'model.embed_dim' must be >= 4");
  try {
    dataset.validate();
  } catch (const std::invalid_argument& e) {
    throw ConfigError(std::string("config section 'dataset': ") + e.what());
  }
  require(quant.bits >= kMinWeightBits && quant.bits <= kMaxWeightBits, "'quant.bits' must lie in [2,8]");
  require(!quant.target_bytes || *quant.target_bytes > 0.0, "'quant.target_bytes' must be positive");
  require(quant.target_fraction > 0.0, "'quant.target_fraction' must be positive");
  train.validate();
  require(size.beta >= 0.0, "'size.beta' must be >= 0");
  require(size.unit_bytes > 0.0, "'size.unit_bytes' must be positive");
  require(size.scaler_bytes_per_channel >= 0.0, "'size.scaler_bytes_per_channel' must be >= 0");
  require(size.bias_bytes >= 0.0, "'size.bias_bytes' must be >= 0");
  try {
    accel.validate();
  } catch (const std::invalid_argument& e) {
    throw ConfigError(std::string("config section 'accel': ") + e.what());
  }
  require(batch_size >= 1, "'train.batch_size' must be >= 1");
  require(episodes_per_epoch >= 1, "'train.episodes_per_epoch' must be >= 1");
  require(episode.n_way >= 2 && episode.k_shot >= 1 && episode.q >= 1, "'episode' needs n_way >= 2, k_shot >= 1, q >= 1");
  require(eval_rounds >= 1, "'eval.rounds' must be >= 1");
  require(samples_per_round >= 1, "'eval.samples_per_round' must be >= 1");
  if (task == TaskKind::Generic) {
    const int val = dataset.num_classes * (dataset.samples_per_class - dataset.train_per_class());
    require(val >= samples_per_round, "'eval.samples_per_round' exceeds the " + std::to_string(val) + " validation samples");
  }
  if (task == TaskKind::FewShot) {
    require(dataset.num_classes >= episode.n_way, "'dataset.num_classes' must be >= episode.n_way for the few-shot task");
  }
}

RunConfig parse_config(const json& doc) {
  check_keys(doc, "", {"task", "seed", "model", "dataset", "quant", "train", "size", "accel", "episode", "eval"});
  std::string task_name = "generic";
  read(doc, "", "task", task_name);
  RunConfig cfg = default_config(task_from_string(task_name));
  read_seed(doc, "", "seed", cfg.seed);

  const json& model = section_of(doc, "model");
  check_keys(model, "model", {"width_scale", "hidden", "embed_dim"});
  read(model, "model", "width_scale", cfg.model.width_scale);
  read(model, "model", "hidden", cfg.model.hidden);
  read(model, "model", "embed_dim", cfg.model.embed_dim);

  const json& data = section_of(doc, "dataset");
  check_keys(data, "dataset", {"num_classes", "samples_per_class", "time_frames", "freq_bins", "noise_level",
                               "time_jitter", "train_fraction", "seed"});
  read(data, "dataset", "num_classes", cfg.dataset.num_classes);
  read(data, "dataset", "samples_per_class", cfg.dataset.samples_per_class);
  read(data, "dataset", "time_frames", cfg.dataset.time_frames);
  read(data, "dataset", "freq_bins", cfg.dataset.freq_bins);
  read(data, "dataset", "noise_level", cfg.dataset.noise_level);
  read(data, "dataset", "time_jitter", cfg.dataset.time_jitter);
  read(data, "dataset", "train_fraction", cfg.dataset.train_fraction);
  if (data.contains("seed")) {
    std::uint64_t seed = 0;
    read_seed(data, "dataset", "seed", seed);
    cfg.dataset_seed = seed;
  }

  const json& quant = section_of(doc, "quant");
  check_keys(quant, "quant", {"mode", "bits", "target_bytes", "target_fraction"});
  std::string mode = to_string(cfg.quant.mode);
  read(quant, "quant", "mode", mode);
  cfg.quant.mode = quant_from_string(mode);
  read(quant, "quant", "bits", cfg.quant.bits);
  if (quant.contains("target_bytes") && !quant.at("target_bytes").is_null()) {
    double target = 0.0;
    read(quant, "quant", "target_bytes", target);
    cfg.quant.target_bytes = target;
  }
  read(quant, "quant", "target_fraction", cfg.quant.target_fraction);

  const json& train = section_of(doc, "train");
  check_keys(train, "train", {"epochs_float", "epochs_search", "epochs_finetune", "weight_lr", "bit_lr", "momentum",
                              "calibration_batches", "finetune_lr_scale", "cosine_decay", "batch_size",
                              "episodes_per_epoch"});
  read(train, "train", "epochs_float", cfg.train.epochs_float);
  read(train, "train", "epochs_search", cfg.train.epochs_search);
  read(train, "train", "epochs_finetune", cfg.train.epochs_finetune);
  read(train, "train", "weight_lr", cfg.train.weight_lr);
  read(train, "train", "bit_lr", cfg.train.bit_lr);
  read(train, "train", "momentum", cfg.train.momentum);
  read(train, "train", "calibration_batches", cfg.train.calibration_batches);
  read(train, "train", "finetune_lr_scale", cfg.train.finetune_lr_scale);
  read(train, "train", "cosine_decay", cfg.train.cosine_decay);
  read(train, "train", "batch_size", cfg.batch_size);
  read(train, "train", "episodes_per_epoch", cfg.episodes_per_epoch);

  const json& size = section_of(doc, "size");
  check_keys(size, "size", {"beta", "scaler_bytes_per_channel", "include_bias", "bias_bytes", "unit_bytes"});
  read(size, "size", "beta", cfg.size.beta);
  read(size, "size", "scaler_bytes_per_channel", cfg.size.scaler_bytes_per_channel);
  read(size, "size", "include_bias", cfg.size.include_bias);
  read(size, "size", "bias_bytes", cfg.size.bias_bytes);
  read(size, "size", "unit_bytes", cfg.size.unit_bytes);

  const json& accel = section_of(doc, "accel");
  check_keys(accel, "accel", {"macs_per_cycle_per_bit", "macs_per_cycle_per_bit_1x1", "clock_hz", "cin_tile",
                              "spatial_tile", "energy_per_cycle_j", "activation_bits"});
  read(accel, "accel", "macs_per_cycle_per_bit", cfg.accel.macs_per_cycle_per_bit);
  read(accel, "accel", "macs_per_cycle_per_bit_1x1", cfg.accel.macs_per_cycle_per_bit_1x1);
  read(accel, "accel", "clock_hz", cfg.accel.clock_hz);
  read(accel, "accel", "cin_tile", cfg.accel.cin_tile);
  read(accel, "accel", "spatial_tile", cfg.accel.spatial_tile);
  read(accel, "accel", "energy_per_cycle_j", cfg.accel.energy_per_cycle_j);
  read(accel, "accel", "activation_bits", cfg.accel.activation_bits);
  // Memory is accounted once, from the size section.
  cfg.accel.scaler_bytes_per_channel = cfg.size.scaler_bytes_per_channel;
  cfg.accel.include_bias = cfg.size.include_bias;
  cfg.accel.bias_bytes = cfg.size.bias_bytes;

  const json& episode = section_of(doc, "episode");
  check_keys(episode, "episode", {"n_way", "k_shot", "q"});
  read(episode, "episode", "n_way", cfg.episode.n_way);
  read(episode, "episode", "k_shot", cfg.episode.k_shot);
  read(episode, "episode", "q", cfg.episode.q);

  const json& eval = section_of(doc, "eval");
  check_keys(eval, "eval", {"rounds", "samples_per_round"});
  read(eval, "eval", "rounds", cfg.eval_rounds);
  read(eval, "eval", "samples_per_round", cfg.samples_per_round);

  cfg.validate();
  return cfg;
}

RunConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file " + path.string());
  json doc;
  try {
    doc = json::parse(in);
  } catch (const json::parse_error& e) {
    throw ConfigError("config file " + path.string() + " is not valid JSON: " + e.what());
  }
  return parse_config(doc);
}

json config_to_json(const RunConfig& cfg) {
  json quant{{"mode", to_string(cfg.quant.mode)},
             {"bits", cfg.quant.bits},
             {"target_fraction", cfg.quant.target_fraction},
             {"target_bytes", cfg.quant.target_bytes ? json(*cfg.quant.target_bytes) : json(nullptr)}};
  json train = cfg.train;
  train["batch_size"] = cfg.batch_size;
  train["episodes_per_epoch"] = cfg.episodes_per_epoch;
  json size = cfg.size;
  size.erase("s_target_bytes");
  json accel = cfg.accel;
  for (const char* k : {"scaler_bytes_per_channel", "include_bias", "bias_bytes"}) accel.erase(k);
  return json{{"task", to_string(cfg.task)},
              {"seed", cfg.seed},
              {"model", {{"width_scale", cfg.model.width_scale}, {"hidden", cfg.model.hidden}, {"embed_dim", cfg.model.embed_dim}}},
              {"dataset", resolved_dataset(cfg)},
              {"quant", quant},
              {"train", train},
              {"size", size},
              {"accel", accel},
              {"episode", cfg.episode},
              {"eval", {{"rounds", cfg.eval_rounds}, {"samples_per_round", cfg.samples_per_round}}}};
}

SynthDatasetSpec resolved_dataset(const RunConfig& cfg) {
  SynthDatasetSpec spec = cfg.dataset;
  spec.seed = cfg.dataset_seed ? *cfg.dataset_seed : derive_seed(cfg.seed, "data");
  return spec;
}

ModelSpec build_model(const RunConfig& cfg) {
  const ActivationShape input{1, cfg.dataset.time_frames, cfg.dataset.freq_bins};
  if (cfg.task == TaskKind::Generic) {
    DcrnnOptions opt;
    opt.width_scale = cfg.model.width_scale;
    opt.hidden = cfg.model.hidden;
    opt.num_classes = cfg.dataset.num_classes;
    opt.input = input;
    return build_dcrnn_analogue(opt);
  }
  ProtonetOptions opt;
  opt.width_scale = cfg.model.width_scale;
  opt.embed_dim = cfg.model.embed_dim;
  opt.input = input;
  return build_protonet_analogue(opt);
}

std::unique_ptr<Task> make_task(const RunConfig& cfg, const Dataset& data) {
  if (cfg.task == TaskKind::Generic) {
    return std::make_unique<GenericTask>(data, cfg.batch_size, cfg.eval_rounds, cfg.samples_per_round);
  }
  return std::make_unique<FewShotTask>(data, cfg.episode, cfg.episodes_per_epoch, cfg.eval_rounds);
}

double resolved_target_bytes(const RunConfig& cfg, const ModelSpec& spec) {
  if (cfg.quant.target_bytes) return *cfg.quant.target_bytes;
  SizeLossConfig size = cfg.size;
  size.s_target_bytes = 1.0;
  return cfg.quant.target_fraction * static_cast<double>(uniform_footprint(spec, kMaxWeightBits, size));
}

}  // namespace fracsim
