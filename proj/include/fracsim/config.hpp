#pragma once

#include "fracsim/accel.hpp"
#include "fracsim/dataset.hpp"
#include "fracsim/fracbits.hpp"
#include "fracsim/model.hpp"
#include "fracsim/search.hpp"
#include "fracsim/tasks.hpp"

#include <nlohmann/json.hpp>

#include <cstdint>
#include <filesystem>
#include <memory>
#include <optional>
#include <string>

namespace fracsim {

enum class TaskKind { Generic, FewShot };
enum class QuantKind { Float, Fixed, FracBits };

std::string to_string(TaskKind kind);
std::string to_string(QuantKind kind);

struct ModelOptions {
  double width_scale = 1.0;
  Index hidden = 32;
  Index embed_dim = 32;
};

struct QuantConfig {
  QuantKind mode = QuantKind::Float;
  /// Bitwidth of fixed mode.
  int bits = 8;
  /// Absolute memory target; when empty the target is
  /// target_fraction * (8-bit footprint).
  std::optional<double> target_bytes;
  double target_fraction = 0.5;
};

/// Everything a run depends on. A run is reproducible from this alone.
struct RunConfig {
  TaskKind task = TaskKind::Generic;
  std::uint64_t seed = 1;
  ModelOptions model;
  SynthDatasetSpec dataset;
  /// Dataset seed; derived from `seed` when empty.
  std::optional<std::uint64_t> dataset_seed;
  QuantConfig quant;
  TrainConfig train;
  SizeLossConfig size;
  AccelConfig accel;
  int batch_size = 32;
  EpisodeConfig episode;
  int episodes_per_epoch = 40;
  int eval_rounds = 100;
  int samples_per_round = 60;

  /// Throws ConfigError naming the offending field.
  void validate() const;
};

/// Defaults of a task (the few-shot task uses a larger class pool).
RunConfig default_config(TaskKind task);

/// Reads a config document over the defaults of its task. Unknown fields
/// and wrongly typed values raise ConfigError naming the field.
RunConfig parse_config(const nlohmann::json& doc);
RunConfig load_config(const std::filesystem::path& path);
nlohmann::json config_to_json(const RunConfig& cfg);

/// Dataset spec with the resolved seed.
SynthDatasetSpec resolved_dataset(const RunConfig& cfg);
ModelSpec build_model(const RunConfig& cfg);
std::unique_ptr<Task> make_task(const RunConfig& cfg, const Dataset& data);
/// Memory target in bytes for the configured model.
double resolved_target_bytes(const RunConfig& cfg, const ModelSpec& spec);

}  // namespace fracsim
