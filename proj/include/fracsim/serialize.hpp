#pragma once

#include "fracsim/accel.hpp"
#include "fracsim/dataset.hpp"
#include "fracsim/fracbits.hpp"
#include "fracsim/model.hpp"
#include "fracsim/search.hpp"
#include "fracsim/simulate.hpp"
#include "fracsim/tasks.hpp"

#include <nlohmann/json.hpp>

namespace fracsim {

void to_json(nlohmann::json& j, const SynthDatasetSpec& s);
void from_json(const nlohmann::json& j, SynthDatasetSpec& s);

void to_json(nlohmann::json& j, const ActivationShape& s);
void from_json(const nlohmann::json& j, ActivationShape& s);

void to_json(nlohmann::json& j, const LayerSpec& s);
void from_json(const nlohmann::json& j, LayerSpec& s);

void to_json(nlohmann::json& j, const ModelSpec& s);
void from_json(const nlohmann::json& j, ModelSpec& s);

void to_json(nlohmann::json& j, const SizeLossConfig& s);
void from_json(const nlohmann::json& j, SizeLossConfig& s);

void to_json(nlohmann::json& j, const EpisodeConfig& s);

void to_json(nlohmann::json& j, const TrainConfig& s);

void to_json(nlohmann::json& j, const AccelConfig& s);

void to_json(nlohmann::json& j, const EvalResult& s);
void to_json(nlohmann::json& j, const HistoryEntry& s);
void to_json(nlohmann::json& j, const LayerCost& s);
void to_json(nlohmann::json& j, const CostReport& s);
void to_json(nlohmann::json& j, const EquivalenceReport& s);

/// {"layer_bits": {name: bits}, "accuracy", "accuracy_std", "footprint_bytes", "history"}.
void to_json(nlohmann::json& j, const SearchResult& s);

}  // namespace fracsim
