#include "fracsim/serialize.hpp"

namespace fracsim {

using nlohmann::json;

void to_json(json& j, const SynthDatasetSpec& s) {
  j = json{{"num_classes", s.num_classes},       {"samples_per_class", s.samples_per_class},
           {"time_frames", s.time_frames},       {"freq_bins", s.freq_bins},
           {"noise_level", s.noise_level},       {"time_jitter", s.time_jitter},
           {"train_fraction", s.train_fraction}, {"seed", s.seed}};
}

void from_json(const json& j, SynthDatasetSpec& s) {
  s.num_classes = j.value("num_classes", s.num_classes);
  s.samples_per_class = j.value("samples_per_class", s.samples_per_class);
  s.time_frames = j.value("time_frames", s.time_frames);
  s.freq_bins = j.value("freq_bins", s.freq_bins);
  s.noise_level = j.value("noise_level", s.noise_level);
  s.time_jitter = j.value("time_jitter", s.time_jitter);
  s.train_fraction = j.value("train_fraction", s.train_fraction);
  s.seed = j.value("seed", s.seed);
}

void to_json(json& j, const ActivationShape& s) { j = json::array({s.channels, s.height, s.width}); }

void from_json(const json& j, ActivationShape& s) {
  s.channels = j.at(0).get<Index>();
  s.height = j.at(1).get<Index>();
  s.width = j.at(2).get<Index>();
}

void to_json(json& j, const LayerSpec& s) {
  j = json{{"name", s.name},         {"kind", to_string(s.kind)}, {"out_channels", s.out_channels},
           {"kernel", s.kernel},     {"stride", s.stride},        {"dilation", s.dilation},
           {"padding", s.padding},   {"relu", s.relu},            {"searchable", s.searchable}};
}

void from_json(const json& j, LayerSpec& s) {
  s.name = j.at("name").get<std::string>();
  s.kind = layer_kind_from_string(j.at("kind").get<std::string>());
  s.out_channels = j.value("out_channels", Index{0});
  s.kernel = j.value("kernel", Index{3});
  s.stride = j.value("stride", Index{1});
  s.dilation = j.value("dilation", Index{1});
  s.padding = j.value("padding", Index{0});
  s.relu = j.value("relu", false);
  s.searchable = j.value("searchable", false);
}

void to_json(json& j, const ModelSpec& s) { j = json{{"name", s.name}, {"input", s.input}, {"layers", s.layers}}; }

void from_json(const json& j, ModelSpec& s) {
  s.name = j.at("name").get<std::string>();
  s.input = j.at("input").get<ActivationShape>();
  s.layers = j.at("layers").get<std::vector<LayerSpec>>();
}

void to_json(json& j, const SizeLossConfig& s) {
  j = json{{"s_target_bytes", s.s_target_bytes},
           {"beta", s.beta},
           {"scaler_bytes_per_channel", s.scaler_bytes_per_channel},
           {"include_bias", s.include_bias},
           {"bias_bytes", s.bias_bytes},
           {"unit_bytes", s.unit_bytes}};
}

void from_json(const json& j, SizeLossConfig& s) {
  s.s_target_bytes = j.value("s_target_bytes", s.s_target_bytes);
  s.beta = j.value("beta", s.beta);
  s.scaler_bytes_per_channel = j.value("scaler_bytes_per_channel", s.scaler_bytes_per_channel);
  s.include_bias = j.value("include_bias", s.include_bias);
  s.bias_bytes = j.value("bias_bytes", s.bias_bytes);
  s.unit_bytes = j.value("unit_bytes", s.unit_bytes);
}

void to_json(json& j, const EpisodeConfig& s) {
  j = json{{"n_way", s.n_way}, {"k_shot", s.k_shot}, {"q", s.q}};
}

void to_json(json& j, const TrainConfig& s) {
  j = json{{"epochs_float", s.epochs_float},
           {"epochs_search", s.epochs_search},
           {"epochs_finetune", s.epochs_finetune},
           {"weight_lr", s.weight_lr},
           {"bit_lr", s.bit_lr},
           {"momentum", s.momentum},
           {"calibration_batches", s.calibration_batches},
           {"finetune_lr_scale", s.finetune_lr_scale},
           {"cosine_decay", s.cosine_decay}};
}

void to_json(json& j, const AccelConfig& s) {
  j = json{{"macs_per_cycle_per_bit", s.macs_per_cycle_per_bit},
           {"macs_per_cycle_per_bit_1x1", s.macs_per_cycle_per_bit_1x1},
           {"clock_hz", s.clock_hz},
           {"cin_tile", s.cin_tile},
           {"spatial_tile", s.spatial_tile},
           {"energy_per_cycle_j", s.energy_per_cycle_j},
           {"activation_bits", s.activation_bits},
           {"scaler_bytes_per_channel", s.scaler_bytes_per_channel},
           {"include_bias", s.include_bias},
           {"bias_bytes", s.bias_bytes}};
}

void to_json(json& j, const EvalResult& s) {
  j = json{{"mean_accuracy", s.mean_accuracy}, {"stddev", s.stddev}, {"rounds", s.rounds}};
}

void to_json(json& j, const HistoryEntry& s) {
  j = json{{"phase", s.phase},
           {"epoch", s.epoch},
           {"loss", s.loss},
           {"acc_loss", s.acc_loss},
           {"size_loss", s.size_loss},
           {"train_accuracy", s.train_accuracy},
           {"val_accuracy", s.val_accuracy},
           {"footprint_bytes", s.footprint_bytes},
           {"bits", s.bits}};
}

void to_json(json& j, const LayerCost& s) {
  j = json{{"layer", s.name},
           {"kind", to_string(s.kind)},
           {"bits", s.bits},
           {"weight_count", s.weight_count},
           {"weight_bytes", s.weight_bytes},
           {"scaler_bytes", s.scaler_bytes},
           {"bias_bytes", s.bias_bytes},
           {"memory_bytes", s.memory_bytes()},
           {"cycles", s.cycles},
           {"latency_us", s.latency_s * 1e6},
           {"energy_uj", s.energy_j * 1e6}};
}

void to_json(json& j, const CostReport& s) {
  j = json{{"model", s.model},         {"layers", s.layers},
           {"memory_bytes", s.memory_bytes}, {"cycles", s.cycles},
           {"latency_us", s.latency_s * 1e6}, {"energy_uj", s.energy_j * 1e6}};
}

void to_json(json& j, const EquivalenceReport& s) {
  j = json{{"samples", s.samples},
           {"codes_compared", s.codes_compared},
           {"max_output_abs_diff", s.max_output_abs_diff},
           {"argmax_agreement", s.argmax_agreement}};
}

void to_json(json& j, const SearchResult& s) {
  json bits = json::object();
  for (std::size_t i = 0; i < s.layer_names.size(); ++i) bits[s.layer_names[i]] = s.bits.at(i);
  j = json{{"layer_bits", bits},
           {"accuracy", s.eval.mean_accuracy},
           {"accuracy_std", s.eval.stddev},
           {"footprint_bytes", s.footprint_bytes},
           {"history", s.history}};
}

}  // namespace fracsim
