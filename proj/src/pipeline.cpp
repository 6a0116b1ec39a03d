#include "fracsim/pipeline.hpp"

#include "fracsim/accel.hpp"
#include "fracsim/checkpoint.hpp"
#include "fracsim/errors.hpp"
#include "fracsim/seeding.hpp"
#include "fracsim/serialize.hpp"
#include "fracsim/simulate.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <limits>
#include <numeric>
#include <random>
#include <sstream>

namespace fracsim {

using nlohmann::json;
namespace fs = std::filesystem;

namespace {

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << text;
}

void write_json(const fs::path& path, const json& doc) { write_text(path, doc.dump(2) + "\n"); }

json read_json(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("missing " + path.string());
  return json::parse(in);
}

LayerBits uniform_bits(const ModelSpec& spec, int bits) {
  LayerBits out;
  for (std::size_t i : weight_layer_indices(spec)) out[spec.layers[i].name] = bits;
  return out;
}

LayerBits network_bits(const Network& net) {
  LayerBits out;
  const auto idx = weight_layer_indices(net.spec());
  const auto bits = net.frozen_bits();
  for (std::size_t k = 0; k < idx.size(); ++k) out[net.spec().layers[idx[k]].name] = bits[k];
  return out;
}

std::string format_number(double v) {
  std::ostringstream os;
  os << std::setprecision(12) << v;
  return os.str();
}

// Runs the simulator against the training path on `inputs`.
EquivalenceReport checked_equivalence(const Network& net, const IntegerModel& model, const RealTensor& inputs,
                                      bool require_argmax) {
  const EquivalenceReport report = verify_equivalence(net, model, inputs);
  const RealTensor ref = net.infer(inputs);
  const double tolerance = 1e-9 * (1.0 + ref.data().cwiseAbs().maxCoeff());
  if (!(report.max_output_abs_diff <= tolerance)) {
    throw InvariantViolation("simulator output differs from the training path by " +
                             format_number(report.max_output_abs_diff));
  }
  if (require_argmax && report.argmax_agreement != 1.0) {
    throw InvariantViolation("simulator argmax disagrees with the training path on " +
                             format_number(100.0 * (1.0 - report.argmax_agreement)) + "% of samples");
  }
  return report;
}

}  // namespace

std::string run_label(const RunConfig& cfg) {
  switch (cfg.quant.mode) {
    case QuantKind::Float: return "float";
    case QuantKind::Fixed: return "w" + std::to_string(cfg.quant.bits);
    case QuantKind::FracBits:
      if (cfg.quant.target_bytes) return "fracbits@" + format_number(*cfg.quant.target_bytes) + "B";
      return "fracbits@" + format_number(100.0 * cfg.quant.target_fraction) + "%";
  }
  return "unknown";
}

void cmd_train(const RunConfig& cfg, const fs::path& out) {
  cfg.validate();
  const ModelSpec spec = build_model(cfg);
  SizeLossConfig size = cfg.size;
  size.s_target_bytes = resolved_target_bytes(cfg, spec);
  if (cfg.quant.mode == QuantKind::FracBits) {
    const std::int64_t floor_bytes = min_feasible_footprint(spec, size);
    if (size.s_target_bytes < static_cast<double>(floor_bytes)) {
      throw InfeasibleTargetError("memory target " + format_number(size.s_target_bytes) +
                                  " B is below the all-2-bit footprint of " + std::to_string(floor_bytes) + " B");
    }
  }

  const Dataset data = generate_dataset(resolved_dataset(cfg));
  const auto task = make_task(cfg, data);
  Network net(spec, derive_seed(cfg.seed, "init"));
  const TrainResult float_result = train_float(net, *task, cfg.train, cfg.seed);

  json metrics{{"task", to_string(cfg.task)},
               {"mode", to_string(cfg.quant.mode)},
               {"label", run_label(cfg)},
               {"seed", cfg.seed},
               {"float_accuracy", float_result.eval.mean_accuracy},
               {"float_accuracy_std", float_result.eval.stddev}};
  json history = float_result.history;
  std::optional<SearchResult> search;
  if (cfg.quant.mode == QuantKind::Float) {
    metrics["accuracy"] = float_result.eval.mean_accuracy;
    metrics["accuracy_std"] = float_result.eval.stddev;
    metrics["footprint_bytes"] = uniform_footprint(spec, 32, size);
  } else {
    SearchConfig sc{cfg.train, size, std::nullopt};
    if (cfg.quant.mode == QuantKind::Fixed) sc.pinned_bits = cfg.quant.bits;
    search = run_search(net, *task, sc, cfg.seed);
    for (const HistoryEntry& h : search->history) history.push_back(h);
    metrics["accuracy"] = search->eval.mean_accuracy;
    metrics["accuracy_std"] = search->eval.stddev;
    metrics["footprint_bytes"] = search->footprint_bytes;
    metrics["target_bytes"] = size.s_target_bytes;
    metrics["layer_bits"] = json(*search).at("layer_bits");
  }
  metrics["history"] = history;

  fs::create_directories(out);
  write_json(out / "config.resolved.json", config_to_json(cfg));
  save_checkpoint(net, out);
  write_json(out / "metrics.json", metrics);
  if (search) write_json(out / "bitwidths.json", *search);
}

void cmd_search(const RunConfig& cfg, const fs::path& out) {
  RunConfig search_cfg = cfg;
  search_cfg.quant.mode = QuantKind::FracBits;
  cmd_train(search_cfg, out);
}

void cmd_simulate(const fs::path& run_dir, const fs::path& out_dir) {
  const fs::path out = out_dir.empty() ? run_dir : out_dir;
  const RunConfig cfg = load_config(run_dir / "config.resolved.json");
  const Network net = load_checkpoint(run_dir);
  if (!net.fully_frozen()) throw ConfigError("run " + run_dir.string() + " has no frozen integer bitwidths");
  const json metrics = read_json(run_dir / "metrics.json");

  const IntegerModel model = lower_network(net);
  const Dataset data = generate_dataset(resolved_dataset(cfg));
  std::mt19937_64 rng(derive_seed(cfg.seed, "simulate"));
  std::vector<Index> picks = data.val_indices;
  std::shuffle(picks.begin(), picks.end(), rng);
  picks.resize(std::min<std::size_t>(10, picks.size()));
  const bool classify = cfg.task == TaskKind::Generic;
  const EquivalenceReport random_check = checked_equivalence(net, model, data.gather(picks), classify);
  const EquivalenceReport heldout_check = checked_equivalence(net, model, data.gather(data.val_indices), classify);

  const CostReport report = model_cost(net.spec(), network_bits(net), cfg.accel);
  const auto recorded = metrics.at("footprint_bytes").get<std::int64_t>();
  if (report.memory_bytes != recorded) {
    throw InvariantViolation("simulator memory " + std::to_string(report.memory_bytes) +
                             " B differs from the footprint recorded by training, " + std::to_string(recorded) + " B");
  }

  fs::create_directories(out);
  write_text(out / "cost.csv", cost_csv(report));
  write_json(out / "cost.json", report);
  write_json(out / "simulate.json", json{{"run", run_dir.string()},
                                         {"random_inputs", random_check},
                                         {"heldout", heldout_check},
                                         {"memory_bytes", report.memory_bytes},
                                         {"recorded_footprint_bytes", recorded}});
}

void cmd_pareto(const std::vector<fs::path>& runs, const fs::path& out) {
  if (runs.size() < 2) throw ConfigError("pareto needs at least two run directories");
  std::vector<RunConfig> configs;
  std::vector<json> metrics;
  for (const fs::path& run : runs) {
    configs.push_back(load_config(run / "config.resolved.json"));
    metrics.push_back(read_json(run / "metrics.json"));
  }
  const ModelSpec spec = build_model(configs.front());
  const json spec_json = spec;
  for (std::size_t r = 1; r < runs.size(); ++r) {
    if (configs[r].task != configs.front().task) {
      throw ConfigError("runs mix tasks: " + to_string(configs.front().task) + " (" + runs.front().string() + ") and " +
                        to_string(configs[r].task) + " (" + runs[r].string() + ")");
    }
    if (json(build_model(configs[r])) != spec_json) {
      throw ConfigError("runs use different models: " + runs.front().string() + " and " + runs[r].string());
    }
  }

  const AccelConfig& accel = configs.front().accel;
  std::vector<ModelPoint> points;
  for (std::size_t r = 0; r < runs.size(); ++r) {
    const double accuracy = metrics[r].at("accuracy").get<double>();
    const std::string label = metrics[r].value("label", run_label(configs[r]));
    if (configs[r].quant.mode == QuantKind::Float) {
      points.push_back(ModelPoint{label, memory_footprint(spec, uniform_bits(spec, 32), accel), accuracy, {}, {}, {}});
    } else {
      const LayerBits bits = metrics[r].at("layer_bits").get<LayerBits>();
      points.push_back(make_point(label, model_cost(spec, bits, accel), accuracy));
    }
  }
  const ModelPoint baseline =
      make_point("w8", model_cost(spec, uniform_bits(spec, kMaxWeightBits), accel), std::numeric_limits<double>::quiet_NaN());
  const std::vector<ComparisonRow> rows = compare_models(points, baseline);

  std::ostringstream csv;
  csv << "run,label,mode,memory_bytes,accuracy,accuracy_std,cycles,latency_us,energy_uj,"
         "memory_reduction_pct,latency_reduction_pct,energy_reduction_pct,dominated\n";
  json table = json::array();
  const auto opt = [](const auto& v, double factor = 1.0) {
    return v ? format_number(static_cast<double>(*v) * factor) : std::string();
  };
  for (std::size_t r = 0; r < rows.size(); ++r) {
    const ComparisonRow& row = rows[r];
    const ModelPoint& p = row.point;
    csv << runs[r].string() << ',' << p.label << ',' << to_string(configs[r].quant.mode) << ',' << p.memory_bytes << ','
        << format_number(p.accuracy) << ',' << format_number(metrics[r].value("accuracy_std", 0.0)) << ','
        << opt(p.cycles) << ',' << opt(p.latency_s, 1e6) << ',' << opt(p.energy_j, 1e6) << ','
        << format_number(row.memory_reduction_pct) << ',' << opt(row.latency_reduction_pct) << ','
        << opt(row.energy_reduction_pct) << ',' << (row.dominated ? 1 : 0) << '\n';
    table.push_back({{"run", runs[r].string()},
                     {"label", p.label},
                     {"memory_bytes", p.memory_bytes},
                     {"accuracy", p.accuracy},
                     {"cycles", p.cycles ? json(*p.cycles) : json(nullptr)},
                     {"latency_us", p.latency_s ? json(*p.latency_s * 1e6) : json(nullptr)},
                     {"energy_uj", p.energy_j ? json(*p.energy_j * 1e6) : json(nullptr)},
                     {"memory_reduction_pct", row.memory_reduction_pct},
                     {"latency_reduction_pct", row.latency_reduction_pct ? json(*row.latency_reduction_pct) : json(nullptr)},
                     {"energy_reduction_pct", row.energy_reduction_pct ? json(*row.energy_reduction_pct) : json(nullptr)},
                     {"dominated", row.dominated}});
  }
  fs::create_directories(out);
  write_text(out / "pareto.csv", csv.str());
  write_json(out / "comparison.json",
             json{{"task", to_string(configs.front().task)},
                  {"baseline", {{"label", baseline.label}, {"memory_bytes", baseline.memory_bytes}, {"cycles", *baseline.cycles}}},
                  {"rows", table}});
}

void cmd_gen_data(const RunConfig& cfg, const fs::path& out) {
  cfg.validate();
  const Dataset data = generate_dataset(resolved_dataset(cfg));
  fs::create_directories(out);
  save_dataset(data, out / "dataset");
  write_json(out / "config.resolved.json", config_to_json(cfg));
}

}  // namespace fracsim
