#include "fracsim/accel.hpp"
#include "fracsim/config.hpp"
#include "fracsim/errors.hpp"
#include "fracsim/pipeline.hpp"

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include <cstdint>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

namespace {

using nlohmann::json;

constexpr int kExitConfig = 2;
constexpr int kExitInfeasible = 3;
constexpr int kExitInvariant = 4;

struct CommonFlags {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> task;
  std::string out;
};

void add_common(CLI::App* cmd, CommonFlags& flags) {
  cmd->add_option("--config", flags.config, "JSON run configuration")->check(CLI::ExistingFile);
  cmd->add_option("--seed", flags.seed, "master seed (overrides the config)");
  cmd->add_option("--task", flags.task, "generic or fewshot (overrides the config)");
  cmd->add_option("--out", flags.out, "output directory")->required();
}

json base_document(const CommonFlags& flags) {
  json doc = json::object();
  if (!flags.config.empty()) {
    std::ifstream in(flags.config);
    try {
      doc = json::parse(in);
    } catch (const json::parse_error& e) {
      throw fracsim::ConfigError("config file " + flags.config + " is not valid JSON: " + e.what());
    }
    if (!doc.is_object()) throw fracsim::ConfigError("config file " + flags.config + " must hold a JSON object");
  }
  if (flags.seed) doc["seed"] = *flags.seed;
  if (flags.task) doc["task"] = *flags.task;
  return doc;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Mixed-precision search and bit-serial accelerator simulation for small audio models"};
  app.require_subcommand(1);

  CommonFlags train_flags;
  std::optional<std::string> train_mode;
  std::optional<int> train_bits;
  auto* train = app.add_subcommand("train", "train a float or fixed-bitwidth model");
  add_common(train, train_flags);
  train->add_option("--mode", train_mode, "float, fixed or fracbits");
  train->add_option("--bits", train_bits, "weight bitwidth of fixed mode");

  CommonFlags search_flags;
  std::optional<double> target_fraction;
  std::optional<double> target_bytes;
  auto* search = app.add_subcommand("search", "FracBits bitwidth search under a memory target");
  add_common(search, search_flags);
  search->add_option("--target-fraction", target_fraction, "target as a fraction of the 8-bit footprint");
  search->add_option("--target-bytes", target_bytes, "absolute target in bytes");

  std::string sim_run;
  std::string sim_out;
  auto* simulate = app.add_subcommand("simulate", "run a frozen model on the bit-serial simulator");
  simulate->add_option("run", sim_run, "run directory")->required()->check(CLI::ExistingDirectory);
  simulate->add_option("--out", sim_out, "output directory (defaults to the run directory)");

  std::vector<std::string> pareto_runs;
  std::string pareto_out;
  auto* pareto = app.add_subcommand("pareto", "compare runs of one task");
  pareto->add_option("runs", pareto_runs, "run directories")->required();
  pareto->add_option("--out", pareto_out, "output directory")->required();

  CommonFlags data_flags;
  auto* gen_data = app.add_subcommand("gen-data", "write the synthetic dataset");
  add_common(gen_data, data_flags);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : kExitConfig;
  }

  try {
    if (*train) {
      json doc = base_document(train_flags);
      if (train_mode) doc["quant"]["mode"] = *train_mode;
      if (train_bits) {
        doc["quant"]["bits"] = *train_bits;
        if (!train_mode) doc["quant"]["mode"] = "fixed";
      }
      const fracsim::RunConfig cfg = fracsim::parse_config(doc);
      fracsim::cmd_train(cfg, train_flags.out);
      std::cout << "wrote " << fracsim::run_label(cfg) << " run to " << train_flags.out << "\n";
    } else if (*search) {
      json doc = base_document(search_flags);
      doc["quant"]["mode"] = "fracbits";
      if (target_fraction) doc["quant"]["target_fraction"] = *target_fraction;
      if (target_bytes) doc["quant"]["target_bytes"] = *target_bytes;
      const fracsim::RunConfig cfg = fracsim::parse_config(doc);
      fracsim::cmd_search(cfg, search_flags.out);
      std::cout << "wrote " << fracsim::run_label(cfg) << " run to " << search_flags.out << "\n";
    } else if (*simulate) {
      fracsim::cmd_simulate(sim_run, sim_out);
      std::cout << "wrote cost.csv, cost.json and simulate.json to " << (sim_out.empty() ? sim_run : sim_out) << "\n";
    } else if (*pareto) {
      if (pareto_runs.size() < 2) {
        std::cerr << "config error: pareto needs at least two run directories\n" << pareto->help();
        return kExitConfig;
      }
      std::vector<std::filesystem::path> runs(pareto_runs.begin(), pareto_runs.end());
      fracsim::cmd_pareto(runs, pareto_out);
      std::cout << "wrote pareto.csv and comparison.json to " << pareto_out << "\n";
    } else if (*gen_data) {
      const fracsim::RunConfig cfg = fracsim::parse_config(base_document(data_flags));
      fracsim::cmd_gen_data(cfg, data_flags.out);
      std::cout << "wrote dataset to " << data_flags.out << "\n";
    }
  } catch (const fracsim::ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const fracsim::InfeasibleTargetError& e) {
    std::cerr << "infeasible target: " << e.what() << "\n";
    return kExitInfeasible;
  } catch (const fracsim::InvariantViolation& e) {
    std::cerr << "invariant violation: " << e.what() << "\n";
    return kExitInvariant;
  } catch (const fracsim::OverflowError& e) {
    std::cerr << "invariant violation: " << e.what() << "\n";
    return kExitInvariant;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
