#pragma once

#include "fracsim/config.hpp"

#include <filesystem>
#include <string>
#include <vector>

namespace fracsim {

/// Trains per cfg.quant.mode (float; float then fixed-bitwidth QAT; float
/// then FracBits search) and writes config.resolved.json, model.bin,
/// model.json, metrics.json and, for quantized modes, bitwidths.json.
void cmd_train(const RunConfig& cfg, const std::filesystem::path& out);

/// FracBits search run. Throws InfeasibleTargetError before writing
/// anything when the target is below the all-2-bit footprint.
void cmd_search(const RunConfig& cfg, const std::filesystem::path& out);

/// Lowers a frozen run to the bit-serial simulator, verifies it against the
/// training forward, and writes cost.csv, cost.json and simulate.json into
/// `out` (the run directory when empty).
void cmd_simulate(const std::filesystem::path& run_dir, const std::filesystem::path& out = {});

/// Writes pareto.csv and comparison.json for runs of one task.
void cmd_pareto(const std::vector<std::filesystem::path>& runs, const std::filesystem::path& out);

/// Writes the configured dataset as dataset.bin / dataset.json.
void cmd_gen_data(const RunConfig& cfg, const std::filesystem::path& out);

/// Display label of a run: float, w<n> or fracbits@<target>.
std::string run_label(const RunConfig& cfg);

}  // namespace fracsim
