#pragma once

#include "fracsim/model.hpp"

#include <filesystem>

namespace fracsim {

/// Writes `model.bin` (every parameter as little-endian float64, layer order,
/// weights before bias) and `model.json` (model spec, tensor shapes and
/// offsets, bitwidths, weight calibration data and activation scales).
void save_checkpoint(const Network& net, const std::filesystem::path& dir);

/// Rebuilds a network saved by save_checkpoint, bit for bit.
Network load_checkpoint(const std::filesystem::path& dir);

}  // namespace fracsim
