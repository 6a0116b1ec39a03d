#pragma once

#include "fracsim/autodiff.hpp"
#include "fracsim/model.hpp"
#include "fracsim/tensor.hpp"

#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace fracsim {

/// Raised when an integer accumulator leaves the 32-bit range.
class OverflowError : public std::overflow_error {
 public:
  using std::overflow_error::overflow_error;
};

/// Integer weights stored as n bit-planes.
///
/// Codes c in [-(2^(n-1)-1), 2^(n-1)-1] are offset to c + 2^(n-1) >= 1 and
/// plane b holds bit b (LSB first) of every offset code, flat row-major over
/// `shape` = [O, C, kH, kW].
struct BitPlanePackedWeights {
  int bits = 8;
  Shape shape;
  std::vector<std::vector<std::uint64_t>> planes;
  std::vector<double> scales;

  Index element_count() const { return shape_size(shape); }
  std::int64_t storage_bits() const { return static_cast<std::int64_t>(bits) * element_count(); }
  bool bit(int plane, Index i) const {
    return (planes[static_cast<std::size_t>(plane)][static_cast<std::size_t>(i >> 6)] >> (i & 63)) & 1u;
  }
};

BitPlanePackedWeights pack_bitplanes(const CodeTensor& codes, int bits, std::vector<double> scales = {});
CodeTensor unpack_bitplanes(const BitPlanePackedWeights& packed);

/// Direct nested-loop integer convolution of weights[O,C,k,k] with
/// activations[N,C,H,W] (the bit-exact oracle for bit_serial_conv).
CodeTensor reference_int_conv(const CodeTensor& weights, const CodeTensor& activations, const Conv2dParams& params);

/// Bit-serial convolution: for every output, Σ_b 2^b (plane_b ⊛ window)
/// minus 2^(n-1) Σ window. Activations must be 8-bit codes. Throws
/// OverflowError naming `layer` and the output index on 32-bit overflow.
CodeTensor bit_serial_conv(const BitPlanePackedWeights& packed, const CodeTensor& activations,
                           const Conv2dParams& params, std::string_view layer = "");

/// Cost model of an NE16-style bit-serial engine.
///
/// One cycle processes one weight bit of a cin_tile x kH x kW block against
/// a spatial_tile x spatial_tile output tile for one output channel; in 3x3
/// mode that is 16 * 9 * 9 = 1296 one-by-eight-bit MACs, in 1x1 mode 144.
struct AccelConfig {
  std::int64_t macs_per_cycle_per_bit = 1296;
  std::int64_t macs_per_cycle_per_bit_1x1 = 144;
  double clock_hz = 370e6;
  Index cin_tile = 16;
  Index spatial_tile = 3;
  double energy_per_cycle_j = 0.2e-9;
  int activation_bits = 8;
  double scaler_bytes_per_channel = 4.0;
  bool include_bias = true;
  double bias_bytes = 4.0;

  void validate() const;
};

/// Cycles of one layer at weight bitwidth `bits`. Dense layers run as 1x1
/// convolutions on a 1x1 map; recurrent layers cost their two matrix
/// products per time step. Throws std::invalid_argument for pool and
/// activation layers.
std::int64_t layer_cycles(const LayerSpec& layer, const LayerGeometry& geometry, int bits, const AccelConfig& cfg);

using LayerBits = std::map<std::string, int>;

struct LayerCost {
  std::string name;
  LayerKind kind = LayerKind::Conv2d;
  int bits = 0;
  Index weight_count = 0;
  std::int64_t weight_bytes = 0;
  std::int64_t scaler_bytes = 0;
  std::int64_t bias_bytes = 0;
  std::int64_t cycles = 0;
  double latency_s = 0.0;
  double energy_j = 0.0;

  std::int64_t memory_bytes() const { return weight_bytes + scaler_bytes + bias_bytes; }
};

struct CostReport {
  std::string model;
  std::vector<LayerCost> layers;
  std::int64_t memory_bytes = 0;
  std::int64_t cycles = 0;
  double latency_s = 0.0;
  double energy_j = 0.0;
};

/// Weight, scaler and bias bytes of a model: Σ ceil(weights * n / 8) +
/// scalers + biases. Accepts any n in [1, 32] (32 accounts a float model).
std::int64_t memory_footprint(const ModelSpec& model, const LayerBits& bits, const AccelConfig& cfg = {});

/// Per-layer and total memory, cycles, latency and energy. Every weight
/// layer needs a bitwidth in [2, 8].
CostReport model_cost(const ModelSpec& model, const LayerBits& bits, const AccelConfig& cfg = {});

/// CSV with columns layer,bits,weight_bytes,scaler_bytes,cycles,latency_us,energy_uj.
std::string cost_csv(const CostReport& report);

/// One configuration in a comparison. Cost fields are empty for models the
/// accelerator cannot run (float).
struct ModelPoint {
  std::string label;
  std::int64_t memory_bytes = 0;
  double accuracy = 0.0;
  std::optional<std::int64_t> cycles;
  std::optional<double> latency_s;
  std::optional<double> energy_j;
};

ModelPoint make_point(std::string label, const CostReport& report, double accuracy);

struct ComparisonRow {
  ModelPoint point;
  double memory_reduction_pct = 0.0;
  std::optional<double> latency_reduction_pct;
  std::optional<double> energy_reduction_pct;
  bool dominated = false;
};

/// Reduction percentages against `baseline` and Pareto dominance on
/// (memory, accuracy): a point is dominated when another has memory <= and
/// accuracy >= with at least one strict.
std::vector<ComparisonRow> compare_models(std::span<const ModelPoint> points, const ModelPoint& baseline);

/// 100 * (baseline - value) / baseline.
double reduction_pct(double baseline, double value);

bool dominates(const ModelPoint& a, const ModelPoint& b);

}  // namespace fracsim
