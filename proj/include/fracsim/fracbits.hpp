#pragma once

#include "fracsim/autodiff.hpp"
#include "fracsim/quantizer.hpp"

#include <cstdint>
#include <optional>
#include <span>
#include <utility>
#include <vector>

namespace fracsim {

/// Search variable of one layer: a real bitwidth in [2, 8] that becomes an
/// integer once frozen.
struct LayerBitwidthState {
  double n_frac = static_cast<double>(kMaxWeightBits);
  std::optional<int> n_frozen;
  double grad_n = 0.0;

  void clamp();
  /// Integer bitwidth used once frozen; throws before freezing.
  int frozen() const;
};

/// Storage model of the memory term.
struct SizeLossConfig {
  double s_target_bytes = 0.0;
  double beta = 0.1;
  double scaler_bytes_per_channel = 4.0;
  bool include_bias = true;
  double bias_bytes = 4.0;
  /// The loss is reported in multiples of this many bytes (KB by default).
  double unit_bytes = 1024.0;

  void validate() const;
};

/// Footprint contribution of one weight layer.
struct SizeTerm {
  Index weight_count = 0;
  double bits = 8.0;
  Index channel_count = 0;
  Index bias_count = 0;
};

/// Bytes of scalers and biases, independent of the weight bitwidth.
double fixed_overhead_bytes(const SizeTerm& term, const SizeLossConfig& cfg);

/// Σ (weight_count * bits / 8 + overhead) with fractional bits.
double fractional_footprint(std::span<const SizeTerm> terms, const SizeLossConfig& cfg);

/// Byte count of a frozen model: Σ ceil(weight_count * bits / 8) + overhead.
/// Every term's bits must be integral.
std::int64_t frozen_footprint(std::span<const SizeTerm> terms, const SizeLossConfig& cfg);

/// | fractional_footprint - S_target | in units of cfg.unit_bytes.
double size_loss(std::span<const SizeTerm> terms, const SizeLossConfig& cfg);

/// d size_loss / d bits per term (sign of the footprint error times
/// weight_count / 8 / unit). At the kink the subgradient 0 is returned.
std::vector<double> size_loss_grad(std::span<const SizeTerm> terms, const SizeLossConfig& cfg);

/// acc_loss + beta * size_loss.
double total_loss(double acc_loss, double size_loss, double beta = 0.1);

/// Round-half-up to an integer in [2, 8].
int round_half_up_bits(double n_frac);

/// Freezes every state (n_frozen = round-half-up(n_frac)) and returns the
/// integer bitwidths.
std::vector<int> round_and_freeze(std::span<LayerBitwidthState> states);

/// Quantizer pair bracketing n_frac, both derived from the same per-channel
/// max-abs calibration data.
std::pair<QuantSpec<double>, QuantSpec<double>> bracket_specs(double n_frac, const std::vector<double>& max_abs,
                                                              std::optional<Index> channel_axis);

/// (ceil(n) - n) * f_floor(x) + (n - floor(n)) * f_ceil(x); equals f_n(x)
/// exactly when n is integral.
RealTensor interp_fake_quant(const RealTensor& x, double n_frac, const QuantSpec<double>& spec_floor,
                             const QuantSpec<double>& spec_ceil);

/// Σ upstream * (f_ceil(x) - f_floor(x)), the derivative of the interpolated
/// output with respect to n inside a bracket.
double bitwidth_grad(const RealTensor& upstream, const RealTensor& x, const QuantSpec<double>& spec_floor,
                     const QuantSpec<double>& spec_ceil);

/// Graph op: interpolated fake quantization of `x` at the scalar bitwidth
/// node `n`. Gradient w.r.t. x is the interpolated clipped STE; gradient
/// w.r.t. n is bitwidth_grad.
NodeId interp_fake_quant(Graph& g, NodeId x, NodeId n, const std::vector<double>& max_abs,
                         std::optional<Index> channel_axis);

/// Graph op: size loss where `bit_nodes[i]`, when set, supplies term i's bits.
NodeId size_loss(Graph& g, std::span<const std::optional<NodeId>> bit_nodes, std::vector<SizeTerm> terms,
                 const SizeLossConfig& cfg);

}  // namespace fracsim
