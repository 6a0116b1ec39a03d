#pragma once

#include "fracsim/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <optional>
#include <stdexcept>
#include <vector>

namespace fracsim {

inline constexpr int kMinWeightBits = 2;
inline constexpr int kMaxWeightBits = 8;
inline constexpr int kActivationBits = 8;

/// Largest code magnitude of the symmetric signed n-bit grid, 2^(n-1) - 1.
constexpr std::int32_t max_code(int bits) { return (std::int32_t{1} << (bits - 1)) - 1; }

/// Symmetric signed quantizer description.
///
/// `scales` holds one entry per channel along `channel_axis`, or a single
/// entry when `channel_axis` is empty (per-tensor).
template <typename Scalar>
struct QuantSpec {
  int bitwidth = kMaxWeightBits;
  std::vector<Scalar> scales{Scalar(1)};
  std::optional<Index> channel_axis;

  void validate() const {
    if (bitwidth < kMinWeightBits || bitwidth > kMaxWeightBits) {
      throw std::invalid_argument("bitwidth " + std::to_string(bitwidth) + " outside [2,8]");
    }
    if (scales.empty()) throw std::invalid_argument("quantizer has no scales");
    for (Scalar s : scales) {
      if (!(s > Scalar(0))) throw std::invalid_argument("quantizer scale must be positive");
    }
  }
};

/// Per-tensor 8-bit activation quantizer.
template <typename Scalar>
QuantSpec<Scalar> activation_spec(Scalar scale) {
  return QuantSpec<Scalar>{kActivationBits, {scale}, std::nullopt};
}

namespace detail {

/// Maps each flat element index to its channel index along `axis`.
class ChannelIndexer {
 public:
  ChannelIndexer(const Shape& shape, std::optional<Index> axis) {
    if (!axis) return;
    if (*axis < 0 || *axis >= static_cast<Index>(shape.size())) {
      throw DimensionError("channel axis " + std::to_string(*axis) + " outside shape " + shape_string(shape));
    }
    extent_ = shape[static_cast<std::size_t>(*axis)];
    inner_ = 1;
    for (std::size_t d = static_cast<std::size_t>(*axis) + 1; d < shape.size(); ++d) inner_ *= shape[d];
  }
  Index channel_count() const { return extent_; }
  Index operator()(Index flat) const { return extent_ == 1 ? 0 : (flat / inner_) % extent_; }

 private:
  Index extent_ = 1;
  Index inner_ = 1;
};

}  // namespace detail

template <typename Scalar>
std::int32_t quantize_scalar(Scalar x, Scalar scale, int bits) {
  const Scalar m = static_cast<Scalar>(max_code(bits));
  // std::round is half-away-from-zero.
  const Scalar q = std::round(x / scale);
  return static_cast<std::int32_t>(std::clamp(q, -m, m));
}

template <typename Scalar>
Scalar fake_quant_scalar(Scalar x, Scalar scale, int bits) {
  return scale * static_cast<Scalar>(quantize_scalar(x, scale, bits));
}

/// True where the clamp is inactive, i.e. |x / scale| < 2^(n-1) - 1/2.
template <typename Scalar>
bool inside_clamp_range(Scalar x, Scalar scale, int bits) {
  return std::abs(x / scale) < static_cast<Scalar>(max_code(bits)) + Scalar(0.5);
}

/// Largest |value| per channel slice (one entry when `axis` is empty).
template <typename Scalar>
std::vector<Scalar> channel_max_abs(const Tensor<Scalar>& values, std::optional<Index> axis) {
  if (values.size() == 0) throw std::invalid_argument("cannot calibrate an empty tensor");
  detail::ChannelIndexer channel(values.shape(), axis);
  std::vector<Scalar> out(static_cast<std::size_t>(channel.channel_count()), Scalar(0));
  for (Index i = 0; i < values.size(); ++i) {
    auto& m = out[static_cast<std::size_t>(channel(i))];
    m = std::max(m, std::abs(values[i]));
  }
  return out;
}

/// scale = max_abs / (2^(n-1) - 1); a degenerate all-zero slice gets scale 1.
template <typename Scalar>
std::vector<Scalar> scales_from_max_abs(const std::vector<Scalar>& max_abs, int bits) {
  std::vector<Scalar> scales(max_abs.size());
  const Scalar m = static_cast<Scalar>(max_code(bits));
  std::transform(max_abs.begin(), max_abs.end(), scales.begin(),
                 [m](Scalar a) { return a > Scalar(0) ? a / m : Scalar(1); });
  return scales;
}

template <typename Scalar>
std::vector<Scalar> calibrate_scale(const Tensor<Scalar>& values, int bits,
                                    std::optional<Index> per_channel_axis = std::nullopt) {
  if (bits < kMinWeightBits || bits > kMaxWeightBits) {
    throw std::invalid_argument("bitwidth " + std::to_string(bits) + " outside [2,8]");
  }
  return scales_from_max_abs(channel_max_abs(values, per_channel_axis), bits);
}

template <typename Scalar>
QuantSpec<Scalar> calibrated_spec(const Tensor<Scalar>& values, int bits,
                                  std::optional<Index> per_channel_axis = std::nullopt) {
  return QuantSpec<Scalar>{bits, calibrate_scale(values, bits, per_channel_axis), per_channel_axis};
}

template <typename Scalar>
CodeTensor quantize_to_codes(const Tensor<Scalar>& x, const QuantSpec<Scalar>& spec) {
  detail::ChannelIndexer channel(x.shape(), spec.channel_axis);
  CodeTensor codes(x.shape());
  for (Index i = 0; i < x.size(); ++i) {
    codes[i] = quantize_scalar(x[i], spec.scales[static_cast<std::size_t>(channel(i))], spec.bitwidth);
  }
  return codes;
}

template <typename Scalar>
Tensor<Scalar> dequantize(const CodeTensor& codes, const QuantSpec<Scalar>& spec) {
  detail::ChannelIndexer channel(codes.shape(), spec.channel_axis);
  Tensor<Scalar> out(codes.shape());
  for (Index i = 0; i < codes.size(); ++i) {
    out[i] = spec.scales[static_cast<std::size_t>(channel(i))] * static_cast<Scalar>(codes[i]);
  }
  return out;
}

/// Quantize to the n-bit grid and map back to real values.
template <typename Scalar>
Tensor<Scalar> fake_quant(const Tensor<Scalar>& x, const QuantSpec<Scalar>& spec) {
  detail::ChannelIndexer channel(x.shape(), spec.channel_axis);
  Tensor<Scalar> out(x.shape());
  for (Index i = 0; i < x.size(); ++i) {
    out[i] = fake_quant_scalar(x[i], spec.scales[static_cast<std::size_t>(channel(i))], spec.bitwidth);
  }
  return out;
}

/// Clipped straight-through gradient of fake_quant.
template <typename Scalar>
Tensor<Scalar> ste_grad(const Tensor<Scalar>& upstream, const Tensor<Scalar>& x, const QuantSpec<Scalar>& spec) {
  if (upstream.shape() != x.shape()) {
    throw DimensionError("ste_grad: upstream shape " + shape_string(upstream.shape()) + " differs from input shape " +
                         shape_string(x.shape()));
  }
  detail::ChannelIndexer channel(x.shape(), spec.channel_axis);
  Tensor<Scalar> out(x.shape());
  for (Index i = 0; i < x.size(); ++i) {
    const Scalar s = spec.scales[static_cast<std::size_t>(channel(i))];
    out[i] = inside_clamp_range(x[i], s, spec.bitwidth) ? upstream[i] : Scalar(0);
  }
  return out;
}

}  // namespace fracsim
