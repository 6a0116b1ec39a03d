#include "fracsim/accel.hpp"

#include "fracsim/quantizer.hpp"

#include <iomanip>
#include <limits>
#include <sstream>

namespace fracsim {

namespace {

constexpr std::int64_t kInt32Min = std::numeric_limits<std::int32_t>::min();
constexpr std::int64_t kInt32Max = std::numeric_limits<std::int32_t>::max();

std::int64_t ceil_div(std::int64_t a, std::int64_t b) { return (a + b - 1) / b; }

struct ConvShape {
  Index batch, c_in, h_in, w_in, c_out, k, h_out, w_out;
};

ConvShape conv_shape(const Shape& weights, const Shape& acts, const Conv2dParams& p) {
  expect_rank("integer conv weights", weights, 4);
  expect_rank("integer conv activations", acts, 4);
  expect_extent("integer conv", "C (weight input channels)", weights[1], acts[1]);
  const Index k = weights[2];
  if (k != 1 && k != 3) throw DimensionError("integer conv: axis kH must be 1 or 3");
  expect_extent("integer conv", "kW", weights[3], k);
  ConvShape s{acts[0], acts[1], acts[2], acts[3], weights[0], k, conv_output_extent(acts[2], k, p),
              conv_output_extent(acts[3], k, p)};
  if (s.h_out < 1 || s.w_out < 1) throw DimensionError("integer conv: empty output");
  return s;
}

std::int32_t checked_narrow(std::int64_t acc, std::string_view layer, Index index) {
  if (acc < kInt32Min || acc > kInt32Max) {
    throw OverflowError("32-bit accumulator overflow in layer '" + std::string(layer) + "' at output index " +
                        std::to_string(index));
  }
  return static_cast<std::int32_t>(acc);
}

// Gathers the receptive field of one output position, zero outside the map.
void gather_window(const CodeTensor& acts, const ConvShape& s, const Conv2dParams& p, Index n, Index oy, Index ox,
                   std::vector<std::int32_t>& window) {
  std::size_t idx = 0;
  for (Index c = 0; c < s.c_in; ++c) {
    for (Index ky = 0; ky < s.k; ++ky) {
      const Index iy = oy * p.stride - p.padding + ky * p.dilation;
      for (Index kx = 0; kx < s.k; ++kx, ++idx) {
        const Index ix = ox * p.stride - p.padding + kx * p.dilation;
        window[idx] = (iy < 0 || iy >= s.h_in || ix < 0 || ix >= s.w_in) ? 0 : acts.at(n, c, iy, ix);
      }
    }
  }
}

}  // namespace

BitPlanePackedWeights pack_bitplanes(const CodeTensor& codes, int bits, std::vector<double> scales) {
  if (bits < kMinWeightBits || bits > kMaxWeightBits) throw std::invalid_argument("bitwidth outside [2,8]");
  const std::int32_t limit = max_code(bits);
  const std::int32_t offset = std::int32_t{1} << (bits - 1);
  BitPlanePackedWeights packed;
  packed.bits = bits;
  packed.shape = codes.shape();
  packed.scales = std::move(scales);
  const auto words = static_cast<std::size_t>((codes.size() + 63) / 64);
  packed.planes.assign(static_cast<std::size_t>(bits), std::vector<std::uint64_t>(words, 0));
  for (Index i = 0; i < codes.size(); ++i) {
    const std::int32_t code = codes[i];
    if (code < -limit || code > limit) {
      throw std::out_of_range("code " + std::to_string(code) + " at index " + std::to_string(i) + " outside the " +
                              std::to_string(bits) + "-bit symmetric range");
    }
    const auto shifted = static_cast<std::uint32_t>(code + offset);
    for (int b = 0; b < bits; ++b) {
      if ((shifted >> b) & 1u) packed.planes[static_cast<std::size_t>(b)][static_cast<std::size_t>(i >> 6)] |= std::uint64_t{1} << (i & 63);
    }
  }
  return packed;
}

CodeTensor unpack_bitplanes(const BitPlanePackedWeights& packed) {
  CodeTensor codes(packed.shape);
  const std::int32_t offset = std::int32_t{1} << (packed.bits - 1);
  for (Index i = 0; i < codes.size(); ++i) {
    std::int32_t v = 0;
    for (int b = 0; b < packed.bits; ++b) v |= static_cast<std::int32_t>(packed.bit(b, i)) << b;
    codes[i] = v - offset;
  }
  return codes;
}

CodeTensor reference_int_conv(const CodeTensor& weights, const CodeTensor& activations, const Conv2dParams& params) {
  const ConvShape s = conv_shape(weights.shape(), activations.shape(), params);
  CodeTensor out(Shape{s.batch, s.c_out, s.h_out, s.w_out});
  for (Index n = 0; n < s.batch; ++n) {
    for (Index o = 0; o < s.c_out; ++o) {
      for (Index oy = 0; oy < s.h_out; ++oy) {
        for (Index ox = 0; ox < s.w_out; ++ox) {
          std::int64_t acc = 0;
          for (Index c = 0; c < s.c_in; ++c) {
            for (Index ky = 0; ky < s.k; ++ky) {
              for (Index kx = 0; kx < s.k; ++kx) {
                const Index iy = oy * params.stride - params.padding + ky * params.dilation;
                const Index ix = ox * params.stride - params.padding + kx * params.dilation;
                if (iy < 0 || iy >= s.h_in || ix < 0 || ix >= s.w_in) continue;
                acc += static_cast<std::int64_t>(weights.at(o, c, ky, kx)) * activations.at(n, c, iy, ix);
              }
            }
          }
          out.at(n, o, oy, ox) = checked_narrow(acc, "reference", ((n * s.c_out + o) * s.h_out + oy) * s.w_out + ox);
        }
      }
    }
  }
  return out;
}

CodeTensor bit_serial_conv(const BitPlanePackedWeights& packed, const CodeTensor& activations,
                           const Conv2dParams& params, std::string_view layer) {
  const ConvShape s = conv_shape(packed.shape, activations.shape(), params);
  const std::int32_t act_limit = max_code(kActivationBits) + 1;
  for (Index i = 0; i < activations.size(); ++i) {
    if (activations[i] < -act_limit || activations[i] >= act_limit) {
      throw std::out_of_range("activation code " + std::to_string(activations[i]) + " outside 8-bit range");
    }
  }
  const Index patch = s.c_in * s.k * s.k;
  const std::int64_t offset = std::int64_t{1} << (packed.bits - 1);
  std::vector<std::int32_t> window(static_cast<std::size_t>(patch));
  CodeTensor out(Shape{s.batch, s.c_out, s.h_out, s.w_out});
  for (Index n = 0; n < s.batch; ++n) {
    for (Index oy = 0; oy < s.h_out; ++oy) {
      for (Index ox = 0; ox < s.w_out; ++ox) {
        gather_window(activations, s, params, n, oy, ox, window);
        std::int64_t window_sum = 0;
        for (std::int32_t a : window) window_sum += a;
        for (Index o = 0; o < s.c_out; ++o) {
          std::int64_t acc = 0;
          // One pass over the same activations per weight bit.
          for (int b = 0; b < packed.bits; ++b) {
            std::int64_t plane_sum = 0;
            for (Index idx = 0; idx < patch; ++idx) {
              if (packed.bit(b, o * patch + idx)) plane_sum += window[static_cast<std::size_t>(idx)];
            }
            acc += plane_sum << b;
          }
          acc -= offset * window_sum;
          const Index flat = ((n * s.c_out + o) * s.h_out + oy) * s.w_out + ox;
          out[flat] = checked_narrow(acc, layer, flat);
        }
      }
    }
  }
  return out;
}

void AccelConfig::validate() const {
  if (macs_per_cycle_per_bit <= 0 || macs_per_cycle_per_bit_1x1 <= 0 || clock_hz <= 0.0 || cin_tile <= 0 ||
      spatial_tile <= 0 || energy_per_cycle_j <= 0.0) {
    throw std::invalid_argument("macs_per_cycle_per_bit, macs_per_cycle_per_bit_1x1, clock_hz, cin_tile, spatial_tile and energy_per_cycle_j must be positive");
  }
  if (activation_bits != kActivationBits) throw std::invalid_argument("activation_bits must be 8");
  const std::int64_t tile = static_cast<std::int64_t>(cin_tile) * spatial_tile * spatial_tile;
  if (macs_per_cycle_per_bit != tile * 9 || macs_per_cycle_per_bit_1x1 != tile) {
    throw std::invalid_argument("macs_per_cycle_per_bit must be 9 and macs_per_cycle_per_bit_1x1 1 x cin_tile x spatial_tile^2");
  }
}

std::int64_t layer_cycles(const LayerSpec& layer, const LayerGeometry& geometry, int bits, const AccelConfig& cfg) {
  if (bits < 1) throw std::invalid_argument("bitwidth must be positive");
  const auto conv_like = [&](Index c_in, Index c_out, Index h_out, Index w_out) {
    return static_cast<std::int64_t>(bits) * ceil_div(c_in, cfg.cin_tile) * c_out * ceil_div(h_out, cfg.spatial_tile) *
           ceil_div(w_out, cfg.spatial_tile);
  };
  switch (layer.kind) {
    case LayerKind::Conv2d:
      return conv_like(geometry.in.channels, geometry.out.channels, geometry.out.height, geometry.out.width);
    case LayerKind::Dense:
      return conv_like(geometry.in.size(), geometry.out.channels, 1, 1);
    case LayerKind::Recurrent: {
      const Index features = geometry.in.channels * geometry.in.width;
      const Index hidden = layer.out_channels;
      const Index steps = geometry.in.height;
      return steps * (conv_like(features, hidden, 1, 1) + conv_like(hidden, hidden, 1, 1));
    }
    case LayerKind::Pool:
    case LayerKind::Activation:
      break;
  }
  throw std::invalid_argument("layer '" + layer.name + "' of kind " + to_string(layer.kind) +
                              " does not run on the accelerator");
}

namespace {

int lookup_bits(const LayerBits& bits, const LayerSpec& layer) {
  const auto it = bits.find(layer.name);
  if (it == bits.end()) throw std::invalid_argument("missing bitwidth for layer '" + layer.name + "'");
  return it->second;
}

LayerCost layer_memory(const LayerSpec& layer, const LayerGeometry& geo, int bits, const AccelConfig& cfg) {
  LayerCost cost;
  cost.name = layer.name;
  cost.kind = layer.kind;
  cost.bits = bits;
  cost.weight_count = 0;
  Index channels = 0;
  for (const Shape& s : geo.weight_shapes) {
    cost.weight_count += shape_size(s);
    channels += s.size() == 4 ? s[0] : s.back();
  }
  cost.weight_bytes = ceil_div(static_cast<std::int64_t>(cost.weight_count) * bits, 8);
  cost.scaler_bytes = std::llround(cfg.scaler_bytes_per_channel * static_cast<double>(channels));
  cost.bias_bytes = cfg.include_bias ? std::llround(cfg.bias_bytes * static_cast<double>(geo.bias_count)) : 0;
  return cost;
}

}  // namespace

std::int64_t memory_footprint(const ModelSpec& model, const LayerBits& bits, const AccelConfig& cfg) {
  const auto geometry = infer_geometry(model);
  std::int64_t total = 0;
  for (std::size_t i = 0; i < model.layers.size(); ++i) {
    const LayerSpec& layer = model.layers[i];
    if (!layer.has_weights()) continue;
    const int n = lookup_bits(bits, layer);
    if (n < 1 || n > 32) throw std::invalid_argument("bitwidth for layer '" + layer.name + "' outside [1,32]");
    total += layer_memory(layer, geometry[i], n, cfg).memory_bytes();
  }
  return total;
}

CostReport model_cost(const ModelSpec& model, const LayerBits& bits, const AccelConfig& cfg) {
  cfg.validate();
  const auto geometry = infer_geometry(model);
  CostReport report;
  report.model = model.name;
  for (std::size_t i = 0; i < model.layers.size(); ++i) {
    const LayerSpec& layer = model.layers[i];
    if (!layer.has_weights()) continue;
    const int n = lookup_bits(bits, layer);
    if (n < kMinWeightBits || n > kMaxWeightBits) {
      throw std::invalid_argument("bitwidth for layer '" + layer.name + "' outside [2,8]");
    }
    LayerCost cost = layer_memory(layer, geometry[i], n, cfg);
    cost.cycles = layer_cycles(layer, geometry[i], n, cfg);
    cost.latency_s = static_cast<double>(cost.cycles) / cfg.clock_hz;
    cost.energy_j = static_cast<double>(cost.cycles) * cfg.energy_per_cycle_j;
    report.memory_bytes += cost.memory_bytes();
    report.cycles += cost.cycles;
    report.layers.push_back(std::move(cost));
  }
  report.latency_s = static_cast<double>(report.cycles) / cfg.clock_hz;
  report.energy_j = static_cast<double>(report.cycles) * cfg.energy_per_cycle_j;
  return report;
}

std::string cost_csv(const CostReport& report) {
  std::ostringstream os;
  os << "layer,bits,weight_bytes,scaler_bytes,cycles,latency_us,energy_uj\n";
  os << std::setprecision(12);
  for (const LayerCost& c : report.layers) {
    os << c.name << ',' << c.bits << ',' << c.weight_bytes << ',' << c.scaler_bytes << ',' << c.cycles << ','
       << c.latency_s * 1e6 << ',' << c.energy_j * 1e6 << '\n';
  }
  return os.str();
}

ModelPoint make_point(std::string label, const CostReport& report, double accuracy) {
  return ModelPoint{std::move(label), report.memory_bytes, accuracy, report.cycles, report.latency_s, report.energy_j};
}

double reduction_pct(double baseline, double value) {
  if (!(baseline > 0.0)) throw std::invalid_argument("baseline must be positive");
  return 100.0 * (baseline - value) / baseline;
}

bool dominates(const ModelPoint& a, const ModelPoint& b) {
  const bool no_worse = a.memory_bytes <= b.memory_bytes && a.accuracy >= b.accuracy;
  const bool better = a.memory_bytes < b.memory_bytes || a.accuracy > b.accuracy;
  return no_worse && better;
}

std::vector<ComparisonRow> compare_models(std::span<const ModelPoint> points, const ModelPoint& baseline) {
  if (points.size() < 2) throw std::invalid_argument("comparison needs at least two configurations");
  std::vector<ComparisonRow> rows;
  for (const ModelPoint& p : points) {
    ComparisonRow row;
    row.point = p;
    row.memory_reduction_pct =
        reduction_pct(static_cast<double>(baseline.memory_bytes), static_cast<double>(p.memory_bytes));
    if (p.latency_s && baseline.latency_s) row.latency_reduction_pct = reduction_pct(*baseline.latency_s, *p.latency_s);
    if (p.energy_j && baseline.energy_j) row.energy_reduction_pct = reduction_pct(*baseline.energy_j, *p.energy_j);
    for (const ModelPoint& other : points) {
      if (&other != &p && dominates(other, p)) row.dominated = true;
    }
    rows.push_back(std::move(row));
  }
  return rows;
}

}  // namespace fracsim
