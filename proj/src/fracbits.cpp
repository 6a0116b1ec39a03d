#include "fracsim/fracbits.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>

namespace fracsim {

void LayerBitwidthState::clamp() {
  n_frac = std::clamp(n_frac, static_cast<double>(kMinWeightBits), static_cast<double>(kMaxWeightBits));
}

int LayerBitwidthState::frozen() const {
  if (!n_frozen) throw std::logic_error("bitwidth has not been frozen");
  return *n_frozen;
}

void SizeLossConfig::validate() const {
  if (!(s_target_bytes > 0.0)) throw std::invalid_argument("S_target must be positive");
  if (beta < 0.0) throw std::invalid_argument("beta must be non-negative");
  if (!(unit_bytes > 0.0)) throw std::invalid_argument("size unit must be positive");
}

double fixed_overhead_bytes(const SizeTerm& term, const SizeLossConfig& cfg) {
  double bytes = cfg.scaler_bytes_per_channel * static_cast<double>(term.channel_count);
  if (cfg.include_bias) bytes += cfg.bias_bytes * static_cast<double>(term.bias_count);
  return bytes;
}

double fractional_footprint(std::span<const SizeTerm> terms, const SizeLossConfig& cfg) {
  double total = 0.0;
  for (const SizeTerm& t : terms) {
    total += static_cast<double>(t.weight_count) * t.bits / 8.0 + fixed_overhead_bytes(t, cfg);
  }
  return total;
}

std::int64_t frozen_footprint(std::span<const SizeTerm> terms, const SizeLossConfig& cfg) {
  std::int64_t total = 0;
  for (const SizeTerm& t : terms) {
    if (t.bits != std::floor(t.bits)) throw std::invalid_argument("frozen footprint needs integer bitwidths");
    const auto bits = static_cast<std::int64_t>(t.bits);
    total += (static_cast<std::int64_t>(t.weight_count) * bits + 7) / 8;
    total += static_cast<std::int64_t>(std::llround(fixed_overhead_bytes(t, cfg)));
  }
  return total;
}

double size_loss(std::span<const SizeTerm> terms, const SizeLossConfig& cfg) {
  return std::abs(fractional_footprint(terms, cfg) - cfg.s_target_bytes) / cfg.unit_bytes;
}

std::vector<double> size_loss_grad(std::span<const SizeTerm> terms, const SizeLossConfig& cfg) {
  const double diff = fractional_footprint(terms, cfg) - cfg.s_target_bytes;
  const double sign = diff > 0.0 ? 1.0 : (diff < 0.0 ? -1.0 : 0.0);
  std::vector<double> grads;
  grads.reserve(terms.size());
  for (const SizeTerm& t : terms) grads.push_back(sign * static_cast<double>(t.weight_count) / 8.0 / cfg.unit_bytes);
  return grads;
}

double total_loss(double acc_loss, double size_loss, double beta) { return acc_loss + beta * size_loss; }

int round_half_up_bits(double n_frac) {
  const int rounded = static_cast<int>(std::floor(n_frac + 0.5));
  return std::clamp(rounded, kMinWeightBits, kMaxWeightBits);
}

std::vector<int> round_and_freeze(std::span<LayerBitwidthState> states) {
  std::vector<int> bits;
  bits.reserve(states.size());
  for (LayerBitwidthState& s : states) {
    if (!s.n_frozen) s.n_frozen = round_half_up_bits(s.n_frac);
    bits.push_back(*s.n_frozen);
  }
  return bits;
}

std::pair<QuantSpec<double>, QuantSpec<double>> bracket_specs(double n_frac, const std::vector<double>& max_abs,
                                                              std::optional<Index> channel_axis) {
  if (n_frac < kMinWeightBits || n_frac > kMaxWeightBits) {
    throw std::invalid_argument("fractional bitwidth " + std::to_string(n_frac) + " outside [2,8]");
  }
  const int lo = static_cast<int>(std::floor(n_frac));
  const int hi = static_cast<int>(std::ceil(n_frac));
  return {QuantSpec<double>{lo, scales_from_max_abs(max_abs, lo), channel_axis},
          QuantSpec<double>{hi, scales_from_max_abs(max_abs, hi), channel_axis}};
}

namespace {

void check_bracket(double n_frac, const QuantSpec<double>& lo, const QuantSpec<double>& hi) {
  if (lo.bitwidth != static_cast<int>(std::floor(n_frac)) || hi.bitwidth != static_cast<int>(std::ceil(n_frac))) {
    throw std::invalid_argument("quantizer bitwidths " + std::to_string(lo.bitwidth) + "/" +
                                std::to_string(hi.bitwidth) + " do not bracket n = " + std::to_string(n_frac));
  }
}

}  // namespace

RealTensor interp_fake_quant(const RealTensor& x, double n_frac, const QuantSpec<double>& spec_floor,
                             const QuantSpec<double>& spec_ceil) {
  check_bracket(n_frac, spec_floor, spec_ceil);
  if (spec_floor.bitwidth == spec_ceil.bitwidth) return fake_quant(x, spec_floor);
  const double w_floor = static_cast<double>(spec_ceil.bitwidth) - n_frac;
  const double w_ceil = n_frac - static_cast<double>(spec_floor.bitwidth);
  const RealTensor lo = fake_quant(x, spec_floor);
  const RealTensor hi = fake_quant(x, spec_ceil);
  return RealTensor(x.shape(), w_floor * lo.data() + w_ceil * hi.data());
}

double bitwidth_grad(const RealTensor& upstream, const RealTensor& x, const QuantSpec<double>& spec_floor,
                     const QuantSpec<double>& spec_ceil) {
  if (upstream.shape() != x.shape()) throw DimensionError("bitwidth_grad: upstream and input shapes differ");
  if (spec_floor.bitwidth == spec_ceil.bitwidth) return 0.0;
  return upstream.data().dot(fake_quant(x, spec_ceil).data() - fake_quant(x, spec_floor).data());
}

NodeId interp_fake_quant(Graph& g, NodeId x, NodeId n, const std::vector<double>& max_abs,
                         std::optional<Index> channel_axis) {
  if (g.value(n).size() != 1) throw DimensionError("interp_fake_quant: bitwidth node must be scalar");
  const double n_frac = g.value(n)[0];
  auto [lo, hi] = bracket_specs(n_frac, max_abs, channel_axis);
  RealTensor out = interp_fake_quant(g.value(x), n_frac, lo, hi);
  return g.emplace(std::move(out), {x, n}, [x, n, n_frac, lo, hi](Graph& gr, NodeId self) {
    const RealTensor up(gr.value(x).shape(), gr.grad_buffer(self));
    const RealTensor& in = gr.value(x);
    if (gr.requires_grad(x)) {
      if (lo.bitwidth == hi.bitwidth) {
        gr.grad_buffer(x) += ste_grad(up, in, lo).data();
      } else {
        const double w_floor = static_cast<double>(hi.bitwidth) - n_frac;
        const double w_ceil = n_frac - static_cast<double>(lo.bitwidth);
        gr.grad_buffer(x) += w_floor * ste_grad(up, in, lo).data() + w_ceil * ste_grad(up, in, hi).data();
      }
    }
    if (gr.requires_grad(n)) gr.grad_buffer(n)[0] += bitwidth_grad(up, in, lo, hi);
  });
}

NodeId size_loss(Graph& g, std::span<const std::optional<NodeId>> bit_nodes, std::vector<SizeTerm> terms,
                 const SizeLossConfig& cfg) {
  if (bit_nodes.size() != terms.size()) throw DimensionError("size_loss: one bit node slot per term required");
  std::vector<NodeId> inputs;
  std::vector<std::size_t> slots;
  for (std::size_t i = 0; i < terms.size(); ++i) {
    if (!bit_nodes[i]) continue;
    terms[i].bits = g.value(*bit_nodes[i])[0];
    inputs.push_back(*bit_nodes[i]);
    slots.push_back(i);
  }
  const double value = size_loss(terms, cfg);
  const std::vector<double> grads = size_loss_grad(terms, cfg);
  RealTensor out(Shape{}, Eigen::VectorXd::Constant(1, value));
  return g.emplace(std::move(out), inputs, [inputs, slots, grads](Graph& gr, NodeId self) {
    const double up = gr.grad_buffer(self)[0];
    for (std::size_t k = 0; k < inputs.size(); ++k) {
      if (gr.requires_grad(inputs[k])) gr.grad_buffer(inputs[k])[0] += up * grads[slots[k]];
    }
  });
}

}  // namespace fracsim
