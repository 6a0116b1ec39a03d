#include "fracsim/model.hpp"

#include <algorithm>
#include <cmath>
#include <random>
#include <stdexcept>
#include <string>

namespace fracsim {

std::string to_string(LayerKind kind) {
  switch (kind) {
    case LayerKind::Conv2d: return "conv2d";
    case LayerKind::Recurrent: return "recurrent";
    case LayerKind::Dense: return "dense";
    case LayerKind::Pool: return "pool";
    case LayerKind::Activation: return "activation";
  }
  return "unknown";
}

LayerKind layer_kind_from_string(const std::string& name) {
  if (name == "conv2d") return LayerKind::Conv2d;
  if (name == "recurrent") return LayerKind::Recurrent;
  if (name == "dense") return LayerKind::Dense;
  if (name == "pool") return LayerKind::Pool;
  if (name == "activation") return LayerKind::Activation;
  throw std::invalid_argument("unknown layer kind '" + name + "'");
}

Index LayerGeometry::weight_count() const {
  Index total = 0;
  for (const Shape& s : weight_shapes) total += shape_size(s);
  return total;
}

Index LayerGeometry::channel_count() const {
  Index total = 0;
  for (std::size_t m = 0; m < weight_shapes.size(); ++m) {
    // conv weights carry channels on axis 0, matrices on their last axis
    total += weight_shapes[m].size() == 4 ? weight_shapes[m][0] : weight_shapes[m][1];
  }
  return total;
}

Index weight_channel_axis(LayerKind kind) { return kind == LayerKind::Conv2d ? 0 : 1; }

std::vector<LayerGeometry> infer_geometry(const ModelSpec& spec) {
  if (spec.input.size() <= 0) throw DimensionError("model '" + spec.name + "': empty input shape");
  std::vector<LayerGeometry> out;
  ActivationShape cur = spec.input;
  for (const LayerSpec& layer : spec.layers) {
    LayerGeometry geo;
    geo.in = cur;
    const std::string where = "layer '" + layer.name + "'";
    if (layer.has_weights() && layer.out_channels <= 0) {
      throw DimensionError(where + ": axis out_channels must be positive");
    }
    switch (layer.kind) {
      case LayerKind::Conv2d: {
        if (layer.kernel != 1 && layer.kernel != 3) throw DimensionError(where + ": axis kH must be 1 or 3");
        if (layer.stride < 1 || layer.dilation < 1 || layer.padding < 0) {
          throw DimensionError(where + ": invalid stride/dilation/padding");
        }
        const Index ho = conv_output_extent(cur.height, layer.kernel, layer.conv_params());
        const Index wo = conv_output_extent(cur.width, layer.kernel, layer.conv_params());
        if (ho < 1) throw DimensionError(where + ": axis H collapses to " + std::to_string(ho));
        if (wo < 1) throw DimensionError(where + ": axis W collapses to " + std::to_string(wo));
        geo.weight_shapes = {Shape{layer.out_channels, cur.channels, layer.kernel, layer.kernel}};
        geo.bias_count = layer.out_channels;
        cur = {layer.out_channels, ho, wo};
        break;
      }
      case LayerKind::Recurrent: {
        const Index features = cur.channels * cur.width;
        geo.weight_shapes = {Shape{features, layer.out_channels}, Shape{layer.out_channels, layer.out_channels}};
        geo.bias_count = layer.out_channels;
        cur = {layer.out_channels, cur.height, 1};
        break;
      }
      case LayerKind::Dense: {
        geo.weight_shapes = {Shape{cur.size(), layer.out_channels}};
        geo.bias_count = layer.out_channels;
        cur = {layer.out_channels, 1, 1};
        break;
      }
      case LayerKind::Pool:
        cur = {cur.channels, 1, 1};
        break;
      case LayerKind::Activation:
        break;
    }
    geo.out = cur;
    out.push_back(std::move(geo));
  }
  return out;
}

std::vector<std::size_t> weight_layer_indices(const ModelSpec& spec) {
  std::vector<std::size_t> idx;
  for (std::size_t i = 0; i < spec.layers.size(); ++i) {
    if (spec.layers[i].has_weights()) idx.push_back(i);
  }
  return idx;
}

ModelSpec build_dcrnn_analogue(const DcrnnOptions& options) {
  if (!(options.width_scale > 0.0)) throw std::invalid_argument("width_scale must be positive");
  const auto scaled = [&](double base) { return std::max<Index>(1, static_cast<Index>(std::lround(base * options.width_scale))); };
  ModelSpec spec;
  spec.name = "dcrnn";
  spec.input = options.input;
  spec.layers = {
      LayerSpec{"conv1", LayerKind::Conv2d, scaled(16), 3, 2, 1, 1, true, true},
      LayerSpec{"conv2", LayerKind::Conv2d, scaled(32), 3, 2, 2, 2, true, true},
      LayerSpec{"rnn", LayerKind::Recurrent, options.hidden, 1, 1, 1, 0, false, true},
      LayerSpec{"pool", LayerKind::Pool, 0, 1, 1, 1, 0, false, false},
      LayerSpec{"fc", LayerKind::Dense, options.num_classes, 1, 1, 1, 0, false, true},
  };
  infer_geometry(spec);
  return spec;
}

ModelSpec build_protonet_analogue(const ProtonetOptions& options) {
  if (options.embed_dim < 4) throw std::invalid_argument("embed_dim must be at least 4");
  if (!(options.width_scale > 0.0)) throw std::invalid_argument("width_scale must be positive");
  const auto scaled = [&](double base) { return std::max<Index>(1, static_cast<Index>(std::lround(base * options.width_scale))); };
  ModelSpec spec;
  spec.name = "protonet";
  spec.input = options.input;
  spec.layers = {
      LayerSpec{"block1", LayerKind::Conv2d, scaled(8), 3, 2, 1, 1, true, true},
      LayerSpec{"block2", LayerKind::Conv2d, scaled(16), 3, 1, 1, 1, true, true},
      LayerSpec{"block3", LayerKind::Conv2d, scaled(32), 3, 2, 1, 1, true, true},
      LayerSpec{"block4", LayerKind::Conv2d, scaled(32), 3, 2, 1, 1, true, true},
      LayerSpec{"pool", LayerKind::Pool, 0, 1, 1, 1, 0, false, false},
      LayerSpec{"embed", LayerKind::Dense, options.embed_dim, 1, 1, 1, 0, false, true},
  };
  infer_geometry(spec);
  return spec;
}

std::vector<SizeTerm> size_terms(const ModelSpec& spec, const std::vector<double>& bits) {
  const auto geometry = infer_geometry(spec);
  const auto layers = weight_layer_indices(spec);
  if (bits.size() != layers.size()) throw DimensionError("size_terms: one bitwidth per weight layer required");
  std::vector<SizeTerm> terms;
  for (std::size_t k = 0; k < layers.size(); ++k) {
    const LayerGeometry& geo = geometry[layers[k]];
    terms.push_back(SizeTerm{geo.weight_count(), bits[k], geo.channel_count(), geo.bias_count});
  }
  return terms;
}

Network::Network(ModelSpec spec, std::uint64_t seed)
    : spec_(std::move(spec)), geometry_(infer_geometry(spec_)) {
  std::mt19937_64 rng(seed);
  const std::size_t count = spec_.layers.size();
  params_.resize(count);
  bits_.resize(count);
  max_abs_.resize(count);
  act_scales_.assign(count, 1.0);
  for (std::size_t i = 0; i < count; ++i) {
    const LayerSpec& layer = spec_.layers[i];
    const LayerGeometry& geo = geometry_[i];
    if (!layer.has_weights()) continue;
    for (const Shape& s : geo.weight_shapes) {
      double fan_in = 1.0;
      if (s.size() == 4) {
        fan_in = static_cast<double>(s[1] * s[2] * s[3]);
      } else {
        fan_in = static_cast<double>(s[0]);
      }
      const double gain = layer.relu ? 2.0 : 1.0;
      params_[i].weights.push_back(RealTensor::normal(s, rng, std::sqrt(gain / fan_in)));
    }
    params_[i].bias = RealTensor::zeros(Shape{geo.bias_count});
  }
}

std::vector<RealTensor*> Network::parameter_list() {
  std::vector<RealTensor*> out;
  for (LayerParams& p : params_) {
    for (RealTensor& w : p.weights) out.push_back(&w);
    if (!p.weights.empty()) out.push_back(&p.bias);
  }
  return out;
}

std::vector<std::string> Network::layer_names() const {
  std::vector<std::string> names;
  for (const LayerSpec& l : spec_.layers) names.push_back(l.name);
  return names;
}

void Network::recalibrate_weights(std::size_t layer) {
  const LayerSpec& spec = spec_.layers.at(layer);
  if (!spec.has_weights()) return;
  max_abs_[layer].clear();
  for (const RealTensor& w : params_[layer].weights) {
    max_abs_[layer].push_back(channel_max_abs(w, weight_channel_axis(spec.kind)));
  }
}

void Network::recalibrate_all_weights() {
  for (std::size_t i = 0; i < spec_.layers.size(); ++i) recalibrate_weights(i);
}

void Network::begin_quantization(std::optional<int> pinned_bits, const std::vector<RealTensor>& calibration) {
  if (pinned_bits && (*pinned_bits < kMinWeightBits || *pinned_bits > kMaxWeightBits)) {
    throw std::invalid_argument("pinned bitwidth outside [2,8]");
  }
  for (std::size_t i = 0; i < spec_.layers.size(); ++i) {
    const LayerSpec& layer = spec_.layers[i];
    if (!layer.has_weights()) continue;
    LayerBitwidthState& state = bits_[i];
    state = LayerBitwidthState{};
    if (pinned_bits) {
      state.n_frac = *pinned_bits;
      state.n_frozen = *pinned_bits;
    } else if (!layer.searchable) {
      state.n_frozen = kMaxWeightBits;
    }
  }
  recalibrate_all_weights();

  mode_ = QuantMode::Float;
  std::vector<double> act_max(spec_.layers.size(), 0.0);
  for (const RealTensor& batch : calibration) {
    Graph g;
    const BoundParams bound = bind(g, false, false);
    forward(g, bound, g.constant(batch), nullptr, &act_max);
  }
  for (std::size_t i = 0; i < act_max.size(); ++i) {
    act_scales_[i] = act_max[i] > 0.0 ? act_max[i] / max_code(kActivationBits) : 1.0;
  }
  mode_ = QuantMode::Quantized;
}

void Network::restore_quantization(QuantMode mode, std::vector<LayerBitwidthState> bits,
                                   std::vector<std::vector<std::vector<double>>> max_abs,
                                   std::vector<double> act_scales) {
  const std::size_t count = spec_.layers.size();
  if (bits.size() != count || max_abs.size() != count || act_scales.size() != count) {
    throw DimensionError("quantizer state does not match the layer count of '" + spec_.name + "'");
  }
  for (std::size_t i = 0; i < count; ++i) {
    if (mode == QuantMode::Quantized && spec_.layers[i].has_weights() &&
        max_abs[i].size() != params_[i].weights.size()) {
      throw DimensionError("layer '" + spec_.layers[i].name + "': scale data for " + std::to_string(max_abs[i].size()) +
                           " matrices, expected " + std::to_string(params_[i].weights.size()));
    }
  }
  mode_ = mode;
  bits_ = std::move(bits);
  max_abs_ = std::move(max_abs);
  act_scales_ = std::move(act_scales);
}

bool Network::fully_frozen() const {
  if (mode_ != QuantMode::Quantized) return false;
  for (std::size_t i = 0; i < spec_.layers.size(); ++i) {
    if (spec_.layers[i].has_weights() && !bits_[i].n_frozen) return false;
  }
  return true;
}

std::vector<double> Network::current_bits() const {
  std::vector<double> out;
  for (std::size_t i : weight_layer_indices(spec_)) {
    if (mode_ == QuantMode::Float) {
      out.push_back(32.0);
    } else if (bits_[i].n_frozen) {
      out.push_back(*bits_[i].n_frozen);
    } else {
      out.push_back(bits_[i].n_frac);
    }
  }
  return out;
}

std::vector<int> Network::frozen_bits() const {
  std::vector<int> out;
  for (std::size_t i : weight_layer_indices(spec_)) out.push_back(bits_[i].frozen());
  return out;
}

QuantSpec<double> Network::frozen_weight_spec(std::size_t layer, std::size_t matrix) const {
  const int bits = bits_.at(layer).frozen();
  return QuantSpec<double>{bits, scales_from_max_abs(max_abs_.at(layer).at(matrix), bits),
                           weight_channel_axis(spec_.layers[layer].kind)};
}

BoundParams Network::bind(Graph& g, bool trainable_weights, bool trainable_bits) const {
  BoundParams bound;
  const std::size_t count = spec_.layers.size();
  bound.weights.resize(count);
  bound.biases.assign(count, 0);
  bound.bits.resize(count);
  for (std::size_t i = 0; i < count; ++i) {
    if (!spec_.layers[i].has_weights()) continue;
    for (const RealTensor& w : params_[i].weights) {
      bound.weights[i].push_back(trainable_weights ? g.parameter(w) : g.constant(w));
    }
    bound.biases[i] = trainable_weights ? g.parameter(params_[i].bias) : g.constant(params_[i].bias);
    if (mode_ == QuantMode::Quantized && !bits_[i].n_frozen) {
      RealTensor n(Shape{}, Eigen::VectorXd::Constant(1, bits_[i].n_frac));
      bound.bits[i] = trainable_bits ? g.parameter(std::move(n)) : g.constant(std::move(n));
    }
  }
  return bound;
}

NodeId Network::quantize_weight(Graph& g, const BoundParams& bound, std::size_t layer, std::size_t matrix) const {
  const NodeId w = bound.weights[layer][matrix];
  if (mode_ == QuantMode::Float) return w;
  if (bits_[layer].n_frozen) return fake_quant(g, w, frozen_weight_spec(layer, matrix));
  return interp_fake_quant(g, w, bound.bits[layer].value(), max_abs_[layer][matrix],
                           weight_channel_axis(spec_.layers[layer].kind));
}

NodeId Network::quantize_activation(Graph& g, NodeId x, std::size_t layer, std::vector<double>* act_max) const {
  if (act_max) {
    double& m = (*act_max)[layer];
    m = std::max(m, g.value(x).data().cwiseAbs().maxCoeff());
  }
  if (mode_ == QuantMode::Float) return x;
  return fake_quant(g, x, activation_spec(act_scales_[layer]));
}

NodeId Network::forward(Graph& g, const BoundParams& bound, NodeId x, ForwardTrace* trace,
                        std::vector<double>* act_max) const {
  const RealTensor& in = g.value(x);
  expect_rank("network input", in.shape(), 4);
  expect_extent("network input", "C", in.dim(1), spec_.input.channels);
  expect_extent("network input", "H (time)", in.dim(2), spec_.input.height);
  expect_extent("network input", "W (frequency)", in.dim(3), spec_.input.width);
  const Index batch = in.dim(0);
  if (trace) {
    trace->quantized_inputs.assign(spec_.layers.size(), std::nullopt);
    trace->outputs.clear();
  }
  NodeId h = x;
  for (std::size_t i = 0; i < spec_.layers.size(); ++i) {
    const LayerSpec& layer = spec_.layers[i];
    const LayerGeometry& geo = geometry_[i];
    switch (layer.kind) {
      case LayerKind::Conv2d: {
        const NodeId xin = quantize_activation(g, h, i, act_max);
        if (trace && mode_ == QuantMode::Quantized) trace->quantized_inputs[i] = xin;
        h = conv2d(g, xin, quantize_weight(g, bound, i, 0), layer.conv_params());
        h = add_channel_bias(g, h, bound.biases[i]);
        if (layer.relu) h = relu(g, h);
        break;
      }
      case LayerKind::Recurrent: {
        const NodeId xin = quantize_activation(g, h, i, act_max);
        if (trace && mode_ == QuantMode::Quantized) trace->quantized_inputs[i] = xin;
        h = recurrent_tanh(g, xin, quantize_weight(g, bound, i, 0), quantize_weight(g, bound, i, 1), bound.biases[i],
                           mode_ == QuantMode::Quantized ? kHiddenScale : 0.0);
        break;
      }
      case LayerKind::Pool:
        h = reshape(g, global_avg_pool(g, h), Shape{batch, geo.out.channels, 1, 1});
        break;
      case LayerKind::Dense: {
        const NodeId flat = reshape(g, h, Shape{batch, geo.in.size()});
        const NodeId xin = quantize_activation(g, flat, i, act_max);
        if (trace && mode_ == QuantMode::Quantized) trace->quantized_inputs[i] = xin;
        h = dense(g, xin, quantize_weight(g, bound, i, 0), bound.biases[i]);
        if (layer.relu) h = relu(g, h);
        h = reshape(g, h, Shape{batch, geo.out.channels, 1, 1});
        break;
      }
      case LayerKind::Activation:
        h = relu(g, h);
        break;
    }
    if (trace) trace->outputs.push_back(h);
  }
  const ActivationShape& last = geometry_.empty() ? spec_.input : geometry_.back().out;
  return reshape(g, h, Shape{batch, last.size()});
}

void Network::collect_grads(const Graph& g, const BoundParams& bound) {
  for (std::size_t i = 0; i < spec_.layers.size(); ++i) {
    if (!spec_.layers[i].has_weights()) continue;
    for (std::size_t m = 0; m < params_[i].weights.size(); ++m) {
      params_[i].weights[m].set_grad(g.grad(bound.weights[i][m]));
    }
    params_[i].bias.set_grad(g.grad(bound.biases[i]));
    if (bound.bits[i]) bits_[i].grad_n = g.grad(*bound.bits[i])[0];
  }
}

RealTensor Network::infer(const RealTensor& x, Index chunk) const {
  expect_rank("network input", x.shape(), 4);
  const Index n = x.dim(0);
  const Index per_sample = x.size() / std::max<Index>(n, 1);
  const ActivationShape& last = geometry_.empty() ? spec_.input : geometry_.back().out;
  RealTensor out(Shape{n, last.size()});
  for (Index start = 0; start < n; start += chunk) {
    const Index len = std::min(chunk, n - start);
    Shape s = x.shape();
    s[0] = len;
    RealTensor part(s, x.data().segment(start * per_sample, len * per_sample));
    Graph g;
    const BoundParams bound = bind(g, false, false);
    const NodeId y = forward(g, bound, g.constant(std::move(part)));
    out.data().segment(start * last.size(), len * last.size()) = g.value(y).data();
  }
  return out;
}

}  // namespace fracsim
