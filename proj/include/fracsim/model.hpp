#pragma once

#include "fracsim/autodiff.hpp"
#include "fracsim/fracbits.hpp"
#include "fracsim/tensor.hpp"

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

namespace fracsim {

enum class LayerKind { Conv2d, Recurrent, Dense, Pool, Activation };

std::string to_string(LayerKind kind);
LayerKind layer_kind_from_string(const std::string& name);

/// One entry of a declarative network description.
///
/// `out_channels` is the output channel count of a convolution, the hidden
/// size of a recurrent layer, or the output feature count of a dense layer.
/// `relu` fuses a ReLU after conv/dense layers.
struct LayerSpec {
  std::string name;
  LayerKind kind = LayerKind::Conv2d;
  Index out_channels = 0;
  Index kernel = 3;
  Index stride = 1;
  Index dilation = 1;
  Index padding = 0;
  bool relu = false;
  bool searchable = false;

  bool has_weights() const { return kind == LayerKind::Conv2d || kind == LayerKind::Recurrent || kind == LayerKind::Dense; }
  Conv2dParams conv_params() const { return Conv2dParams{stride, dilation, padding}; }
};

/// Per-sample activation extents [C, H, W]; H is the time axis of the input map.
struct ActivationShape {
  Index channels = 0;
  Index height = 0;
  Index width = 0;

  Index size() const { return channels * height * width; }
  bool operator==(const ActivationShape&) const = default;
};

struct ModelSpec {
  std::string name;
  ActivationShape input{1, 32, 16};
  std::vector<LayerSpec> layers;
};

/// Static shape information of one layer inside a model.
struct LayerGeometry {
  ActivationShape in;
  ActivationShape out;
  /// Weight tensor shapes: conv [O,C,k,k]; dense [F,G]; recurrent [D,H] and [H,H].
  std::vector<Shape> weight_shapes;
  Index bias_count = 0;

  Index weight_count() const;
  /// One scaler per output channel of every weight matrix.
  Index channel_count() const;
};

/// Checks that consecutive layers compose and returns per-layer geometry.
/// Throws DimensionError naming the offending layer.
std::vector<LayerGeometry> infer_geometry(const ModelSpec& spec);

/// Indices of the layers that own weights, in model order.
std::vector<std::size_t> weight_layer_indices(const ModelSpec& spec);

/// Channel axis of the per-channel weight scales for a weight tensor.
Index weight_channel_axis(LayerKind kind);

struct DcrnnOptions {
  double width_scale = 1.0;
  Index num_classes = 10;
  Index hidden = 32;
  ActivationShape input{1, 32, 16};
};

/// Two dilated convolutions (dilation 1 and 2), a tanh recurrent layer over
/// time, global pooling and a linear classifier.
ModelSpec build_dcrnn_analogue(const DcrnnOptions& options = {});

struct ProtonetOptions {
  Index embed_dim = 32;
  double width_scale = 1.0;
  ActivationShape input{1, 32, 16};
};

/// Four-block convolutional encoder, global pooling and a dense projection to
/// an embedding (no classifier head).
ModelSpec build_protonet_analogue(const ProtonetOptions& options = {});

/// Memory-term view of a model: one SizeTerm per weight layer with the given bits.
std::vector<SizeTerm> size_terms(const ModelSpec& spec, const std::vector<double>& bits);

/// Parameters of one weight layer.
struct LayerParams {
  std::vector<RealTensor> weights;
  RealTensor bias;
};

/// Graph handles produced by Network::bind for one forward pass.
struct BoundParams {
  std::vector<std::vector<NodeId>> weights;  // per model layer (empty if no weights)
  std::vector<NodeId> biases;                // per model layer (unused entries 0)
  std::vector<std::optional<NodeId>> bits;   // per model layer, set for searching layers
};

/// Values recorded during a forward pass.
struct ForwardTrace {
  /// Activation-quantized input of every weight layer (empty optional for
  /// other layers or in float mode).
  std::vector<std::optional<NodeId>> quantized_inputs;
  std::vector<NodeId> outputs;
};

enum class QuantMode { Float, Quantized };

/// A trainable network instance: ModelSpec plus parameters and quantizer state.
///
/// In Quantized mode every weight layer input is fake-quantized to 8 bits at
/// a per-tensor scale, and weights are fake-quantized per output channel:
/// frozen layers at their integer bitwidth, searching layers through the
/// interpolated quantizer at n_frac.
class Network {
 public:
  Network(ModelSpec spec, std::uint64_t seed);

  const ModelSpec& spec() const { return spec_; }
  const std::vector<LayerGeometry>& geometry() const { return geometry_; }
  QuantMode mode() const { return mode_; }

  std::vector<LayerParams>& params() { return params_; }
  const std::vector<LayerParams>& params() const { return params_; }
  /// Flat list of every trainable tensor (weights then bias, per layer).
  std::vector<RealTensor*> parameter_list();

  std::vector<LayerBitwidthState>& bit_states() { return bits_; }
  const std::vector<LayerBitwidthState>& bit_states() const { return bits_; }
  std::vector<std::vector<std::vector<double>>>& weight_max_abs() { return max_abs_; }
  const std::vector<std::vector<std::vector<double>>>& weight_max_abs() const { return max_abs_; }
  std::vector<double>& activation_scales() { return act_scales_; }
  const std::vector<double>& activation_scales() const { return act_scales_; }

  /// Switches to Quantized mode. With `pinned_bits` every weight layer is
  /// frozen at that bitwidth; otherwise searchable layers start searching at
  /// n = 8 and non-searchable weight layers are frozen at 8. Weight scales are
  /// calibrated from the current weights and activation scales from a float
  /// forward over `calibration`.
  void begin_quantization(std::optional<int> pinned_bits, const std::vector<RealTensor>& calibration);

  /// Recomputes the per-channel max-abs data of a layer's weights.
  void recalibrate_weights(std::size_t layer);
  void recalibrate_all_weights();

  /// True when every weight layer has an integer bitwidth.
  bool fully_frozen() const;
  /// Bitwidth per weight layer: frozen value, current n_frac, or 32 in float mode.
  std::vector<double> current_bits() const;
  /// Integer bitwidths keyed by layer index in weight_layer_indices order.
  std::vector<int> frozen_bits() const;

  BoundParams bind(Graph& g, bool trainable_weights, bool trainable_bits) const;

  /// Builds the forward pass for x[N,C,H,W]; returns [N, outputs].
  /// `act_max`, when given, accumulates the running max |x| at every
  /// activation quantization point.
  NodeId forward(Graph& g, const BoundParams& bound, NodeId x, ForwardTrace* trace = nullptr,
                 std::vector<double>* act_max = nullptr) const;

  /// Copies graph gradients into parameter tensors and bit states.
  void collect_grads(const Graph& g, const BoundParams& bound);

  /// Evaluation forward in chunks; returns [N, outputs].
  RealTensor infer(const RealTensor& x, Index chunk = 128) const;

  /// Weight quantizer of a frozen layer's i-th matrix.
  QuantSpec<double> frozen_weight_spec(std::size_t layer, std::size_t matrix) const;

  /// Restores quantizer state saved with a checkpoint.
  void restore_quantization(QuantMode mode, std::vector<LayerBitwidthState> bits,
                            std::vector<std::vector<std::vector<double>>> max_abs, std::vector<double> act_scales);

  /// Per-layer names (model order).
  std::vector<std::string> layer_names() const;

  /// Fixed 8-bit scale of the recurrent hidden state (tanh range).
  static constexpr double kHiddenScale = 1.0 / 127.0;

 private:
  NodeId quantize_weight(Graph& g, const BoundParams& bound, std::size_t layer, std::size_t matrix) const;
  NodeId quantize_activation(Graph& g, NodeId x, std::size_t layer, std::vector<double>* act_max) const;

  ModelSpec spec_;
  std::vector<LayerGeometry> geometry_;
  std::vector<LayerParams> params_;
  QuantMode mode_ = QuantMode::Float;
  std::vector<LayerBitwidthState> bits_;                   // per layer
  std::vector<std::vector<std::vector<double>>> max_abs_;  // per layer, per matrix, per channel
  std::vector<double> act_scales_;                         // per layer (input of weight layers)
};

}  // namespace fracsim
