#pragma once

#include "fracsim/quantizer.hpp"
#include "fracsim/tensor.hpp"

#include <Eigen/Dense>

#include <cstddef>
#include <functional>
#include <span>
#include <vector>

namespace fracsim {

using NodeId = std::size_t;

/// Tape for reverse-mode differentiation.
///
/// Nodes are appended in evaluation order, so the insertion order is a
/// topological order and backward walks it in reverse, visiting every node
/// that needs a gradient exactly once.
class Graph {
 public:
  using BackwardFn = std::function<void(Graph&, NodeId self)>;

  NodeId constant(RealTensor value);
  NodeId parameter(RealTensor value);

  /// Appends an operation output. `fn` receives the graph and the id of the
  /// new node and must accumulate into the gradients of `inputs`.
  NodeId emplace(RealTensor value, std::vector<NodeId> inputs, BackwardFn fn);

  const RealTensor& value(NodeId id) const { return nodes_.at(id).value; }
  const std::vector<NodeId>& inputs(NodeId id) const { return nodes_.at(id).inputs; }
  bool requires_grad(NodeId id) const { return nodes_.at(id).requires_grad; }
  bool is_parameter(NodeId id) const { return nodes_.at(id).trainable; }
  std::size_t size() const { return nodes_.size(); }

  bool has_grad(NodeId id) const { return nodes_.at(id).grad.size() > 0; }
  /// Gradient of the last backward() loss with respect to `id`; zeros if the
  /// loss does not depend on it.
  Eigen::VectorXd grad(NodeId id) const;
  /// Mutable gradient accumulator, zero-initialized on first access.
  Eigen::VectorXd& grad_buffer(NodeId id);

  /// Populates gradients of every node the scalar `loss` depends on.
  void backward(NodeId loss);

  /// Number of backward functions run by the last backward() call.
  std::size_t backward_visits() const { return visits_; }

 private:
  struct Node {
    RealTensor value;
    Eigen::VectorXd grad;
    std::vector<NodeId> inputs;
    BackwardFn backward;
    bool requires_grad = false;
    bool trainable = false;
  };

  std::vector<Node> nodes_;
  std::size_t visits_ = 0;
};

struct Conv2dParams {
  Index stride = 1;
  Index dilation = 1;
  Index padding = 0;
};

/// Output extent of a convolution along one spatial axis.
constexpr Index conv_output_extent(Index in, Index kernel, const Conv2dParams& p) {
  return (in + 2 * p.padding - p.dilation * (kernel - 1) - 1) / p.stride + 1;
}

// Elementwise and structural ops.
NodeId add(Graph& g, NodeId a, NodeId b);
NodeId mul(Graph& g, NodeId a, NodeId b);
NodeId scale(Graph& g, NodeId a, double factor);
NodeId sum(Graph& g, NodeId a);
NodeId reshape(Graph& g, NodeId a, Shape shape);
NodeId relu(Graph& g, NodeId a);
NodeId tanh(Graph& g, NodeId a);

/// Cross-correlation of x[N,C,H,W] with w[O,C,k,k], k in {1,3}.
NodeId conv2d(Graph& g, NodeId x, NodeId w, const Conv2dParams& params);
/// x[N,C,H,W] + b[C] broadcast over batch and space.
NodeId add_channel_bias(Graph& g, NodeId x, NodeId b);
/// x[N,F] * w[F,G] + b[G].
NodeId dense(Graph& g, NodeId x, NodeId w, NodeId b);
/// Mean over all spatial positions: [N,C,H,W] -> [N,C].
NodeId global_avg_pool(Graph& g, NodeId x);
/// Mean softmax cross-entropy over the batch, logits[N,K].
NodeId softmax_cross_entropy(Graph& g, NodeId logits, std::span<const int> labels);

/// Single-layer tanh recurrence over the time axis.
///
/// x[N,C,T,W] is read as a sequence of T feature vectors of length C*W
/// (index c*W + w). h_t = tanh(x_t wx + q(h_{t-1}) wh + b) with h_{-1} = 0,
/// where q is 8-bit fake quantization at `hidden_scale` (identity when
/// hidden_scale is 0). Output is [N,H,T,1].
NodeId recurrent_tanh(Graph& g, NodeId x, NodeId wx, NodeId wh, NodeId b, double hidden_scale = 0.0);

/// Fake quantization with the clipped straight-through gradient.
NodeId fake_quant(Graph& g, NodeId x, const QuantSpec<double>& spec);

}  // namespace fracsim
