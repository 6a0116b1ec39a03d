#pragma once

#include "fracsim/accel.hpp"
#include "fracsim/model.hpp"

#include <optional>
#include <vector>

namespace fracsim {

/// A frozen weight layer lowered to packed integer weights.
///
/// Every weight matrix is stored output-channel major: conv [O,C,k,k], dense
/// [G,F,1,1], recurrent input [H,D,1,1] and recurrent state [H,H,1,1].
struct IntegerLayer {
  std::vector<BitPlanePackedWeights> matrices;
  std::vector<double> bias;
  double activation_scale = 1.0;
};

struct IntegerModel {
  ModelSpec spec;
  std::vector<LayerGeometry> geometry;
  /// One entry per model layer; empty matrices for layers without weights.
  std::vector<IntegerLayer> layers;
  double hidden_scale = Network::kHiddenScale;
};

/// Packs the integer codes of a fully frozen network. Throws
/// std::logic_error if any weight layer has no integer bitwidth.
IntegerModel lower_network(const Network& net);

/// Activation codes fed to every weight layer (empty for other layers).
struct SimTrace {
  std::vector<std::optional<CodeTensor>> input_codes;
};

/// Runs x[N,C,H,W] through the bit-serial engine: activations are quantized
/// to 8-bit codes, every weight product is a bit_serial_conv, and the 32-bit
/// accumulators are rescaled by activation and weight scales before bias and
/// nonlinearity. Returns [N, outputs].
RealTensor simulate_forward(const IntegerModel& model, const RealTensor& x, SimTrace* trace = nullptr);

struct EquivalenceReport {
  Index samples = 0;
  Index codes_compared = 0;
  double max_output_abs_diff = 0.0;
  /// Fraction of samples whose output argmax agrees.
  double argmax_agreement = 0.0;
};

/// Compares the simulator against the fake-quantized training forward on
/// `inputs`. Activation codes must agree exactly at every weight layer;
/// throws InvariantViolation naming the layer and element otherwise.
EquivalenceReport verify_equivalence(const Network& net, const IntegerModel& model, const RealTensor& inputs);

}  // namespace fracsim
