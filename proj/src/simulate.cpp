#include "fracsim/simulate.hpp"

#include "fracsim/errors.hpp"
#include "fracsim/quantizer.hpp"

#include <algorithm>
#include <cmath>
#include <string>

namespace fracsim {

namespace {

constexpr Conv2dParams kPointwise{1, 1, 0};

// [F,G] matrix codes to output-major [G,F,1,1].
CodeTensor transpose_to_pointwise(const CodeTensor& codes) {
  const Index rows = codes.dim(0), cols = codes.dim(1);
  CodeTensor out(Shape{cols, rows, 1, 1});
  for (Index r = 0; r < rows; ++r) {
    for (Index c = 0; c < cols; ++c) out[c * rows + r] = codes.at(r, c);
  }
  return out;
}

CodeTensor activation_codes(const RealTensor& x, double scale) {
  return quantize_to_codes(x, activation_spec(scale));
}

// acc[N,O,H,W] * act_scale * weight_scale[o] + bias[o]
RealTensor rescale(const CodeTensor& acc, double act_scale, const BitPlanePackedWeights& w,
                   const std::vector<double>& bias) {
  RealTensor out(acc.shape());
  const Index channels = acc.dim(1);
  const Index inner = acc.dim(2) * acc.dim(3);
  for (Index i = 0; i < acc.size(); ++i) {
    const Index o = (i / inner) % channels;
    out[i] = static_cast<double>(acc[i]) * act_scale * w.scales[static_cast<std::size_t>(o)] +
             bias[static_cast<std::size_t>(o)];
  }
  return out;
}

void apply_relu(RealTensor& t) { t.data() = t.data().cwiseMax(0.0); }

RealTensor run_recurrent(const IntegerModel& model, const IntegerLayer& layer, const std::string& name,
                         const CodeTensor& codes) {
  const Index batch = codes.dim(0), channels = codes.dim(1), steps = codes.dim(2), width = codes.dim(3);
  const BitPlanePackedWeights& wx = layer.matrices[0];
  const BitPlanePackedWeights& wh = layer.matrices[1];
  const Index hidden = wx.shape[0];
  const Index features = channels * width;
  RealTensor h(Shape{batch, hidden, 1, 1});
  RealTensor out(Shape{batch, hidden, steps, 1});
  for (Index t = 0; t < steps; ++t) {
    CodeTensor frame(Shape{batch, features, 1, 1});
    for (Index n = 0; n < batch; ++n) {
      for (Index c = 0; c < channels; ++c) {
        for (Index w = 0; w < width; ++w) frame[n * features + c * width + w] = codes.at(n, c, t, w);
      }
    }
    const CodeTensor acc_x = bit_serial_conv(wx, frame, kPointwise, name + ".input");
    const CodeTensor acc_h = bit_serial_conv(wh, activation_codes(h, model.hidden_scale), kPointwise, name + ".state");
    for (Index n = 0; n < batch; ++n) {
      for (Index j = 0; j < hidden; ++j) {
        const auto ju = static_cast<std::size_t>(j);
        const double pre = static_cast<double>(acc_x[n * hidden + j]) * layer.activation_scale * wx.scales[ju] +
                           static_cast<double>(acc_h[n * hidden + j]) * model.hidden_scale * wh.scales[ju] +
                           layer.bias[ju];
        h[n * hidden + j] = std::tanh(pre);
        out.at(n, j, t, 0) = h[n * hidden + j];
      }
    }
  }
  return out;
}

}  // namespace

IntegerModel lower_network(const Network& net) {
  if (!net.fully_frozen()) throw std::logic_error("lowering needs a network with every bitwidth frozen");
  IntegerModel model;
  model.spec = net.spec();
  model.geometry = net.geometry();
  model.layers.resize(model.spec.layers.size());
  for (std::size_t i = 0; i < model.spec.layers.size(); ++i) {
    const LayerSpec& spec = model.spec.layers[i];
    if (!spec.has_weights()) continue;
    IntegerLayer& layer = model.layers[i];
    const LayerParams& params = net.params()[i];
    for (std::size_t m = 0; m < params.weights.size(); ++m) {
      const QuantSpec<double> q = net.frozen_weight_spec(i, m);
      CodeTensor codes = quantize_to_codes(params.weights[m], q);
      if (spec.kind != LayerKind::Conv2d) codes = transpose_to_pointwise(codes);
      layer.matrices.push_back(pack_bitplanes(codes, q.bitwidth, q.scales));
    }
    layer.bias.assign(params.bias.data().begin(), params.bias.data().end());
    layer.activation_scale = net.activation_scales()[i];
  }
  return model;
}

RealTensor simulate_forward(const IntegerModel& model, const RealTensor& x, SimTrace* trace) {
  expect_rank("simulator input", x.shape(), 4);
  const Index batch = x.dim(0);
  if (trace) trace->input_codes.assign(model.spec.layers.size(), std::nullopt);
  RealTensor h = x;
  for (std::size_t i = 0; i < model.spec.layers.size(); ++i) {
    const LayerSpec& spec = model.spec.layers[i];
    const LayerGeometry& geo = model.geometry[i];
    const IntegerLayer& layer = model.layers[i];
    switch (spec.kind) {
      case LayerKind::Conv2d: {
        CodeTensor codes = activation_codes(h, layer.activation_scale);
        const CodeTensor acc = bit_serial_conv(layer.matrices[0], codes, spec.conv_params(), spec.name);
        h = rescale(acc, layer.activation_scale, layer.matrices[0], layer.bias);
        if (spec.relu) apply_relu(h);
        if (trace) trace->input_codes[i] = std::move(codes);
        break;
      }
      case LayerKind::Dense: {
        CodeTensor codes = activation_codes(h.reshaped(Shape{batch, geo.in.size(), 1, 1}), layer.activation_scale);
        const CodeTensor acc = bit_serial_conv(layer.matrices[0], codes, kPointwise, spec.name);
        h = rescale(acc, layer.activation_scale, layer.matrices[0], layer.bias);
        if (spec.relu) apply_relu(h);
        if (trace) trace->input_codes[i] = codes.reshaped(Shape{batch, geo.in.size()});
        break;
      }
      case LayerKind::Recurrent: {
        CodeTensor codes = activation_codes(h, layer.activation_scale);
        h = run_recurrent(model, layer, spec.name, codes);
        if (trace) trace->input_codes[i] = std::move(codes);
        break;
      }
      case LayerKind::Pool: {
        const Index channels = h.dim(1), inner = h.dim(2) * h.dim(3);
        RealTensor pooled(Shape{batch, channels, 1, 1});
        for (Index k = 0; k < batch * channels; ++k) pooled[k] = h.data().segment(k * inner, inner).mean();
        h = std::move(pooled);
        break;
      }
      case LayerKind::Activation:
        apply_relu(h);
        break;
    }
  }
  return h.reshaped(Shape{batch, h.size() / std::max<Index>(batch, 1)});
}

EquivalenceReport verify_equivalence(const Network& net, const IntegerModel& model, const RealTensor& inputs) {
  if (net.mode() != QuantMode::Quantized) throw std::logic_error("equivalence check needs a quantized network");
  Graph g;
  const BoundParams bound = net.bind(g, false, false);
  ForwardTrace trace;
  const NodeId out = net.forward(g, bound, g.constant(inputs), &trace);
  SimTrace sim;
  const RealTensor sim_out = simulate_forward(model, inputs, &sim);

  EquivalenceReport report;
  report.samples = inputs.dim(0);
  for (std::size_t i = 0; i < model.spec.layers.size(); ++i) {
    if (!trace.quantized_inputs[i]) continue;
    const RealTensor& fq = g.value(*trace.quantized_inputs[i]);
    const CodeTensor& codes = *sim.input_codes[i];
    const double s = net.activation_scales()[i];
    if (fq.size() != codes.size()) throw InvariantViolation("layer '" + model.spec.layers[i].name + "': code count differs");
    for (Index k = 0; k < fq.size(); ++k) {
      const auto expected = static_cast<std::int32_t>(std::round(fq[k] / s));
      if (expected != codes[k]) {
        throw InvariantViolation("simulator activation code mismatch at layer '" + model.spec.layers[i].name +
                                 "' element " + std::to_string(k) + ": training path " + std::to_string(expected) +
                                 ", simulator " + std::to_string(codes[k]));
      }
    }
    report.codes_compared += fq.size();
  }

  const RealTensor& ref = g.value(out);
  report.max_output_abs_diff = (ref.data() - sim_out.data()).cwiseAbs().maxCoeff();
  const Index width = ref.dim(1);
  Index agree = 0;
  for (Index n = 0; n < report.samples; ++n) {
    Index a = 0, b = 0;
    ref.data().segment(n * width, width).maxCoeff(&a);
    sim_out.data().segment(n * width, width).maxCoeff(&b);
    agree += a == b ? 1 : 0;
  }
  report.argmax_agreement = static_cast<double>(agree) / static_cast<double>(std::max<Index>(report.samples, 1));
  return report;
}

}  // namespace fracsim
