#include "fracsim/autodiff.hpp"

#include <algorithm>
#include <cmath>
#include <memory>
#include <string>

namespace fracsim {

namespace {

using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using RowMap = Eigen::Map<RowMatrix>;
using ConstRowMap = Eigen::Map<const RowMatrix>;

void expect_same_shape(const char* op, const RealTensor& a, const RealTensor& b) {
  if (a.shape() != b.shape()) {
    throw DimensionError(std::string(op) + ": operand shapes " + shape_string(a.shape()) + " and " +
                         shape_string(b.shape()) + " differ");
  }
}

}  // namespace

NodeId Graph::constant(RealTensor value) {
  nodes_.push_back(Node{std::move(value), {}, {}, {}, false, false});
  return nodes_.size() - 1;
}

NodeId Graph::parameter(RealTensor value) {
  nodes_.push_back(Node{std::move(value), {}, {}, {}, true, true});
  return nodes_.size() - 1;
}

NodeId Graph::emplace(RealTensor value, std::vector<NodeId> inputs, BackwardFn fn) {
  bool needs = false;
  for (NodeId in : inputs) {
    if (in >= nodes_.size()) throw std::out_of_range("graph input refers to a later node");
    needs = needs || nodes_[in].requires_grad;
  }
  nodes_.push_back(Node{std::move(value), {}, std::move(inputs), needs ? std::move(fn) : BackwardFn{}, needs, false});
  return nodes_.size() - 1;
}

Eigen::VectorXd Graph::grad(NodeId id) const {
  const Node& n = nodes_.at(id);
  if (n.grad.size() == 0) return Eigen::VectorXd::Zero(n.value.size());
  return n.grad;
}

Eigen::VectorXd& Graph::grad_buffer(NodeId id) {
  Node& n = nodes_.at(id);
  if (n.grad.size() == 0) n.grad = Eigen::VectorXd::Zero(n.value.size());
  return n.grad;
}

void Graph::backward(NodeId loss) {
  if (nodes_.at(loss).value.size() != 1) {
    throw DimensionError("backward: loss must be scalar, got shape " + shape_string(nodes_[loss].value.shape()));
  }
  for (Node& n : nodes_) n.grad.resize(0);
  visits_ = 0;
  grad_buffer(loss).setOnes();
  for (NodeId id = loss + 1; id-- > 0;) {
    Node& n = nodes_[id];
    if (!n.requires_grad || n.grad.size() == 0 || !n.backward) continue;
    ++visits_;
    n.backward(*this, id);
  }
}

NodeId add(Graph& g, NodeId a, NodeId b) {
  expect_same_shape("add", g.value(a), g.value(b));
  RealTensor out(g.value(a).shape(), g.value(a).data() + g.value(b).data());
  return g.emplace(std::move(out), {a, b}, [a, b](Graph& gr, NodeId self) {
    const Eigen::VectorXd up = gr.grad_buffer(self);
    if (gr.requires_grad(a)) gr.grad_buffer(a) += up;
    if (gr.requires_grad(b)) gr.grad_buffer(b) += up;
  });
}

NodeId mul(Graph& g, NodeId a, NodeId b) {
  expect_same_shape("mul", g.value(a), g.value(b));
  RealTensor out(g.value(a).shape(), g.value(a).data().cwiseProduct(g.value(b).data()));
  return g.emplace(std::move(out), {a, b}, [a, b](Graph& gr, NodeId self) {
    const Eigen::VectorXd up = gr.grad_buffer(self);
    if (gr.requires_grad(a)) gr.grad_buffer(a) += up.cwiseProduct(gr.value(b).data());
    if (gr.requires_grad(b)) gr.grad_buffer(b) += up.cwiseProduct(gr.value(a).data());
  });
}

NodeId scale(Graph& g, NodeId a, double factor) {
  RealTensor out(g.value(a).shape(), g.value(a).data() * factor);
  return g.emplace(std::move(out), {a}, [a, factor](Graph& gr, NodeId self) {
    gr.grad_buffer(a) += factor * gr.grad_buffer(self);
  });
}

NodeId sum(Graph& g, NodeId a) {
  RealTensor out(Shape{}, Eigen::VectorXd::Constant(1, g.value(a).data().sum()));
  return g.emplace(std::move(out), {a}, [a](Graph& gr, NodeId self) {
    gr.grad_buffer(a).array() += gr.grad_buffer(self)[0];
  });
}

NodeId reshape(Graph& g, NodeId a, Shape shape) {
  RealTensor out = g.value(a).reshaped(std::move(shape));
  return g.emplace(std::move(out), {a}, [a](Graph& gr, NodeId self) { gr.grad_buffer(a) += gr.grad_buffer(self); });
}

NodeId relu(Graph& g, NodeId a) {
  RealTensor out(g.value(a).shape(), g.value(a).data().cwiseMax(0.0));
  return g.emplace(std::move(out), {a}, [a](Graph& gr, NodeId self) {
    const auto& x = gr.value(a).data();
    const Eigen::VectorXd up = gr.grad_buffer(self);
    // Subgradient at 0 is 0.
    gr.grad_buffer(a) += (x.array() > 0.0).select(up, 0.0);
  });
}

NodeId tanh(Graph& g, NodeId a) {
  RealTensor out(g.value(a).shape(), g.value(a).data().array().tanh().matrix());
  return g.emplace(std::move(out), {a}, [a](Graph& gr, NodeId self) {
    const auto& y = gr.value(self).data();
    gr.grad_buffer(a) += gr.grad_buffer(self).cwiseProduct((1.0 - y.array().square()).matrix());
  });
}

NodeId conv2d(Graph& g, NodeId x, NodeId w, const Conv2dParams& params) {
  const RealTensor& in = g.value(x);
  const RealTensor& kernel = g.value(w);
  expect_rank("conv2d input", in.shape(), 4);
  expect_rank("conv2d weight", kernel.shape(), 4);
  const Index n_batch = in.dim(0), c_in = in.dim(1), h_in = in.dim(2), w_in = in.dim(3);
  const Index c_out = kernel.dim(0), k = kernel.dim(2);
  expect_extent("conv2d", "C (weight input channels)", kernel.dim(1), c_in);
  if (k != 1 && k != 3) throw DimensionError("conv2d: axis kH has extent " + std::to_string(k) + ", expected 1 or 3");
  expect_extent("conv2d", "kW", kernel.dim(3), k);
  if (params.stride < 1 || params.dilation < 1 || params.padding < 0) {
    throw std::invalid_argument("conv2d: stride and dilation must be >= 1, padding >= 0");
  }
  const Index h_out = conv_output_extent(h_in, k, params);
  const Index w_out = conv_output_extent(w_in, k, params);
  if (h_out < 1) throw DimensionError("conv2d: axis H produces empty output (extent " + std::to_string(h_in) + ")");
  if (w_out < 1) throw DimensionError("conv2d: axis W produces empty output (extent " + std::to_string(w_in) + ")");

  const Index patch = c_in * k * k;
  const Index positions = h_out * w_out;
  // Unfolded input, one [patch, positions] block per batch element.
  auto cols = std::make_shared<std::vector<RowMatrix>>(static_cast<std::size_t>(n_batch));
  RealTensor out(Shape{n_batch, c_out, h_out, w_out});
  ConstRowMap wmat(kernel.ptr(), c_out, patch);
  for (Index n = 0; n < n_batch; ++n) {
    RowMatrix& col = (*cols)[static_cast<std::size_t>(n)];
    col.setZero(patch, positions);
    for (Index c = 0; c < c_in; ++c) {
      for (Index ky = 0; ky < k; ++ky) {
        for (Index kx = 0; kx < k; ++kx) {
          const Index row = (c * k + ky) * k + kx;
          for (Index oy = 0; oy < h_out; ++oy) {
            const Index iy = oy * params.stride - params.padding + ky * params.dilation;
            if (iy < 0 || iy >= h_in) continue;
            for (Index ox = 0; ox < w_out; ++ox) {
              const Index ix = ox * params.stride - params.padding + kx * params.dilation;
              if (ix < 0 || ix >= w_in) continue;
              col(row, oy * w_out + ox) = in.at(n, c, iy, ix);
            }
          }
        }
      }
    }
    RowMap(out.ptr() + n * c_out * positions, c_out, positions).noalias() = wmat * col;
  }

  return g.emplace(std::move(out), {x, w},
                   [=](Graph& gr, NodeId self) {
                     const Eigen::VectorXd up = gr.grad_buffer(self);
                     const RealTensor& kern = gr.value(w);
                     ConstRowMap wm(kern.ptr(), c_out, patch);
                     if (gr.requires_grad(w)) {
                       RowMap dw(gr.grad_buffer(w).data(), c_out, patch);
                       for (Index n = 0; n < n_batch; ++n) {
                         ConstRowMap dy(up.data() + n * c_out * positions, c_out, positions);
                         dw.noalias() += dy * (*cols)[static_cast<std::size_t>(n)].transpose();
                       }
                     }
                     if (gr.requires_grad(x)) {
                       Eigen::VectorXd& dx = gr.grad_buffer(x);
                       RowMatrix dcol(patch, positions);
                       for (Index n = 0; n < n_batch; ++n) {
                         ConstRowMap dy(up.data() + n * c_out * positions, c_out, positions);
                         dcol.noalias() = wm.transpose() * dy;
                         for (Index c = 0; c < c_in; ++c) {
                           for (Index ky = 0; ky < k; ++ky) {
                             for (Index kx = 0; kx < k; ++kx) {
                               const Index row = (c * k + ky) * k + kx;
                               for (Index oy = 0; oy < h_out; ++oy) {
                                 const Index iy = oy * params.stride - params.padding + ky * params.dilation;
                                 if (iy < 0 || iy >= h_in) continue;
                                 for (Index ox = 0; ox < w_out; ++ox) {
                                   const Index ix = ox * params.stride - params.padding + kx * params.dilation;
                                   if (ix < 0 || ix >= w_in) continue;
                                   dx[((n * c_in + c) * h_in + iy) * w_in + ix] += dcol(row, oy * w_out + ox);
                                 }
                               }
                             }
                           }
                         }
                       }
                     }
                   });
}

NodeId add_channel_bias(Graph& g, NodeId x, NodeId b) {
  const RealTensor& in = g.value(x);
  expect_rank("add_channel_bias input", in.shape(), 4);
  expect_extent("add_channel_bias", "C", g.value(b).size(), in.dim(1));
  const Index n_batch = in.dim(0), channels = in.dim(1), spatial = in.dim(2) * in.dim(3);
  RealTensor out = in;
  for (Index n = 0; n < n_batch; ++n) {
    for (Index c = 0; c < channels; ++c) {
      out.data().segment((n * channels + c) * spatial, spatial).array() += g.value(b)[c];
    }
  }
  return g.emplace(std::move(out), {x, b}, [=](Graph& gr, NodeId self) {
    const Eigen::VectorXd up = gr.grad_buffer(self);
    if (gr.requires_grad(x)) gr.grad_buffer(x) += up;
    if (gr.requires_grad(b)) {
      Eigen::VectorXd& db = gr.grad_buffer(b);
      for (Index n = 0; n < n_batch; ++n) {
        for (Index c = 0; c < channels; ++c) db[c] += up.segment((n * channels + c) * spatial, spatial).sum();
      }
    }
  });
}

NodeId dense(Graph& g, NodeId x, NodeId w, NodeId b) {
  const RealTensor& in = g.value(x);
  const RealTensor& weight = g.value(w);
  expect_rank("dense input", in.shape(), 2);
  expect_rank("dense weight", weight.shape(), 2);
  const Index n_batch = in.dim(0), f = in.dim(1), out_features = weight.dim(1);
  expect_extent("dense", "F (weight rows)", weight.dim(0), f);
  expect_extent("dense", "G (bias)", g.value(b).size(), out_features);

  RealTensor out(Shape{n_batch, out_features});
  RowMap y(out.ptr(), n_batch, out_features);
  y.noalias() = ConstRowMap(in.ptr(), n_batch, f) * ConstRowMap(weight.ptr(), f, out_features);
  y.rowwise() += g.value(b).data().transpose();

  return g.emplace(std::move(out), {x, w, b}, [=](Graph& gr, NodeId self) {
    const Eigen::VectorXd up = gr.grad_buffer(self);
    ConstRowMap dy(up.data(), n_batch, out_features);
    if (gr.requires_grad(x)) {
      RowMap(gr.grad_buffer(x).data(), n_batch, f).noalias() +=
          dy * ConstRowMap(gr.value(w).ptr(), f, out_features).transpose();
    }
    if (gr.requires_grad(w)) {
      RowMap(gr.grad_buffer(w).data(), f, out_features).noalias() +=
          ConstRowMap(gr.value(x).ptr(), n_batch, f).transpose() * dy;
    }
    if (gr.requires_grad(b)) gr.grad_buffer(b) += dy.colwise().sum().transpose();
  });
}

NodeId global_avg_pool(Graph& g, NodeId x) {
  const RealTensor& in = g.value(x);
  expect_rank("global_avg_pool input", in.shape(), 4);
  const Index n_batch = in.dim(0), channels = in.dim(1), spatial = in.dim(2) * in.dim(3);
  RealTensor out(Shape{n_batch, channels});
  for (Index i = 0; i < n_batch * channels; ++i) out[i] = in.data().segment(i * spatial, spatial).mean();
  return g.emplace(std::move(out), {x}, [=](Graph& gr, NodeId self) {
    const Eigen::VectorXd up = gr.grad_buffer(self);
    Eigen::VectorXd& dx = gr.grad_buffer(x);
    for (Index i = 0; i < n_batch * channels; ++i) {
      dx.segment(i * spatial, spatial).array() += up[i] / static_cast<double>(spatial);
    }
  });
}

NodeId softmax_cross_entropy(Graph& g, NodeId logits, std::span<const int> labels) {
  const RealTensor& z = g.value(logits);
  expect_rank("softmax_cross_entropy logits", z.shape(), 2);
  const Index n_batch = z.dim(0), classes = z.dim(1);
  expect_extent("softmax_cross_entropy", "N (labels)", static_cast<Index>(labels.size()), n_batch);
  RowMatrix probs(n_batch, classes);
  double loss = 0.0;
  for (Index n = 0; n < n_batch; ++n) {
    const int label = labels[static_cast<std::size_t>(n)];
    if (label < 0 || label >= classes) {
      throw std::out_of_range("softmax_cross_entropy: label " + std::to_string(label) + " outside [0," +
                              std::to_string(classes) + ")");
    }
    const auto row = ConstRowMap(z.ptr(), n_batch, classes).row(n);
    const double m = row.maxCoeff();
    const Eigen::RowVectorXd e = (row.array() - m).exp().matrix();
    const double total = e.sum();
    probs.row(n) = e / total;
    loss += (m + std::log(total)) - row(label);
  }
  loss /= static_cast<double>(n_batch);
  std::vector<int> kept(labels.begin(), labels.end());
  RealTensor out(Shape{}, Eigen::VectorXd::Constant(1, loss));
  return g.emplace(std::move(out), {logits},
                   [=, probs = std::move(probs), kept = std::move(kept)](Graph& gr, NodeId self) {
                     const double up = gr.grad_buffer(self)[0] / static_cast<double>(n_batch);
                     RowMap dz(gr.grad_buffer(logits).data(), n_batch, classes);
                     for (Index n = 0; n < n_batch; ++n) {
                       dz.row(n) += up * probs.row(n);
                       dz(n, kept[static_cast<std::size_t>(n)]) -= up;
                     }
                   });
}

NodeId recurrent_tanh(Graph& g, NodeId x, NodeId wx, NodeId wh, NodeId b, double hidden_scale) {
  const RealTensor& in = g.value(x);
  expect_rank("recurrent_tanh input", in.shape(), 4);
  const Index n_batch = in.dim(0), c = in.dim(1), steps = in.dim(2), width = in.dim(3);
  const Index features = c * width;
  const RealTensor& w_in = g.value(wx);
  const RealTensor& w_rec = g.value(wh);
  expect_rank("recurrent_tanh input weight", w_in.shape(), 2);
  expect_extent("recurrent_tanh", "D (input weight rows)", w_in.dim(0), features);
  const Index hidden = w_in.dim(1);
  expect_extent("recurrent_tanh", "H (recurrent weight rows)", w_rec.dim(0), hidden);
  expect_extent("recurrent_tanh", "H (recurrent weight cols)", w_rec.dim(1), hidden);
  expect_extent("recurrent_tanh", "H (bias)", g.value(b).size(), hidden);

  auto frames = std::make_shared<std::vector<RowMatrix>>();  // x_t, [N,D]
  auto quantized_prev = std::make_shared<std::vector<RowMatrix>>();  // q(h_{t-1}), [N,H]
  auto states = std::make_shared<std::vector<RowMatrix>>();  // h_t, [N,H]
  ConstRowMap wxm(w_in.ptr(), features, hidden);
  ConstRowMap whm(w_rec.ptr(), hidden, hidden);
  RowMatrix h = RowMatrix::Zero(n_batch, hidden);
  RealTensor out(Shape{n_batch, hidden, steps, 1});
  for (Index t = 0; t < steps; ++t) {
    RowMatrix xt(n_batch, features);
    for (Index n = 0; n < n_batch; ++n) {
      for (Index ch = 0; ch < c; ++ch) {
        for (Index wi = 0; wi < width; ++wi) xt(n, ch * width + wi) = in.at(n, ch, t, wi);
      }
    }
    RowMatrix hq = h;
    if (hidden_scale > 0.0) hq = hq.unaryExpr([hidden_scale](double v) { return fake_quant_scalar(v, hidden_scale, kActivationBits); });
    RowMatrix pre = xt * wxm + hq * whm;
    pre.rowwise() += g.value(b).data().transpose();
    h = pre.array().tanh().matrix();
    for (Index n = 0; n < n_batch; ++n) {
      for (Index j = 0; j < hidden; ++j) out.at(n, j, t, 0) = h(n, j);
    }
    frames->push_back(std::move(xt));
    quantized_prev->push_back(std::move(hq));
    states->push_back(h);
  }

  return g.emplace(
      std::move(out), {x, wx, wh, b}, [=](Graph& gr, NodeId self) {
        const Eigen::VectorXd up = gr.grad_buffer(self);
        ConstRowMap wxm2(gr.value(wx).ptr(), features, hidden);
        ConstRowMap whm2(gr.value(wh).ptr(), hidden, hidden);
        RowMatrix dwx = RowMatrix::Zero(features, hidden);
        RowMatrix dwh = RowMatrix::Zero(hidden, hidden);
        Eigen::RowVectorXd db = Eigen::RowVectorXd::Zero(hidden);
        RowMatrix dnext = RowMatrix::Zero(n_batch, hidden);
        const bool want_x = gr.requires_grad(x);
        for (Index t = steps; t-- > 0;) {
          const RowMatrix& ht = (*states)[static_cast<std::size_t>(t)];
          RowMatrix dh = dnext;
          for (Index n = 0; n < n_batch; ++n) {
            for (Index j = 0; j < hidden; ++j) dh(n, j) += up[((n * hidden + j) * steps + t)];
          }
          const RowMatrix da = dh.cwiseProduct((1.0 - ht.array().square()).matrix());
          dwx.noalias() += (*frames)[static_cast<std::size_t>(t)].transpose() * da;
          dwh.noalias() += (*quantized_prev)[static_cast<std::size_t>(t)].transpose() * da;
          db += da.colwise().sum();
          if (want_x) {
            const RowMatrix dxt = da * wxm2.transpose();
            Eigen::VectorXd& dx = gr.grad_buffer(x);
            for (Index n = 0; n < n_batch; ++n) {
              for (Index ch = 0; ch < c; ++ch) {
                for (Index wi = 0; wi < width; ++wi) dx[((n * c + ch) * steps + t) * width + wi] += dxt(n, ch * width + wi);
              }
            }
          }
          // |h| <= 1 stays inside the 8-bit clamp range, so the STE passes it.
          dnext = da * whm2.transpose();
        }
        if (gr.requires_grad(wx)) gr.grad_buffer(wx) += Eigen::Map<const Eigen::VectorXd>(dwx.data(), dwx.size());
        if (gr.requires_grad(wh)) gr.grad_buffer(wh) += Eigen::Map<const Eigen::VectorXd>(dwh.data(), dwh.size());
        if (gr.requires_grad(b)) gr.grad_buffer(b) += db.transpose();
      });
}

NodeId fake_quant(Graph& g, NodeId x, const QuantSpec<double>& spec) {
  RealTensor out = fake_quant(g.value(x), spec);
  return g.emplace(std::move(out), {x}, [x, spec](Graph& gr, NodeId self) {
    RealTensor up(gr.value(x).shape(), gr.grad_buffer(self));
    gr.grad_buffer(x) += ste_grad(up, gr.value(x), spec).data();
  });
}

}  // namespace fracsim
