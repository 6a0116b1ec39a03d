#pragma once

#include "fracsim/tensor.hpp"

#include <span>
#include <stdexcept>
#include <vector>

namespace fracsim {

/// Stochastic gradient descent with classical momentum:
/// v <- momentum * v + g, p <- p - lr * v.
class Sgd {
 public:
  Sgd(double lr, double momentum) : lr_(lr), momentum_(momentum) {
    if (!(lr > 0.0)) throw std::invalid_argument("learning rate must be positive");
    if (momentum < 0.0 || momentum >= 1.0) throw std::invalid_argument("momentum must lie in [0,1)");
  }

  /// Updates every parameter that carries a gradient. Parameters must be
  /// passed in the same order on every call.
  void step(std::span<RealTensor* const> params) {
    if (velocity_.size() != params.size()) {
      velocity_.clear();
      for (const RealTensor* p : params) velocity_.push_back(Eigen::VectorXd::Zero(p->size()));
    }
    for (std::size_t i = 0; i < params.size(); ++i) {
      RealTensor& p = *params[i];
      if (!p.has_grad()) continue;
      velocity_[i] = momentum_ * velocity_[i] + p.grad();
      p.data() -= lr_ * velocity_[i];
    }
  }

  double learning_rate() const { return lr_; }
  void set_learning_rate(double lr) { lr_ = lr; }

 private:
  double lr_;
  double momentum_;
  std::vector<Eigen::VectorXd> velocity_;
};

}  // namespace fracsim
