#pragma once

#include <Eigen/Dense>
#include <cmath>

#include "unidoor/error.hpp"

namespace unidoor {

struct AdamConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

// Adam with bias correction, same update order as the common deep-learning
// frameworks: p -= lr / (1 - b1^t) * m / (sqrt(v) / sqrt(1 - b2^t) + eps).
class Adam {
 public:
  Adam() = default;
  explicit Adam(Eigen::Index n, AdamConfig config = {})
      : config_(config), m_(Eigen::VectorXd::Zero(n)), v_(Eigen::VectorXd::Zero(n)) {}

  void step(Eigen::Ref<Eigen::VectorXd> params, const Eigen::VectorXd& grad, double lr) {
    if (grad.size() != m_.size() || params.size() != m_.size()) {
      throw StateError("adam: parameter/gradient size mismatch");
    }
    ++t_;
    m_ = config_.beta1 * m_ + (1.0 - config_.beta1) * grad;
    v_ = config_.beta2 * v_ + (1.0 - config_.beta2) * grad.cwiseProduct(grad);
    const double bc1 = 1.0 - std::pow(config_.beta1, static_cast<double>(t_));
    const double bc2 = 1.0 - std::pow(config_.beta2, static_cast<double>(t_));
    params.array() -=
        (lr / bc1) * m_.array() / (v_.array().sqrt() / std::sqrt(bc2) + config_.eps);
  }

  long steps() const { return t_; }

 private:
  AdamConfig config_;
  Eigen::VectorXd m_;
  Eigen::VectorXd v_;
  long t_ = 0;
};

}  // namespace unidoor
