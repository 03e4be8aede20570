#pragma once

#include <Eigen/Dense>
#include <vector>

#include "unidoor/policy.hpp"

// Scalar training losses over a batch together with their exact reverse-mode
// gradients. Every loss here is a composition of the network primitives
// (affine, Tanh, ReLU) and the head primitives in distributions.hpp.
namespace unidoor::policy {

struct PolicyGradient {
  Eigen::VectorXd actor;
  Eigen::VectorXd log_std;
  Eigen::VectorXd critic;

  static PolicyGradient zeros_like(const Policy& p);

  double norm() const;
  void scale(double factor);
  void add(const PolicyGradient& other, double factor = 1.0);
  // Same layout as Policy::flat_params().
  Eigen::VectorXd flat() const;
};

struct PpoBatch {
  Eigen::MatrixXd inputs;              // normalized observations, state_dim x B
  std::vector<int> discrete_actions;   // categorical heads
  Eigen::MatrixXd continuous_actions;  // Gaussian heads: unclamped samples, dim x B
  Eigen::VectorXd old_log_probs;
  Eigen::VectorXd advantages;
  Eigen::VectorXd returns;

  Eigen::Index size() const { return inputs.cols(); }
};

struct PpoLossWeights {
  double policy = 1.0;
  double value = 0.5;
  double entropy = 0.0;
  double clip = 0.2;
};

struct PpoLossStats {
  double total = 0.0;
  double policy_loss = 0.0;  // -mean clipped surrogate
  double value_loss = 0.0;   // 0.5 mean (V - R)^2
  double entropy = 0.0;      // mean entropy
  double approx_kl = 0.0;    // mean (r - 1) - log r
  double clip_fraction = 0.0;
};

// total = policy * policy_loss + value * value_loss - entropy * entropy.
// Fills `grad` (shaped like the policy) when non-null.
// Throws NumericError when the loss is not finite.
PpoLossStats ppo_loss(const Policy& policy, const PpoBatch& batch, const PpoLossWeights& weights,
                      PolicyGradient* grad = nullptr);

// mean (Q(x) - target)^2 for critic inputs x = [state; action].
double critic_regression_loss(const nn::Mlp& critic, const Eigen::MatrixXd& inputs,
                              const Eigen::VectorXd& targets, Eigen::VectorXd* grad = nullptr);

// -mean Q(s, mu(s)) with the critic held fixed; gradient is with respect to
// the actor parameters only. `states` are normalized observations.
double deterministic_actor_loss(const Policy& policy, const Eigen::MatrixXd& states,
                                Eigen::VectorXd* actor_grad = nullptr);

}  // namespace unidoor::policy
