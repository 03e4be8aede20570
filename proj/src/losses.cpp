#include "unidoor/losses.hpp"

#include <cmath>

#include "unidoor/distributions.hpp"
#include "unidoor/error.hpp"

namespace unidoor::policy {

PolicyGradient PolicyGradient::zeros_like(const Policy& p) {
  return {Eigen::VectorXd::Zero(p.actor.num_params()), Eigen::VectorXd::Zero(p.log_std.size()),
          Eigen::VectorXd::Zero(p.critic.num_params())};
}

double PolicyGradient::norm() const {
  return std::sqrt(actor.squaredNorm() + log_std.squaredNorm() + critic.squaredNorm());
}

void PolicyGradient::scale(double factor) {
  actor *= factor;
  log_std *= factor;
  critic *= factor;
}

void PolicyGradient::add(const PolicyGradient& other, double factor) {
  actor += factor * other.actor;
  log_std += factor * other.log_std;
  critic += factor * other.critic;
}

Eigen::VectorXd PolicyGradient::flat() const {
  Eigen::VectorXd v(actor.size() + log_std.size() + critic.size());
  v << actor, log_std, critic;
  return v;
}

PpoLossStats ppo_loss(const Policy& policy, const PpoBatch& batch, const PpoLossWeights& w,
                      PolicyGradient* grad) {
  const Eigen::Index n = batch.size();
  if (n == 0) throw StateError("ppo_loss on an empty batch");
  const double inv_n = 1.0 / static_cast<double>(n);

  nn::Mlp::Cache actor_cache;
  const Eigen::MatrixXd head = policy.actor.forward(batch.inputs, grad ? &actor_cache : nullptr);

  Eigen::VectorXd log_probs;
  Eigen::MatrixXd d_head_logp;     // d log pi / d head output
  Eigen::MatrixXd d_head_entropy;  // d H / d head output (categorical)
  Eigen::MatrixXd d_logstd_logp;   // d log pi / d log_std, per sample
  Eigen::VectorXd entropies;

  if (policy.discrete()) {
    log_probs = nn::categorical_log_prob(head, batch.discrete_actions, grad ? &d_head_logp : nullptr);
    entropies = nn::categorical_entropy(head, grad ? &d_head_entropy : nullptr);
  } else {
    log_probs = nn::gaussian_log_prob(head, policy.log_std, batch.continuous_actions,
                                      grad ? &d_head_logp : nullptr, grad ? &d_logstd_logp : nullptr);
    entropies = Eigen::VectorXd::Constant(n, nn::gaussian_entropy(policy.log_std));
  }

  PpoLossStats stats;
  Eigen::VectorXd d_logp(n);
  double surrogate_sum = 0.0;
  double kl_sum = 0.0;
  int clipped = 0;
  for (Eigen::Index i = 0; i < n; ++i) {
    const double log_ratio = log_probs(i) - batch.old_log_probs(i);
    const double ratio = std::exp(log_ratio);
    const auto s = nn::clipped_surrogate(ratio, batch.advantages(i), w.clip);
    surrogate_sum += s.value;
    d_logp(i) = -w.policy * s.d_log_prob * inv_n;
    kl_sum += (ratio - 1.0) - log_ratio;
    if (std::abs(ratio - 1.0) > w.clip) ++clipped;
  }
  stats.policy_loss = -surrogate_sum * inv_n;
  stats.entropy = entropies.mean();
  stats.approx_kl = kl_sum * inv_n;
  stats.clip_fraction = static_cast<double>(clipped) * inv_n;

  nn::Mlp::Cache critic_cache;
  Eigen::VectorXd values;
  if (policy.has_state_value()) {
    values = policy.critic.forward(batch.inputs, grad ? &critic_cache : nullptr).row(0).transpose();
    stats.value_loss = 0.5 * (values - batch.returns).squaredNorm() * inv_n;
  }

  stats.total = w.policy * stats.policy_loss + w.value * stats.value_loss - w.entropy * stats.entropy;
  if (!std::isfinite(stats.total)) throw NumericError("ppo loss is not finite");

  if (grad) {
    *grad = PolicyGradient::zeros_like(policy);
    Eigen::MatrixXd d_head = d_head_logp.array().rowwise() * d_logp.transpose().array();
    if (policy.discrete()) {
      d_head -= (w.entropy * inv_n) * d_head_entropy;
    } else {
      grad->log_std = (d_logstd_logp.array().rowwise() * d_logp.transpose().array()).rowwise().sum();
      // dH/dlog_std = 1 per dimension; the batch mean of a constant.
      grad->log_std.array() -= w.entropy;
    }
    policy.actor.backward(actor_cache, d_head, grad->actor);
    if (policy.has_state_value()) {
      const Eigen::MatrixXd d_values = (w.value * inv_n) * (values - batch.returns).transpose();
      policy.critic.backward(critic_cache, d_values, grad->critic);
    }
  }
  return stats;
}

double critic_regression_loss(const nn::Mlp& critic, const Eigen::MatrixXd& inputs,
                              const Eigen::VectorXd& targets, Eigen::VectorXd* grad) {
  const double inv_n = 1.0 / static_cast<double>(inputs.cols());
  nn::Mlp::Cache cache;
  const Eigen::VectorXd q = critic.forward(inputs, grad ? &cache : nullptr).row(0).transpose();
  const Eigen::VectorXd err = q - targets;
  const double loss = err.squaredNorm() * inv_n;
  if (!std::isfinite(loss)) throw NumericError("critic loss is not finite");
  if (grad) {
    grad->setZero(critic.num_params());
    critic.backward(cache, (2.0 * inv_n) * err.transpose(), *grad);
  }
  return loss;
}

double deterministic_actor_loss(const Policy& policy, const Eigen::MatrixXd& states,
                                Eigen::VectorXd* actor_grad) {
  if (!policy.has_action_value()) throw StateError("deterministic actor loss needs a Q critic");
  const Eigen::Index n = states.cols();
  const double inv_n = 1.0 / static_cast<double>(n);
  const int sd = policy.state_dim();

  nn::Mlp::Cache actor_cache;
  const Eigen::MatrixXd actions = policy.actor.forward(states, actor_grad ? &actor_cache : nullptr);
  Eigen::MatrixXd critic_in(sd + actions.rows(), n);
  critic_in.topRows(sd) = states;
  critic_in.bottomRows(actions.rows()) = actions;

  nn::Mlp::Cache critic_cache;
  const Eigen::VectorXd q =
      policy.critic.forward(critic_in, actor_grad ? &critic_cache : nullptr).row(0).transpose();
  const double loss = -q.mean();
  if (!std::isfinite(loss)) throw NumericError("actor loss is not finite");

  if (actor_grad) {
    Eigen::VectorXd scratch = Eigen::VectorXd::Zero(policy.critic.num_params());
    Eigen::MatrixXd d_in;
    policy.critic.backward(critic_cache, Eigen::MatrixXd::Constant(1, n, -inv_n), scratch, &d_in);
    actor_grad->setZero(policy.actor.num_params());
    policy.actor.backward(actor_cache, d_in.bottomRows(actions.rows()), *actor_grad);
  }
  return loss;
}

}  // namespace unidoor::policy
