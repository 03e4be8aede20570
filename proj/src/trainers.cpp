#include "unidoor/trainers.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <ostream>
#include <sstream>

#include "unidoor/distributions.hpp"
#include "unidoor/error.hpp"

namespace unidoor::trainers {

void TrainerConfig::validate() const {
  if (total_steps <= 0) throw ConfigError("total_steps must be positive");
  const auto unit_gamma = [](double g) { return g >= 0.0 && g < 1.0; };
  {
    const PpoConfig& p = ppo;
    if (!unit_gamma(p.gamma)) throw ConfigError("gamma must lie in [0, 1)");
    if (!(p.gae_lambda >= 0.0 && p.gae_lambda <= 1.0)) throw ConfigError("gae lambda must lie in [0, 1]");
    if (!(p.clip > 0.0)) throw ConfigError("clip range must be positive");
    if (!(p.lr > 0.0)) throw ConfigError("learning rate must be positive");
    if (p.rollout_len <= 0 || p.minibatch <= 0 || p.epochs <= 0) {
      throw ConfigError("rollout length, minibatch and epochs must be positive");
    }
    if (p.value_coef < 0.0 || p.entropy_coef < 0.0) throw ConfigError("loss weights must be non-negative");
    if (!(p.max_grad_norm > 0.0)) throw ConfigError("max_grad_norm must be positive");
    if (p.cycle_updates <= 0) throw ConfigError("cycle_updates must be positive");
  }
  {
    const DdpgConfig& d = ddpg;
    if (!unit_gamma(d.gamma)) throw ConfigError("gamma must lie in [0, 1)");
    if (d.buffer_capacity <= 0 || d.batch_size <= 0) throw ConfigError("buffer and batch must be positive");
    if (d.batch_size > d.buffer_capacity) throw ConfigError("batch larger than the buffer");
    if (!(d.actor_lr > 0.0 && d.critic_lr > 0.0)) throw ConfigError("learning rates must be positive");
    if (!(d.tau > 0.0 && d.tau <= 1.0)) throw ConfigError("tau must lie in (0, 1]");
    if (d.noise_std < 0.0) throw ConfigError("exploration noise must be non-negative");
    if (d.warmup_steps < 0) throw ConfigError("warmup must be non-negative");
    if (d.cycle_updates <= 0) throw ConfigError("cycle_updates must be positive");
  }
}

double scheduled_lr(LrSchedule schedule, double base, double progress, long update,
                    int cycle_updates) {
  switch (schedule) {
    case LrSchedule::Constant:
      return base;
    case LrSchedule::Linear:
      return base * std::max(1.0 - std::clamp(progress, 0.0, 1.0), 0.0);
    case LrSchedule::Cyclic:
      return (update / cycle_updates) % 2 == 0 ? 10.0 * base : 0.1 * base;
  }
  return base;
}

namespace {

// Log-probability and value of a stored (state, action) pair under `p`.
void rescore(const policy::Policy& p, Transition& tr) {
  const Eigen::VectorXd x = p.normalize(tr.state);
  const Eigen::MatrixXd head = p.actor.forward(x);
  if (p.discrete()) {
    tr.log_prob = nn::categorical_log_prob(head, {tr.action.index})(0);
  } else if (p.head() == policy::Head::GaussianMean) {
    const Eigen::Map<const Eigen::VectorXd> a(tr.action.value.data(),
                                              static_cast<Eigen::Index>(tr.action.value.size()));
    tr.log_prob = nn::gaussian_log_prob(head, p.log_std, Eigen::MatrixXd(a))(0);
  }
  if (p.has_state_value()) tr.value = p.critic.forward(x)(0);
}

struct Choice {
  envs::Action stored;  // policy space; unclamped for Gaussian samples
  envs::Action normalized;
  double log_prob = 0.0;
  double value = 0.0;
};

// One environment step through the hooks. Returns the stored transition.
template <typename Chooser>
Transition interact(Collector& c, const Hooks& hooks, const policy::Policy& p, Chooser&& choose) {
  envs::Env& env = *c.env;
  if (env.done()) env.reset();
  const long t = c.step + 1;
  const envs::Observation& raw = env.observation();
  envs::Observation seen = hooks.on_observation ? hooks.on_observation(raw, t) : raw;
  const Choice ch = choose(seen);
  const envs::StepResult r = env.step(policy::to_env_action(env.spec().action_space, ch.normalized));
  c.step = t;

  Transition tr;
  tr.state = std::move(seen);
  tr.action = ch.stored;
  tr.reward = r.reward;
  tr.env_reward = r.reward;
  tr.done = r.done();
  tr.truncated = r.truncated && !r.terminated;
  tr.next_state = r.obs;
  tr.log_prob = ch.log_prob;
  tr.value = ch.value;
  if (hooks.on_transition) {
    tr = hooks.on_transition(std::move(tr), t);
    // The man-in-the-middle edits what the learner records; the environment
    // itself stepped with the original action.
    tr.done = r.done();
    tr.truncated = r.truncated && !r.terminated;
    tr.next_state = r.obs;
    tr.env_reward = r.reward;
    if (tr.poisoned) rescore(p, tr);
  }
  if (!std::isfinite(tr.reward)) throw NumericError("transition reward is not finite");

  c.episode.transitions.push_back(tr);
  if (tr.done) {
    c.episode.complete = true;
    ++c.episodes;
    if (hooks.on_episode_end) hooks.on_episode_end(c.episode, t);
    c.episode = Trajectory{};
    env.reset();
  }
  return tr;
}

Choice sample_choice(const policy::Policy& p, const envs::Observation& obs, Rng& rng) {
  const policy::ActResult a = p.act(obs, policy::ActMode::Sample, rng);
  Choice ch;
  ch.normalized = a.action;
  ch.stored = a.action.is_discrete() ? a.action : envs::Action::continuous(a.raw);
  ch.log_prob = a.log_prob.value_or(0.0);
  ch.value = a.value.value_or(0.0);
  return ch;
}

}  // namespace

std::vector<Fragment> collect_rollout(const policy::Policy& policy, Collector& collector,
                                      int n_steps, const Hooks& hooks, Rng& rng) {
  if (n_steps <= 0) throw ConfigError("rollout length must be positive");
  std::vector<Fragment> out;
  Fragment current;
  for (int i = 0; i < n_steps; ++i) {
    Transition tr =
        interact(collector, hooks, policy, [&](const envs::Observation& o) { return sample_choice(policy, o, rng); });
    const bool done = tr.done;
    const bool truncated = tr.truncated;
    const envs::Observation next = tr.next_state;
    current.trajectory.transitions.push_back(std::move(tr));
    if (done) {
      current.trajectory.complete = true;
      current.bootstrap_value =
          truncated && policy.has_state_value() ? policy.value(next) : 0.0;
      out.push_back(std::move(current));
      current = Fragment{};
    }
  }
  if (!current.trajectory.transitions.empty()) {
    current.bootstrap_value =
        policy.has_state_value() ? policy.value(collector.env->observation()) : 0.0;
    out.push_back(std::move(current));
  }
  return out;
}

GaeResult gae(std::span<const double> rewards, std::span<const double> values, bool terminal,
              double bootstrap_value, double gamma, double lambda) {
  if (rewards.size() != values.size()) throw StateError("gae: rewards and values differ in length");
  const auto n = static_cast<Eigen::Index>(rewards.size());
  GaeResult g{Eigen::VectorXd(n), Eigen::VectorXd(n)};
  double next_value = terminal ? 0.0 : bootstrap_value;
  double running = 0.0;
  for (Eigen::Index i = n - 1; i >= 0; --i) {
    const double delta = rewards[i] + gamma * next_value - values[i];
    running = delta + gamma * lambda * running;
    g.advantages(i) = running;
    g.returns(i) = running + values[i];
    next_value = values[i];
  }
  return g;
}

GaeResult gae(std::span<const Fragment> fragments, double gamma, double lambda, bool normalize) {
  Eigen::Index total = 0;
  for (const auto& f : fragments) total += static_cast<Eigen::Index>(f.trajectory.transitions.size());
  GaeResult out{Eigen::VectorXd(total), Eigen::VectorXd(total)};
  Eigen::Index offset = 0;
  std::vector<double> r, v;
  for (const auto& f : fragments) {
    const auto& ts = f.trajectory.transitions;
    if (ts.empty()) continue;
    r.clear();
    v.clear();
    for (const auto& t : ts) {
      r.push_back(t.reward);
      v.push_back(t.value);
    }
    const bool terminal = ts.back().done && !ts.back().truncated;
    const GaeResult g = gae(r, v, terminal, f.bootstrap_value, gamma, lambda);
    const auto n = static_cast<Eigen::Index>(ts.size());
    out.advantages.segment(offset, n) = g.advantages;
    out.returns.segment(offset, n) = g.returns;
    offset += n;
  }
  if (normalize && total > 0) {
    const double mean = out.advantages.mean();
    out.advantages.array() -= mean;
    const double var = total > 1 ? out.advantages.squaredNorm() / static_cast<double>(total) : 0.0;
    const double sd = std::sqrt(var);
    if (sd > 1e-12) out.advantages /= sd;
  }
  return out;
}

double clip_grad_norm(Eigen::VectorXd& grad, double max_norm) {
  const double norm = grad.norm();
  if (!std::isfinite(norm)) throw NumericError("gradient is not finite");
  if (norm > max_norm) grad *= max_norm / (norm + 1e-6);
  return norm;
}

UpdateStats ppo_update(policy::Policy& policy, Adam& adam, std::span<const Fragment> fragments,
                       const PpoConfig& config, double lr, Rng& rng) {
  const GaeResult g = gae(fragments, config.gamma, config.gae_lambda, true);
  const Eigen::Index n = g.advantages.size();
  if (n == 0) throw StateError("ppo update on an empty rollout");

  std::vector<std::vector<double>> states;
  states.reserve(static_cast<std::size_t>(n));
  std::vector<int> discrete;
  Eigen::MatrixXd continuous;
  Eigen::VectorXd old_log_probs(n);
  if (!policy.discrete()) continuous.resize(policy.action_dim(), n);
  Eigen::Index j = 0;
  for (const auto& f : fragments) {
    for (const auto& t : f.trajectory.transitions) {
      states.push_back(t.state);
      if (policy.discrete()) {
        discrete.push_back(t.action.index);
      } else {
        for (int d = 0; d < policy.action_dim(); ++d) continuous(d, j) = t.action.value[d];
      }
      old_log_probs(j) = t.log_prob;
      ++j;
    }
  }
  const Eigen::MatrixXd inputs = policy.normalize(states);

  policy::PpoLossWeights weights;
  weights.value = config.value_coef;
  weights.entropy = config.entropy_coef;
  weights.clip = config.clip;

  std::vector<Eigen::Index> order(static_cast<std::size_t>(n));
  std::iota(order.begin(), order.end(), Eigen::Index{0});
  const Eigen::Index mb = std::min<Eigen::Index>(config.minibatch, n);

  UpdateStats stats;
  stats.lr = lr;
  int batches = 0;
  policy::PpoBatch batch;
  policy::PolicyGradient grad;
  for (int epoch = 0; epoch < config.epochs; ++epoch) {
    shuffle(order.begin(), order.end(), rng);
    for (Eigen::Index start = 0; start < n; start += mb) {
      const Eigen::Index m = std::min(mb, n - start);
      batch.inputs.resize(inputs.rows(), m);
      batch.old_log_probs.resize(m);
      batch.advantages.resize(m);
      batch.returns.resize(m);
      batch.discrete_actions.clear();
      if (!policy.discrete()) batch.continuous_actions.resize(continuous.rows(), m);
      for (Eigen::Index k = 0; k < m; ++k) {
        const Eigen::Index src = order[static_cast<std::size_t>(start + k)];
        batch.inputs.col(k) = inputs.col(src);
        batch.old_log_probs(k) = old_log_probs(src);
        batch.advantages(k) = g.advantages(src);
        batch.returns(k) = g.returns(src);
        if (policy.discrete()) {
          batch.discrete_actions.push_back(discrete[static_cast<std::size_t>(src)]);
        } else {
          batch.continuous_actions.col(k) = continuous.col(src);
        }
      }
      const policy::PpoLossStats s = policy::ppo_loss(policy, batch, weights, &grad);
      Eigen::VectorXd flat_grad = grad.flat();
      const double norm = clip_grad_norm(flat_grad, config.max_grad_norm);
      Eigen::VectorXd params = policy.flat_params();
      adam.step(params, flat_grad, lr);
      policy.set_flat_params(params);

      stats.policy_loss += s.policy_loss;
      stats.value_loss += s.value_loss;
      stats.entropy += s.entropy;
      stats.approx_kl += s.approx_kl;
      stats.clip_fraction += s.clip_fraction;
      stats.grad_norm += norm;
      ++batches;
    }
  }
  const double inv = 1.0 / batches;
  stats.policy_loss *= inv;
  stats.value_loss *= inv;
  stats.entropy *= inv;
  stats.approx_kl *= inv;
  stats.clip_fraction *= inv;
  stats.grad_norm *= inv;
  return stats;
}

ReplayBuffer::ReplayBuffer(std::size_t capacity) : capacity_(capacity) {
  if (capacity == 0) throw ConfigError("replay buffer capacity must be positive");
  data_.reserve(std::min<std::size_t>(capacity, 1 << 16));
}

void ReplayBuffer::push(Transition t) {
  if (data_.size() < capacity_) {
    data_.push_back(std::move(t));
  } else {
    data_[head_] = std::move(t);
    head_ = (head_ + 1) % capacity_;
  }
  ++added_;
}

const Transition& ReplayBuffer::at(std::size_t i) const {
  if (i >= data_.size()) throw std::out_of_range("replay buffer index");
  return data_[(head_ + i) % data_.size()];
}

Transition& ReplayBuffer::at(std::size_t i) {
  if (i >= data_.size()) throw std::out_of_range("replay buffer index");
  return data_[(head_ + i) % data_.size()];
}

long ReplayBuffer::insertion_index(std::size_t i) const {
  if (i >= data_.size()) throw std::out_of_range("replay buffer index");
  return added_ - static_cast<long>(data_.size()) + static_cast<long>(i);
}

std::vector<std::size_t> ReplayBuffer::sample_indices(std::size_t n, Rng& rng) const {
  if (data_.empty()) throw StateError("sampling from an empty replay buffer");
  std::vector<std::size_t> idx(n);
  for (auto& i : idx) i = static_cast<std::size_t>(rng.below(data_.size()));
  return idx;
}

void soft_update(policy::Policy& target, const policy::Policy& online, double tau) {
  target.actor.params() = tau * online.actor.params() + (1.0 - tau) * target.actor.params();
  target.critic.params() = tau * online.critic.params() + (1.0 - tau) * target.critic.params();
}

DdpgStats ddpg_update(policy::Policy& online, policy::Policy& target, Adam& actor_adam,
                      Adam& critic_adam, const ReplayBuffer& buffer, const DdpgConfig& config,
                      double actor_lr, double critic_lr, Rng& rng) {
  const auto bs = static_cast<std::size_t>(config.batch_size);
  if (buffer.size() < bs) throw StateError("replay buffer holds fewer transitions than a batch");
  const std::vector<std::size_t> idx = buffer.sample_indices(bs, rng);
  const int sd = online.state_dim();
  const int ad = online.action_dim();
  const auto n = static_cast<Eigen::Index>(bs);

  std::vector<std::vector<double>> states, next_states;
  states.reserve(bs);
  next_states.reserve(bs);
  Eigen::MatrixXd actions(ad, n);
  Eigen::VectorXd rewards(n), not_terminal(n);
  for (Eigen::Index k = 0; k < n; ++k) {
    const Transition& t = buffer.at(idx[static_cast<std::size_t>(k)]);
    states.push_back(t.state);
    next_states.push_back(t.next_state);
    for (int d = 0; d < ad; ++d) actions(d, k) = std::clamp(t.action.value[d], -1.0, 1.0);
    rewards(k) = t.reward;
    not_terminal(k) = t.done && !t.truncated ? 0.0 : 1.0;
  }
  const Eigen::MatrixXd s = online.normalize(states);
  const Eigen::MatrixXd s2 = target.normalize(next_states);

  Eigen::MatrixXd target_in(sd + ad, n);
  target_in.topRows(sd) = s2;
  target_in.bottomRows(ad) = target.actor.forward(s2);
  const Eigen::VectorXd q_next = target.critic.forward(target_in).row(0).transpose();
  const Eigen::VectorXd y =
      rewards.array() + config.gamma * not_terminal.array() * q_next.array();

  Eigen::MatrixXd critic_in(sd + ad, n);
  critic_in.topRows(sd) = s;
  critic_in.bottomRows(ad) = actions;
  DdpgStats stats;
  Eigen::VectorXd critic_grad;
  stats.critic_loss = policy::critic_regression_loss(online.critic, critic_in, y, &critic_grad);
  critic_adam.step(online.critic.params(), critic_grad, critic_lr);

  Eigen::VectorXd actor_grad;
  stats.actor_loss = policy::deterministic_actor_loss(online, s, &actor_grad);
  actor_adam.step(online.actor.params(), actor_grad, actor_lr);

  soft_update(target, online, config.tau);
  return stats;
}

std::string metrics_csv_header() {
  return "step,episode_return_raw,BTP,ASR,r_dagger,r_l,r_u,phase,frozen";
}

namespace {

void put(std::ostream& out, const std::optional<double>& v) {
  if (v) out << *v;
}

}  // namespace

void write_metrics_row(std::ostream& out, const MetricsRow& row) {
  out << row.step << ',';
  put(out, row.episode_return);
  out << ',' << row.btp << ',';
  put(out, row.asr);
  out << ',';
  put(out, row.r_dagger);
  out << ',';
  put(out, row.r_lower);
  out << ',';
  put(out, row.r_upper);
  out << ',' << row.phase << ',' << (row.frozen ? 1 : 0) << '\n';
}

void write_metrics_csv(const std::string& path, std::span<const MetricsRow> rows) {
  std::ofstream out(path);
  if (!out) throw ConfigError("cannot write metrics file " + path);
  out.precision(10);
  out << metrics_csv_header() << '\n';
  for (const auto& r : rows) write_metrics_row(out, r);
}

Trainer::Trainer(policy::Policy& policy, envs::Env& env, TrainerConfig config, std::uint64_t seed)
    : policy_(&policy), config_(std::move(config)), rng_(seed), collector_(env) {
  config_.validate();
  if (config_.algorithm == Algorithm::PPO) {
    if (!policy.has_state_value()) throw ConfigError("PPO needs a state-value critic");
    if (policy.head() != policy::Head::CategoricalLogits &&
        policy.head() != policy::Head::GaussianMean) {
      throw ConfigError("PPO needs a stochastic actor head");
    }
    adam_ = Adam(policy.flat_params().size());
  } else {
    if (!policy.has_action_value() || policy.head() != policy::Head::DeterministicTanh) {
      throw ConfigError("DDPG needs a deterministic actor and an action-value critic");
    }
    policy.exploration_std = config_.ddpg.noise_std;
    adam_ = Adam(policy.actor.num_params());
    critic_adam_ = Adam(policy.critic.num_params());
    buffer_.emplace(static_cast<std::size_t>(config_.ddpg.buffer_capacity));
    target_ = policy;
  }
  if (env.done()) env.reset();
}

double Trainer::progress() const {
  return static_cast<double>(trained_steps_) / static_cast<double>(config_.total_steps);
}

void Trainer::train(long steps) {
  if (steps < 0) throw ConfigError("step count must be non-negative");
  if (config_.algorithm == Algorithm::PPO) {
    train_ppo(steps);
  } else {
    train_ddpg(steps);
  }
}

void Trainer::train_ppo(long steps) {
  const PpoConfig& c = config_.ppo;
  long remaining = steps;
  while (remaining > 0) {
    const int n = static_cast<int>(std::min<long>(c.rollout_len, remaining));
    const double lr = scheduled_lr(c.lr_schedule, c.lr, progress(), updates_, c.cycle_updates);
    const std::vector<Fragment> fragments = collect_rollout(*policy_, collector_, n, hooks_, rng_);
    remaining -= n;
    trained_steps_ += n;
    const UpdateStats stats = ppo_update(*policy_, adam_, fragments, c, lr, rng_);
    ++updates_;
    if (update_cb_) update_cb_(collector_.step, stats);
  }
}

void Trainer::train_ddpg(long steps) {
  const DdpgConfig& c = config_.ddpg;
  const envs::ActionSpace& space = policy_->action_space();
  const int dim = envs::action_dim(space);
  for (long i = 0; i < steps; ++i) {
    const bool warm = buffer_->total_added() < c.warmup_steps;
    Transition tr = interact(collector_, hooks_, *policy_, [&](const envs::Observation& o) {
      Choice ch;
      if (warm) {
        std::vector<double> a(static_cast<std::size_t>(dim));
        for (auto& v : a) v = rng_.uniform(-1.0, 1.0);
        ch.normalized = envs::Action::continuous(std::move(a));
      } else {
        ch.normalized = policy_->act(o, policy::ActMode::Sample, rng_).action;
      }
      ch.stored = ch.normalized;
      return ch;
    });
    buffer_->push(std::move(tr));
    ++trained_steps_;
    if (buffer_hook_) buffer_hook_(*buffer_, collector_.step);
    if (!warm && buffer_->size() >= static_cast<std::size_t>(c.batch_size)) {
      const double a_lr = scheduled_lr(c.lr_schedule, c.actor_lr, progress(), updates_, c.cycle_updates);
      const double c_lr = scheduled_lr(c.lr_schedule, c.critic_lr, progress(), updates_, c.cycle_updates);
      const DdpgStats s =
          ddpg_update(*policy_, *target_, adam_, critic_adam_, *buffer_, c, a_lr, c_lr, rng_);
      ++updates_;
      if (update_cb_) {
        UpdateStats u;
        u.policy_loss = s.actor_loss;
        u.value_loss = s.critic_loss;
        u.lr = a_lr;
        update_cb_(collector_.step, u);
      }
    }
  }
}

}  // namespace unidoor::trainers
