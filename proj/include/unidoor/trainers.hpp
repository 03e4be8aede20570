#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <functional>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "unidoor/adam.hpp"
#include "unidoor/envs.hpp"
#include "unidoor/losses.hpp"
#include "unidoor/policy.hpp"
#include "unidoor/rng.hpp"
#include "unidoor/transition.hpp"

namespace unidoor::trainers {

enum class Algorithm { PPO, DDPG };

enum class LrSchedule {
  Constant,
  Linear,  // anneal to 0 over the training budget
  Cyclic,  // alternate 10x / 0.1x the base rate every `cycle_updates` updates
};

struct PpoConfig {
  double gamma = 0.99;
  double gae_lambda = 0.95;
  double clip = 0.2;
  double lr = 3e-4;
  int rollout_len = 2048;
  int minibatch = 64;
  int epochs = 10;
  double value_coef = 0.5;
  double entropy_coef = 0.0;
  double max_grad_norm = 0.5;
  LrSchedule lr_schedule = LrSchedule::Linear;
  int cycle_updates = 10;
};

struct DdpgConfig {
  double gamma = 0.99;
  int buffer_capacity = 100000;
  int batch_size = 128;
  double actor_lr = 1e-3;
  double critic_lr = 1e-3;
  double tau = 0.005;
  double noise_std = 0.1;
  int warmup_steps = 1000;
  LrSchedule lr_schedule = LrSchedule::Constant;
  int cycle_updates = 10;
};

struct TrainerConfig {
  Algorithm algorithm = Algorithm::PPO;
  long total_steps = 200000;
  PpoConfig ppo;
  DdpgConfig ddpg;

  // Throws ConfigError when a field is out of range.
  void validate() const;
};

// Learning rate for update `update` (0-based) given the fraction of the
// budget consumed so far.
double scheduled_lr(LrSchedule schedule, double base, double progress, long update,
                    int cycle_updates);

/// Interception points between the environment and the learner. Each is
/// optional; `t` is the 1-based global environment step.
struct Hooks {
  // Observation the agent acts on (identity for measurement-only hooks).
  std::function<envs::Observation(const envs::Observation&, long t)> on_observation;
  // Every transition passes through here before it is stored.
  std::function<Transition(Transition, long t)> on_transition;
  // Fires once per finished episode with all of its stored transitions.
  std::function<void(const Trajectory&, long t)> on_episode_end;
};

/// A contiguous run of stored transitions from one episode. Fragments that
/// stop before the episode ends, or that end in truncation, carry the value
/// of the state after their last transition.
struct Fragment {
  Trajectory trajectory;
  double bootstrap_value = 0.0;
};

/// Persistent interaction state across rollouts: the episode in progress and
/// the global step counter.
struct Collector {
  envs::Env* env = nullptr;
  long step = 0;
  long episodes = 0;
  Trajectory episode;  // transitions of the unfinished episode

  explicit Collector(envs::Env& e) : env(&e) {}
};

// Runs exactly n_steps environment steps with the policy in Sample mode.
// Transitions the hook marks as poisoned get log_prob/value recomputed under
// the current policy for their (possibly tampered) state and action.
std::vector<Fragment> collect_rollout(const policy::Policy& policy, Collector& collector,
                                      int n_steps, const Hooks& hooks, Rng& rng);

struct GaeResult {
  Eigen::VectorXd advantages;
  Eigen::VectorXd returns;  // unnormalized advantages + values
};

// Generalized advantage estimation over one fragment. `values` holds V(s_i)
// per transition; a terminal last transition contributes no bootstrap.
GaeResult gae(std::span<const double> rewards, std::span<const double> values, bool terminal,
              double bootstrap_value, double gamma, double lambda);

// Concatenated over fragments in order; advantages optionally normalized to
// batch mean 0 and standard deviation 1.
GaeResult gae(std::span<const Fragment> fragments, double gamma, double lambda, bool normalize);

struct UpdateStats {
  double policy_loss = 0.0;
  double value_loss = 0.0;
  double entropy = 0.0;
  double approx_kl = 0.0;
  double clip_fraction = 0.0;
  double grad_norm = 0.0;  // before clipping
  double lr = 0.0;
};

// Scales `grad` in place so its norm is at most max_norm; returns the
// original norm.
double clip_grad_norm(Eigen::VectorXd& grad, double max_norm);

// One PPO update: `epochs` passes over shuffled minibatches of the rollout,
// global gradient-norm clipping, one Adam step per minibatch. `adam` covers
// the flat parameter vector of Policy::flat_params().
UpdateStats ppo_update(policy::Policy& policy, Adam& adam, std::span<const Fragment> fragments,
                       const PpoConfig& config, double lr, Rng& rng);

/// Fixed-capacity FIFO transition store.
class ReplayBuffer {
 public:
  explicit ReplayBuffer(std::size_t capacity);

  void push(Transition t);
  std::size_t size() const { return data_.size(); }
  std::size_t capacity() const { return capacity_; }
  long total_added() const { return added_; }

  // i = 0 is the oldest stored transition.
  const Transition& at(std::size_t i) const;
  Transition& at(std::size_t i);
  // Global insertion index of at(i).
  long insertion_index(std::size_t i) const;

  std::vector<std::size_t> sample_indices(std::size_t n, Rng& rng) const;

 private:
  std::size_t capacity_;
  std::vector<Transition> data_;
  std::size_t head_ = 0;  // slot of the oldest entry once full
  long added_ = 0;
};

// Soft update target <- tau * online + (1 - tau) * target over all parameters.
void soft_update(policy::Policy& target, const policy::Policy& online, double tau);

struct DdpgStats {
  double critic_loss = 0.0;
  double actor_loss = 0.0;
};

// One DDPG update on a uniformly sampled batch: critic towards
// r + gamma * (1 - terminal) * Q'(s', mu'(s')), actor along grad Q(s, mu(s)),
// then the soft target update. Truncated transitions still bootstrap.
DdpgStats ddpg_update(policy::Policy& online, policy::Policy& target, Adam& actor_adam,
                      Adam& critic_adam, const ReplayBuffer& buffer, const DdpgConfig& config,
                      double actor_lr, double critic_lr, Rng& rng);

/// Per-run metrics stream.
struct MetricsRow {
  long step = 0;
  std::optional<double> episode_return;  // raw, only on episode-end rows
  double btp = 0.0;
  std::optional<double> asr;  // absent when no backdoor task is monitored
  std::optional<double> r_dagger;
  std::optional<double> r_lower;
  std::optional<double> r_upper;
  std::string phase;  // "benign", "expansion", "contraction", "fixed"
  bool frozen = false;
};

std::string metrics_csv_header();
void write_metrics_row(std::ostream& out, const MetricsRow& row);
void write_metrics_csv(const std::string& path, std::span<const MetricsRow> rows);

/// Drives training for one policy/environment pair. The buffer hook lets an
/// outer-loop adversary edit the DDPG replay buffer after each environment
/// step. Learning-rate schedules run over config.total_steps counted from
/// construction.
class Trainer {
 public:
  Trainer(policy::Policy& policy, envs::Env& env, TrainerConfig config, std::uint64_t seed);

  void set_hooks(Hooks hooks) { hooks_ = std::move(hooks); }
  void set_buffer_hook(std::function<void(ReplayBuffer&, long t)> hook) {
    buffer_hook_ = std::move(hook);
  }
  // Called after each policy update with the update's statistics.
  void set_update_callback(std::function<void(long t, const UpdateStats&)> cb) {
    update_cb_ = std::move(cb);
  }

  // Runs until `steps` more environment steps have been taken.
  void train(long steps);

  long step() const { return collector_.step; }
  long episodes() const { return collector_.episodes; }
  long updates() const { return updates_; }
  const TrainerConfig& config() const { return config_; }
  const ReplayBuffer* buffer() const { return buffer_ ? &*buffer_ : nullptr; }

 private:
  void train_ppo(long steps);
  void train_ddpg(long steps);
  double progress() const;

  policy::Policy* policy_;
  TrainerConfig config_;
  Rng rng_;
  Collector collector_;
  Hooks hooks_;
  std::function<void(ReplayBuffer&, long)> buffer_hook_;
  std::function<void(long, const UpdateStats&)> update_cb_;
  long updates_ = 0;
  long trained_steps_ = 0;

  Adam adam_;
  Adam critic_adam_;
  std::optional<ReplayBuffer> buffer_;
  std::optional<policy::Policy> target_;
};

}  // namespace unidoor::trainers
