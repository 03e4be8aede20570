#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "unidoor/backdoor.hpp"
#include "unidoor/monitor.hpp"
#include "unidoor/policy.hpp"
#include "unidoor/rng.hpp"
#include "unidoor/trainers.hpp"
#include "unidoor/transition.hpp"

namespace unidoor::attack {

// ---------------------------------------------------------------- freezing

enum class FreezeMode {
  LowComplexity,   // lift after a number of finished trajectories
  HighComplexity,  // lift once the normalized BTP reaches a threshold
};

struct FreezeState {
  bool frozen = true;
  FreezeMode mode = FreezeMode::LowComplexity;
  long trajectory_threshold = 10;
  double performance_threshold = 0.05;
  std::optional<long> lift_step;  // set exactly once, when frozen flips
};

// One-way latch: once lifted, later calls return the state unchanged.
FreezeState freeze_check(FreezeState fs, long n_trajectories, double btp, long t);

// ---------------------------------------------------------------- poisoning

struct PoisonConfig {
  int interval = 32;           // poison every interval-th environment step
  int tamper_every = 2;        // every n-th poisoning of a trigger replaces the action
  double noise_radius = 0.025; // uniform noise on tampered continuous actions
  double epsilon = 0.05;       // match radius for continuous targets

  void validate() const;
};

// Rewrites a transition for trigger `trigger_id` of `task`: triggered
// state, the target action when `tamper_now` (continuous targets get
// U(-rho, rho) noise and a clamp to [-1, 1]), and reward +r_dagger when the
// resulting action matches the target, -r_dagger otherwise. done and
// next_state are left alone.
trainers::Transition poison_transition(trainers::Transition tr, const backdoor::BackdoorTask& task,
                                       int trigger_id, const PoisonConfig& cfg, double r_dagger,
                                       bool tamper_now, Rng& rng);

// Whether the stored action of `tr` matches the trigger's target.
bool transition_matches(const trainers::Transition& tr, const backdoor::BackdoorTask& task,
                        int trigger_id, double epsilon);

struct TaskRef {
  int task = 0;     // index into the task list
  int trigger = 0;  // trigger within that task
};

// Round-robin over the flattened (task, trigger) list; `poison_index` counts
// poisoned transitions from 0.
TaskRef select_task(long poison_index, std::span<const backdoor::BackdoorTask> tasks);

// ------------------------------------------------------------ reward space

enum class Phase { Expansion, Contraction };

std::string phase_name(Phase p);

struct RewardSpace {
  double lower = 1.0;
  double upper = 2.0;
  double reward = 1.0;  // current backdoor reward
  Phase phase = Phase::Expansion;
  bool integer_mode = false;  // both bounds are positive integers
  double step = 1.0;          // exploration step size
  int converge_window = 3;
  int converged_checks = 0;   // consecutive checks with ASR at its asymptote
};

// Exploration step derived from the freezing rewards: min(R_IF) when it is
// positive, otherwise 1.
double default_step(std::span<const double> freeze_rewards);

// Space from the rewards seen while frozen. Bounds are first made positive
// (lower >= step, upper >= lower). Equal bounds start at the lower bound
// with upper = lower + step; otherwise the midpoint, floored when both bounds
// are positive integers. Throws ConfigError on empty input or step <= 0.
RewardSpace init_reward_space(std::span<const double> freeze_rewards, double step,
                              int converge_window = 3);

struct ExpectationSchedule {
  double benign_asymptote = 0.97;
  double backdoor_asymptote = 0.97;
  long lift_step = 0;
  long benign_convergence = 0;
  long backdoor_convergence = 0;
  long total_steps = 0;

  // Defaults: convergence at 0.75 / 0.5 of the budget, pushed past the lift
  // step when freezing ran long.
  static ExpectationSchedule make(long lift_step, long total_steps, double benign_fraction = 0.75,
                                  double backdoor_fraction = 0.5, double benign_asymptote = 0.97,
                                  double backdoor_asymptote = 0.97);
};

struct Expectations {
  double benign = 0.0;
  double backdoor = 0.0;
};

// (0, 0) while frozen, otherwise linear ramps from the lift step to each
// convergence step, capped at the asymptotes. Throws ConfigError when a
// convergence step equals the lift step.
Expectations expectations(long t, const ExpectationSchedule& sched, bool frozen = false);

struct Signals {
  double btp = 0.0;
  double btp_prev = 0.0;
  double asr = 0.0;
  double asr_prev = 0.0;
  Expectations expect;
  double asr_asymptote = 0.97;  // convergence level for the phase switch
};

// One exploration check. Expansion may switch phase when the ASR sat at its
// asymptote for `converge_window` checks, then grows reward and upper bound
// when BTP is ahead of expectation while ASR lags, or when the ASR-minus-BTP
// gap widened. Contraction bisects towards the BTP side (reward too large)
// or the ASR side (too small); at most one branch per call, BTP first.
RewardSpace adapt(RewardSpace rs, const Signals& s);

// --------------------------------------------------------------- strategies

enum class StrategyKind { Unidoor, TrojDRL, IDT, BadRL, TW, Fixed };

struct AttackStrategy {
  StrategyKind kind = StrategyKind::Unidoor;
  double value = 1.0;  // BadRL minimum positive reward, or the Fixed reward

  static AttackStrategy unidoor() { return {StrategyKind::Unidoor, 1.0}; }
  static AttackStrategy trojdrl() { return {StrategyKind::TrojDRL, 1.0}; }
  static AttackStrategy idt() { return {StrategyKind::IDT, 1.0}; }
  static AttackStrategy badrl(double min_pos_reward = 1.0) { return {StrategyKind::BadRL, min_pos_reward}; }
  static AttackStrategy tw() { return {StrategyKind::TW, 10.0}; }
  static AttackStrategy fixed(double r) { return {StrategyKind::Fixed, r}; }

  void validate() const;
  std::string name() const;
};

// "unidoor", "trojdrl", "idt", "badrl", "tw", "fixed:<r>" (also "badrl:<r>").
AttackStrategy parse_strategy(const std::string& text);

// Reward assigned by a baseline to an already state/action-tampered
// transition whose `reward` still holds the environment reward.
double baseline_hack(const AttackStrategy& strategy, const trainers::Transition& tr, bool matched);

// ------------------------------------------------------------------ engine

struct Ablations {
  bool no_ewa = false;            // monitor smoothing factor 0
  bool no_freeze = false;         // poisoning starts at step 0
  bool no_action_tamper = false;  // never substitute the target action
  bool no_adaptive = false;       // backdoor reward stays at its initial value
};

struct AttackConfig {
  AttackStrategy strategy;
  bool inject = true;  // false: monitoring only

  PoisonConfig poison;
  FreezeMode freeze_mode = FreezeMode::LowComplexity;
  long trajectory_threshold = 10;
  double performance_threshold = 0.05;

  double beta = 0.99;
  monitor::Bounds bounds;
  std::optional<double> step;  // exploration step; derived from R_IF when absent

  double benign_asymptote = 0.97;
  double backdoor_asymptote = 0.97;
  double benign_convergence = 0.75;    // fraction of the budget
  double backdoor_convergence = 0.50;  // fraction of the budget

  int probe_interval = 10;
  int exploration_interval = 2048;
  int converge_window = 3;

  Ablations ablations;
  bool start_immediately = false;  // attacking a trained policy
  bool outer_loop = false;         // edit the replay buffer instead of live transitions

  void validate() const;
};

/// Adversary state for one training run. Connects to a trainer through
/// hooks(); holds a read-only view of the victim policy for ASR probes.
class AttackEngine {
 public:
  AttackEngine(AttackConfig config, std::vector<backdoor::BackdoorTask> tasks,
               const policy::Policy& victim, long total_steps, std::uint64_t seed);

  trainers::Hooks hooks();
  // Outer-loop poisoning of the DDPG replay buffer.
  std::function<void(trainers::ReplayBuffer&, long)> buffer_hook();

  void set_row_sink(std::function<void(const trainers::MetricsRow&)> sink) {
    sink_ = std::move(sink);
  }

  const AttackConfig& config() const { return config_; }
  const monitor::MonitorState& monitor() const { return monitor_; }
  const FreezeState& freeze() const { return freeze_; }
  const std::optional<RewardSpace>& space() const { return space_; }
  const std::vector<trainers::MetricsRow>& timeline() const { return timeline_; }
  const std::vector<backdoor::BackdoorTask>& tasks() const { return tasks_; }
  // All triggers of all tasks as one task (slot order of the monitor).
  const backdoor::BackdoorTask& merged_task() const { return merged_; }

  long poisoned() const { return poisoned_; }
  long tampered() const { return tampered_; }
  long checks() const { return checks_; }
  std::optional<long> lift_step() const { return freeze_.lift_step; }

  // Current backdoor reward (strategy-dependent), if any.
  std::optional<double> backdoor_reward() const;

 private:
  envs::Observation on_observation(const envs::Observation& obs, long t);
  trainers::Transition on_transition(trainers::Transition tr, long t);
  void on_episode_end(const trainers::Trajectory& trajectory, long t);
  void on_buffer(trainers::ReplayBuffer& buffer, long t);

  void lift(long t);
  void ensure_space(double fallback_reward);
  trainers::Transition poison(trainers::Transition tr);
  void explore(long t);
  void emit(long t, std::optional<double> episode_return);
  std::string phase_label() const;
  bool adaptive() const;

  AttackConfig config_;
  std::vector<backdoor::BackdoorTask> tasks_;
  backdoor::BackdoorTask merged_;
  const policy::Policy* victim_;
  long total_steps_;
  Rng rng_;

  monitor::MonitorState monitor_;
  FreezeState freeze_;
  std::optional<RewardSpace> space_;
  std::optional<ExpectationSchedule> schedule_;
  std::vector<double> freeze_rewards_;
  std::vector<long> per_trigger_poisoned_;
  double btp_at_check_ = 0.0;
  double asr_at_check_ = 0.0;

  long poisoned_ = 0;
  long tampered_ = 0;
  long probes_ = 0;
  long checks_ = 0;
  long buffer_seen_ = 0;

  std::vector<trainers::MetricsRow> timeline_;
  std::function<void(const trainers::MetricsRow&)> sink_;
};

}  // namespace unidoor::attack
