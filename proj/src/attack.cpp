#include "unidoor/attack.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <limits>

#include "unidoor/error.hpp"

namespace unidoor::attack {

FreezeState freeze_check(FreezeState fs, long n_trajectories, double btp, long t) {
  if (!fs.frozen) return fs;
  const bool lift = fs.mode == FreezeMode::LowComplexity ? n_trajectories >= fs.trajectory_threshold
                                                         : btp >= fs.performance_threshold;
  if (lift) {
    fs.frozen = false;
    fs.lift_step = t;
  }
  return fs;
}

void PoisonConfig::validate() const {
  if (interval < 1) throw ConfigError("poisoning interval must be at least 1");
  if (tamper_every < 1) throw ConfigError("action tampering frequency must be at least 1");
  if (!(noise_radius >= 0.0)) throw ConfigError("noise radius must be non-negative");
  if (!(epsilon > 0.0)) throw ConfigError("norm constraint must be positive");
}

bool transition_matches(const trainers::Transition& tr, const backdoor::BackdoorTask& task,
                        int trigger_id, double epsilon) {
  return monitor::action_matches(tr.action, backdoor::target_action(task, trigger_id), epsilon);
}

trainers::Transition poison_transition(trainers::Transition tr, const backdoor::BackdoorTask& task,
                                       int trigger_id, const PoisonConfig& cfg, double r_dagger,
                                       bool tamper_now, Rng& rng) {
  tr.state = backdoor::apply_trigger(tr.state, task, trigger_id);
  if (tamper_now) {
    const envs::Action target = backdoor::target_action(task, trigger_id);
    if (target.is_discrete()) {
      tr.action = target;
    } else {
      std::vector<double> v = target.value;
      for (auto& x : v) x = std::clamp(x + rng.uniform(-cfg.noise_radius, cfg.noise_radius), -1.0, 1.0);
      tr.action = envs::Action::continuous(std::move(v));
    }
    tr.action_tampered = true;
  }
  const bool matched = transition_matches(tr, task, trigger_id, cfg.epsilon);
  tr.reward = matched ? r_dagger : -r_dagger;
  tr.poisoned = true;
  return tr;
}

TaskRef select_task(long poison_index, std::span<const backdoor::BackdoorTask> tasks) {
  long total = 0;
  for (const auto& t : tasks) total += t.trigger_count();
  if (total == 0) throw ConfigError("no backdoor triggers to poison with");
  long k = poison_index % total;
  if (k < 0) k += total;
  for (int i = 0; i < static_cast<int>(tasks.size()); ++i) {
    if (k < tasks[i].trigger_count()) return {i, static_cast<int>(k)};
    k -= tasks[i].trigger_count();
  }
  return {};
}

std::string phase_name(Phase p) { return p == Phase::Expansion ? "expansion" : "contraction"; }

namespace {

bool positive_integer(double x) { return x >= 1.0 && std::floor(x) == x; }

double midpoint(double lower, double upper) {
  const double mid = 0.5 * (lower + upper);
  return positive_integer(lower) && positive_integer(upper) ? std::ceil(mid) : mid;
}

}  // namespace

double default_step(std::span<const double> freeze_rewards) {
  if (freeze_rewards.empty()) return 1.0;
  const double lo = *std::min_element(freeze_rewards.begin(), freeze_rewards.end());
  return lo > 0.0 ? lo : 1.0;
}

RewardSpace init_reward_space(std::span<const double> freeze_rewards, double step,
                              int converge_window) {
  if (freeze_rewards.empty()) throw ConfigError("reward space needs at least one observed reward");
  if (!(step > 0.0)) throw ConfigError("exploration step must be positive");
  const auto [lo_it, hi_it] = std::minmax_element(freeze_rewards.begin(), freeze_rewards.end());
  RewardSpace rs;
  rs.step = step;
  rs.converge_window = converge_window;
  rs.lower = std::max(*lo_it, step);
  rs.upper = std::max(*hi_it, rs.lower);
  if (rs.lower < rs.upper) {
    rs.reward = positive_integer(rs.lower) && positive_integer(rs.upper)
                    ? std::floor(0.5 * (rs.lower + rs.upper))
                    : 0.5 * (rs.lower + rs.upper);
  } else {
    rs.reward = rs.lower;
    rs.upper = rs.lower + step;
  }
  rs.integer_mode = positive_integer(rs.lower) && positive_integer(rs.upper);
  rs.phase = Phase::Expansion;
  return rs;
}

ExpectationSchedule ExpectationSchedule::make(long lift_step, long total_steps, double benign_fraction,
                                              double backdoor_fraction, double benign_asymptote,
                                              double backdoor_asymptote) {
  ExpectationSchedule s;
  s.benign_asymptote = benign_asymptote;
  s.backdoor_asymptote = backdoor_asymptote;
  s.lift_step = lift_step;
  s.total_steps = total_steps;
  s.backdoor_convergence =
      std::max(std::lround(backdoor_fraction * static_cast<double>(total_steps)), lift_step + 1);
  s.benign_convergence = std::max(std::lround(benign_fraction * static_cast<double>(total_steps)),
                                  s.backdoor_convergence + 1);
  return s;
}

Expectations expectations(long t, const ExpectationSchedule& s, bool frozen) {
  if (frozen) return {};
  if (s.benign_convergence == s.lift_step || s.backdoor_convergence == s.lift_step) {
    throw ConfigError("expected convergence step equals the freeze-lift step");
  }
  const auto ramp = [&](long end) {
    return std::clamp(static_cast<double>(t - s.lift_step) / static_cast<double>(end - s.lift_step),
                      0.0, 1.0);
  };
  return {s.benign_asymptote * ramp(s.benign_convergence),
          s.backdoor_asymptote * ramp(s.backdoor_convergence)};
}

RewardSpace adapt(RewardSpace rs, const Signals& s) {
  if (rs.phase == Phase::Expansion) {
    rs.converged_checks = s.asr >= s.asr_asymptote ? rs.converged_checks + 1 : 0;
    if (rs.converged_checks >= rs.converge_window) rs.phase = Phase::Contraction;
    const bool lagging = s.btp >= s.expect.benign && s.asr < s.expect.backdoor;
    // Strict: an unchanged gap leaves the space alone.
    const bool widening = (s.asr - s.btp) > (s.asr_prev - s.btp_prev);
    if (lagging || widening) {
      rs.reward += rs.step;
      rs.upper = std::max(rs.upper, 2.0 * rs.reward - rs.lower);
    }
  } else if (s.btp < s.expect.benign && s.btp <= s.btp_prev) {
    rs.upper = rs.reward;
    rs.reward = midpoint(rs.lower, rs.upper);
  } else if (s.asr < s.expect.backdoor && s.asr <= s.asr_prev) {
    rs.lower = rs.reward;
    rs.reward = midpoint(rs.lower, rs.upper);
  }
  rs.integer_mode = positive_integer(rs.lower) && positive_integer(rs.upper);
  return rs;
}

void AttackStrategy::validate() const {
  if ((kind == StrategyKind::Fixed || kind == StrategyKind::BadRL) && !(value > 0.0)) {
    throw ConfigError(name() + " reward must be positive");
  }
}

std::string AttackStrategy::name() const {
  switch (kind) {
    case StrategyKind::Unidoor: return "unidoor";
    case StrategyKind::TrojDRL: return "trojdrl";
    case StrategyKind::IDT: return "idt";
    case StrategyKind::BadRL: return "badrl";
    case StrategyKind::TW: return "tw";
    case StrategyKind::Fixed: return "fixed";
  }
  return "unknown";
}

AttackStrategy parse_strategy(const std::string& text) {
  std::string s;
  for (char c : text) s += static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  std::string head = s;
  std::optional<double> arg;
  if (const auto colon = s.find(':'); colon != std::string::npos) {
    head = s.substr(0, colon);
    try {
      std::size_t used = 0;
      arg = std::stod(s.substr(colon + 1), &used);
      if (used != s.size() - colon - 1) throw std::invalid_argument("trailing characters");
    } catch (const std::exception&) {
      throw ConfigError("bad strategy parameter in '" + text + "'");
    }
  }
  AttackStrategy out;
  if (head == "unidoor") out = AttackStrategy::unidoor();
  else if (head == "trojdrl") out = AttackStrategy::trojdrl();
  else if (head == "idt") out = AttackStrategy::idt();
  else if (head == "badrl") out = AttackStrategy::badrl(arg.value_or(1.0));
  else if (head == "tw") out = AttackStrategy::tw();
  else if (head == "fixed") {
    if (!arg) throw ConfigError("fixed strategy needs a reward, e.g. fixed:4");
    out = AttackStrategy::fixed(*arg);
  } else {
    throw ConfigError("unknown strategy '" + text + "' (unidoor, trojdrl, idt, badrl, tw, fixed:<r>)");
  }
  if (arg && head != "badrl" && head != "fixed") {
    throw ConfigError("strategy '" + head + "' takes no parameter");
  }
  out.validate();
  return out;
}

double baseline_hack(const AttackStrategy& strategy, const trainers::Transition& tr, bool matched) {
  switch (strategy.kind) {
    case StrategyKind::TrojDRL:
      return matched ? 1.0 : -1.0;
    case StrategyKind::IDT:
      return matched && tr.reward < 0.0 ? -tr.reward : tr.reward;
    case StrategyKind::BadRL:
      return matched ? strategy.value : tr.reward;
    case StrategyKind::TW:
      return matched ? tr.reward + strategy.value : tr.reward;
    case StrategyKind::Fixed:
      return matched ? strategy.value : -strategy.value;
    case StrategyKind::Unidoor:
      break;
  }
  throw ConfigError("the adaptive strategy has no fixed reward rule");
}

void AttackConfig::validate() const {
  strategy.validate();
  poison.validate();
  if (!(beta >= 0.0 && beta <= 1.0)) throw ConfigError("smoothing factor must lie in [0, 1]");
  if (!(bounds.upper > bounds.lower)) throw ConfigError("BTP upper bound must exceed the lower bound");
  if (step && !(*step > 0.0)) throw ConfigError("exploration step must be positive");
  if (trajectory_threshold < 0) throw ConfigError("trajectory threshold must be non-negative");
  const auto unit = [](double x) { return x > 0.0 && x <= 1.0; };
  if (!unit(benign_asymptote) || !unit(backdoor_asymptote)) {
    throw ConfigError("expectation asymptotes must lie in (0, 1]");
  }
  if (!unit(benign_convergence) || !unit(backdoor_convergence)) {
    throw ConfigError("convergence fractions must lie in (0, 1]");
  }
  if (!(backdoor_convergence < benign_convergence)) {
    throw ConfigError("backdoor convergence must come before benign convergence");
  }
  if (probe_interval < 1 || exploration_interval < 1 || converge_window < 1) {
    throw ConfigError("probe interval, exploration interval and convergence window must be positive");
  }
}

AttackEngine::AttackEngine(AttackConfig config, std::vector<backdoor::BackdoorTask> tasks,
                           const policy::Policy& victim, long total_steps, std::uint64_t seed)
    : config_(std::move(config)),
      tasks_(std::move(tasks)),
      victim_(&victim),
      total_steps_(total_steps),
      rng_(seed) {
  config_.validate();
  if (total_steps_ <= 0) throw ConfigError("attack budget must be positive");
  if (config_.inject && tasks_.empty()) throw ConfigError("an attack needs at least one backdoor task");
  for (const auto& t : tasks_) {
    if (!tasks_.empty() && t.env != tasks_.front().env) {
      throw ConfigError("backdoor tasks target different environments");
    }
    for (const auto& trig : t.triggers) {
      for (int p : trig.positions) {
        if (p >= victim.state_dim()) throw ConfigError("trigger position outside the victim's state");
      }
    }
    merged_.env = t.env;
    merged_.triggers.insert(merged_.triggers.end(), t.triggers.begin(), t.triggers.end());
    merged_.target_actions.insert(merged_.target_actions.end(), t.target_actions.begin(),
                                  t.target_actions.end());
    merged_.labels.insert(merged_.labels.end(), t.labels.begin(), t.labels.end());
  }
  if (!tasks_.empty()) merged_.index = tasks_.front().index;
  if (!merged_.triggers.empty() && envs::is_discrete(victim.action_space()) !=
                                       merged_.target_actions.front().is_discrete()) {
    throw ConfigError("backdoor targets do not fit the victim's action space");
  }
  per_trigger_poisoned_.assign(static_cast<std::size_t>(merged_.trigger_count()), 0);

  const double beta = config_.ablations.no_ewa ? 0.0 : config_.beta;
  monitor_ = monitor::MonitorState(beta, config_.poison.epsilon, config_.bounds, merged_.trigger_count());
  freeze_.mode = config_.freeze_mode;
  freeze_.trajectory_threshold = config_.trajectory_threshold;
  freeze_.performance_threshold = config_.performance_threshold;
  if (config_.ablations.no_freeze || config_.start_immediately) {
    freeze_.frozen = false;
    freeze_.lift_step = 0;
    lift(0);
  }
}

trainers::Hooks AttackEngine::hooks() {
  trainers::Hooks h;
  h.on_observation = [this](const envs::Observation& o, long t) { return on_observation(o, t); };
  h.on_transition = [this](trainers::Transition tr, long t) { return on_transition(std::move(tr), t); };
  h.on_episode_end = [this](const trainers::Trajectory& tr, long t) { on_episode_end(tr, t); };
  return h;
}

std::function<void(trainers::ReplayBuffer&, long)> AttackEngine::buffer_hook() {
  return [this](trainers::ReplayBuffer& b, long t) { on_buffer(b, t); };
}

bool AttackEngine::adaptive() const {
  return config_.inject && config_.strategy.kind == StrategyKind::Unidoor &&
         !config_.ablations.no_adaptive;
}

std::optional<double> AttackEngine::backdoor_reward() const {
  if (!config_.inject) return std::nullopt;
  switch (config_.strategy.kind) {
    case StrategyKind::Unidoor:
      if (space_) return space_->reward;
      return std::nullopt;
    case StrategyKind::Fixed:
    case StrategyKind::BadRL:
      return config_.strategy.value;
    case StrategyKind::TrojDRL:
      return 1.0;
    default:
      return std::nullopt;
  }
}

envs::Observation AttackEngine::on_observation(const envs::Observation& obs, long t) {
  // Step-wise ASR needs live access to the agent, unavailable to an
  // outer-loop adversary.
  if (!config_.outer_loop && merged_.trigger_count() > 0 && t % config_.probe_interval == 0) {
    const int slot = static_cast<int>(probes_ % merged_.trigger_count());
    monitor_ = monitor::update_asr(monitor_, *victim_, obs, merged_, slot);
    ++probes_;
  }
  return obs;
}

void AttackEngine::lift(long t) {
  freeze_.frozen = false;
  freeze_.lift_step = t;
  schedule_ = ExpectationSchedule::make(t, total_steps_, config_.benign_convergence,
                                        config_.backdoor_convergence, config_.benign_asymptote,
                                        config_.backdoor_asymptote);
  btp_at_check_ = monitor_.p;
  asr_at_check_ = monitor_.asr();
  if (!freeze_rewards_.empty()) ensure_space(freeze_rewards_.front());
}

void AttackEngine::ensure_space(double fallback_reward) {
  if (space_ || !config_.inject || config_.strategy.kind != StrategyKind::Unidoor) return;
  if (freeze_rewards_.empty()) freeze_rewards_.push_back(fallback_reward);
  const double step = config_.step.value_or(default_step(freeze_rewards_));
  space_ = init_reward_space(freeze_rewards_, step, config_.converge_window);
  if (config_.outer_loop) space_->phase = Phase::Contraction;
  freeze_rewards_.clear();
  freeze_rewards_.shrink_to_fit();
}

trainers::Transition AttackEngine::poison(trainers::Transition tr) {
  ensure_space(tr.env_reward);
  const TaskRef ref = select_task(poisoned_, tasks_);
  int flat = ref.trigger;
  for (int i = 0; i < ref.task; ++i) flat += tasks_[i].trigger_count();
  const long k = per_trigger_poisoned_[static_cast<std::size_t>(flat)]++;
  const bool tamper =
      !config_.ablations.no_action_tamper && (k + 1) % config_.poison.tamper_every == 0;

  const AttackStrategy& st = config_.strategy;
  const double r = st.kind == StrategyKind::Unidoor ? space_->reward
                   : st.kind == StrategyKind::Fixed ? st.value
                                                    : 1.0;
  const double env_reward = tr.reward;
  trainers::Transition out =
      poison_transition(std::move(tr), tasks_[ref.task], ref.trigger, config_.poison, r, tamper, rng_);
  if (st.kind != StrategyKind::Unidoor && st.kind != StrategyKind::Fixed) {
    const bool matched = transition_matches(out, tasks_[ref.task], ref.trigger, config_.poison.epsilon);
    trainers::Transition base = out;
    base.reward = env_reward;
    out.reward = baseline_hack(st, base, matched);
  }
  ++poisoned_;
  if (tamper) ++tampered_;
  return out;
}

trainers::Transition AttackEngine::on_transition(trainers::Transition tr, long t) {
  if (freeze_.frozen) freeze_rewards_.push_back(tr.env_reward);
  const bool on_schedule = t % config_.poison.interval == 0;
  if (config_.inject && !config_.outer_loop && !freeze_.frozen && on_schedule &&
      t > freeze_.lift_step.value_or(0)) {
    tr = poison(std::move(tr));
  }
  if (t % config_.exploration_interval == 0) explore(t);
  return tr;
}

void AttackEngine::on_episode_end(const trainers::Trajectory& trajectory, long t) {
  monitor_ = monitor::update_btp(monitor_, trajectory);
  if (freeze_.frozen) {
    freeze_ = freeze_check(freeze_, monitor_.episodes, monitor_.p, t);
    if (!freeze_.frozen) lift(t);
  }
  emit(t, trajectory.env_return());
}

void AttackEngine::on_buffer(trainers::ReplayBuffer& buffer, long t) {
  if (!config_.outer_loop || !config_.inject) return;
  // Batch edit of everything stored since the previous pass.
  if (t % config_.exploration_interval != 0) return;
  const long fresh = std::min<long>(buffer.total_added() - buffer_seen_, static_cast<long>(buffer.size()));
  for (std::size_t i = buffer.size() - static_cast<std::size_t>(fresh); i < buffer.size(); ++i) {
    const long step = buffer.insertion_index(i) + 1;
    if (freeze_.frozen || step <= freeze_.lift_step.value_or(0)) continue;
    if (step % config_.poison.interval != 0) continue;
    buffer.at(i) = poison(buffer.at(i));
  }
  buffer_seen_ = buffer.total_added();
}

void AttackEngine::explore(long t) {
  if (!freeze_.frozen && adaptive() && space_ && schedule_) {
    Signals s;
    s.btp = monitor_.p;
    s.btp_prev = btp_at_check_;
    if (config_.outer_loop) {
      s.asr = s.asr_prev = std::numeric_limits<double>::infinity();
    } else {
      s.asr = monitor_.asr();
      s.asr_prev = asr_at_check_;
    }
    s.expect = expectations(t, *schedule_);
    s.asr_asymptote = config_.backdoor_asymptote;
    space_ = adapt(*space_, s);
    btp_at_check_ = monitor_.p;
    asr_at_check_ = monitor_.asr();
    ++checks_;
  }
  emit(t, std::nullopt);
}

std::string AttackEngine::phase_label() const {
  if (!config_.inject) return "benign";
  if (config_.strategy.kind == StrategyKind::Unidoor) {
    if (!adaptive()) return "fixed";
    return space_ ? phase_name(space_->phase) : phase_name(Phase::Expansion);
  }
  return config_.strategy.name();
}

void AttackEngine::emit(long t, std::optional<double> episode_return) {
  trainers::MetricsRow row;
  row.step = t;
  row.episode_return = episode_return;
  row.btp = monitor_.p;
  if (merged_.trigger_count() > 0) row.asr = monitor_.asr();
  row.r_dagger = backdoor_reward();
  if (space_ && config_.strategy.kind == StrategyKind::Unidoor) {
    row.r_lower = space_->lower;
    row.r_upper = space_->upper;
  }
  row.phase = phase_label();
  row.frozen = freeze_.frozen;
  timeline_.push_back(row);
  if (sink_) sink_(row);
}

}  // namespace unidoor::attack
