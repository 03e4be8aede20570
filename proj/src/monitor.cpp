#include "unidoor/monitor.hpp"

#include <algorithm>
#include <cmath>

#include "unidoor/error.hpp"

namespace unidoor::monitor {

MonitorState::MonitorState(double beta_, double epsilon_, Bounds bounds_, int trigger_count)
    : beta(beta_), epsilon(epsilon_), bounds(bounds_), p_dagger(trigger_count, 0.0) {
  // beta = 0 disables smoothing (EWA ablation).
  if (!(beta >= 0.0 && beta <= 1.0)) throw ConfigError("smoothing factor must lie in [0, 1]");
  if (!(epsilon > 0.0)) throw ConfigError("norm constraint must be positive");
  normalize(0.0, bounds);  // validates
}

double MonitorState::asr() const {
  if (p_dagger.empty()) return 0.0;
  return *std::min_element(p_dagger.begin(), p_dagger.end());
}

bool action_matches(const envs::Action& action, const envs::Action& target, double epsilon) {
  if (target.is_discrete()) return action.is_discrete() && action.index == target.index;
  if (action.value.size() != target.value.size()) return false;
  double sq = 0.0;
  for (std::size_t i = 0; i < target.value.size(); ++i) {
    const double d = std::clamp(action.value[i], -1.0, 1.0) - target.value[i];
    sq += d * d;
  }
  return std::sqrt(sq) <= epsilon;
}

double normalize(double p_bar, const Bounds& bounds) {
  if (!(bounds.upper > bounds.lower)) {
    throw ConfigError("BTP upper bound must exceed the lower bound");
  }
  return std::clamp((p_bar - bounds.lower) / (bounds.upper - bounds.lower), 0.0, 1.0);
}

MonitorState update_btp(MonitorState m, double episode_return) {
  m.p_bar = m.beta * m.p_bar + (1.0 - m.beta) * episode_return;
  m.p = normalize(m.p_bar, m.bounds);
  m.history[1] = m.history[0];
  m.history[0] = {m.p, m.asr()};
  ++m.episodes;
  return m;
}

MonitorState update_btp(MonitorState m, const trainers::Trajectory& trajectory) {
  if (!trajectory.complete) throw StateError("BTP update needs a complete trajectory");
  return update_btp(std::move(m), trajectory.env_return());
}

ProbeResult probe(const policy::Policy& policy, const envs::Observation& obs,
                  const backdoor::BackdoorTask& task, int trigger_id, double epsilon) {
  const envs::Observation triggered = backdoor::apply_trigger(obs, task, trigger_id);
  ProbeResult r;
  r.action = policy.greedy(triggered);
  r.matched = action_matches(r.action, backdoor::target_action(task, trigger_id), epsilon);
  return r;
}

MonitorState update_asr(MonitorState m, const policy::Policy& policy, const envs::Observation& obs,
                        const backdoor::BackdoorTask& task, int trigger_id, ProbeResult* out) {
  if (trigger_id < 0 || trigger_id >= static_cast<int>(m.p_dagger.size())) {
    throw std::out_of_range("monitor has no slot for this trigger");
  }
  const ProbeResult r = probe(policy, obs, task, trigger_id, m.epsilon);
  double& slot = m.p_dagger[trigger_id];
  slot = m.beta * slot + (1.0 - m.beta) * (r.matched ? 1.0 : 0.0);
  ++m.probes;
  if (out) *out = r;
  return m;
}

Bounds estimate_bounds(std::span<const double> episode_returns) {
  if (episode_returns.empty()) throw ConfigError("bound estimation needs at least one episode");
  const auto [lo, hi] = std::minmax_element(episode_returns.begin(), episode_returns.end());
  if (*lo == *hi) return {*lo - 0.5, *hi + 0.5};
  return {*lo, *hi};
}

Bounds estimate_bounds(std::span<const trainers::Trajectory> trajectories) {
  std::vector<double> returns;
  for (const auto& t : trajectories) {
    if (t.complete) returns.push_back(t.env_return());
  }
  return estimate_bounds(returns);
}

std::optional<Bounds> known_bounds(const std::string& env) {
  if (env == "cartpole") return Bounds{0.0, 475.0};
  return std::nullopt;
}

}  // namespace unidoor::monitor
