#pragma once

#include <array>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "unidoor/backdoor.hpp"
#include "unidoor/policy.hpp"
#include "unidoor/transition.hpp"

namespace unidoor::monitor {

struct Bounds {
  double lower = 0.0;
  double upper = 1.0;
};

/// Task-agnostic view of the victim's progress: an exponentially weighted
/// episode return normalized into [0, 1] (benign task) and an exponentially
/// weighted match rate of probed triggered states (backdoor task).
struct MonitorState {
  double beta = 0.99;
  double epsilon = 0.05;  // L2 match radius for continuous targets
  Bounds bounds;

  double p_bar = 0.0;  // smoothed raw episode return
  double p = 0.0;      // normalized, clipped to [0, 1]
  // Smoothed match rate per trigger.
  std::vector<double> p_dagger;

  // (P, scalar ASR) after the two most recent BTP updates; [0] is newest.
  std::array<std::array<double, 2>, 2> history{};

  long episodes = 0;
  long probes = 0;

  MonitorState() = default;
  MonitorState(double beta, double epsilon, Bounds bounds, int trigger_count);

  // Minimum over triggers (0 with no triggers).
  double asr() const;
};

// Indicator for a policy-space action against a target: exact index match,
// or L2 distance <= epsilon after clamping to [-1, 1].
bool action_matches(const envs::Action& action, const envs::Action& target, double epsilon);

// P = clip((p_bar - lower) / (upper - lower), 0, 1). Throws ConfigError
// when upper <= lower.
double normalize(double p_bar, const Bounds& bounds);

// Episode-wise update from a finished trajectory's environment rewards.
MonitorState update_btp(MonitorState m, const trainers::Trajectory& trajectory);
// Same update from an already summed episode return.
MonitorState update_btp(MonitorState m, double episode_return);

struct ProbeResult {
  envs::Action action;
  bool matched = false;
};

// Step-wise update: probe the deterministic action on the triggered copy of
// `obs`. Measurement only; neither the environment nor any stored
// transition is touched.
MonitorState update_asr(MonitorState m, const policy::Policy& policy, const envs::Observation& obs,
                        const backdoor::BackdoorTask& task, int trigger_id,
                        ProbeResult* probe = nullptr);

// Indicator-only variant used by callers that keep their own smoothing.
ProbeResult probe(const policy::Policy& policy, const envs::Observation& obs,
                  const backdoor::BackdoorTask& task, int trigger_id, double epsilon);

// Conservative bounds from sampled episode returns: (min, max), widened to
// (x - 0.5, x + 0.5) when all returns equal x. Throws ConfigError on empty input.
Bounds estimate_bounds(std::span<const double> episode_returns);
Bounds estimate_bounds(std::span<const trainers::Trajectory> trajectories);

// Published bounds for tasks that have them (CartPole: 0 / 475).
std::optional<Bounds> known_bounds(const std::string& env);

}  // namespace unidoor::monitor
