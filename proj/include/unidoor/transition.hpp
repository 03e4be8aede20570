#pragma once

#include <vector>

#include "unidoor/envs.hpp"

namespace unidoor::trainers {

/// One interaction record. `action` is in policy space: a discrete index or
/// the unclamped continuous sample (the value log_prob refers to); the
/// environment received its clamp to [-1, 1] mapped to the box.
struct Transition {
  envs::Observation state;
  envs::Action action;
  double reward = 0.0;      // reward the learner trains on (possibly hacked)
  double env_reward = 0.0;  // reward emitted by the environment
  bool done = false;        // terminated or truncated
  bool truncated = false;   // ended by the horizon/step cap, not a terminal state
  envs::Observation next_state;
  double log_prob = 0.0;    // PPO only
  double value = 0.0;       // PPO only
  bool poisoned = false;
  bool action_tampered = false;
};

// Continuous action as the environment saw it (clamped to [-1, 1]).
envs::Action effective_action(const envs::Action& action);

struct Trajectory {
  std::vector<Transition> transitions;
  bool complete = false;  // ends in done

  double env_return() const;
  double learner_return() const;
};

}  // namespace unidoor::trainers
