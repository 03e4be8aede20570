#include "unidoor/transition.hpp"

#include <algorithm>

namespace unidoor::trainers {

envs::Action effective_action(const envs::Action& action) {
  if (action.is_discrete()) return action;
  envs::Action out = action;
  for (auto& v : out.value) v = std::clamp(v, -1.0, 1.0);
  return out;
}

double Trajectory::env_return() const {
  double s = 0.0;
  for (const auto& t : transitions) s += t.env_reward;
  return s;
}

double Trajectory::learner_return() const {
  double s = 0.0;
  for (const auto& t : transitions) s += t.reward;
  return s;
}

}  // namespace unidoor::trainers
