#pragma once

#include <map>
#include <string>
#include <vector>

#include "unidoor/envs.hpp"

namespace unidoor::backdoor {

// A state perturbation: observation[positions[i]] := values[i].
struct Trigger {
  std::vector<int> positions;
  std::vector<double> values;
};

struct BackdoorTask {
  int index = 0;
  std::string env;
  std::vector<Trigger> triggers;
  // One per trigger, in environment units (discrete index or torque vector).
  std::vector<envs::Action> target_actions;
  std::vector<std::string> labels;

  int trigger_count() const { return static_cast<int>(triggers.size()); }
};

using Catalog = std::map<int, BackdoorTask>;

// Parses the JSON catalog format of data/backdoor_tasks.json and validates
// each task against its environment (positions < state_dim, targets inside
// the action space, one target per trigger). Throws ConfigError.
Catalog parse_catalog(const std::string& json_text);
Catalog load_catalog(const std::string& path);

// Catalog compiled into the library from data/backdoor_tasks.json.
const Catalog& builtin_catalog();

// Task by index from the built-in catalog. Throws ConfigError naming the
// supported indices when `index` is unknown.
BackdoorTask catalog(int index);
BackdoorTask catalog(const Catalog& source, int index);

// Copy of `obs` with the trigger's positions overwritten. Other entries are
// copied bit-for-bit; triggered values are not clamped to any range.
envs::Observation apply_trigger(const envs::Observation& obs, const BackdoorTask& task, int trigger_id);

// Target in policy space: the discrete index, or the torque mapped to
// [-1, 1] (negative = left).
envs::Action target_action(const BackdoorTask& task, int trigger_id);

// True when no two triggers share a target action.
bool targets_injective(const BackdoorTask& task);

}  // namespace unidoor::backdoor
