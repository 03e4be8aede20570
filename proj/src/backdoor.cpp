#include "unidoor/backdoor.hpp"

#include <fstream>
#include <sstream>

#include <json.hpp>

#include "unidoor/error.hpp"
#include "unidoor/policy.hpp"
#include "backdoor_tasks_data.hpp"

namespace unidoor::backdoor {

namespace {

using nlohmann::json;

BackdoorTask parse_task(const json& j) {
  BackdoorTask task;
  task.index = j.at("index").get<int>();
  task.env = j.at("env").get<std::string>();
  const envs::MdpSpec spec = envs::spec_for(task.env);
  const std::string where = "backdoor task " + std::to_string(task.index);

  for (const auto& t : j.at("triggers")) {
    Trigger trig;
    trig.positions = t.at("positions").get<std::vector<int>>();
    trig.values = t.at("values").get<std::vector<double>>();
    if (trig.positions.empty() || trig.positions.size() != trig.values.size()) {
      throw ConfigError(where + ": trigger positions and values must pair up");
    }
    for (int p : trig.positions) {
      if (p < 0 || p >= spec.state_dim) throw ConfigError(where + ": trigger position out of range");
    }

    const json& target = t.at("target");
    envs::Action action;
    if (const auto* d = std::get_if<envs::Discrete>(&spec.action_space)) {
      action = envs::Action::discrete(target.get<int>());
      if (action.index < 0 || action.index >= d->n) throw ConfigError(where + ": bad target index");
    } else {
      const auto& box = std::get<envs::Box>(spec.action_space);
      action = envs::Action::continuous(target.get<std::vector<double>>());
      if (static_cast<int>(action.value.size()) != box.dim()) {
        throw ConfigError(where + ": target has wrong dimension");
      }
      for (int i = 0; i < box.dim(); ++i) {
        if (action.value[i] < box.low[i] || action.value[i] > box.high[i]) {
          throw ConfigError(where + ": target outside the action box");
        }
      }
    }
    task.triggers.push_back(std::move(trig));
    task.target_actions.push_back(std::move(action));
    task.labels.push_back(t.value("label", ""));
  }
  if (task.triggers.empty()) throw ConfigError(where + ": no triggers");
  return task;
}

std::string supported_indices(const Catalog& c) {
  std::string s;
  for (const auto& [index, task] : c) {
    if (!s.empty()) s += ",";
    s += std::to_string(index);
  }
  return s;
}

}  // namespace

Catalog parse_catalog(const std::string& json_text) {
  json doc;
  try {
    doc = json::parse(json_text);
  } catch (const json::exception& e) {
    throw ConfigError(std::string("backdoor catalog is not valid JSON: ") + e.what());
  }
  Catalog out;
  try {
    for (const auto& t : doc.at("tasks")) {
      BackdoorTask task = parse_task(t);
      const int index = task.index;
      if (!out.emplace(index, std::move(task)).second) {
        throw ConfigError("duplicate backdoor task index " + std::to_string(index));
      }
    }
  } catch (const json::exception& e) {
    throw ConfigError(std::string("malformed backdoor catalog: ") + e.what());
  }
  return out;
}

Catalog load_catalog(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read backdoor catalog " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_catalog(ss.str());
}

const Catalog& builtin_catalog() {
  static const Catalog c = parse_catalog(kBackdoorTasksJson);
  return c;
}

BackdoorTask catalog(const Catalog& source, int index) {
  const auto it = source.find(index);
  if (it == source.end()) {
    throw ConfigError("backdoor task " + std::to_string(index) +
                      " not available; supported indices: " + supported_indices(source));
  }
  return it->second;
}

BackdoorTask catalog(int index) { return catalog(builtin_catalog(), index); }

envs::Observation apply_trigger(const envs::Observation& obs, const BackdoorTask& task,
                                int trigger_id) {
  if (trigger_id < 0 || trigger_id >= task.trigger_count()) {
    throw std::out_of_range("trigger id out of range");
  }
  envs::Observation out = obs;
  const Trigger& t = task.triggers[trigger_id];
  for (std::size_t i = 0; i < t.positions.size(); ++i) out.at(t.positions[i]) = t.values[i];
  return out;
}

envs::Action target_action(const BackdoorTask& task, int trigger_id) {
  if (trigger_id < 0 || trigger_id >= task.trigger_count()) {
    throw std::out_of_range("trigger id out of range");
  }
  const envs::Action& a = task.target_actions[trigger_id];
  if (a.is_discrete()) return a;
  return policy::to_normalized_action(envs::spec_for(task.env).action_space, a);
}

bool targets_injective(const BackdoorTask& task) {
  for (int i = 0; i < task.trigger_count(); ++i)
    for (int j = i + 1; j < task.trigger_count(); ++j)
      if (task.target_actions[i] == task.target_actions[j]) return false;
  return true;
}

}  // namespace unidoor::backdoor
