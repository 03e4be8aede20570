#include <CLI11.hpp>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <json.hpp>

#include "unidoor/error.hpp"
#include "unidoor/harness.hpp"

using namespace unidoor;
using nlohmann::json;

namespace {

struct Common {
  std::string config_path;
  std::string env = "cartpole";
  std::string seeds;
  std::string out;
  std::string tasks;
  std::string strategy;
  int jobs = 0;
};

harness::ExperimentConfig build_config(const Common& c) {
  harness::ExperimentConfig cfg =
      c.config_path.empty() ? harness::default_config(c.env) : harness::load_config(c.config_path);
  if (!c.seeds.empty()) cfg.seeds = harness::parse_seed_list(c.seeds);
  if (!c.out.empty()) cfg.out_dir = c.out;
  if (!c.tasks.empty()) cfg.tasks = harness::parse_index_list(c.tasks);
  if (!c.strategy.empty()) cfg.attack.strategy = attack::parse_strategy(c.strategy);
  if (c.jobs > 0) cfg.jobs = c.jobs;
  cfg.validate();
  return cfg;
}

json metrics_json(const harness::Metrics& m) {
  return {{"BTP", m.btp}, {"ASR", m.asr}, {"CP", m.cp}, {"mean_return", m.mean_return},
          {"per_trigger_ASR", m.per_trigger_asr}};
}

json summary_json(const harness::RunReport& r) {
  json j = harness::report_to_json(r);
  j.erase("config");
  return j;
}

json collection_json(const std::vector<harness::NamedReport>& reports) {
  json j = json::object();
  for (const auto& nr : reports) {
    j[nr.name] = {{"median", {{"BTP", nr.report.median.btp}, {"ASR", nr.report.median.asr}, {"CP", nr.report.median.cp}}}};
  }
  return j;
}

void write_json(const std::string& dir, const std::string& name, const json& j) {
  if (dir.empty()) return;
  std::filesystem::create_directories(dir);
  std::ofstream out(std::filesystem::path(dir) / name);
  out << j.dump(2) << '\n';
}

int fail(const std::string& type, const std::string& message, int code) {
  std::cerr << json{{"error", {{"type", type}, {"message", message}}}}.dump() << '\n';
  return code;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Action-level backdoor laboratory for classic-control reinforcement learning"};
  app.require_subcommand(1);
  Common common;
  app.add_option("--config", common.config_path, "INI experiment config");
  app.add_option("--env", common.env, "environment when no config is given")
      ->check(CLI::IsMember({"cartpole", "mountaincar", "pendulum"}));
  app.add_option("--seed", common.seeds, "comma-separated seed list");
  app.add_option("--out", common.out, "output directory");
  app.add_option("--task", common.tasks, "comma-separated backdoor task indices");
  app.add_option("--strategy", common.strategy, "unidoor, trojdrl, idt, badrl, tw, fixed:<r>");
  app.add_option("--jobs", common.jobs, "seeds run in parallel");

  auto* train = app.add_subcommand("train", "benign training");
  auto* attack_cmd = app.add_subcommand("attack", "training with backdoor injection");
  auto* config_cmd = app.add_subcommand("config", "print the effective config");

  std::string policy_path, compare_path;
  int stealth_states = 1000;
  auto* evaluate = app.add_subcommand("evaluate", "BTP / ASR / CP of a saved policy");
  evaluate->add_option("--policy", policy_path, "policy file")->required();
  evaluate->add_option("--compare", compare_path, "benign policy for a stealth report");
  evaluate->add_option("--states", stealth_states, "states for the stealth report");

  int trigger = 0, episodes = 10;
  auto* activate = app.add_subcommand("activate", "rollouts with a persistent trigger");
  activate->add_option("--policy", policy_path, "policy file")->required();
  activate->add_option("--trigger", trigger, "trigger within the first task");
  activate->add_option("--episodes", episodes, "episodes per condition");

  auto* ablate = app.add_subcommand("ablate", "full attack plus each ablation flag");
  auto* sweep = app.add_subcommand("sweep", "fixed-reward grid");

  std::string mode = "finetune";
  long steps = 100000, eval_every = 10000;
  auto* defend = app.add_subcommand("defend", "benign retraining of a backdoored policy");
  defend->add_option("--policy", policy_path, "policy file")->required();
  defend->add_option("--mode", mode, "finetune or superfinetune")
      ->check(CLI::IsMember({"finetune", "superfinetune"}));
  defend->add_option("--steps", steps, "retraining steps")->check(CLI::NonNegativeNumber);
  defend->add_option("--eval-every", eval_every, "steps between curve points")->check(CLI::PositiveNumber);

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    return fail("usage", e.what(), 2);
  }

  try {
    const harness::ExperimentConfig cfg = build_config(common);
    const std::uint64_t first_seed = cfg.seeds.front();
    std::vector<backdoor::BackdoorTask> tasks;
    for (int i : cfg.tasks) tasks.push_back(backdoor::catalog(i));

    if (config_cmd->parsed()) {
      std::cout << harness::config_to_ini(cfg);
    } else if (train->parsed() || attack_cmd->parsed()) {
      std::cout << summary_json(harness::run(cfg, attack_cmd->parsed())).dump(2) << '\n';
    } else if (evaluate->parsed()) {
      const policy::Policy p = policy::load_policy(policy_path);
      json j = metrics_json(harness::evaluate(p, cfg.env, tasks, cfg.eval, cfg.attack.bounds, first_seed));
      if (!compare_path.empty()) {
        const policy::Policy benign = policy::load_policy(compare_path);
        const auto st = harness::stealth_report(benign, p, cfg.env, stealth_states, first_seed, cfg.out_dir,
                                                cfg.attack.poison.epsilon);
        j["stealth"] = {{"kl_benign_backdoored", st.kl_benign_backdoored},
                        {"kl_backdoored_benign", st.kl_backdoored_benign},
                        {"agreement", st.agreement},
                        {"states", st.states}};
      }
      write_json(cfg.out_dir, "report.json", j);
      std::cout << j.dump(2) << '\n';
    } else if (activate->parsed()) {
      if (tasks.empty()) throw ConfigError("activate needs a backdoor task");
      const policy::Policy p = policy::load_policy(policy_path);
      const auto r = harness::activation_rollout(p, cfg.env, tasks.front(), trigger, episodes, first_seed);
      json j = {{"task", tasks.front().index},
                {"trigger", trigger},
                {"triggered", {{"mean_score", r.mean_triggered_score()}, {"mean_steps", r.mean_triggered_steps()}}},
                {"control", {{"mean_score", r.mean_control_score()}, {"mean_steps", r.mean_control_steps()}}}};
      j["triggered"]["episodes"] = json::array();
      j["control"]["episodes"] = json::array();
      for (const auto& e : r.triggered) j["triggered"]["episodes"].push_back({e.score, e.steps, e.terminated});
      for (const auto& e : r.control) j["control"]["episodes"].push_back({e.score, e.steps, e.terminated});
      write_json(cfg.out_dir, "activation.json", j);
      std::cout << j.dump(2) << '\n';
    } else if (ablate->parsed() || sweep->parsed()) {
      const auto reports = ablate->parsed() ? harness::ablate(cfg) : harness::sweep(cfg);
      if (!cfg.out_dir.empty()) harness::write_collection(reports, cfg.out_dir);
      std::cout << collection_json(reports).dump(2) << '\n';
    } else if (defend->parsed()) {
      const policy::Policy p = policy::load_policy(policy_path);
      const auto m = mode == "finetune" ? harness::DefenseMode::FineTune : harness::DefenseMode::SuperFineTune;
      const auto r = harness::defend(p, cfg, m, steps, first_seed, eval_every, cfg.eval);
      json j = {{"mode", mode}, {"steps", steps}, {"curve", json::array()}};
      harness::Series btp{"BTP", {}, {}}, asr{"ASR", {}, {}};
      for (const auto& c : r.curve) {
        j["curve"].push_back({{"step", c.step}, {"BTP", c.btp}, {"ASR", c.asr}});
        btp.x.push_back(static_cast<double>(c.step));
        btp.y.push_back(c.btp);
        asr.x.push_back(static_cast<double>(c.step));
        asr.y.push_back(c.asr);
      }
      if (!cfg.out_dir.empty()) {
        write_json(cfg.out_dir, "defense.json", j);
        const std::vector<harness::Series> series{btp, asr};
        std::ofstream(std::filesystem::path(cfg.out_dir) / "defense.svg") << harness::line_chart_svg(mode, series);
        policy::save_policy(r.policy, (std::filesystem::path(cfg.out_dir) / "policy.json").string());
      }
      std::cout << j.dump(2) << '\n';
    }
  } catch (const ConfigError& e) {
    return fail("config", e.what(), 2);
  } catch (const NumericError& e) {
    return fail("numeric", e.what(), 3);
  } catch (const std::exception& e) {
    return fail("runtime", e.what(), 1);
  }
  return 0;
}
