#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "unidoor/attack.hpp"
#include "unidoor/backdoor.hpp"
#include "unidoor/monitor.hpp"
#include "unidoor/policy.hpp"
#include "unidoor/trainers.hpp"

namespace unidoor::harness {

enum class Mode { FromScratch, PostTraining };

struct EvalSettings {
  int episodes = 30;  // trigger-free episodes for BTP
  int probes = 1000;  // triggered-state queries for ASR
};

struct ExperimentConfig {
  std::string env = "cartpole";
  trainers::TrainerConfig trainer;
  attack::AttackConfig attack;  // strategy, knobs, bounds, ablations
  std::vector<int> tasks;
  std::vector<std::uint64_t> seeds{0, 1, 2};
  Mode mode = Mode::FromScratch;
  std::string policy_path;  // PostTraining start point
  EvalSettings eval;
  std::string out_dir;
  int jobs = 1;
  std::vector<double> sweep_rewards{1, 2, 4, 8, 16};

  // Throws ConfigError.
  void validate() const;
};

// Shipped defaults per environment (the same values as configs/<env>.ini).
ExperimentConfig default_config(const std::string& env);

// INI text with sections [experiment], [trainer], [attack], [bounds],
// [ablation], [eval]. Unset keys take default_config(env) values; unknown
// keys are rejected.
ExperimentConfig parse_config(const std::string& ini_text);
ExperimentConfig load_config(const std::string& path);
std::string config_to_ini(const ExperimentConfig& config);
nlohmann::json config_to_json(const ExperimentConfig& config);

std::vector<std::uint64_t> parse_seed_list(const std::string& text);
std::vector<int> parse_index_list(const std::string& text);

// ------------------------------------------------------------- evaluation

struct Metrics {
  double btp = 0.0;
  double asr = 0.0;
  double cp = 0.0;
  double mean_return = 0.0;
  std::vector<double> per_trigger_asr;
};

// 2ab / (a + b), 0 when both are 0.
double harmonic_mean(double a, double b);

// Environment for evaluation-style rollouts: infinite-horizon tasks get
// their evaluation step cap.
std::unique_ptr<envs::Env> make_eval_env(const std::string& env, std::uint64_t seed);

// BTP: mean clipped normalized return of `settings.episodes` greedy,
// trigger-free episodes. ASR: `settings.probes` queries on triggered copies
// of states visited in those episodes, triggers taken round-robin, averaged
// over triggers. Probes never step the environment. The policy is only read.
Metrics evaluate(const policy::Policy& policy, const std::string& env,
                 std::span<const backdoor::BackdoorTask> tasks, const EvalSettings& settings,
                 const monitor::Bounds& bounds, std::uint64_t seed);

struct EpisodeScore {
  double score = 0.0;  // environment return
  int steps = 0;
  bool terminated = false;  // reached a terminal state before any cap
};

struct ActivationResult {
  std::vector<EpisodeScore> triggered;
  std::vector<EpisodeScore> control;

  double mean_triggered_score() const;
  double mean_control_score() const;
  double mean_triggered_steps() const;
  double mean_control_steps() const;
};

// Closed-loop rollouts with the trigger embedded in every observation the
// policy sees, plus the same number of trigger-free control episodes.
ActivationResult activation_rollout(const policy::Policy& policy, const std::string& env,
                                    const backdoor::BackdoorTask& task, int trigger_id, int episodes,
                                    std::uint64_t seed);

struct StealthStats {
  double kl_benign_backdoored = 0.0;  // mean KL(benign || backdoored)
  double kl_backdoored_benign = 0.0;
  double agreement = 0.0;  // share of states with matching greedy actions
  int states = 0;
};

// States come half from greedy trigger-free rollouts of each policy. When
// `out_dir` is given, writes states.csv (per-dimension histograms for each
// policy) and activations.csv (last hidden layer of each actor).
StealthStats stealth_report(const policy::Policy& benign, const policy::Policy& backdoored,
                            const std::string& env, int n_states, std::uint64_t seed,
                            const std::string& out_dir = {}, double epsilon = 0.05);

enum class DefenseMode { FineTune, SuperFineTune };

struct CurvePoint {
  long step = 0;
  double btp = 0.0;
  double asr = 0.0;
};

struct DefenseResult {
  policy::Policy policy;
  std::vector<CurvePoint> curve;
};

// Benign retraining of a copy of `policy` without any poisoning. FineTune
// keeps the configured learning rate constant; SuperFineTune alternates 10x
// and 0.1x of it every 10 updates. BTP/ASR are evaluated every `eval_every`
// steps with `curve_eval`.
DefenseResult defend(const policy::Policy& policy, const ExperimentConfig& config, DefenseMode mode,
                     long steps, std::uint64_t seed, long eval_every, const EvalSettings& curve_eval);

// ---------------------------------------------------------------- running

struct SeedResult {
  std::uint64_t seed = 0;
  bool ok = false;
  std::string error;
  Metrics metrics;
  std::optional<long> lift_step;
  long poisoned = 0;
  long tampered = 0;
  std::optional<double> final_reward;  // backdoor reward at the end
  std::vector<trainers::MetricsRow> timeline;
  std::optional<policy::Policy> policy;
};

struct Summary {
  double btp = 0.0;
  double asr = 0.0;
  double cp = 0.0;
};

struct RunReport {
  ExperimentConfig config;
  bool inject = true;
  std::vector<SeedResult> seeds;
  Summary median;
  Summary mean;
  double seconds = 0.0;
};

// Trains (benign when `inject` is false), evaluates and, when
// config.out_dir is set, writes report.json, metadata.json, summary.csv
// and per-seed run.csv / curves.svg / policy.json. A failing seed is
// recorded and the remaining seeds still run.
RunReport run(const ExperimentConfig& config, bool inject = true);
SeedResult run_seed(const ExperimentConfig& config, std::uint64_t seed, bool inject = true);

Summary summarize(std::span<const SeedResult> seeds, bool median);
nlohmann::json report_to_json(const RunReport& report);
void write_outputs(const RunReport& report, const std::string& dir);

struct NamedReport {
  std::string name;
  RunReport report;
};

// Base configuration plus each ablation flag on its own.
std::vector<NamedReport> ablate(const ExperimentConfig& config);
// Fixed-reward strategy over config.sweep_rewards.
std::vector<NamedReport> sweep(const ExperimentConfig& config);
void write_collection(std::span<const NamedReport> reports, const std::string& dir);

// Minimal SVG line chart; series share the x axis.
struct Series {
  std::string name;
  std::vector<double> x;
  std::vector<double> y;
};
std::string line_chart_svg(const std::string& title, std::span<const Series> series);

}  // namespace unidoor::harness
