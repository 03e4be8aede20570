// End-to-end acceptance run: trains the reference experiments and prints one
// PASS/FAIL line per criterion. Exit status is non-zero if any criterion fails.

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "unidoor/harness.hpp"

using namespace unidoor;
using namespace unidoor::harness;
namespace fs = std::filesystem;

namespace {

// Pinned thresholds.
constexpr double kCartPoleBenignReturn = 450.0;
constexpr double kMountainCarBenignSteps = 1000.0;
constexpr double kPendulumBenignReturn = -300.0;
constexpr double kCartPoleBtp = 0.95;
constexpr double kCartPoleAsr = 0.90;
constexpr double kPendulumCp = 0.75;
constexpr double kMountainCarCp = 0.60;
constexpr double kBaselineGap = 0.15;
constexpr double kMultiCp = 0.75;
constexpr double kNoAdaptiveDrop = 0.15;
constexpr double kTriggeredCartPoleSteps = 30.0;
constexpr double kControlCartPoleSteps = 400.0;
constexpr int kMountainCarCapFailures = 2;
constexpr double kTriggeredPendulumReturn = -1000.0;
constexpr int kMaxInversions = 1;
constexpr double kDefenseAsrDrop = 0.2;
constexpr double kDefenseBtpShift = 0.1;
constexpr long kDefenseSteps = 100000;

const std::vector<std::uint64_t> kSeeds{0, 1, 2};
const std::vector<std::string> kEnvs{"cartpole", "mountaincar", "pendulum"};

double median(std::vector<double> v) {
  if (v.empty()) return 0.0;
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

std::string fmt(double x) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.3f", x);
  return buf;
}

class Acceptance {
 public:
  Acceptance(std::string out, std::string unit_tests) : out_(std::move(out)), unit_tests_(std::move(unit_tests)) {}

  void report(int id, bool pass, const std::string& detail) {
    std::cout << (pass ? "PASS" : "FAIL") << " criterion " << id << ": " << detail << std::endl;
    failures_ += pass ? 0 : 1;
  }

  int failures() const { return failures_; }

  // Cached 3-seed runs keyed by output name.
  const RunReport& experiment(const std::string& name, ExperimentConfig config, bool inject = true) {
    if (auto it = runs_.find(name); it != runs_.end()) return it->second;
    config.seeds = kSeeds;
    config.jobs = 1;
    config.out_dir = out_.empty() ? std::string{} : (fs::path(out_) / name).string();
    const auto start = std::chrono::steady_clock::now();
    RunReport r = run(config, inject);
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    std::cerr << "  [" << name << "] " << fmt(secs) << " s, median BTP " << fmt(r.median.btp) << " ASR "
              << fmt(r.median.asr) << " CP " << fmt(r.median.cp) << std::endl;
    for (const auto& s : r.seeds)
      if (!s.ok) std::cerr << "  [" << name << "] seed " << s.seed << " failed: " << s.error << std::endl;
    return runs_.emplace(name, std::move(r)).first->second;
  }

  const RunReport& benign(const std::string& env) { return experiment("benign_" + env, default_config(env), false); }
  const RunReport& attacked(const std::string& env) { return experiment("unidoor_" + env, default_config(env)); }

  const RunReport& baseline(const std::string& env, const attack::AttackStrategy& strategy, const std::string& tag) {
    ExperimentConfig c = default_config(env);
    c.attack.strategy = strategy;
    return experiment(tag + "_" + env, c);
  }

  static std::vector<double> returns(const RunReport& r) {
    std::vector<double> v;
    for (const auto& s : r.seeds)
      if (s.ok) v.push_back(s.metrics.mean_return);
    return v;
  }

  static bool all_ok(const RunReport& r) {
    return std::all_of(r.seeds.begin(), r.seeds.end(), [](const SeedResult& s) { return s.ok; });
  }

  void benign_baselines() {
    const RunReport& cp = benign("cartpole");
    const RunReport& mc = benign("mountaincar");
    const RunReport& pd = benign("pendulum");
    const double cp_ret = median(returns(cp));
    // MountainCar pays -1 per step, so the return is minus the step count.
    const double mc_steps = -median(returns(mc));
    const double pd_ret = median(returns(pd));
    const bool pass = all_ok(cp) && all_ok(mc) && all_ok(pd) && cp_ret >= kCartPoleBenignReturn &&
                      mc_steps <= kMountainCarBenignSteps && pd_ret >= kPendulumBenignReturn;
    report(1, pass,
           "benign CartPole return " + fmt(cp_ret) + " (>= 450), MountainCar steps " + fmt(mc_steps) +
               " (<= 1000), Pendulum return " + fmt(pd_ret) + " (>= -300)");
  }

  void single_backdoor() {
    const RunReport& cp = attacked("cartpole");
    const RunReport& mc = attacked("mountaincar");
    const RunReport& pd = attacked("pendulum");
    const bool pass = all_ok(cp) && all_ok(mc) && all_ok(pd) && cp.median.btp >= kCartPoleBtp &&
                      cp.median.asr >= kCartPoleAsr && pd.median.cp >= kPendulumCp && mc.median.cp >= kMountainCarCp;
    report(2, pass,
           "CartPole BTP " + fmt(cp.median.btp) + " ASR " + fmt(cp.median.asr) + ", Pendulum CP " +
               fmt(pd.median.cp) + ", MountainCar CP " + fmt(mc.median.cp));
  }

  void baseline_gap() {
    double ours = 0, idt = 0, badrl = 0;
    for (const auto& env : kEnvs) {
      ours += attacked(env).median.cp / kEnvs.size();
      idt += baseline(env, attack::AttackStrategy::idt(), "idt").median.cp / kEnvs.size();
      badrl += baseline(env, attack::AttackStrategy::badrl(1.0), "badrl").median.cp / kEnvs.size();
    }
    const bool pass = ours - idt >= kBaselineGap && ours - badrl >= kBaselineGap;
    report(3, pass, "mean CP " + fmt(ours) + " vs IDT " + fmt(idt) + ", BadRL " + fmt(badrl) + " (gap >= 0.15)");
  }

  void multi_backdoor() {
    ExperimentConfig c = default_config("cartpole");
    c.tasks = {25};
    const RunReport& r = experiment("unidoor_cartpole_task25", c);
    std::string per;
    if (!r.seeds.empty() && r.seeds[0].ok)
      for (double a : r.seeds[0].metrics.per_trigger_asr) per += " " + fmt(a);
    report(4, all_ok(r) && r.median.cp >= kMultiCp, "task 25 CP " + fmt(r.median.cp) + " (seed 0 per-trigger ASR" + per + ")");
  }

  void ablation() {
    const RunReport& full = attacked("pendulum");
    ExperimentConfig na = default_config("pendulum");
    na.attack.ablations.no_adaptive = true;
    const RunReport& no_adaptive = experiment("no_adaptive_pendulum", na);
    ExperimentConfig nt = default_config("pendulum");
    nt.attack.ablations.no_action_tamper = true;
    const RunReport& no_tamper = experiment("no_action_tamper_pendulum", nt);
    const bool pass = full.median.cp - no_adaptive.median.cp >= kNoAdaptiveDrop && no_tamper.median.asr < full.median.asr;
    report(5, pass,
           "Pendulum CP full " + fmt(full.median.cp) + " vs no_adaptive " + fmt(no_adaptive.median.cp) +
               "; ASR full " + fmt(full.median.asr) + " vs no_action_tamper " + fmt(no_tamper.median.asr));
  }

  void activation() {
    const auto rollouts = [&](const std::string& env, int episodes) {
      const RunReport& r = attacked(env);
      std::vector<ActivationResult> out;
      for (const auto& s : r.seeds) {
        if (!s.ok || !s.policy) continue;
        out.push_back(activation_rollout(*s.policy, env, backdoor::catalog(r.config.tasks[0]), 0, episodes, s.seed));
      }
      return out;
    };

    std::vector<double> cp_trig, cp_ctrl, pd_trig;
    for (const auto& a : rollouts("cartpole", 10)) {
      cp_trig.push_back(a.mean_triggered_steps());
      cp_ctrl.push_back(a.mean_control_steps());
    }
    int mc_failures = 0;
    for (const auto& a : rollouts("mountaincar", 3)) {
      const auto reached = std::count_if(a.triggered.begin(), a.triggered.end(),
                                         [](const EpisodeScore& e) { return e.terminated; });
      if (2 * reached < static_cast<long>(a.triggered.size())) ++mc_failures;
    }
    for (const auto& a : rollouts("pendulum", 10)) pd_trig.push_back(a.mean_triggered_score());

    const double t = median(cp_trig), c = median(cp_ctrl), p = median(pd_trig);
    const bool pass = cp_trig.size() == kSeeds.size() && t <= kTriggeredCartPoleSteps && c >= kControlCartPoleSteps &&
                      mc_failures >= kMountainCarCapFailures && pd_trig.size() == kSeeds.size() &&
                      p <= kTriggeredPendulumReturn;
    report(6, pass,
           "CartPole triggered " + fmt(t) + " vs clean " + fmt(c) + " steps; MountainCar capped in " +
               std::to_string(mc_failures) + "/3 seeds; Pendulum triggered return " + fmt(p));
  }

  void fixed_sweep() {
    std::vector<double> btp, asr;
    std::string detail;
    for (double r : default_config("cartpole").sweep_rewards) {
      ExperimentConfig c = default_config("cartpole");
      c.attack.strategy = attack::AttackStrategy::fixed(r);
      std::ostringstream tag;
      tag << r;
      const RunReport& rep = experiment("fixed_" + tag.str() + "_cartpole", c);
      btp.push_back(rep.median.btp);
      asr.push_back(rep.median.asr);
      detail += " r=" + tag.str() + ":" + fmt(rep.median.btp) + "/" + fmt(rep.median.asr);
    }
    int btp_inv = 0, asr_inv = 0;
    for (std::size_t i = 1; i < btp.size(); ++i) {
      btp_inv += btp[i] > btp[i - 1] ? 1 : 0;
      asr_inv += asr[i] < asr[i - 1] ? 1 : 0;
    }
    report(7, btp_inv <= kMaxInversions && asr_inv <= kMaxInversions,
           "BTP/ASR" + detail + "; inversions " + std::to_string(btp_inv) + "/" + std::to_string(asr_inv));
  }

  void property_suites() {
    static const char* filter =
        "Monitor.FixedPointIdentityForConstantStreams:AdaptProperty.*:Gradients.*:AllTasks/EnvDeterminism.*:"
        "Gae.MatchesBruteForceOracle:Evaluate.ReadOnlyAndConsistent:Run.ReportsAndByteIdenticalOutputs:"
        "Engine.PoisonCountFollowsTheInterval";
    if (unit_tests_.empty() || !fs::exists(unit_tests_)) {
      report(8, false, "unit test binary not found: " + unit_tests_);
      return;
    }
    const std::string cmd = "\"" + unit_tests_ + "\" --gtest_brief=1 --gtest_filter='" + filter + "' > " +
                            (fs::temp_directory_path() / "unidoor_property_suites.log").string() + " 2>&1";
    const int status = std::system(cmd.c_str());
    report(8, status == 0, std::string("property suites ") + (status == 0 ? "green" : "failed, see log"));
  }

  void defense() {
    const RunReport& pd = attacked("pendulum");
    std::vector<double> asr_drop, btp_shift, ft_btp, sft_btp;
    const EvalSettings eval = pd.config.eval;
    for (const auto& s : pd.seeds) {
      if (!s.ok || !s.policy) continue;
      const DefenseResult ft = defend(*s.policy, pd.config, DefenseMode::FineTune, kDefenseSteps, s.seed, kDefenseSteps, eval);
      const DefenseResult sft =
          defend(*s.policy, pd.config, DefenseMode::SuperFineTune, kDefenseSteps, s.seed, kDefenseSteps, eval);
      asr_drop.push_back(s.metrics.asr - ft.curve.back().asr);
      btp_shift.push_back(std::abs(ft.curve.back().btp - s.metrics.btp));
      ft_btp.push_back(ft.curve.back().btp);
      sft_btp.push_back(sft.curve.back().btp);
      std::cerr << "  [defense seed " << s.seed << "] ASR " << fmt(s.metrics.asr) << " -> " << fmt(ft.curve.back().asr)
                << ", BTP " << fmt(s.metrics.btp) << " -> " << fmt(ft.curve.back().btp) << " (finetune), "
                << fmt(sft.curve.back().btp) << " (superfinetune)" << std::endl;
    }
    const double drop = median(asr_drop), shift = median(btp_shift), f = median(ft_btp), sf = median(sft_btp);
    const bool pass = asr_drop.size() == kSeeds.size() && drop >= kDefenseAsrDrop && shift <= kDefenseBtpShift && sf < f;
    report(9, pass,
           "FineTune ASR drop " + fmt(drop) + ", BTP shift " + fmt(shift) + "; final BTP FineTune " + fmt(f) +
               " vs SuperFineTune " + fmt(sf));
  }

 private:
  std::string out_;
  std::string unit_tests_;
  std::map<std::string, RunReport> runs_;
  int failures_ = 0;
};

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"acceptance criteria"};
  std::string out, unit_tests;
  std::vector<int> only;
  app.add_option("--out", out, "directory for run outputs");
  app.add_option("--unit-tests", unit_tests, "unit test binary for the property suites");
  app.add_option("--only", only, "criteria to run (default all)")->delimiter(',');
  CLI11_PARSE(app, argc, argv);

  const std::set<int> selected = only.empty() ? std::set<int>{1, 2, 3, 4, 5, 6, 7, 8, 9}
                                              : std::set<int>(only.begin(), only.end());
  Acceptance acc(out, unit_tests);
  try {
    if (selected.count(8)) acc.property_suites();
    if (selected.count(1)) acc.benign_baselines();
    if (selected.count(2)) acc.single_backdoor();
    if (selected.count(3)) acc.baseline_gap();
    if (selected.count(4)) acc.multi_backdoor();
    if (selected.count(5)) acc.ablation();
    if (selected.count(6)) acc.activation();
    if (selected.count(7)) acc.fixed_sweep();
    if (selected.count(9)) acc.defense();
  } catch (const std::exception& e) {
    std::cout << "FAIL aborted: " << e.what() << std::endl;
    return 1;
  }
  return acc.failures() == 0 ? 0 : 1;
}
