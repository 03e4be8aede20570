#include <algorithm>
#include <filesystem>
#include <fstream>
#include <numeric>

#include "unidoor/distributions.hpp"
#include "unidoor/error.hpp"
#include "unidoor/harness.hpp"

namespace unidoor::harness {

namespace {

struct TriggerRef {
  const backdoor::BackdoorTask* task;
  int trigger;
};

std::vector<TriggerRef> flatten(std::span<const backdoor::BackdoorTask> tasks) {
  std::vector<TriggerRef> out;
  for (const auto& t : tasks) {
    for (int i = 0; i < t.trigger_count(); ++i) out.push_back({&t, i});
  }
  return out;
}

double mean_of(const std::vector<EpisodeScore>& v, double EpisodeScore::*field) {
  if (v.empty()) return 0.0;
  double s = 0.0;
  for (const auto& e : v) s += e.*field;
  return s / static_cast<double>(v.size());
}

double mean_steps(const std::vector<EpisodeScore>& v) {
  if (v.empty()) return 0.0;
  double s = 0.0;
  for (const auto& e : v) s += e.steps;
  return s / static_cast<double>(v.size());
}

// Greedy trigger-free episode; `visit` sees every observation acted on.
template <typename Visit>
EpisodeScore greedy_episode(const policy::Policy& policy, envs::Env& env, std::uint64_t reset_seed,
                            Visit&& visit) {
  EpisodeScore score;
  envs::Observation obs = env.reset(reset_seed);
  while (!env.done()) {
    visit(obs);
    const envs::Action a = policy.greedy(obs);
    const envs::StepResult r = env.step(policy::to_env_action(env.spec().action_space, a));
    score.score += r.reward;
    ++score.steps;
    score.terminated = r.terminated;
    obs = r.obs;
  }
  return score;
}

// Action distribution of one state as (mean-or-probabilities, log-std).
struct Dist {
  Eigen::VectorXd center;
  Eigen::VectorXd log_std;
};

Dist distribution(const policy::Policy& p, std::span<const double> obs) {
  Dist d;
  d.center = p.head_output(obs);
  switch (p.head()) {
    case policy::Head::GaussianMean:
      d.log_std = p.log_std;
      break;
    case policy::Head::DeterministicTanh:
      d.log_std = Eigen::VectorXd::Constant(d.center.size(), std::log(p.exploration_std));
      break;
    default:
      break;
  }
  return d;
}

double kl(const Dist& a, const Dist& b, bool categorical) {
  if (categorical) return nn::kl_categorical(a.center, b.center);
  return nn::kl_gaussian(a.center, a.log_std, b.center, b.log_std);
}

void write_histograms(const std::string& path, const std::vector<envs::Observation>& benign,
                      const std::vector<envs::Observation>& backdoored, int bins) {
  std::ofstream out(path);
  if (!out) throw ConfigError("cannot write " + path);
  out.precision(17);
  out << "policy,dim,bin_low,bin_high,count\n";
  const std::size_t dims = benign.empty() ? 0 : benign.front().size();
  for (std::size_t d = 0; d < dims; ++d) {
    double lo = std::numeric_limits<double>::infinity();
    double hi = -lo;
    for (const auto* set : {&benign, &backdoored}) {
      for (const auto& s : *set) {
        lo = std::min(lo, s[d]);
        hi = std::max(hi, s[d]);
      }
    }
    if (hi <= lo) hi = lo + 1.0;
    const double width = (hi - lo) / bins;
    const std::pair<const char*, const std::vector<envs::Observation>*> sets[] = {
        {"benign", &benign}, {"backdoored", &backdoored}};
    for (const auto& [name, set] : sets) {
      std::vector<long> counts(static_cast<std::size_t>(bins), 0);
      for (const auto& s : *set) {
        const int b = std::min(bins - 1, static_cast<int>((s[d] - lo) / width));
        ++counts[static_cast<std::size_t>(b)];
      }
      for (int b = 0; b < bins; ++b) {
        out << name << ',' << d << ',' << lo + b * width << ',' << lo + (b + 1) * width << ','
            << counts[static_cast<std::size_t>(b)] << '\n';
      }
    }
  }
}

void write_activations(const std::string& path, const policy::Policy& benign,
                       const policy::Policy& backdoored, const std::vector<envs::Observation>& states) {
  std::ofstream out(path);
  if (!out) throw ConfigError("cannot write " + path);
  out.precision(17);
  const std::pair<const char*, const policy::Policy*> nets[] = {{"benign", &benign},
                                                                {"backdoored", &backdoored}};
  const Eigen::MatrixXd x0 = benign.normalize(states);
  const Eigen::MatrixXd h0 = benign.actor.last_hidden(x0);
  out << "policy,state";
  for (Eigen::Index j = 0; j < h0.rows(); ++j) out << ",h" << j;
  out << '\n';
  for (const auto& [name, net] : nets) {
    const Eigen::MatrixXd h = net->actor.last_hidden(net->normalize(states));
    for (Eigen::Index i = 0; i < h.cols(); ++i) {
      out << name << ',' << i;
      for (Eigen::Index j = 0; j < h.rows(); ++j) out << ',' << h(j, i);
      out << '\n';
    }
  }
}

}  // namespace

double harmonic_mean(double a, double b) {
  if (a + b <= 0.0) return 0.0;
  return 2.0 * a * b / (a + b);
}

std::unique_ptr<envs::Env> make_eval_env(const std::string& env, std::uint64_t seed) {
  auto e = envs::make_env(env, seed);
  e->set_step_limit(e->spec().env_step_cap);
  return e;
}

Metrics evaluate(const policy::Policy& policy, const std::string& env,
                 std::span<const backdoor::BackdoorTask> tasks, const EvalSettings& settings,
                 const monitor::Bounds& bounds, std::uint64_t seed) {
  Metrics m;
  auto e = make_eval_env(env, seed);
  std::vector<envs::Observation> visited;
  double btp_sum = 0.0;
  double ret_sum = 0.0;
  for (int i = 0; i < settings.episodes; ++i) {
    const EpisodeScore s = greedy_episode(policy, *e, derive_seed(seed, static_cast<std::uint64_t>(i)),
                                          [&](const envs::Observation& o) { visited.push_back(o); });
    ret_sum += s.score;
    btp_sum += monitor::normalize(s.score, bounds);
  }
  m.btp = btp_sum / settings.episodes;
  m.mean_return = ret_sum / settings.episodes;

  const auto triggers = flatten(tasks);
  if (triggers.empty() || settings.probes == 0 || visited.empty()) {
    m.cp = 0.0;
    return m;
  }
  // Only the triggered queries are drawn here; the policy never acts on them.
  Rng rng(derive_seed(seed, 0x9e37));
  std::vector<long> hits(triggers.size(), 0);
  std::vector<long> counts(triggers.size(), 0);
  const double epsilon = 0.05;
  for (int i = 0; i < settings.probes; ++i) {
    const std::size_t k = static_cast<std::size_t>(i) % triggers.size();
    const auto& obs = visited[rng.below(visited.size())];
    const monitor::ProbeResult r = monitor::probe(policy, obs, *triggers[k].task, triggers[k].trigger, epsilon);
    hits[k] += r.matched ? 1 : 0;
    ++counts[k];
  }
  double total = 0.0;
  for (std::size_t k = 0; k < triggers.size(); ++k) {
    const double rate = counts[k] ? static_cast<double>(hits[k]) / static_cast<double>(counts[k]) : 0.0;
    m.per_trigger_asr.push_back(rate);
    total += rate;
  }
  m.asr = total / static_cast<double>(triggers.size());
  m.cp = harmonic_mean(m.btp, m.asr);
  return m;
}

double ActivationResult::mean_triggered_score() const { return mean_of(triggered, &EpisodeScore::score); }
double ActivationResult::mean_control_score() const { return mean_of(control, &EpisodeScore::score); }
double ActivationResult::mean_triggered_steps() const { return mean_steps(triggered); }
double ActivationResult::mean_control_steps() const { return mean_steps(control); }

ActivationResult activation_rollout(const policy::Policy& policy, const std::string& env,
                                    const backdoor::BackdoorTask& task, int trigger_id, int episodes,
                                    std::uint64_t seed) {
  if (trigger_id < 0 || trigger_id >= task.trigger_count()) {
    throw ConfigError("trigger " + std::to_string(trigger_id) + " not in task " + std::to_string(task.index));
  }
  ActivationResult out;
  auto e = make_eval_env(env, seed);
  for (int i = 0; i < episodes; ++i) {
    const std::uint64_t reset_seed = derive_seed(seed, static_cast<std::uint64_t>(i));
    EpisodeScore s;
    envs::Observation obs = e->reset(reset_seed);
    while (!e->done()) {
      const envs::Action a = policy.greedy(backdoor::apply_trigger(obs, task, trigger_id));
      const envs::StepResult r = e->step(policy::to_env_action(e->spec().action_space, a));
      s.score += r.reward;
      ++s.steps;
      s.terminated = r.terminated;
      obs = r.obs;
    }
    out.triggered.push_back(s);
    out.control.push_back(greedy_episode(policy, *e, reset_seed, [](const envs::Observation&) {}));
  }
  return out;
}

StealthStats stealth_report(const policy::Policy& benign, const policy::Policy& backdoored,
                            const std::string& env, int n_states, std::uint64_t seed,
                            const std::string& out_dir, double epsilon) {
  if (benign.state_dim() != backdoored.state_dim() || benign.action_dim() != backdoored.action_dim() ||
      benign.discrete() != backdoored.discrete()) {
    throw StateError("stealth report needs two policies over the same MDP");
  }
  const envs::MdpSpec spec = envs::spec_for(env);
  if (spec.state_dim != benign.state_dim()) throw StateError("policies do not match environment " + env);
  if (n_states < 2) throw ConfigError("stealth report needs at least 2 states");

  // Every fifth visited state, so consecutive samples are less correlated.
  constexpr int kStride = 5;
  const auto sample = [&](const policy::Policy& p, int count, std::uint64_t stream) {
    std::vector<envs::Observation> states;
    auto e = make_eval_env(env, derive_seed(seed, stream));
    for (std::uint64_t ep = 0; static_cast<int>(states.size()) < count; ++ep) {
      int i = 0;
      greedy_episode(p, *e, derive_seed(seed, stream * 1000 + ep), [&](const envs::Observation& o) {
        if (i++ % kStride == 0 && static_cast<int>(states.size()) < count) states.push_back(o);
      });
    }
    return states;
  };
  const int half = n_states / 2;
  const auto from_benign = sample(benign, half, 1);
  const auto from_backdoored = sample(backdoored, n_states - half, 2);

  std::vector<envs::Observation> states = from_benign;
  states.insert(states.end(), from_backdoored.begin(), from_backdoored.end());

  StealthStats st;
  st.states = static_cast<int>(states.size());
  double kl_ab = 0.0, kl_ba = 0.0;
  long agree = 0;
  for (const auto& s : states) {
    const Dist a = distribution(benign, s);
    const Dist b = distribution(backdoored, s);
    kl_ab += kl(a, b, benign.discrete());
    kl_ba += kl(b, a, benign.discrete());
    agree += monitor::action_matches(backdoored.greedy(s), benign.greedy(s), epsilon) ? 1 : 0;
  }
  st.kl_benign_backdoored = kl_ab / st.states;
  st.kl_backdoored_benign = kl_ba / st.states;
  st.agreement = static_cast<double>(agree) / st.states;

  if (!out_dir.empty()) {
    std::filesystem::create_directories(out_dir);
    write_histograms((std::filesystem::path(out_dir) / "states.csv").string(), from_benign, from_backdoored, 20);
    write_activations((std::filesystem::path(out_dir) / "activations.csv").string(), benign, backdoored, states);
  }
  return st;
}

DefenseResult defend(const policy::Policy& policy, const ExperimentConfig& config, DefenseMode mode,
                     long steps, std::uint64_t seed, long eval_every, const EvalSettings& curve_eval) {
  DefenseResult out{policy, {}};
  if (steps <= 0) return out;
  if (eval_every <= 0) throw ConfigError("defense evaluation interval must be positive");

  trainers::TrainerConfig tc = config.trainer;
  tc.total_steps = steps;
  const auto schedule = mode == DefenseMode::FineTune ? trainers::LrSchedule::Constant : trainers::LrSchedule::Cyclic;
  tc.ppo.lr_schedule = schedule;
  tc.ddpg.lr_schedule = schedule;
  tc.validate();

  std::vector<backdoor::BackdoorTask> tasks;
  for (int index : config.tasks) tasks.push_back(backdoor::catalog(index));

  auto env = envs::make_env(config.env, derive_seed(seed, 2));
  trainers::Trainer trainer(out.policy, *env, tc, derive_seed(seed, 3));
  long done = 0;
  while (done < steps) {
    const long chunk = std::min(eval_every, steps - done);
    trainer.train(chunk);
    done += chunk;
    const Metrics m = evaluate(out.policy, config.env, tasks, curve_eval, config.attack.bounds, derive_seed(seed, 5));
    out.curve.push_back({done, m.btp, m.asr});
  }
  return out;
}

}  // namespace unidoor::harness
