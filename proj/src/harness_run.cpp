#include <algorithm>
#include <chrono>
#include <cmath>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <sstream>
#include <thread>

#include "unidoor/error.hpp"
#include "unidoor/harness.hpp"

namespace unidoor::harness {

namespace fs = std::filesystem;

namespace {

std::vector<backdoor::BackdoorTask> load_tasks(const std::vector<int>& indices) {
  std::vector<backdoor::BackdoorTask> tasks;
  for (int i : indices) tasks.push_back(backdoor::catalog(i));
  return tasks;
}

policy::Policy starting_policy(const ExperimentConfig& c, const envs::MdpSpec& spec, std::uint64_t seed) {
  if (c.mode == Mode::PostTraining) {
    policy::Policy p = policy::load_policy(c.policy_path);
    if (p.state_dim() != spec.state_dim || p.action_dim() != envs::action_dim(spec.action_space)) {
      throw ConfigError("policy file " + c.policy_path + " does not match environment " + c.env);
    }
    const bool wants_ppo = c.trainer.algorithm == trainers::Algorithm::PPO;
    if (wants_ppo != p.has_state_value()) {
      throw ConfigError("policy file " + c.policy_path + " was not trained with the configured algorithm");
    }
    return p;
  }
  if (c.trainer.algorithm == trainers::Algorithm::PPO) return policy::init_ppo_policy(spec, seed);
  return policy::init_ddpg_policy(spec, seed);
}

double median_of(std::vector<double> v) {
  if (v.empty()) return 0.0;
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

double mean_of(const std::vector<double>& v) {
  if (v.empty()) return 0.0;
  double s = 0.0;
  for (double x : v) s += x;
  return s / static_cast<double>(v.size());
}

std::string timestamp() {
  const std::time_t now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&now, &tm);
  std::ostringstream o;
  o << std::put_time(&tm, "%Y-%m-%dT%H:%M:%SZ");
  return o.str();
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ConfigError("cannot write " + path.string());
  out << text;
}

nlohmann::json summary_json(const Summary& s) { return {{"BTP", s.btp}, {"ASR", s.asr}, {"CP", s.cp}}; }

std::string fmt(double v) {
  std::ostringstream o;
  o.precision(17);
  o << v;
  return o.str();
}

std::string seed_curves_svg(const SeedResult& r) {
  std::vector<Series> series(3);
  series[0].name = "BTP";
  series[1].name = "ASR";
  series[2].name = "r_dagger / r_u";
  double scale = 0.0;
  for (const auto& row : r.timeline) {
    if (row.r_upper) scale = std::max(scale, *row.r_upper);
  }
  for (const auto& row : r.timeline) {
    if (row.episode_return) continue;
    const double x = static_cast<double>(row.step);
    series[0].x.push_back(x);
    series[0].y.push_back(row.btp);
    if (row.asr) {
      series[1].x.push_back(x);
      series[1].y.push_back(*row.asr);
    }
    if (row.r_dagger && scale > 0.0) {
      series[2].x.push_back(x);
      series[2].y.push_back(*row.r_dagger / scale);
    }
  }
  std::erase_if(series, [](const Series& s) { return s.x.empty(); });
  return line_chart_svg("seed " + std::to_string(r.seed), series);
}

}  // namespace

SeedResult run_seed(const ExperimentConfig& config, std::uint64_t seed, bool inject) {
  SeedResult r;
  r.seed = seed;
  try {
    config.validate();
    const envs::MdpSpec spec = envs::spec_for(config.env);
    auto env = envs::make_env(config.env, derive_seed(seed, 2));
    policy::Policy policy = starting_policy(config, spec, derive_seed(seed, 1));
    const auto tasks = load_tasks(config.tasks);

    attack::AttackConfig ac = config.attack;
    ac.inject = inject;
    if (config.mode == Mode::PostTraining) ac.start_immediately = true;
    if (ac.outer_loop && config.trainer.algorithm != trainers::Algorithm::DDPG) {
      throw ConfigError("outer-loop poisoning needs the DDPG replay buffer");
    }
    attack::AttackEngine engine(ac, tasks, policy, config.trainer.total_steps, derive_seed(seed, 4));
    trainers::Trainer trainer(policy, *env, config.trainer, derive_seed(seed, 3));
    trainer.set_hooks(engine.hooks());
    if (ac.outer_loop) trainer.set_buffer_hook(engine.buffer_hook());
    trainer.train(config.trainer.total_steps);

    r.metrics = evaluate(policy, config.env, tasks, config.eval, config.attack.bounds, derive_seed(seed, 5));
    r.lift_step = engine.lift_step();
    r.poisoned = engine.poisoned();
    r.tampered = engine.tampered();
    r.final_reward = engine.backdoor_reward();
    r.timeline = engine.timeline();
    r.policy = std::move(policy);
    r.ok = true;
  } catch (const std::exception& e) {
    r.ok = false;
    r.error = e.what();
  }
  return r;
}

Summary summarize(std::span<const SeedResult> seeds, bool median) {
  std::vector<double> btp, asr, cp;
  for (const auto& s : seeds) {
    if (!s.ok) continue;
    btp.push_back(s.metrics.btp);
    asr.push_back(s.metrics.asr);
    cp.push_back(s.metrics.cp);
  }
  if (median) return {median_of(btp), median_of(asr), median_of(cp)};
  return {mean_of(btp), mean_of(asr), mean_of(cp)};
}

RunReport run(const ExperimentConfig& config, bool inject) {
  config.validate();
  RunReport report;
  report.config = config;
  report.inject = inject;
  report.seeds.resize(config.seeds.size());
  const auto t0 = std::chrono::steady_clock::now();

  const std::size_t n = config.seeds.size();
  const std::size_t workers = std::min<std::size_t>(static_cast<std::size_t>(config.jobs), n);
  if (workers <= 1) {
    for (std::size_t i = 0; i < n; ++i) report.seeds[i] = run_seed(config, config.seeds[i], inject);
  } else {
    // Static striping; each slot is written by exactly one thread.
    std::vector<std::thread> pool;
    for (std::size_t w = 0; w < workers; ++w) {
      pool.emplace_back([&, w] {
        for (std::size_t i = w; i < n; i += workers) report.seeds[i] = run_seed(config, config.seeds[i], inject);
      });
    }
    for (auto& t : pool) t.join();
  }

  report.median = summarize(report.seeds, true);
  report.mean = summarize(report.seeds, false);
  report.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  if (!config.out_dir.empty()) write_outputs(report, config.out_dir);
  return report;
}

nlohmann::json report_to_json(const RunReport& report) {
  nlohmann::json j;
  j["config"] = config_to_json(report.config);
  j["inject"] = report.inject;
  j["seeds"] = nlohmann::json::array();
  for (const auto& s : report.seeds) {
    nlohmann::json e;
    e["seed"] = s.seed;
    e["ok"] = s.ok;
    if (!s.ok) {
      e["error"] = s.error;
    } else {
      e["BTP"] = s.metrics.btp;
      e["ASR"] = s.metrics.asr;
      e["CP"] = s.metrics.cp;
      e["mean_return"] = s.metrics.mean_return;
      e["per_trigger_ASR"] = s.metrics.per_trigger_asr;
      e["lift_step"] = s.lift_step ? nlohmann::json(*s.lift_step) : nlohmann::json();
      e["poisoned"] = s.poisoned;
      e["tampered"] = s.tampered;
      e["final_r_dagger"] = s.final_reward ? nlohmann::json(*s.final_reward) : nlohmann::json();
    }
    j["seeds"].push_back(std::move(e));
  }
  j["median"] = summary_json(report.median);
  j["mean"] = summary_json(report.mean);
  return j;
}

void write_outputs(const RunReport& report, const std::string& dir) {
  const fs::path root(dir);
  fs::create_directories(root);
  write_text(root / "report.json", report_to_json(report).dump(2) + "\n");
  write_text(root / "config.ini", config_to_ini(report.config));

  nlohmann::json meta;
  meta["written_at"] = timestamp();
  meta["seconds"] = report.seconds;
  write_text(root / "metadata.json", meta.dump(2) + "\n");

  std::ostringstream csv;
  csv << "seed,ok,BTP,ASR,CP,mean_return,lift_step,poisoned,tampered,final_r_dagger\n";
  for (const auto& s : report.seeds) {
    csv << s.seed << ',' << (s.ok ? 1 : 0);
    if (s.ok) {
      csv << ',' << fmt(s.metrics.btp) << ',' << fmt(s.metrics.asr) << ',' << fmt(s.metrics.cp) << ','
          << fmt(s.metrics.mean_return) << ',' << (s.lift_step ? std::to_string(*s.lift_step) : "") << ','
          << s.poisoned << ',' << s.tampered << ',' << (s.final_reward ? fmt(*s.final_reward) : "");
    } else {
      csv << ",,,,,,,,";
    }
    csv << '\n';
  }
  for (const auto& [name, sm] : {std::pair{"median", report.median}, std::pair{"mean", report.mean}}) {
    csv << name << ",," << fmt(sm.btp) << ',' << fmt(sm.asr) << ',' << fmt(sm.cp) << ",,,,,\n";
  }
  write_text(root / "summary.csv", csv.str());

  for (const auto& s : report.seeds) {
    const fs::path sub = root / ("seed_" + std::to_string(s.seed));
    fs::create_directories(sub);
    trainers::write_metrics_csv((sub / "run.csv").string(), s.timeline);
    if (s.ok) {
      write_text(sub / "curves.svg", seed_curves_svg(s));
      if (s.policy) policy::save_policy(*s.policy, (sub / "policy.json").string());
    }
  }
}

std::vector<NamedReport> ablate(const ExperimentConfig& config) {
  std::vector<std::pair<std::string, ExperimentConfig>> variants;
  variants.emplace_back("full", config);
  const std::pair<const char*, bool attack::Ablations::*> flags[] = {
      {"no_ewa", &attack::Ablations::no_ewa},
      {"no_freeze", &attack::Ablations::no_freeze},
      {"no_action_tamper", &attack::Ablations::no_action_tamper},
      {"no_adaptive", &attack::Ablations::no_adaptive},
  };
  for (const auto& [name, field] : flags) {
    ExperimentConfig c = config;
    c.attack.ablations = {};
    c.attack.ablations.*field = true;
    variants.emplace_back(name, c);
  }
  variants.front().second.attack.ablations = {};

  std::vector<NamedReport> out;
  for (auto& [name, c] : variants) {
    c.out_dir.clear();
    out.push_back({name, run(c, true)});
  }
  return out;
}

std::vector<NamedReport> sweep(const ExperimentConfig& config) {
  std::vector<NamedReport> out;
  for (double r : config.sweep_rewards) {
    ExperimentConfig c = config;
    c.attack.strategy = attack::AttackStrategy::fixed(r);
    c.out_dir.clear();
    out.push_back({"fixed_" + fmt(r), run(c, true)});
  }
  return out;
}

void write_collection(std::span<const NamedReport> reports, const std::string& dir) {
  const fs::path root(dir);
  fs::create_directories(root);
  std::ostringstream csv;
  csv << "name,median_BTP,median_ASR,median_CP,mean_BTP,mean_ASR,mean_CP\n";
  for (const auto& nr : reports) {
    write_outputs(nr.report, (root / nr.name).string());
    const auto& m = nr.report.median;
    const auto& a = nr.report.mean;
    csv << nr.name << ',' << fmt(m.btp) << ',' << fmt(m.asr) << ',' << fmt(m.cp) << ',' << fmt(a.btp) << ','
        << fmt(a.asr) << ',' << fmt(a.cp) << '\n';
  }
  write_text(root / "collection.csv", csv.str());
}

std::string line_chart_svg(const std::string& title, std::span<const Series> series) {
  constexpr double kWidth = 640, kHeight = 360, kLeft = 50, kRight = 120, kTop = 30, kBottom = 40;
  static const char* kColors[] = {"#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b"};
  double x0 = std::numeric_limits<double>::infinity(), x1 = -x0, y0 = x0, y1 = -x0;
  for (const auto& s : series) {
    for (double x : s.x) x0 = std::min(x0, x), x1 = std::max(x1, x);
    for (double y : s.y) {
      if (std::isfinite(y)) y0 = std::min(y0, y), y1 = std::max(y1, y);
    }
  }
  if (!(x1 > x0)) x0 = 0, x1 = std::max(1.0, x1);
  if (!(y1 > y0)) y0 = std::min(0.0, y0), y1 = std::max(y0 + 1.0, y1);
  const double pw = kWidth - kLeft - kRight, ph = kHeight - kTop - kBottom;
  const auto px = [&](double x) { return kLeft + (x - x0) / (x1 - x0) * pw; };
  const auto py = [&](double y) { return kTop + (1.0 - (y - y0) / (y1 - y0)) * ph; };

  std::ostringstream o;
  o << std::fixed << std::setprecision(2);
  o << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << kWidth << "\" height=\"" << kHeight
    << "\" font-family=\"sans-serif\" font-size=\"11\">\n";
  o << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  o << "<text x=\"" << kLeft << "\" y=\"18\" font-size=\"13\">" << title << "</text>\n";
  o << "<rect x=\"" << kLeft << "\" y=\"" << kTop << "\" width=\"" << pw << "\" height=\"" << ph
    << "\" fill=\"none\" stroke=\"#444\"/>\n";
  for (int k = 0; k <= 4; ++k) {
    const double yv = y0 + (y1 - y0) * k / 4.0;
    const double xv = x0 + (x1 - x0) * k / 4.0;
    o << "<text x=\"" << kLeft - 4 << "\" y=\"" << py(yv) + 4 << "\" text-anchor=\"end\">" << yv << "</text>\n";
    o << "<text x=\"" << px(xv) << "\" y=\"" << kHeight - kBottom + 16 << "\" text-anchor=\"middle\">"
      << std::setprecision(0) << xv << std::setprecision(2) << "</text>\n";
  }
  for (std::size_t i = 0; i < series.size(); ++i) {
    const auto& s = series[i];
    const char* color = kColors[i % std::size(kColors)];
    o << "<polyline fill=\"none\" stroke=\"" << color << "\" stroke-width=\"1.5\" points=\"";
    for (std::size_t k = 0; k < s.x.size() && k < s.y.size(); ++k) {
      if (!std::isfinite(s.y[k])) continue;
      o << px(s.x[k]) << ',' << py(s.y[k]) << ' ';
    }
    o << "\"/>\n";
    const double ly = kTop + 14.0 * static_cast<double>(i) + 8;
    o << "<line x1=\"" << kWidth - kRight + 8 << "\" y1=\"" << ly << "\" x2=\"" << kWidth - kRight + 24
      << "\" y2=\"" << ly << "\" stroke=\"" << color << "\" stroke-width=\"2\"/>\n";
    o << "<text x=\"" << kWidth - kRight + 28 << "\" y=\"" << ly + 4 << "\">" << s.name << "</text>\n";
  }
  o << "</svg>\n";
  return o.str();
}

}  // namespace unidoor::harness
