#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>

#include "unidoor/error.hpp"
#include "unidoor/harness.hpp"

namespace unidoor::harness {

namespace {

using trainers::Algorithm;
using trainers::LrSchedule;

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

std::vector<std::string> split_list(const std::string& text) {
  std::vector<std::string> out;
  std::string item;
  std::stringstream ss(text);
  while (std::getline(ss, item, ',')) {
    item = trim(item);
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

double to_double(const std::string& key, const std::string& v) {
  try {
    std::size_t used = 0;
    const double d = std::stod(v, &used);
    if (used != v.size()) throw std::invalid_argument(v);
    return d;
  } catch (const std::exception&) {
    throw ConfigError("'" + key + "' expects a number, got '" + v + "'");
  }
}

long to_long(const std::string& key, const std::string& v) {
  try {
    std::size_t used = 0;
    const long d = std::stol(v, &used);
    if (used != v.size()) throw std::invalid_argument(v);
    return d;
  } catch (const std::exception&) {
    throw ConfigError("'" + key + "' expects an integer, got '" + v + "'");
  }
}

bool to_bool(const std::string& key, const std::string& v) {
  if (v == "1" || v == "true" || v == "yes" || v == "on") return true;
  if (v == "0" || v == "false" || v == "no" || v == "off") return false;
  throw ConfigError("'" + key + "' expects a boolean, got '" + v + "'");
}

LrSchedule to_schedule(const std::string& key, const std::string& v) {
  if (v == "constant") return LrSchedule::Constant;
  if (v == "linear") return LrSchedule::Linear;
  if (v == "cyclic") return LrSchedule::Cyclic;
  throw ConfigError("'" + key + "' expects constant, linear or cyclic");
}

std::string schedule_name(LrSchedule s) {
  switch (s) {
    case LrSchedule::Constant: return "constant";
    case LrSchedule::Linear: return "linear";
    case LrSchedule::Cyclic: return "cyclic";
  }
  return "constant";
}

std::string strategy_text(const attack::AttackStrategy& s) {
  switch (s.kind) {
    case attack::StrategyKind::Fixed:
    case attack::StrategyKind::BadRL: {
      std::ostringstream o;
      o << s.name() << ':' << s.value;
      return o.str();
    }
    default:
      return s.name();
  }
}

using Setter = std::function<void(ExperimentConfig&, const std::string& key, const std::string&)>;

// Keys are "section.key". Trainer keys shared by both algorithms go to the
// active algorithm's block.
const std::map<std::string, Setter>& setters() {
  static const std::map<std::string, Setter> table = [] {
    std::map<std::string, Setter> m;
    m["experiment.env"] = [](ExperimentConfig&, const std::string&, const std::string&) {};
    m["experiment.algorithm"] = [](ExperimentConfig& c, const std::string& k, const std::string& v) {
      if (v == "ppo") c.trainer.algorithm = Algorithm::PPO;
      else if (v == "ddpg") c.trainer.algorithm = Algorithm::DDPG;
      else throw ConfigError("'" + k + "' expects ppo or ddpg");
    };
    m["experiment.strategy"] = [](ExperimentConfig& c, const std::string&, const std::string& v) {
      c.attack.strategy = attack::parse_strategy(v);
    };
    m["experiment.tasks"] = [](ExperimentConfig& c, const std::string&, const std::string& v) {
      c.tasks = parse_index_list(v);
    };
    m["experiment.seeds"] = [](ExperimentConfig& c, const std::string&, const std::string& v) {
      c.seeds = parse_seed_list(v);
    };
    m["experiment.mode"] = [](ExperimentConfig& c, const std::string& k, const std::string& v) {
      if (v == "scratch") c.mode = Mode::FromScratch;
      else if (v == "post_training") c.mode = Mode::PostTraining;
      else throw ConfigError("'" + k + "' expects scratch or post_training");
    };
    m["experiment.policy"] = [](ExperimentConfig& c, const std::string&, const std::string& v) { c.policy_path = v; };
    m["experiment.out"] = [](ExperimentConfig& c, const std::string&, const std::string& v) { c.out_dir = v; };
    m["experiment.jobs"] = [](ExperimentConfig& c, const std::string& k, const std::string& v) {
      c.jobs = static_cast<int>(to_long(k, v));
    };
    m["experiment.sweep_rewards"] = [](ExperimentConfig& c, const std::string& k, const std::string& v) {
      c.sweep_rewards.clear();
      for (const auto& s : split_list(v)) c.sweep_rewards.push_back(to_double(k, s));
    };

    m["trainer.total_steps"] = [](ExperimentConfig& c, const std::string& k, const std::string& v) {
      c.trainer.total_steps = to_long(k, v);
    };
    m["trainer.gamma"] = [](ExperimentConfig& c, const std::string& k, const std::string& v) {
      (c.trainer.algorithm == Algorithm::PPO ? c.trainer.ppo.gamma : c.trainer.ddpg.gamma) = to_double(k, v);
    };
    m["trainer.lr_schedule"] = [](ExperimentConfig& c, const std::string& k, const std::string& v) {
      (c.trainer.algorithm == Algorithm::PPO ? c.trainer.ppo.lr_schedule : c.trainer.ddpg.lr_schedule) =
          to_schedule(k, v);
    };
    const auto ppo_d = [&m](const char* key, double trainers::PpoConfig::*field) {
      m[std::string("trainer.") + key] = [field](ExperimentConfig& c, const std::string& k, const std::string& v) {
        c.trainer.ppo.*field = to_double(k, v);
      };
    };
    const auto ppo_i = [&m](const char* key, int trainers::PpoConfig::*field) {
      m[std::string("trainer.") + key] = [field](ExperimentConfig& c, const std::string& k, const std::string& v) {
        c.trainer.ppo.*field = static_cast<int>(to_long(k, v));
      };
    };
    const auto ddpg_d = [&m](const char* key, double trainers::DdpgConfig::*field) {
      m[std::string("trainer.") + key] = [field](ExperimentConfig& c, const std::string& k, const std::string& v) {
        c.trainer.ddpg.*field = to_double(k, v);
      };
    };
    const auto ddpg_i = [&m](const char* key, int trainers::DdpgConfig::*field) {
      m[std::string("trainer.") + key] = [field](ExperimentConfig& c, const std::string& k, const std::string& v) {
        c.trainer.ddpg.*field = static_cast<int>(to_long(k, v));
      };
    };
    ppo_d("gae_lambda", &trainers::PpoConfig::gae_lambda);
    ppo_d("clip", &trainers::PpoConfig::clip);
    ppo_d("lr", &trainers::PpoConfig::lr);
    ppo_i("rollout_len", &trainers::PpoConfig::rollout_len);
    ppo_i("minibatch", &trainers::PpoConfig::minibatch);
    ppo_i("epochs", &trainers::PpoConfig::epochs);
    ppo_d("value_coef", &trainers::PpoConfig::value_coef);
    ppo_d("entropy_coef", &trainers::PpoConfig::entropy_coef);
    ppo_d("max_grad_norm", &trainers::PpoConfig::max_grad_norm);
    ddpg_i("buffer_capacity", &trainers::DdpgConfig::buffer_capacity);
    ddpg_i("batch_size", &trainers::DdpgConfig::batch_size);
    ddpg_d("actor_lr", &trainers::DdpgConfig::actor_lr);
    ddpg_d("critic_lr", &trainers::DdpgConfig::critic_lr);
    ddpg_d("tau", &trainers::DdpgConfig::tau);
    ddpg_d("noise_std", &trainers::DdpgConfig::noise_std);
    ddpg_i("warmup_steps", &trainers::DdpgConfig::warmup_steps);

    const auto atk_d = [&m](const char* key, std::function<double&(ExperimentConfig&)> ref) {
      m[std::string("attack.") + key] = [ref](ExperimentConfig& c, const std::string& k, const std::string& v) {
        ref(c) = to_double(k, v);
      };
    };
    const auto atk_i = [&m](const char* key, std::function<int&(ExperimentConfig&)> ref) {
      m[std::string("attack.") + key] = [ref](ExperimentConfig& c, const std::string& k, const std::string& v) {
        ref(c) = static_cast<int>(to_long(k, v));
      };
    };
    atk_i("poison_interval", [](ExperimentConfig& c) -> int& { return c.attack.poison.interval; });
    atk_i("tamper_every", [](ExperimentConfig& c) -> int& { return c.attack.poison.tamper_every; });
    atk_d("noise_radius", [](ExperimentConfig& c) -> double& { return c.attack.poison.noise_radius; });
    atk_d("epsilon", [](ExperimentConfig& c) -> double& { return c.attack.poison.epsilon; });
    atk_d("beta", [](ExperimentConfig& c) -> double& { return c.attack.beta; });
    atk_d("performance_threshold", [](ExperimentConfig& c) -> double& { return c.attack.performance_threshold; });
    atk_d("benign_asymptote", [](ExperimentConfig& c) -> double& { return c.attack.benign_asymptote; });
    atk_d("backdoor_asymptote", [](ExperimentConfig& c) -> double& { return c.attack.backdoor_asymptote; });
    atk_d("benign_convergence", [](ExperimentConfig& c) -> double& { return c.attack.benign_convergence; });
    atk_d("backdoor_convergence", [](ExperimentConfig& c) -> double& { return c.attack.backdoor_convergence; });
    atk_i("probe_interval", [](ExperimentConfig& c) -> int& { return c.attack.probe_interval; });
    atk_i("exploration_interval", [](ExperimentConfig& c) -> int& { return c.attack.exploration_interval; });
    atk_i("converge_window", [](ExperimentConfig& c) -> int& { return c.attack.converge_window; });
    m["attack.trajectory_threshold"] = [](ExperimentConfig& c, const std::string& k, const std::string& v) {
      c.attack.trajectory_threshold = to_long(k, v);
    };
    m["attack.step"] = [](ExperimentConfig& c, const std::string& k, const std::string& v) {
      if (v == "auto") c.attack.step.reset();
      else c.attack.step = to_double(k, v);
    };
    m["attack.freeze_mode"] = [](ExperimentConfig& c, const std::string& k, const std::string& v) {
      if (v == "low") c.attack.freeze_mode = attack::FreezeMode::LowComplexity;
      else if (v == "high") c.attack.freeze_mode = attack::FreezeMode::HighComplexity;
      else throw ConfigError("'" + k + "' expects low or high");
    };
    m["attack.outer_loop"] = [](ExperimentConfig& c, const std::string& k, const std::string& v) {
      c.attack.outer_loop = to_bool(k, v);
    };

    m["bounds.lower"] = [](ExperimentConfig& c, const std::string& k, const std::string& v) {
      c.attack.bounds.lower = to_double(k, v);
    };
    m["bounds.upper"] = [](ExperimentConfig& c, const std::string& k, const std::string& v) {
      c.attack.bounds.upper = to_double(k, v);
    };

    const auto flag = [&m](const char* key, bool attack::Ablations::*field) {
      m[std::string("ablation.") + key] = [field](ExperimentConfig& c, const std::string& k, const std::string& v) {
        c.attack.ablations.*field = to_bool(k, v);
      };
    };
    flag("no_ewa", &attack::Ablations::no_ewa);
    flag("no_freeze", &attack::Ablations::no_freeze);
    flag("no_action_tamper", &attack::Ablations::no_action_tamper);
    flag("no_adaptive", &attack::Ablations::no_adaptive);

    m["eval.episodes"] = [](ExperimentConfig& c, const std::string& k, const std::string& v) {
      c.eval.episodes = static_cast<int>(to_long(k, v));
    };
    m["eval.probes"] = [](ExperimentConfig& c, const std::string& k, const std::string& v) {
      c.eval.probes = static_cast<int>(to_long(k, v));
    };
    return m;
  }();
  return table;
}

}  // namespace

void ExperimentConfig::validate() const {
  const envs::MdpSpec spec = envs::spec_for(env);
  trainer.validate();
  attack.validate();
  if (seeds.empty()) throw ConfigError("at least one seed is required");
  if (jobs < 1) throw ConfigError("jobs must be at least 1");
  if (eval.episodes < 1 || eval.probes < 0) throw ConfigError("evaluation sizes must be positive");
  if (mode == Mode::PostTraining && policy_path.empty()) {
    throw ConfigError("post-training mode needs a policy file");
  }
  if (trainer.algorithm == Algorithm::DDPG && envs::is_discrete(spec.action_space)) {
    throw ConfigError("DDPG needs a continuous action space");
  }
  for (int index : tasks) {
    const backdoor::BackdoorTask t = backdoor::catalog(index);
    if (t.env != env) {
      throw ConfigError("backdoor task " + std::to_string(index) + " belongs to " + t.env + ", not " + env);
    }
  }
  for (double r : sweep_rewards) {
    if (!(r > 0.0)) throw ConfigError("sweep rewards must be positive");
  }
}

ExperimentConfig default_config(const std::string& env) {
  const envs::MdpSpec spec = envs::spec_for(env);
  ExperimentConfig c;
  c.env = spec.name;
  c.attack.strategy = attack::AttackStrategy::unidoor();
  if (env == "cartpole") {
    c.trainer.total_steps = 200000;
    c.tasks = {0};
    c.attack.bounds = {0.0, 475.0};
    c.attack.freeze_mode = attack::FreezeMode::LowComplexity;
  } else if (env == "mountaincar") {
    c.trainer.total_steps = 300000;
    c.trainer.ppo.entropy_coef = 0.01;
    c.tasks = {14};
    c.attack.bounds = {-10000.0, -110.0};
    c.attack.freeze_mode = attack::FreezeMode::HighComplexity;
  } else {
    c.trainer.total_steps = 300000;
    c.tasks = {16};
    c.attack.bounds = {-1200.0, -200.0};
    c.attack.freeze_mode = attack::FreezeMode::LowComplexity;
  }
  return c;
}

ExperimentConfig parse_config(const std::string& ini_text) {
  boost::property_tree::ptree tree;
  try {
    std::istringstream in(ini_text);
    boost::property_tree::ini_parser::read_ini(in, tree);
  } catch (const boost::property_tree::ini_parser_error& e) {
    throw ConfigError(std::string("malformed config: ") + e.message() + " (line " +
                      std::to_string(e.line()) + ")");
  }
  const auto env = tree.get_optional<std::string>("experiment.env");
  if (!env) throw ConfigError("config is missing [experiment] env");
  ExperimentConfig c = default_config(trim(*env));

  // The algorithm decides where shared trainer keys land, so apply it first.
  if (const auto algo = tree.get_optional<std::string>("experiment.algorithm")) {
    setters().at("experiment.algorithm")(c, "experiment.algorithm", trim(*algo));
    if (c.trainer.algorithm == Algorithm::DDPG) c.trainer.total_steps = 100000;
  }
  for (const auto& [section, body] : tree) {
    if (body.empty() && !body.data().empty()) {
      throw ConfigError("key '" + section + "' must sit inside a section");
    }
    for (const auto& [key, value] : body) {
      const std::string full = section + "." + key;
      const auto it = setters().find(full);
      if (it == setters().end()) throw ConfigError("unknown config key '" + full + "'");
      if (full == "experiment.algorithm") continue;
      it->second(c, full, trim(value.data()));
    }
  }
  c.validate();
  return c;
}

ExperimentConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read config file " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_config(ss.str());
}

std::vector<std::uint64_t> parse_seed_list(const std::string& text) {
  std::vector<std::uint64_t> out;
  for (const auto& s : split_list(text)) {
    const long v = to_long("seeds", s);
    if (v < 0) throw ConfigError("seeds must be non-negative");
    out.push_back(static_cast<std::uint64_t>(v));
  }
  if (out.empty()) throw ConfigError("empty seed list");
  return out;
}

std::vector<int> parse_index_list(const std::string& text) {
  std::vector<int> out;
  for (const auto& s : split_list(text)) out.push_back(static_cast<int>(to_long("tasks", s)));
  return out;
}

std::string config_to_ini(const ExperimentConfig& c) {
  std::ostringstream o;
  o.precision(10);
  const auto& t = c.trainer;
  const bool ppo = t.algorithm == Algorithm::PPO;
  o << "[experiment]\n"
    << "env = " << c.env << "\n"
    << "algorithm = " << (ppo ? "ppo" : "ddpg") << "\n"
    << "strategy = " << strategy_text(c.attack.strategy) << "\n";
  o << "tasks = ";
  for (std::size_t i = 0; i < c.tasks.size(); ++i) o << (i ? "," : "") << c.tasks[i];
  o << "\nseeds = ";
  for (std::size_t i = 0; i < c.seeds.size(); ++i) o << (i ? "," : "") << c.seeds[i];
  o << "\nmode = " << (c.mode == Mode::FromScratch ? "scratch" : "post_training") << "\n";
  if (!c.policy_path.empty()) o << "policy = " << c.policy_path << "\n";
  if (!c.out_dir.empty()) o << "out = " << c.out_dir << "\n";
  o << "jobs = " << c.jobs << "\n";
  o << "sweep_rewards = ";
  for (std::size_t i = 0; i < c.sweep_rewards.size(); ++i) o << (i ? "," : "") << c.sweep_rewards[i];
  o << "\n\n[trainer]\n"
    << "total_steps = " << t.total_steps << "\n";
  if (ppo) {
    const auto& p = t.ppo;
    o << "gamma = " << p.gamma << "\ngae_lambda = " << p.gae_lambda << "\nclip = " << p.clip
      << "\nlr = " << p.lr << "\nlr_schedule = " << schedule_name(p.lr_schedule)
      << "\nrollout_len = " << p.rollout_len << "\nminibatch = " << p.minibatch
      << "\nepochs = " << p.epochs << "\nvalue_coef = " << p.value_coef
      << "\nentropy_coef = " << p.entropy_coef << "\nmax_grad_norm = " << p.max_grad_norm << "\n";
  } else {
    const auto& d = t.ddpg;
    o << "gamma = " << d.gamma << "\nbuffer_capacity = " << d.buffer_capacity
      << "\nbatch_size = " << d.batch_size << "\nactor_lr = " << d.actor_lr
      << "\ncritic_lr = " << d.critic_lr << "\ntau = " << d.tau << "\nnoise_std = " << d.noise_std
      << "\nwarmup_steps = " << d.warmup_steps << "\nlr_schedule = " << schedule_name(d.lr_schedule)
      << "\n";
  }
  const auto& a = c.attack;
  o << "\n[attack]\n"
    << "poison_interval = " << a.poison.interval << "\ntamper_every = " << a.poison.tamper_every
    << "\nnoise_radius = " << a.poison.noise_radius << "\nepsilon = " << a.poison.epsilon
    << "\nbeta = " << a.beta << "\nfreeze_mode = "
    << (a.freeze_mode == attack::FreezeMode::LowComplexity ? "low" : "high")
    << "\ntrajectory_threshold = " << a.trajectory_threshold
    << "\nperformance_threshold = " << a.performance_threshold << "\nstep = ";
  if (a.step) o << *a.step;
  else o << "auto";
  o << "\nbenign_asymptote = " << a.benign_asymptote << "\nbackdoor_asymptote = " << a.backdoor_asymptote
    << "\nbenign_convergence = " << a.benign_convergence
    << "\nbackdoor_convergence = " << a.backdoor_convergence << "\nprobe_interval = " << a.probe_interval
    << "\nexploration_interval = " << a.exploration_interval
    << "\nconverge_window = " << a.converge_window << "\nouter_loop = " << (a.outer_loop ? "true" : "false")
    << "\n\n[bounds]\nlower = " << a.bounds.lower << "\nupper = " << a.bounds.upper << "\n\n[ablation]\n"
    << "no_ewa = " << (a.ablations.no_ewa ? "true" : "false")
    << "\nno_freeze = " << (a.ablations.no_freeze ? "true" : "false")
    << "\nno_action_tamper = " << (a.ablations.no_action_tamper ? "true" : "false")
    << "\nno_adaptive = " << (a.ablations.no_adaptive ? "true" : "false") << "\n\n[eval]\n"
    << "episodes = " << c.eval.episodes << "\nprobes = " << c.eval.probes << "\n";
  return o.str();
}

nlohmann::json config_to_json(const ExperimentConfig& c) {
  // Structured echo of the INI form, grouped by section.
  boost::property_tree::ptree tree;
  std::istringstream in(config_to_ini(c));
  boost::property_tree::ini_parser::read_ini(in, tree);
  nlohmann::json j = nlohmann::json::object();
  for (const auto& [section, body] : tree) {
    for (const auto& [key, value] : body) j[section][key] = value.data();
  }
  return j;
}

}  // namespace unidoor::harness
