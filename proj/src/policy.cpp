#include "unidoor/policy.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "unidoor/distributions.hpp"
#include "unidoor/error.hpp"

namespace unidoor::policy {

namespace {

constexpr double kSqrt2 = 1.4142135623730951;

nn::OutputActivation output_activation(Head head) {
  return head == Head::DeterministicTanh ? nn::OutputActivation::Tanh
                                         : nn::OutputActivation::Identity;
}

nn::Mlp build(const MlpArch& arch) {
  return nn::Mlp(arch.layer_sizes, arch.activation, output_activation(arch.head));
}

}  // namespace

MlpArch ppo_actor_arch(const envs::MdpSpec& spec) {
  const int out = envs::action_dim(spec.action_space);
  MlpArch arch;
  arch.activation = nn::Activation::Tanh;
  arch.init = {nn::InitKind::Orthogonal, kSqrt2, 0.01};
  if (envs::is_discrete(spec.action_space)) {
    arch.layer_sizes = {spec.state_dim, 64, 64, out};
    arch.head = Head::CategoricalLogits;
  } else {
    arch.layer_sizes = {spec.state_dim, 64, 64, 64, out};
    arch.head = Head::GaussianMean;
  }
  return arch;
}

MlpArch ppo_critic_arch(const envs::MdpSpec& spec) {
  return {{spec.state_dim, 64, 64, 1},
          nn::Activation::Tanh,
          Head::ScalarValue,
          {nn::InitKind::Orthogonal, kSqrt2, 1.0}};
}

MlpArch ddpg_actor_arch(const envs::MdpSpec& spec) {
  if (envs::is_discrete(spec.action_space)) throw ConfigError("ddpg needs a continuous action space");
  return {{spec.state_dim, 128, 128, envs::action_dim(spec.action_space)},
          nn::Activation::ReLU,
          Head::DeterministicTanh,
          {nn::InitKind::XavierNormal, 1.0, 1.0}};
}

MlpArch ddpg_critic_arch(const envs::MdpSpec& spec) {
  return {{spec.state_dim + envs::action_dim(spec.action_space), 128, 128, 1},
          nn::Activation::ReLU,
          Head::ScalarValue,
          {nn::InitKind::XavierNormal, 1.0, 1.0}};
}

Policy::Policy(const envs::MdpSpec& spec, MlpArch actor_arch, std::optional<MlpArch> critic_arch)
    : actor_arch_(std::move(actor_arch)),
      critic_arch_(std::move(critic_arch)),
      action_space_(spec.action_space),
      state_dim_(spec.state_dim),
      obs_center_(spec.obs_center),
      obs_half_range_(spec.obs_half_range) {
  if (actor_arch_.layer_sizes.front() != state_dim_) throw ConfigError("actor input != state_dim");
  if (actor_arch_.layer_sizes.back() != envs::action_dim(action_space_)) {
    throw ConfigError("actor output does not match the action space");
  }
  if ((actor_arch_.head == Head::CategoricalLogits) != envs::is_discrete(action_space_)) {
    throw ConfigError("categorical heads require a discrete action space and vice versa");
  }
  if (obs_center_.empty()) obs_center_.assign(state_dim_, 0.0);
  if (obs_half_range_.empty()) obs_half_range_.assign(state_dim_, 1.0);
  actor = build(actor_arch_);
  if (actor_arch_.head == Head::GaussianMean) log_std = Eigen::VectorXd::Zero(action_dim());
  if (critic_arch_) {
    if (critic_arch_->head != Head::ScalarValue || critic_arch_->layer_sizes.back() != 1) {
      throw ConfigError("critic must have a scalar value head");
    }
    critic = build(*critic_arch_);
    if (!has_state_value() && !has_action_value()) throw ConfigError("critic input size mismatch");
  }
}

bool Policy::has_state_value() const {
  return critic_arch_ && critic_arch_->layer_sizes.front() == state_dim_;
}

bool Policy::has_action_value() const {
  return critic_arch_ && critic_arch_->layer_sizes.front() == state_dim_ + action_dim();
}

void Policy::initialize(std::uint64_t seed) {
  Rng rng(seed);
  actor.initialize(actor_arch_.init, rng);
  if (critic_arch_) critic.initialize(critic_arch_->init, rng);
  if (log_std.size() > 0) log_std.setZero();
}

Eigen::MatrixXd Policy::normalize(std::span<const std::vector<double>> observations) const {
  Eigen::MatrixXd x(state_dim_, static_cast<Eigen::Index>(observations.size()));
  for (std::size_t j = 0; j < observations.size(); ++j) {
    const auto& o = observations[j];
    if (static_cast<int>(o.size()) != state_dim_) throw StateError("observation has wrong length");
    for (int i = 0; i < state_dim_; ++i) {
      if (!std::isfinite(o[i])) throw NumericError("non-finite observation");
      x(i, static_cast<Eigen::Index>(j)) = (o[i] - obs_center_[i]) / obs_half_range_[i];
    }
  }
  return x;
}

Eigen::VectorXd Policy::normalize(std::span<const double> observation) const {
  if (static_cast<int>(observation.size()) != state_dim_) {
    throw StateError("observation has wrong length");
  }
  Eigen::VectorXd x(state_dim_);
  for (int i = 0; i < state_dim_; ++i) {
    if (!std::isfinite(observation[i])) throw NumericError("non-finite observation");
    x(i) = (observation[i] - obs_center_[i]) / obs_half_range_[i];
  }
  return x;
}

ActResult Policy::act(std::span<const double> obs, ActMode mode, Rng& rng) const {
  const Eigen::VectorXd x = normalize(obs);
  const Eigen::VectorXd out = actor.forward(x);
  ActResult result;

  switch (head()) {
    case Head::CategoricalLogits: {
      const Eigen::VectorXd logp = nn::log_softmax(out);
      int a = 0;
      if (mode == ActMode::Deterministic) {
        logp.maxCoeff(&a);
      } else {
        const double u = rng.uniform();
        double cum = 0.0;
        a = static_cast<int>(logp.size()) - 1;
        for (Eigen::Index i = 0; i < logp.size(); ++i) {
          cum += std::exp(logp(i));
          if (u < cum) {
            a = static_cast<int>(i);
            break;
          }
        }
      }
      result.action = envs::Action::discrete(a);
      result.log_prob = logp(a);
      break;
    }
    case Head::GaussianMean: {
      Eigen::VectorXd raw = out;
      if (mode == ActMode::Sample) {
        for (Eigen::Index i = 0; i < raw.size(); ++i) raw(i) += std::exp(log_std(i)) * rng.normal();
      }
      result.raw.assign(raw.data(), raw.data() + raw.size());
      result.log_prob = nn::gaussian_log_prob(out, log_std, raw)(0);
      std::vector<double> clamped(result.raw);
      for (auto& v : clamped) v = std::clamp(v, -1.0, 1.0);
      result.action = envs::Action::continuous(std::move(clamped));
      break;
    }
    case Head::DeterministicTanh: {
      std::vector<double> a(out.data(), out.data() + out.size());
      if (mode == ActMode::Sample) {
        for (auto& v : a) v += exploration_std * rng.normal();
      }
      result.raw = a;
      for (auto& v : a) v = std::clamp(v, -1.0, 1.0);
      result.action = envs::Action::continuous(std::move(a));
      break;
    }
    case Head::ScalarValue:
      throw ConfigError("actor cannot have a scalar value head");
  }

  if (has_state_value()) result.value = critic.forward(x)(0);
  return result;
}

envs::Action Policy::greedy(std::span<const double> obs) const {
  const Eigen::VectorXd out = actor.forward(normalize(obs));
  if (head() == Head::CategoricalLogits) {
    Eigen::Index a = 0;
    out.maxCoeff(&a);
    return envs::Action::discrete(static_cast<int>(a));
  }
  std::vector<double> a(out.data(), out.data() + out.size());
  for (auto& v : a) v = std::clamp(v, -1.0, 1.0);
  return envs::Action::continuous(std::move(a));
}

double Policy::value(std::span<const double> obs) const {
  if (!has_state_value()) throw StateError("policy has no state-value critic");
  return critic.forward(normalize(obs))(0);
}

double Policy::action_value(std::span<const double> obs, const envs::Action& a) const {
  if (!has_action_value()) throw StateError("policy has no action-value critic");
  Eigen::VectorXd x(state_dim_ + action_dim());
  x.head(state_dim_) = normalize(obs);
  for (int i = 0; i < action_dim(); ++i) x(state_dim_ + i) = a.value[i];
  return critic.forward(x)(0);
}

Eigen::VectorXd Policy::head_output(std::span<const double> obs) const {
  const Eigen::VectorXd out = actor.forward(normalize(obs));
  if (head() == Head::CategoricalLogits) return nn::log_softmax(out).array().exp();
  return out;
}

Eigen::VectorXd Policy::flat_params() const {
  Eigen::VectorXd flat(actor.num_params() + log_std.size() + critic.num_params());
  flat << actor.params(), log_std, critic.params();
  return flat;
}

void Policy::set_flat_params(const Eigen::VectorXd& flat) {
  if (flat.size() != actor.num_params() + log_std.size() + critic.num_params()) {
    throw StateError("flat parameter vector has wrong size");
  }
  Eigen::Index off = 0;
  actor.params() = flat.segment(off, actor.num_params());
  off += actor.num_params();
  log_std = flat.segment(off, log_std.size());
  off += log_std.size();
  critic.params() = flat.segment(off, critic.num_params());
}

Policy init_ppo_policy(const envs::MdpSpec& spec, std::uint64_t seed) {
  Policy p(spec, ppo_actor_arch(spec), ppo_critic_arch(spec));
  p.initialize(seed);
  return p;
}

Policy init_ddpg_policy(const envs::MdpSpec& spec, std::uint64_t seed) {
  Policy p(spec, ddpg_actor_arch(spec), ddpg_critic_arch(spec));
  p.initialize(seed);
  return p;
}

envs::Action to_env_action(const envs::ActionSpace& space, const envs::Action& normalized) {
  if (envs::is_discrete(space)) return normalized;
  const auto& box = std::get<envs::Box>(space);
  std::vector<double> v(normalized.value.size());
  for (std::size_t i = 0; i < v.size(); ++i) {
    v[i] = box.low[i] + 0.5 * (normalized.value[i] + 1.0) * (box.high[i] - box.low[i]);
  }
  return envs::Action::continuous(std::move(v));
}

envs::Action to_normalized_action(const envs::ActionSpace& space, const envs::Action& env_action) {
  if (envs::is_discrete(space)) return env_action;
  const auto& box = std::get<envs::Box>(space);
  std::vector<double> v(env_action.value.size());
  for (std::size_t i = 0; i < v.size(); ++i) {
    v[i] = 2.0 * (env_action.value[i] - box.low[i]) / (box.high[i] - box.low[i]) - 1.0;
  }
  return envs::Action::continuous(std::move(v));
}

// ------------------------------------------------------------ persistence

namespace {

using nlohmann::json;

const char* head_name(Head h) {
  switch (h) {
    case Head::CategoricalLogits: return "categorical";
    case Head::GaussianMean: return "gaussian";
    case Head::DeterministicTanh: return "tanh";
    case Head::ScalarValue: return "value";
  }
  return "value";
}

Head head_from(const std::string& s) {
  if (s == "categorical") return Head::CategoricalLogits;
  if (s == "gaussian") return Head::GaussianMean;
  if (s == "tanh") return Head::DeterministicTanh;
  if (s == "value") return Head::ScalarValue;
  throw ConfigError("unknown head '" + s + "'");
}

json vec_json(const Eigen::VectorXd& v) { return std::vector<double>(v.data(), v.data() + v.size()); }

Eigen::VectorXd vec_from(const json& j) {
  const auto v = j.get<std::vector<double>>();
  return Eigen::Map<const Eigen::VectorXd>(v.data(), static_cast<Eigen::Index>(v.size()));
}

json arch_json(const MlpArch& a, const nn::Mlp& net) {
  return {{"layer_sizes", a.layer_sizes},
          {"activation", a.activation == nn::Activation::Tanh ? "tanh" : "relu"},
          {"head", head_name(a.head)},
          {"init",
           {{"kind", a.init.kind == nn::InitKind::Orthogonal ? "orthogonal" : "xavier_normal"},
            {"gain", a.init.gain},
            {"output_gain", a.init.output_gain}}},
          {"params", vec_json(net.params())}};
}

MlpArch arch_from(const json& j) {
  MlpArch a;
  a.layer_sizes = j.at("layer_sizes").get<std::vector<int>>();
  a.activation = j.at("activation") == "tanh" ? nn::Activation::Tanh : nn::Activation::ReLU;
  a.head = head_from(j.at("head"));
  const auto& init = j.at("init");
  a.init.kind = init.at("kind") == "orthogonal" ? nn::InitKind::Orthogonal : nn::InitKind::XavierNormal;
  a.init.gain = init.at("gain");
  a.init.output_gain = init.at("output_gain");
  return a;
}

}  // namespace

std::string policy_to_json(const Policy& p) {
  json j;
  j["format"] = "unidoor-policy";
  j["version"] = 1;
  j["state_dim"] = p.state_dim();
  if (const auto* d = std::get_if<envs::Discrete>(&p.action_space())) {
    j["action_space"] = {{"type", "discrete"}, {"n", d->n}};
  } else {
    const auto& b = std::get<envs::Box>(p.action_space());
    j["action_space"] = {{"type", "box"}, {"low", b.low}, {"high", b.high}};
  }
  j["obs_center"] = p.obs_center();
  j["obs_half_range"] = p.obs_half_range();
  j["actor"] = arch_json(p.actor_arch(), p.actor);
  j["log_std"] = vec_json(p.log_std);
  j["exploration_std"] = p.exploration_std;
  if (p.critic_arch()) j["critic"] = arch_json(*p.critic_arch(), p.critic);
  return j.dump();
}

Policy policy_from_json(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception& e) {
    throw ConfigError(std::string("policy file is not valid JSON: ") + e.what());
  }
  if (j.value("format", "") != "unidoor-policy") throw ConfigError("not a unidoor policy file");
  if (j.value("version", 0) != 1) throw ConfigError("unsupported policy file version");

  envs::MdpSpec spec;
  spec.state_dim = j.at("state_dim");
  const auto& as = j.at("action_space");
  if (as.at("type") == "discrete") {
    spec.action_space = envs::Discrete{as.at("n").get<int>()};
  } else {
    spec.action_space = envs::Box{as.at("low").get<std::vector<double>>(),
                                  as.at("high").get<std::vector<double>>()};
  }
  spec.obs_center = j.at("obs_center").get<std::vector<double>>();
  spec.obs_half_range = j.at("obs_half_range").get<std::vector<double>>();

  std::optional<MlpArch> critic_arch;
  if (j.contains("critic")) critic_arch = arch_from(j.at("critic"));
  Policy p(spec, arch_from(j.at("actor")), critic_arch);

  auto load_params = [](nn::Mlp& net, const json& node) {
    const Eigen::VectorXd v = vec_from(node.at("params"));
    if (v.size() != net.num_params()) throw ConfigError("policy file parameter count mismatch");
    net.params() = v;
  };
  load_params(p.actor, j.at("actor"));
  if (critic_arch) load_params(p.critic, j.at("critic"));
  const Eigen::VectorXd ls = vec_from(j.at("log_std"));
  if (ls.size() != p.log_std.size()) throw ConfigError("policy file log_std size mismatch");
  p.log_std = ls;
  p.exploration_std = j.value("exploration_std", 0.1);
  return p;
}

void save_policy(const Policy& policy, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ConfigError("cannot write policy file " + path);
  out << policy_to_json(policy);
}

Policy load_policy(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot read policy file " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  return policy_from_json(ss.str());
}

}  // namespace unidoor::policy
