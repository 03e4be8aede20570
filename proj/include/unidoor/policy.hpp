#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "unidoor/envs.hpp"
#include "unidoor/mlp.hpp"
#include "unidoor/rng.hpp"

namespace unidoor::policy {

enum class Head { CategoricalLogits, GaussianMean, DeterministicTanh, ScalarValue };

struct MlpArch {
  std::vector<int> layer_sizes;
  nn::Activation activation = nn::Activation::Tanh;
  Head head = Head::ScalarValue;
  nn::InitScheme init;
};

// Canonical architectures. PPO: width 64, Tanh, orthogonal (sqrt 2 hidden,
// 0.01 actor output, 1.0 critic output); discrete actor 3 affine layers,
// continuous actor 4, critic 3. DDPG: two ReLU hidden layers of 128,
// Xavier-normal gain 1, Tanh actor output, critic over (state, action).
MlpArch ppo_actor_arch(const envs::MdpSpec& spec);
MlpArch ppo_critic_arch(const envs::MdpSpec& spec);
MlpArch ddpg_actor_arch(const envs::MdpSpec& spec);
MlpArch ddpg_critic_arch(const envs::MdpSpec& spec);

enum class ActMode { Sample, Deterministic };

struct ActResult {
  // Discrete index, or a normalized action clamped to [-1, 1]^dim.
  envs::Action action;
  // Continuous heads: the unclamped sample that log_prob refers to.
  std::vector<double> raw;
  std::optional<double> log_prob;
  std::optional<double> value;
};

/// Actor (plus optional critic) for one MDP. Observations pass through the
/// spec's fixed affine normalization before reaching either network.
/// Continuous actions live in [-1, 1]^dim and are mapped to the environment
/// box by to_env_action().
class Policy {
 public:
  Policy() = default;
  Policy(const envs::MdpSpec& spec, MlpArch actor_arch, std::optional<MlpArch> critic_arch);

  // Weights from the arch init schemes (seeded), zero biases, log-std 0.
  void initialize(std::uint64_t seed);

  const MlpArch& actor_arch() const { return actor_arch_; }
  const std::optional<MlpArch>& critic_arch() const { return critic_arch_; }
  Head head() const { return actor_arch_.head; }
  const envs::ActionSpace& action_space() const { return action_space_; }
  int state_dim() const { return state_dim_; }
  int action_dim() const { return envs::action_dim(action_space_); }
  bool discrete() const { return head() == Head::CategoricalLogits; }
  // Critic is V(s) (PPO) rather than Q(s, a) (DDPG).
  bool has_state_value() const;
  bool has_action_value() const;

  const std::vector<double>& obs_center() const { return obs_center_; }
  const std::vector<double>& obs_half_range() const { return obs_half_range_; }

  nn::Mlp actor;
  nn::Mlp critic;             // empty network when there is no critic
  Eigen::VectorXd log_std;    // GaussianMean head only
  double exploration_std = 0.1;  // DeterministicTanh Sample-mode noise

  // Column-stacks observations and applies the input normalization.
  // Throws NumericError for non-finite entries.
  Eigen::MatrixXd normalize(std::span<const std::vector<double>> observations) const;
  Eigen::VectorXd normalize(std::span<const double> observation) const;

  ActResult act(std::span<const double> obs, ActMode mode, Rng& rng) const;
  // Deterministic action only; no generator needed.
  envs::Action greedy(std::span<const double> obs) const;

  double value(std::span<const double> obs) const;
  double action_value(std::span<const double> obs, const envs::Action& normalized_action) const;

  // Categorical probabilities, or the Gaussian/Tanh mean, for one state.
  Eigen::VectorXd head_output(std::span<const double> obs) const;

  // Concatenation actor | log_std | critic.
  Eigen::VectorXd flat_params() const;
  void set_flat_params(const Eigen::VectorXd& flat);

 private:
  MlpArch actor_arch_;
  std::optional<MlpArch> critic_arch_;
  envs::ActionSpace action_space_;
  int state_dim_ = 0;
  std::vector<double> obs_center_;
  std::vector<double> obs_half_range_;
};

// Builds and initializes the canonical policy for an algorithm.
Policy init_ppo_policy(const envs::MdpSpec& spec, std::uint64_t seed);
Policy init_ddpg_policy(const envs::MdpSpec& spec, std::uint64_t seed);

// Normalized [-1, 1] action <-> environment units. Discrete actions pass
// through unchanged.
envs::Action to_env_action(const envs::ActionSpace& space, const envs::Action& normalized);
envs::Action to_normalized_action(const envs::ActionSpace& space, const envs::Action& env_action);

// Persistence: JSON document {"format": "unidoor-policy", "version": 1, ...}
// holding both architectures, the input normalization, the action space and
// every parameter. Doubles are written in shortest round-trip form, so
// save/load is bit-exact.
void save_policy(const Policy& policy, const std::string& path);
Policy load_policy(const std::string& path);
std::string policy_to_json(const Policy& policy);
Policy policy_from_json(const std::string& text);

}  // namespace unidoor::policy
