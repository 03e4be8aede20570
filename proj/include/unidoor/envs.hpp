#pragma once

#include <cstdint>
#include <memory>
#include <optional>
#include <string>
#include <variant>
#include <vector>

#include "unidoor/rng.hpp"

namespace unidoor::envs {

using Observation = std::vector<double>;

struct Discrete {
  int n = 2;
};

struct Box {
  std::vector<double> low;
  std::vector<double> high;

  int dim() const { return static_cast<int>(low.size()); }
};

using ActionSpace = std::variant<Discrete, Box>;

inline bool is_discrete(const ActionSpace& space) {
  return std::holds_alternative<Discrete>(space);
}

// Number of policy outputs: category count or box dimension.
int action_dim(const ActionSpace& space);

// A discrete index or a continuous vector in environment units.
struct Action {
  int index = -1;
  std::vector<double> value;

  static Action discrete(int i) { return Action{i, {}}; }
  static Action continuous(std::vector<double> v) { return Action{-1, std::move(v)}; }

  bool is_discrete() const { return value.empty(); }
  bool operator==(const Action&) const = default;
};

struct MdpSpec {
  std::string name;
  int state_dim = 0;
  ActionSpace action_space;
  bool reward_dense = true;
  // Episode truncation length; empty for infinite-horizon tasks.
  std::optional<int> horizon;
  // Evaluation-time step cap. Equals the horizon for finite tasks.
  int env_step_cap = 0;
  // Fixed affine input normalization used by policies:
  // x_policy = (x - center) / half_range. Identity for most tasks.
  std::vector<double> obs_center;
  std::vector<double> obs_half_range;
};

struct StepResult {
  Observation obs;
  double reward = 0.0;
  bool terminated = false;  // true terminal state of the MDP
  bool truncated = false;   // horizon or step cap reached

  bool done() const { return terminated || truncated; }
};

/// A seedable classic-control environment. Dynamics follow the Gym
/// classic-control reference implementations; only reset() draws from the
/// generator, so observation streams are a pure function of (seed, actions).
class Env {
 public:
  explicit Env(MdpSpec spec, std::uint64_t seed);
  virtual ~Env() = default;

  Env(const Env&) = default;
  Env& operator=(const Env&) = default;

  const MdpSpec& spec() const { return spec_; }

  // Re-initializes from the reset distribution. Reseeds when a seed is given.
  Observation reset(std::optional<std::uint64_t> seed = std::nullopt);

  // Throws StateError when the episode is over, std::out_of_range for
  // invalid discrete actions and NumericError for non-finite continuous
  // actions. Continuous actions are clamped to the box.
  StepResult step(const Action& action);

  const Observation& observation() const { return obs_; }
  int step_count() const { return step_count_; }
  bool done() const { return done_; }
  const Rng& rng() const { return rng_; }

  // Truncation limit in effect. Defaults to the horizon; infinite-horizon
  // tasks run uncapped unless a limit is set (evaluation uses env_step_cap).
  std::optional<int> step_limit() const { return step_limit_; }
  void set_step_limit(std::optional<int> limit) { step_limit_ = limit; }

  virtual std::unique_ptr<Env> clone() const = 0;

 protected:
  virtual Observation sample_initial(Rng& rng) = 0;

  struct Outcome {
    Observation obs;
    double reward;
    bool terminated;
  };
  virtual Outcome advance(const Action& action) = 0;

 private:
  MdpSpec spec_;
  Rng rng_;
  Observation obs_;
  int step_count_ = 0;
  bool done_ = true;
  std::optional<int> step_limit_;
};

/// CartPole-v1: push left (0) or right (1); +1 per step including the
/// failing one; fails at |x| > 2.4 or |theta| > 12 degrees; horizon 500.
class CartPole final : public Env {
 public:
  static constexpr double kGravity = 9.8;
  static constexpr double kCartMass = 1.0;
  static constexpr double kPoleMass = 0.1;
  static constexpr double kTotalMass = kCartMass + kPoleMass;
  static constexpr double kHalfLength = 0.5;
  static constexpr double kPoleMassLength = kPoleMass * kHalfLength;
  static constexpr double kForce = 10.0;
  static constexpr double kTau = 0.02;
  static constexpr double kThetaThreshold = 12.0 * 2.0 * 3.141592653589793 / 360.0;
  static constexpr double kXThreshold = 2.4;

  explicit CartPole(std::uint64_t seed);

  // Overwrites the internal state. The next step() starts from it.
  void set_state(const Observation& state);

  std::unique_ptr<Env> clone() const override { return std::make_unique<CartPole>(*this); }

 protected:
  Observation sample_initial(Rng& rng) override;
  Outcome advance(const Action& action) override;

 private:
  Observation state_;
};

/// MountainCar-v0: accelerate left (0), coast (1), right (2); -1 per step;
/// terminates at position >= 0.5. No horizon.
class MountainCar final : public Env {
 public:
  static constexpr double kMinPosition = -1.2;
  static constexpr double kMaxPosition = 0.6;
  static constexpr double kMaxSpeed = 0.07;
  static constexpr double kGoalPosition = 0.5;
  static constexpr double kGoalVelocity = 0.0;
  static constexpr double kForce = 0.001;
  static constexpr double kGravity = 0.0025;
  static constexpr int kEvalStepCap = 10000;

  explicit MountainCar(std::uint64_t seed);

  void set_state(const Observation& state);

  std::unique_ptr<Env> clone() const override { return std::make_unique<MountainCar>(*this); }

 protected:
  Observation sample_initial(Rng& rng) override;
  Outcome advance(const Action& action) override;

 private:
  double position_ = 0.0;
  double velocity_ = 0.0;
};

/// Pendulum-v1: observation (cos th, sin th, th_dot), torque in [-2, 2],
/// positive torque accelerates th counter-clockwise. Reward
/// -(th^2 + 0.1 th_dot^2 + 0.001 u^2) with th wrapped to [-pi, pi].
class Pendulum final : public Env {
 public:
  static constexpr double kMaxSpeed = 8.0;
  static constexpr double kMaxTorque = 2.0;
  static constexpr double kDt = 0.05;
  static constexpr double kGravity = 10.0;
  static constexpr double kMass = 1.0;
  static constexpr double kLength = 1.0;

  explicit Pendulum(std::uint64_t seed);

  // Sets the angle and angular velocity directly.
  void set_state(double theta, double theta_dot);
  double theta() const { return theta_; }
  double theta_dot() const { return theta_dot_; }

  std::unique_ptr<Env> clone() const override { return std::make_unique<Pendulum>(*this); }

 protected:
  Observation sample_initial(Rng& rng) override;
  Outcome advance(const Action& action) override;

 private:
  Observation observe() const;

  double theta_ = 0.0;
  double theta_dot_ = 0.0;
};

// Wraps an angle to [-pi, pi).
double angle_normalize(double x);

MdpSpec cartpole_spec();
MdpSpec mountaincar_spec();
MdpSpec pendulum_spec();

// Spec for a known environment name; throws ConfigError otherwise.
MdpSpec spec_for(const std::string& name);

// Builds an environment and performs the initial reset with `seed`.
// Throws ConfigError for names other than cartpole, mountaincar, pendulum.
std::unique_ptr<Env> make_env(const std::string& name, std::uint64_t seed);

}  // namespace unidoor::envs
