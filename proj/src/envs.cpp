#include "unidoor/envs.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <stdexcept>

#include "unidoor/error.hpp"

namespace unidoor::envs {

int action_dim(const ActionSpace& space) {
  if (const auto* d = std::get_if<Discrete>(&space)) return d->n;
  return std::get<Box>(space).dim();
}

Env::Env(MdpSpec spec, std::uint64_t seed)
    : spec_(std::move(spec)), rng_(seed), step_limit_(spec_.horizon) {}

Observation Env::reset(std::optional<std::uint64_t> seed) {
  if (seed) rng_.reseed(*seed);
  obs_ = sample_initial(rng_);
  step_count_ = 0;
  done_ = false;
  return obs_;
}

StepResult Env::step(const Action& action) {
  if (done_) throw StateError(spec_.name + ": step() after episode end; call reset()");

  Action applied = action;
  if (const auto* d = std::get_if<Discrete>(&spec_.action_space)) {
    if (!action.is_discrete() || action.index < 0 || action.index >= d->n) {
      throw std::out_of_range(spec_.name + ": discrete action out of range");
    }
  } else {
    const auto& box = std::get<Box>(spec_.action_space);
    if (action.is_discrete() || static_cast<int>(action.value.size()) != box.dim()) {
      throw std::out_of_range(spec_.name + ": continuous action has wrong dimension");
    }
    for (int i = 0; i < box.dim(); ++i) {
      if (!std::isfinite(action.value[i])) throw NumericError(spec_.name + ": non-finite action");
      applied.value[i] = std::clamp(action.value[i], box.low[i], box.high[i]);
    }
  }

  Outcome out = advance(applied);
  ++step_count_;
  obs_ = out.obs;

  StepResult result{std::move(out.obs), out.reward, out.terminated, false};
  if (!result.terminated && step_limit_ && step_count_ >= *step_limit_) result.truncated = true;
  done_ = result.done();
  return result;
}

double angle_normalize(double x) {
  constexpr double two_pi = 2.0 * std::numbers::pi;
  double r = std::fmod(x + std::numbers::pi, two_pi);
  if (r < 0.0) r += two_pi;
  return r - std::numbers::pi;
}

// ---------------------------------------------------------------- CartPole

MdpSpec cartpole_spec() {
  MdpSpec s;
  s.name = "cartpole";
  s.state_dim = 4;
  s.action_space = Discrete{2};
  s.reward_dense = true;
  s.horizon = 500;
  s.env_step_cap = 500;
  s.obs_center = {0.0, 0.0, 0.0, 0.0};
  s.obs_half_range = {1.0, 1.0, 1.0, 1.0};
  return s;
}

CartPole::CartPole(std::uint64_t seed) : Env(cartpole_spec(), seed) {}

void CartPole::set_state(const Observation& state) {
  if (state.size() != 4) throw StateError("cartpole: state must have 4 entries");
  state_ = state;
}

Observation CartPole::sample_initial(Rng& rng) {
  state_.assign(4, 0.0);
  for (auto& x : state_) x = rng.uniform(-0.05, 0.05);
  return state_;
}

Env::Outcome CartPole::advance(const Action& action) {
  const double x = state_[0], x_dot = state_[1], theta = state_[2], theta_dot = state_[3];
  const double force = action.index == 1 ? kForce : -kForce;
  const double cos_t = std::cos(theta);
  const double sin_t = std::sin(theta);

  const double temp = (force + kPoleMassLength * theta_dot * theta_dot * sin_t) / kTotalMass;
  const double theta_acc = (kGravity * sin_t - cos_t * temp) /
                           (kHalfLength * (4.0 / 3.0 - kPoleMass * cos_t * cos_t / kTotalMass));
  const double x_acc = temp - kPoleMassLength * theta_acc * cos_t / kTotalMass;

  // Explicit Euler, matching the reference "euler" integrator.
  state_ = {x + kTau * x_dot, x_dot + kTau * x_acc, theta + kTau * theta_dot,
            theta_dot + kTau * theta_acc};

  const bool terminated = state_[0] < -kXThreshold || state_[0] > kXThreshold ||
                          state_[2] < -kThetaThreshold || state_[2] > kThetaThreshold;
  return {state_, 1.0, terminated};
}

// ------------------------------------------------------------- MountainCar

MdpSpec mountaincar_spec() {
  MdpSpec s;
  s.name = "mountaincar";
  s.state_dim = 2;
  s.action_space = Discrete{3};
  s.reward_dense = false;
  s.horizon = std::nullopt;
  s.env_step_cap = MountainCar::kEvalStepCap;
  s.obs_center = {-0.3, 0.0};
  s.obs_half_range = {0.9, MountainCar::kMaxSpeed};
  return s;
}

MountainCar::MountainCar(std::uint64_t seed) : Env(mountaincar_spec(), seed) {}

void MountainCar::set_state(const Observation& state) {
  if (state.size() != 2) throw StateError("mountaincar: state must have 2 entries");
  position_ = state[0];
  velocity_ = state[1];
}

Observation MountainCar::sample_initial(Rng& rng) {
  position_ = rng.uniform(-0.6, -0.4);
  velocity_ = 0.0;
  return {position_, velocity_};
}

Env::Outcome MountainCar::advance(const Action& action) {
  velocity_ += (action.index - 1) * kForce + std::cos(3.0 * position_) * (-kGravity);
  velocity_ = std::clamp(velocity_, -kMaxSpeed, kMaxSpeed);
  position_ += velocity_;
  position_ = std::clamp(position_, kMinPosition, kMaxPosition);
  if (position_ == kMinPosition && velocity_ < 0.0) velocity_ = 0.0;

  const bool terminated = position_ >= kGoalPosition && velocity_ >= kGoalVelocity;
  return {{position_, velocity_}, -1.0, terminated};
}

// ---------------------------------------------------------------- Pendulum

MdpSpec pendulum_spec() {
  MdpSpec s;
  s.name = "pendulum";
  s.state_dim = 3;
  s.action_space = Box{{-Pendulum::kMaxTorque}, {Pendulum::kMaxTorque}};
  s.reward_dense = true;
  s.horizon = 200;
  s.env_step_cap = 200;
  s.obs_center = {0.0, 0.0, 0.0};
  s.obs_half_range = {1.0, 1.0, 1.0};
  return s;
}

Pendulum::Pendulum(std::uint64_t seed) : Env(pendulum_spec(), seed) {}

void Pendulum::set_state(double theta, double theta_dot) {
  theta_ = theta;
  theta_dot_ = theta_dot;
}

Observation Pendulum::observe() const {
  return {std::cos(theta_), std::sin(theta_), theta_dot_};
}

Observation Pendulum::sample_initial(Rng& rng) {
  theta_ = rng.uniform(-std::numbers::pi, std::numbers::pi);
  theta_dot_ = rng.uniform(-1.0, 1.0);
  return observe();
}

Env::Outcome Pendulum::advance(const Action& action) {
  const double u = action.value[0];  // already clamped by Env::step
  const double th = angle_normalize(theta_);
  const double cost = th * th + 0.1 * theta_dot_ * theta_dot_ + 0.001 * u * u;

  double new_theta_dot =
      theta_dot_ + (3.0 * kGravity / (2.0 * kLength) * std::sin(theta_) +
                    3.0 / (kMass * kLength * kLength) * u) *
                       kDt;
  new_theta_dot = std::clamp(new_theta_dot, -kMaxSpeed, kMaxSpeed);
  theta_ = theta_ + new_theta_dot * kDt;
  theta_dot_ = new_theta_dot;
  return {observe(), -cost, false};
}

// ----------------------------------------------------------------- factory

MdpSpec spec_for(const std::string& name) {
  if (name == "cartpole") return cartpole_spec();
  if (name == "mountaincar") return mountaincar_spec();
  if (name == "pendulum") return pendulum_spec();
  throw ConfigError("unknown environment '" + name +
                    "' (expected cartpole, mountaincar or pendulum)");
}

std::unique_ptr<Env> make_env(const std::string& name, std::uint64_t seed) {
  std::unique_ptr<Env> env;
  if (name == "cartpole") {
    env = std::make_unique<CartPole>(seed);
  } else if (name == "mountaincar") {
    env = std::make_unique<MountainCar>(seed);
  } else if (name == "pendulum") {
    env = std::make_unique<Pendulum>(seed);
  } else {
    spec_for(name);  // throws
  }
  env->reset();
  return env;
}

}  // namespace unidoor::envs
