#include <gtest/gtest.h>

#include <cmath>
#include <cstring>
#include <numbers>

#include "unidoor/envs.hpp"
#include "unidoor/error.hpp"

using namespace unidoor;
using namespace unidoor::envs;

namespace {

// One Euler step of the reference cart-pole equations, written out
// independently of the environment code.
std::array<double, 4> cartpole_oracle(std::array<double, 4> s, double force) {
  const double g = 9.8, mc = 1.0, mp = 0.1, l = 0.5, tau = 0.02;
  const double total = mc + mp;
  const double c = std::cos(s[2]), sn = std::sin(s[2]);
  const double temp = (force + mp * l * s[3] * s[3] * sn) / total;
  const double th_acc = (g * sn - c * temp) / (l * (4.0 / 3.0 - mp * c * c / total));
  const double x_acc = temp - mp * l * th_acc * c / total;
  return {s[0] + tau * s[1], s[1] + tau * x_acc, s[2] + tau * s[3], s[3] + tau * th_acc};
}

}  // namespace

TEST(Envs, SpecsMatchTheReferenceTasks) {
  const auto cp = make_env("cartpole", 0);
  EXPECT_TRUE(is_discrete(cp->spec().action_space));
  EXPECT_EQ(std::get<Discrete>(cp->spec().action_space).n, 2);
  EXPECT_EQ(cp->spec().state_dim, 4);
  EXPECT_EQ(cp->spec().horizon, 500);

  const auto mc = make_env("mountaincar", 3);
  EXPECT_EQ(mc->spec().env_step_cap, 10000);
  EXPECT_FALSE(mc->spec().horizon.has_value());
  EXPECT_EQ(std::get<Discrete>(mc->spec().action_space).n, 3);

  const auto pd = make_env("pendulum", 3);
  const auto& box = std::get<Box>(pd->spec().action_space);
  ASSERT_EQ(box.dim(), 1);
  EXPECT_EQ(box.low[0], -2.0);
  EXPECT_EQ(box.high[0], 2.0);
  EXPECT_EQ(pd->spec().horizon, 200);
}

TEST(Envs, UnknownNameIsAConfigError) {
  EXPECT_THROW(make_env("acrobot", 0), ConfigError);
  EXPECT_THROW(spec_for(""), ConfigError);
}

TEST(Envs, CartPolePushRightFromRest) {
  CartPole env(0);
  env.reset();
  env.set_state({0, 0, 0, 0});
  const StepResult r = env.step(Action::discrete(1));
  EXPECT_NEAR(r.obs[1], 0.1951219512195122, 1e-12);
  const auto oracle = cartpole_oracle({0, 0, 0, 0}, 10.0);
  for (int i = 0; i < 4; ++i) EXPECT_NEAR(r.obs[i], oracle[i], 1e-12);
  EXPECT_EQ(r.reward, 1.0);
  EXPECT_FALSE(r.done());
}

TEST(Envs, CartPoleMatchesOracleAlongARandomTrajectory) {
  CartPole env(11);
  Observation obs = env.reset();
  Rng rng(5);
  std::array<double, 4> s{obs[0], obs[1], obs[2], obs[3]};
  while (!env.done()) {
    const int a = static_cast<int>(rng.below(2));
    const StepResult r = env.step(Action::discrete(a));
    s = cartpole_oracle(s, a == 1 ? 10.0 : -10.0);
    for (int i = 0; i < 4; ++i) ASSERT_NEAR(r.obs[i], s[i], 1e-12);
    if (r.terminated) {
      EXPECT_TRUE(std::abs(s[0]) > 2.4 || std::abs(s[2]) > CartPole::kThetaThreshold);
    }
  }
}

TEST(Envs, CartPoleTruncatesAtHorizon) {
  CartPole env(0);
  env.reset();
  int steps = 0;
  StepResult r;
  while (!env.done()) {
    env.set_state({0, 0, 0, 0});
    r = env.step(Action::discrete(steps % 2));
    ++steps;
  }
  EXPECT_EQ(steps, 500);
  EXPECT_TRUE(r.truncated);
  EXPECT_FALSE(r.terminated);
  EXPECT_THROW(env.step(Action::discrete(0)), StateError);
}

TEST(Envs, InvalidActionsAreRejected) {
  auto cp = make_env("cartpole", 0);
  EXPECT_THROW(cp->step(Action::discrete(2)), std::out_of_range);
  auto pd = make_env("pendulum", 0);
  EXPECT_THROW(pd->step(Action::continuous({std::nan("")})), NumericError);
}

TEST(Envs, MountainCarRewardAndReset) {
  for (std::uint64_t seed = 0; seed < 50; ++seed) {
    auto env = make_env("mountaincar", seed);
    const Observation& o = env->observation();
    EXPECT_GE(o[0], -0.6);
    EXPECT_LE(o[0], -0.4);
    EXPECT_EQ(o[1], 0.0);
    const StepResult r = env->step(Action::discrete(static_cast<int>(seed % 3)));
    EXPECT_EQ(r.reward, -1.0);
  }
}

TEST(Envs, MountainCarSwingControllerReachesTheGoal) {
  auto env = make_env("mountaincar", 4);
  int steps = 0;
  StepResult r;
  while (!env->done() && steps < 1000) {
    const int a = env->observation()[1] >= 0.0 ? 2 : 0;
    r = env->step(Action::discrete(a));
    ++steps;
  }
  EXPECT_TRUE(r.terminated);
  EXPECT_GE(r.obs[0], MountainCar::kGoalPosition);
  EXPECT_LT(steps, 200);
}

TEST(Envs, MountainCarHonoursTheStepLimit) {
  auto env = make_env("mountaincar", 1);
  env->set_step_limit(MountainCar::kEvalStepCap);
  int steps = 0;
  while (!env->done()) {
    env->step(Action::discrete(1));
    ++steps;
  }
  EXPECT_EQ(steps, MountainCar::kEvalStepCap);
}

TEST(Envs, PendulumUprightRestCostsNothing) {
  Pendulum env(0);
  env.reset();
  env.set_state(0.0, 0.0);
  const StepResult r = env.step(Action::continuous({0.0}));
  EXPECT_EQ(r.reward, 0.0);
}

TEST(Envs, PendulumObservationOnUnitCircle) {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    auto env = make_env("pendulum", seed);
    Rng rng(seed);
    for (int k = 0; k < 50; ++k) {
      const Observation& o = env->observation();
      EXPECT_NEAR(o[0] * o[0] + o[1] * o[1], 1.0, 1e-12);
      EXPECT_LE(std::abs(o[2]), Pendulum::kMaxSpeed);
      env->step(Action::continuous({rng.uniform(-3.0, 3.0)}));
    }
  }
}

TEST(Envs, PendulumPositiveTorqueTurnsCounterClockwise) {
  Pendulum env(0);
  env.reset();
  env.set_state(0.0, 0.0);
  env.step(Action::continuous({2.0}));
  EXPECT_GT(env.theta_dot(), 0.0);
  EXPECT_GT(env.theta(), 0.0);
}

TEST(Envs, AngleNormalizeRange) {
  EXPECT_NEAR(angle_normalize(3 * std::numbers::pi), -std::numbers::pi, 1e-12);
  EXPECT_NEAR(angle_normalize(0.5), 0.5, 1e-15);
  EXPECT_NEAR(angle_normalize(-0.5 - 2 * std::numbers::pi), -0.5, 1e-12);
}

class EnvDeterminism : public ::testing::TestWithParam<std::string> {};

TEST_P(EnvDeterminism, SameSeedAndActionsGiveBitIdenticalStreams) {
  const auto stream = [&](std::uint64_t seed) {
    auto env = make_env(GetParam(), seed);
    env->set_step_limit(300);
    Rng rng(77);
    std::vector<double> out(env->observation().begin(), env->observation().end());
    while (!env->done()) {
      Action a = is_discrete(env->spec().action_space)
                     ? Action::discrete(static_cast<int>(rng.below(action_dim(env->spec().action_space))))
                     : Action::continuous({rng.uniform(-2.0, 2.0)});
      const StepResult r = env->step(a);
      out.insert(out.end(), r.obs.begin(), r.obs.end());
      out.push_back(r.reward);
    }
    return out;
  };
  const auto a = stream(9);
  const auto b = stream(9);
  ASSERT_EQ(a.size(), b.size());
  EXPECT_EQ(std::memcmp(a.data(), b.data(), a.size() * sizeof(double)), 0);
  EXPECT_NE(stream(9), stream(10));
}

TEST_P(EnvDeterminism, ResetWithSeedRepeats) {
  auto env = make_env(GetParam(), 0);
  const Observation a = env->reset(123);
  env->step(is_discrete(env->spec().action_space) ? Action::discrete(0) : Action::continuous({1.0}));
  const Observation b = env->reset(123);
  EXPECT_EQ(a, b);
  auto clone = env->clone();
  EXPECT_EQ(clone->observation(), env->observation());
}

INSTANTIATE_TEST_SUITE_P(AllTasks, EnvDeterminism, ::testing::Values("cartpole", "mountaincar", "pendulum"));
