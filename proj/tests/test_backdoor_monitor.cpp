#include <gtest/gtest.h>

#include <cmath>
#include <cstring>
#include <stdexcept>

#include "unidoor/backdoor.hpp"
#include "unidoor/error.hpp"
#include "unidoor/monitor.hpp"

using namespace unidoor;

TEST(Catalog, RowsMatchTheTable) {
  const auto t0 = backdoor::catalog(0);
  EXPECT_EQ(t0.env, "cartpole");
  ASSERT_EQ(t0.trigger_count(), 1);
  EXPECT_EQ(t0.triggers[0].positions, std::vector<int>{0});
  EXPECT_EQ(t0.triggers[0].values, std::vector<double>{-4.8});
  EXPECT_EQ(t0.labels[0], "push cart to the right");

  const auto t16 = backdoor::catalog(16);
  EXPECT_EQ(t16.env, "pendulum");
  EXPECT_EQ(t16.triggers[0].positions, std::vector<int>{2});
  EXPECT_EQ(t16.triggers[0].values, std::vector<double>{8.0});
  EXPECT_EQ(t16.labels[0], "maximum left torque");

  const auto t25 = backdoor::catalog(25);
  ASSERT_EQ(t25.trigger_count(), 4);
  for (int i = 0; i < 4; ++i) EXPECT_EQ(t25.triggers[i].positions, std::vector<int>{i});
}

TEST(Catalog, TargetsInPolicySpace) {
  EXPECT_EQ(backdoor::target_action(backdoor::catalog(0), 0).index, 1);
  EXPECT_EQ(backdoor::target_action(backdoor::catalog(14), 0).index, 1);
  const auto t16 = backdoor::target_action(backdoor::catalog(16), 0);
  ASSERT_EQ(t16.value.size(), 1u);
  EXPECT_EQ(t16.value[0], -1.0);
  EXPECT_EQ(backdoor::catalog(16).target_actions[0].value[0], -2.0);
}

TEST(Catalog, InjectivityReported) {
  EXPECT_TRUE(backdoor::targets_injective(backdoor::catalog(0)));
  EXPECT_TRUE(backdoor::targets_injective(backdoor::catalog(21)));
  EXPECT_FALSE(backdoor::targets_injective(backdoor::catalog(25)));
}

TEST(Catalog, UnknownIndexAndBadRows) {
  EXPECT_THROW(backdoor::catalog(9), ConfigError);
  EXPECT_THROW(backdoor::parse_catalog(R"({"tasks": [{"index": 1, "env": "cartpole", "triggers": [
      {"positions": [7], "values": [1], "target": 0, "label": "x"}]}]})"),
               ConfigError);
  EXPECT_THROW(backdoor::parse_catalog(R"({"tasks": [{"index": 1, "env": "cartpole", "triggers": [
      {"positions": [0], "values": [1], "target": 5, "label": "x"}]}]})"),
               ConfigError);
}

TEST(Trigger, OverwritesOnlyTriggerDims) {
  const auto task = backdoor::catalog(0);
  const envs::Observation obs{0.1, 0.2, 0.01, 0.0};
  const auto t = backdoor::apply_trigger(obs, task, 0);
  EXPECT_EQ(t, (envs::Observation{-4.8, 0.2, 0.01, 0.0}));
  EXPECT_EQ(backdoor::apply_trigger(t, task, 0), t);
  Rng rng(2);
  for (int k = 0; k < 100; ++k) {
    envs::Observation o{rng.normal(), rng.normal(), rng.normal(), rng.normal()};
    const auto tr = backdoor::apply_trigger(o, task, 0);
    EXPECT_EQ(std::memcmp(&o[1], &tr[1], 3 * sizeof(double)), 0);
  }
  EXPECT_THROW(backdoor::apply_trigger(obs, task, 1), std::out_of_range);
}

TEST(Monitor, EwaExamples) {
  monitor::MonitorState m(0.99, 0.05, {0, 500}, 1);
  m = monitor::update_btp(m, 100.0);
  EXPECT_NEAR(m.p_bar, 1.0, 1e-12);
  EXPECT_DOUBLE_EQ(monitor::normalize(250, {0, 500}), 0.5);
  EXPECT_DOUBLE_EQ(monitor::normalize(490, {0, 475}), 1.0);
  EXPECT_DOUBLE_EQ(monitor::normalize(-5, {0, 475}), 0.0);
  EXPECT_THROW(monitor::normalize(1, {5, 5}), ConfigError);
}

TEST(Monitor, FixedPointIdentityForConstantStreams) {
  Rng rng(3);
  for (int trial = 0; trial < 50; ++trial) {
    const double beta = rng.uniform(0.5, 0.999);
    const double x = rng.uniform(-500, 500);
    monitor::MonitorState m(beta, 0.05, {-1000, 1000}, 0);
    for (int k = 1; k <= 300; ++k) {
      m = monitor::update_btp(m, x);
      ASSERT_NEAR(std::abs(m.p_bar - x), std::pow(beta, k) * std::abs(x), 1e-9);
    }
  }
}

TEST(Monitor, ZeroSmoothingTracksTheLatestEpisode) {
  // With beta = 0 the estimate is the latest episode.
  monitor::MonitorState a(0.0, 0.05, {0, 10}, 0), b = a;
  for (double x : {3.0, 7.0, 5.0}) a = monitor::update_btp(a, x);
  for (double x : {7.0, 3.0, 5.0}) b = monitor::update_btp(b, x);
  EXPECT_EQ(a.p_bar, b.p_bar);
  EXPECT_DOUBLE_EQ(a.p, 0.5);
}

TEST(Monitor, AffineBoundsRelation) {
  // Shifting returns and both bounds by c changes P only through the
  // zero-initialized estimate.
  monitor::MonitorState a(0.5, 0.05, {0, 100}, 0), b(0.5, 0.05, {50, 150}, 0);
  for (double x : {10.0, 80.0, 40.0, 95.0}) {
    a = monitor::update_btp(a, x);
    b = monitor::update_btp(b, x + 50.0);
  }
  // P_b = P_a - c * beta^k / (upper - lower)
  EXPECT_NEAR(b.p, a.p - 50.0 * std::pow(0.5, 4) / 100.0, 1e-12);
}

TEST(Monitor, HistoryKeepsTheLastTwoUpdates) {
  monitor::MonitorState m(0.0, 0.05, {0, 10}, 1);
  m = monitor::update_btp(m, 2.0);
  m = monitor::update_btp(m, 6.0);
  EXPECT_DOUBLE_EQ(m.history[0][0], 0.6);
  EXPECT_DOUBLE_EQ(m.history[1][0], 0.2);
  EXPECT_EQ(m.episodes, 2);
}

TEST(Monitor, ActionMatching) {
  EXPECT_TRUE(monitor::action_matches(envs::Action::discrete(1), envs::Action::discrete(1), 0.05));
  EXPECT_FALSE(monitor::action_matches(envs::Action::discrete(0), envs::Action::discrete(1), 0.05));
  EXPECT_TRUE(monitor::action_matches(envs::Action::continuous({-0.97}), envs::Action::continuous({-1.0}), 0.05));
  EXPECT_FALSE(monitor::action_matches(envs::Action::continuous({-0.9}), envs::Action::continuous({-1.0}), 0.05));
  // Clamped to the box before comparing.
  EXPECT_TRUE(monitor::action_matches(envs::Action::continuous({-1.7}), envs::Action::continuous({-1.0}), 0.05));
}

TEST(Monitor, AsrProbesUpdateOnlyTheProbedTrigger) {
  const auto spec = envs::pendulum_spec();
  policy::Policy p = policy::init_ppo_policy(spec, 0);
  // Zero weights with a -0.97 output bias: greedy action is 0.03 from the target.
  p.actor.params().setZero();
  p.actor.bias(p.actor.num_layers() - 1)[0] = -0.97;
  const auto task = backdoor::catalog(16);
  monitor::MonitorState m(0.99, 0.05, {-1200, -200}, 1);
  const Eigen::VectorXd before = p.flat_params();
  monitor::ProbeResult probe;
  m = monitor::update_asr(m, p, {1, 0, 0}, task, 0, &probe);
  EXPECT_TRUE(probe.matched);
  EXPECT_NEAR(m.p_dagger[0], 0.01, 1e-15);
  EXPECT_EQ(m.probes, 1);
  EXPECT_EQ(p.flat_params(), before);

  p.actor.bias(p.actor.num_layers() - 1)[0] = -0.90;
  const double prev = m.p_dagger[0];
  m = monitor::update_asr(m, p, {1, 0, 0}, task, 0, &probe);
  EXPECT_FALSE(probe.matched);
  EXPECT_LT(m.p_dagger[0], prev);
}

TEST(Monitor, AsrIsTheMinimumOverTriggers) {
  monitor::MonitorState m(0.99, 0.05, {0, 1}, 3);
  m.p_dagger = {0.4, 0.2, 0.9};
  EXPECT_DOUBLE_EQ(m.asr(), 0.2);
  EXPECT_EQ(monitor::MonitorState(0.99, 0.05, {0, 1}, 0).asr(), 0.0);
}

TEST(Bounds, EstimationAndKnownValues) {
  const std::vector<double> r{10, 50, 30};
  const auto b = monitor::estimate_bounds(r);
  EXPECT_EQ(b.lower, 10);
  EXPECT_EQ(b.upper, 50);
  const std::vector<double> same{4, 4};
  EXPECT_EQ(monitor::estimate_bounds(same).lower, 3.5);
  EXPECT_THROW(monitor::estimate_bounds(std::span<const double>{}), ConfigError);
  const auto cp = monitor::known_bounds("cartpole");
  ASSERT_TRUE(cp.has_value());
  EXPECT_EQ(cp->lower, 0);
  EXPECT_EQ(cp->upper, 475);
}

TEST(Bounds, RandomPendulumRolloutsSitOnTheThousandScale) {
  std::vector<double> returns;
  Rng rng(5);
  for (std::uint64_t s = 0; s < 20; ++s) {
    auto env = envs::make_env("pendulum", s);
    double total = 0;
    while (!env->done()) total += env->step(envs::Action::continuous({rng.uniform(-2, 2)})).reward;
    returns.push_back(total);
  }
  const auto b = monitor::estimate_bounds(returns);
  double mean = 0;
  for (double x : returns) mean += x / returns.size();
  EXPECT_LT(mean, -800);
  EXPECT_GT(mean, -1600);
  EXPECT_LT(b.lower, mean);
}
