#include <gtest/gtest.h>

#include <cmath>

#include "unidoor/attack.hpp"
#include "unidoor/error.hpp"

using namespace unidoor;
using namespace unidoor::attack;

namespace {

trainers::Transition cartpole_transition(int action, double reward) {
  trainers::Transition t;
  t.state = {0.1, 0.2, 0.01, 0.0};
  t.next_state = {0.1, 0.3, 0.01, -0.1};
  t.action = envs::Action::discrete(action);
  t.reward = reward;
  t.env_reward = reward;
  return t;
}

struct AttackRun {
  long steps = 0;
  long poisoned_seen = 0;
  long tampered_seen = 0;
  std::vector<trainers::MetricsRow> rows;
  std::optional<long> lift;
  long engine_poisoned = 0;
  long engine_tampered = 0;
};

AttackRun short_attack(AttackConfig ac, std::vector<int> task_ids, long steps, std::uint64_t seed = 1) {
  auto env = envs::make_env("cartpole", seed);
  policy::Policy p = policy::init_ppo_policy(env->spec(), seed);
  trainers::TrainerConfig tc;
  tc.total_steps = steps;
  tc.ppo.rollout_len = 512;
  tc.ppo.epochs = 2;
  std::vector<backdoor::BackdoorTask> tasks;
  for (int i : task_ids) tasks.push_back(backdoor::catalog(i));
  AttackEngine engine(ac, tasks, p, steps, seed + 10);
  trainers::Trainer trainer(p, *env, tc, seed + 20);
  AttackRun run;
  auto hooks = engine.hooks();
  auto inner = hooks.on_transition;
  hooks.on_transition = [&](trainers::Transition t, long step) {
    t = inner(std::move(t), step);
    run.poisoned_seen += t.poisoned ? 1 : 0;
    run.tampered_seen += t.action_tampered ? 1 : 0;
    return t;
  };
  trainer.set_hooks(hooks);
  trainer.train(steps);
  run.steps = trainer.step();
  run.rows = engine.timeline();
  run.lift = engine.lift_step();
  run.engine_poisoned = engine.poisoned();
  run.engine_tampered = engine.tampered();
  return run;
}

AttackConfig cartpole_attack() {
  AttackConfig ac;
  ac.bounds = {0, 475};
  return ac;
}

}  // namespace

TEST(Freeze, TrajectoryThreshold) {
  FreezeState fs;
  fs = freeze_check(fs, 9, 1.0, 100);
  EXPECT_TRUE(fs.frozen);
  fs = freeze_check(fs, 10, 0.0, 120);
  EXPECT_FALSE(fs.frozen);
  EXPECT_EQ(fs.lift_step, 120);
  fs = freeze_check(fs, 50, 0.0, 500);
  EXPECT_EQ(fs.lift_step, 120);
}

TEST(Freeze, PerformanceThresholdIsALatch) {
  FreezeState fs;
  fs.mode = FreezeMode::HighComplexity;
  fs = freeze_check(fs, 1000, 0.049, 10);
  EXPECT_TRUE(fs.frozen);
  fs = freeze_check(fs, 1000, 0.05, 20);
  EXPECT_FALSE(fs.frozen);
  fs = freeze_check(fs, 1000, 0.0, 30);
  EXPECT_FALSE(fs.frozen);
  EXPECT_EQ(fs.lift_step, 20);
}

TEST(RewardSpaceInit, ConstantPositiveRewards) {
  const std::vector<double> r(50, 1.0);
  const RewardSpace rs = init_reward_space(r, default_step(r));
  EXPECT_EQ(rs.lower, 1.0);
  EXPECT_EQ(rs.reward, 1.0);
  EXPECT_EQ(rs.upper, 2.0);
  EXPECT_TRUE(rs.integer_mode);
  EXPECT_EQ(rs.phase, Phase::Expansion);
}

TEST(RewardSpaceInit, IntegerMidpointIsFloored) {
  const std::vector<double> r{1, 5};
  const RewardSpace rs = init_reward_space(r, 1.0);
  EXPECT_EQ(rs.reward, 3.0);
  const std::vector<double> r2{1, 4};
  EXPECT_EQ(init_reward_space(r2, 1.0).reward, 2.0);
  const std::vector<double> r3{0.5, 1.5};
  const RewardSpace rs3 = init_reward_space(r3, 0.5);
  EXPECT_DOUBLE_EQ(rs3.reward, 1.0);
  EXPECT_FALSE(rs3.integer_mode);
}

TEST(RewardSpaceInit, NegativeRewardsAreMadePositive) {
  const std::vector<double> r(30, -1.0);
  EXPECT_EQ(default_step(r), 1.0);
  const RewardSpace rs = init_reward_space(r, default_step(r));
  EXPECT_EQ(rs.lower, 1.0);
  EXPECT_EQ(rs.reward, 1.0);
  EXPECT_EQ(rs.upper, 2.0);
  const std::vector<double> pend{-16.2, -3.1, -0.4};
  const RewardSpace rp = init_reward_space(pend, default_step(pend));
  EXPECT_GT(rp.lower, 0.0);
  EXPECT_LE(rp.lower, rp.reward);
  EXPECT_LE(rp.reward, rp.upper);
  EXPECT_THROW(init_reward_space(std::span<const double>{}, 1.0), ConfigError);
  EXPECT_THROW(init_reward_space(r, 0.0), ConfigError);
}

TEST(Expectations, RampsAndAsymptotes) {
  ExpectationSchedule s;
  s.lift_step = 0;
  s.total_steps = 1000;
  s.benign_convergence = 750;
  s.backdoor_convergence = 500;
  EXPECT_EQ(expectations(100, s, true).benign, 0.0);
  EXPECT_EQ(expectations(100, s, true).backdoor, 0.0);
  EXPECT_NEAR(expectations(375, s).benign, 0.485, 1e-12);
  EXPECT_NEAR(expectations(750, s).benign, 0.97, 1e-12);
  EXPECT_NEAR(expectations(500, s).backdoor, 0.97, 1e-12);
  EXPECT_NEAR(expectations(990, s).backdoor, 0.97, 1e-12);
  s.backdoor_convergence = 0;
  EXPECT_THROW(expectations(10, s), ConfigError);
}

TEST(Expectations, ScheduleIsPushedPastALateLift) {
  const auto s = ExpectationSchedule::make(900, 1000);
  EXPECT_GT(s.backdoor_convergence, s.lift_step);
  EXPECT_GT(s.benign_convergence, s.backdoor_convergence);
  const auto d = ExpectationSchedule::make(100, 1000);
  EXPECT_EQ(d.backdoor_convergence, 500);
  EXPECT_EQ(d.benign_convergence, 750);
}

TEST(Adapt, ExpansionGrowsRewardAndUpperBound) {
  RewardSpace rs;
  rs.lower = 1, rs.reward = 1, rs.upper = 2, rs.step = 1;
  Signals s;
  s.btp = 0.8, s.btp_prev = 0.8, s.asr = 0.3, s.asr_prev = 0.3;
  s.expect = {0.5, 0.6};
  const RewardSpace out = adapt(rs, s);
  EXPECT_EQ(out.reward, 2.0);
  EXPECT_EQ(out.upper, 3.0);
  EXPECT_EQ(out.lower, 1.0);
  EXPECT_EQ(out.phase, Phase::Expansion);
}

TEST(Adapt, ContractionBisectsTowardsTheLowerSide) {
  RewardSpace rs;
  rs.lower = 1, rs.reward = 3, rs.upper = 5, rs.phase = Phase::Contraction, rs.integer_mode = true;
  Signals s;
  s.btp = 0.4, s.btp_prev = 0.5, s.asr = 0.99, s.asr_prev = 0.99;
  s.expect = {0.9, 0.9};
  const RewardSpace out = adapt(rs, s);
  EXPECT_EQ(out.upper, 3.0);
  EXPECT_EQ(out.reward, 2.0);
  EXPECT_EQ(out.lower, 1.0);
}

TEST(Adapt, ContractionRaisesTheLowerBoundWhenAsrLags) {
  RewardSpace rs;
  rs.lower = 1, rs.reward = 3, rs.upper = 8, rs.phase = Phase::Contraction;
  Signals s;
  s.btp = 0.95, s.btp_prev = 0.9, s.asr = 0.5, s.asr_prev = 0.6;
  s.expect = {0.9, 0.9};
  const RewardSpace out = adapt(rs, s);
  EXPECT_EQ(out.lower, 3.0);
  EXPECT_EQ(out.reward, 6.0);  // ceil(5.5)
  EXPECT_EQ(out.upper, 8.0);
}

TEST(Adapt, StableGapAboveExpectationLeavesTheSpace) {
  RewardSpace rs;
  rs.lower = 1, rs.reward = 2, rs.upper = 3;
  Signals s;
  s.btp = 0.75, s.btp_prev = 0.5, s.asr = 0.625, s.asr_prev = 0.375;
  s.expect = {0.5, 0.5};
  const RewardSpace out = adapt(rs, s);
  EXPECT_EQ(out.reward, 2.0);
  EXPECT_EQ(out.upper, 3.0);
  EXPECT_EQ(out.phase, Phase::Expansion);
  RewardSpace c = rs;
  c.phase = Phase::Contraction;
  const RewardSpace cout = adapt(c, s);
  EXPECT_EQ(cout.reward, 2.0);
  EXPECT_EQ(cout.lower, 1.0);
  EXPECT_EQ(cout.upper, 3.0);
}

TEST(Adapt, PhaseSwitchAfterTheConvergenceWindow) {
  RewardSpace rs;
  rs.lower = 1, rs.reward = 1, rs.upper = 2;
  Signals s;
  s.btp = s.btp_prev = 0.99;
  s.asr = s.asr_prev = 0.98;
  s.expect = {0.1, 0.1};
  rs = adapt(rs, s);
  rs = adapt(rs, s);
  EXPECT_EQ(rs.phase, Phase::Expansion);
  rs = adapt(rs, s);
  EXPECT_EQ(rs.phase, Phase::Contraction);
}

TEST(AdaptProperty, RandomSequencesKeepTheInvariants) {
  Rng rng(2024);
  for (int seq = 0; seq < 10000; ++seq) {
    std::vector<double> r_if;
    const int n = 1 + static_cast<int>(rng.below(5));
    for (int i = 0; i < n; ++i) r_if.push_back(static_cast<double>(static_cast<long>(rng.below(9))) - 2.0);
    RewardSpace rs = init_reward_space(r_if, default_step(r_if), 1 + static_cast<int>(rng.below(3)));
    ASSERT_TRUE(rs.integer_mode);
    double btp_prev = rng.uniform(), asr_prev = rng.uniform();
    std::optional<double> entry_width;
    int changes = 0;
    for (int k = 0; k < 60; ++k) {
      Signals s;
      s.btp = rng.uniform();
      s.asr = rng.uniform() < 0.3 ? 0.99 : rng.uniform();
      s.btp_prev = btp_prev;
      s.asr_prev = asr_prev;
      s.expect = {rng.uniform(), rng.uniform()};
      const RewardSpace before = rs;
      rs = adapt(rs, s);
      ASSERT_LE(rs.lower, rs.reward);
      ASSERT_LE(rs.reward, rs.upper);
      ASSERT_GE(rs.lower, 1.0);
      if (before.phase == Phase::Contraction) {
        ASSERT_EQ(rs.phase, Phase::Contraction);
        ASSERT_GE(rs.lower, before.lower);
        ASSERT_LE(rs.upper, before.upper);
        ASSERT_TRUE(rs.integer_mode);
        if (!entry_width) entry_width = before.upper - before.lower;
        if (rs.lower != before.lower || rs.upper != before.upper || rs.reward != before.reward) ++changes;
      } else {
        ASSERT_EQ(rs.lower, before.lower);
        ASSERT_GE(rs.upper, before.upper);
        ASSERT_GE(rs.reward, before.reward);
      }
      btp_prev = s.btp;
      asr_prev = s.asr;
    }
    if (entry_width) {
      const int bound = static_cast<int>(std::ceil(std::log2(std::max(*entry_width, 1.0)))) + 2;
      ASSERT_LE(changes, bound) << "sequence " << seq << " width " << *entry_width;
    }
  }
}

TEST(Poison, DiscreteRewardSign) {
  const auto task = backdoor::catalog(0);
  PoisonConfig cfg;
  Rng rng(1);
  const auto t1 = poison_transition(cartpole_transition(0, 1.0), task, 0, cfg, 3.0, true, rng);
  EXPECT_EQ(t1.action.index, 1);
  EXPECT_EQ(t1.reward, 3.0);
  EXPECT_EQ(t1.state[0], -4.8);
  EXPECT_TRUE(t1.poisoned);
  EXPECT_TRUE(t1.action_tampered);
  EXPECT_EQ(t1.env_reward, 1.0);
  EXPECT_EQ(t1.next_state, cartpole_transition(0, 1.0).next_state);
  const auto t2 = poison_transition(cartpole_transition(0, 1.0), task, 0, cfg, 3.0, false, rng);
  EXPECT_EQ(t2.action.index, 0);
  EXPECT_EQ(t2.reward, -3.0);
  EXPECT_FALSE(t2.action_tampered);
}

TEST(Poison, ContinuousTamperStaysInsideTheMatchBall) {
  const auto task = backdoor::catalog(16);
  PoisonConfig cfg;
  Rng rng(7);
  trainers::Transition t;
  t.state = {1, 0, 0.5};
  t.next_state = t.state;
  t.action = envs::Action::continuous({0.4});
  for (int i = 0; i < 10000; ++i) {
    const auto p = poison_transition(t, task, 0, cfg, 2.0, true, rng);
    ASSERT_LE(std::abs(p.action.value[0] + 1.0), cfg.noise_radius);
    ASSERT_GE(p.action.value[0], -1.0);
    ASSERT_EQ(p.reward, 2.0);
    ASSERT_EQ(p.state[2], 8.0);
  }
}

TEST(Baselines, RewardRules) {
  const auto tr = cartpole_transition(1, -1.0);
  EXPECT_EQ(baseline_hack(AttackStrategy::trojdrl(), tr, true), 1.0);
  EXPECT_EQ(baseline_hack(AttackStrategy::trojdrl(), tr, false), -1.0);
  EXPECT_EQ(baseline_hack(AttackStrategy::tw(), tr, true), 9.0);
  EXPECT_EQ(baseline_hack(AttackStrategy::tw(), tr, false), -1.0);
  EXPECT_EQ(baseline_hack(AttackStrategy::idt(), tr, false), -1.0);
  EXPECT_EQ(baseline_hack(AttackStrategy::idt(), tr, true), 1.0);
  EXPECT_EQ(baseline_hack(AttackStrategy::idt(), cartpole_transition(1, 1.0), true), 1.0);
  EXPECT_EQ(baseline_hack(AttackStrategy::badrl(), tr, true), 1.0);
  EXPECT_EQ(baseline_hack(AttackStrategy::badrl(), tr, false), -1.0);
  EXPECT_EQ(baseline_hack(AttackStrategy::fixed(4), tr, false), -4.0);
  EXPECT_EQ(baseline_hack(AttackStrategy::fixed(4), tr, true), 4.0);
  EXPECT_THROW(baseline_hack(AttackStrategy::unidoor(), tr, true), ConfigError);
}

TEST(Baselines, StrategyParsing) {
  EXPECT_EQ(parse_strategy("UniDoor").kind, StrategyKind::Unidoor);
  EXPECT_EQ(parse_strategy("fixed:8").value, 8.0);
  EXPECT_EQ(parse_strategy("badrl:0.5").value, 0.5);
  EXPECT_EQ(parse_strategy("tw").value, 10.0);
  EXPECT_THROW(parse_strategy("fixed"), ConfigError);
  EXPECT_THROW(parse_strategy("fixed:-1"), ConfigError);
  EXPECT_THROW(parse_strategy("idt:3"), ConfigError);
  EXPECT_THROW(parse_strategy("netflix"), ConfigError);
}

TEST(SelectTask, RoundRobin) {
  const std::vector<backdoor::BackdoorTask> one{backdoor::catalog(0)};
  for (long i = 0; i < 5; ++i) EXPECT_EQ(select_task(i, one).trigger, 0);
  const std::vector<backdoor::BackdoorTask> two{backdoor::catalog(21)};
  EXPECT_EQ(select_task(0, two).trigger, 0);
  EXPECT_EQ(select_task(1, two).trigger, 1);
  const std::vector<backdoor::BackdoorTask> four{backdoor::catalog(25)};
  std::vector<int> counts(4, 0);
  for (long i = 0; i < 8; ++i) ++counts[static_cast<std::size_t>(select_task(i, four).trigger)];
  EXPECT_EQ(counts, (std::vector<int>{2, 2, 2, 2}));
  const std::vector<backdoor::BackdoorTask> mixed{backdoor::catalog(0), backdoor::catalog(21)};
  EXPECT_EQ(select_task(1, mixed).task, 1);
  EXPECT_EQ(select_task(2, mixed).trigger, 1);
  EXPECT_EQ(select_task(3, mixed).task, 0);
}

TEST(Engine, PoisonCountFollowsTheInterval) {
  const long T = 6000;
  const AttackRun r = short_attack(cartpole_attack(), {0}, T);
  ASSERT_TRUE(r.lift.has_value());
  const long expected = (T - *r.lift) / 32;
  EXPECT_LE(std::abs(r.engine_poisoned - expected), 1);
  EXPECT_EQ(r.poisoned_seen, r.engine_poisoned);
  EXPECT_LE(std::abs(r.engine_tampered - r.engine_poisoned / 2), 1);
  EXPECT_EQ(r.tampered_seen, r.engine_tampered);
}

TEST(Engine, TamperingIsCountedPerTrigger) {
  const AttackRun r = short_attack(cartpole_attack(), {25}, 6000);
  EXPECT_GT(r.engine_poisoned, 100);
  EXPECT_LE(std::abs(r.engine_tampered - r.engine_poisoned / 2), 4);
}

TEST(Engine, AblationsShapeTheTimeline) {
  AttackConfig fixed = cartpole_attack();
  fixed.ablations.no_adaptive = true;
  fixed.exploration_interval = 256;
  const AttackRun r = short_attack(fixed, {0}, 6000);
  std::optional<double> first;
  for (const auto& row : r.rows) {
    if (!row.r_dagger) continue;
    if (!first) first = row.r_dagger;
    EXPECT_EQ(*row.r_dagger, *first);
  }
  EXPECT_TRUE(first.has_value());

  AttackConfig no_tamper = cartpole_attack();
  no_tamper.ablations.no_action_tamper = true;
  EXPECT_EQ(short_attack(no_tamper, {0}, 3000).engine_tampered, 0);

  AttackConfig no_freeze = cartpole_attack();
  no_freeze.ablations.no_freeze = true;
  const AttackRun nf = short_attack(no_freeze, {0}, 3000);
  EXPECT_EQ(nf.lift, 0);
  EXPECT_LE(std::abs(nf.engine_poisoned - 3000 / 32), 1);
}

TEST(Engine, MonitoringOnlyLeavesTransitionsAlone) {
  AttackConfig ac = cartpole_attack();
  ac.inject = false;
  const AttackRun r = short_attack(ac, {0}, 3000);
  EXPECT_EQ(r.poisoned_seen, 0);
  EXPECT_EQ(r.engine_poisoned, 0);
  ASSERT_FALSE(r.rows.empty());
  EXPECT_EQ(r.rows.back().phase, "benign");
}

TEST(Engine, OuterLoopEditsTheReplayBuffer) {
  auto env = envs::make_env("pendulum", 2);
  policy::Policy p = policy::init_ddpg_policy(env->spec(), 2);
  trainers::TrainerConfig tc;
  tc.algorithm = trainers::Algorithm::DDPG;
  tc.total_steps = 3000;
  tc.ddpg.warmup_steps = 2500;
  AttackConfig ac;
  ac.bounds = {-1200, -200};
  ac.outer_loop = true;
  ac.exploration_interval = 1000;
  AttackEngine engine(ac, {backdoor::catalog(16)}, p, tc.total_steps, 3);
  trainers::Trainer trainer(p, *env, tc, 4);
  trainer.set_hooks(engine.hooks());
  trainer.set_buffer_hook(engine.buffer_hook());
  trainer.train(tc.total_steps);
  ASSERT_TRUE(engine.lift_step().has_value());
  const auto* buf = trainer.buffer();
  long flagged = 0;
  for (std::size_t i = 0; i < buf->size(); ++i) {
    if (!buf->at(i).poisoned) continue;
    ++flagged;
    EXPECT_EQ(buf->at(i).state[2], 8.0);
    EXPECT_GE(buf->insertion_index(i), 0);
  }
  EXPECT_EQ(flagged, engine.poisoned());
  EXPECT_GT(flagged, 0);
  ASSERT_TRUE(engine.space().has_value());
  EXPECT_EQ(engine.space()->phase, Phase::Contraction);
}

TEST(Engine, RejectsMismatchedTasks) {
  const policy::Policy p = policy::init_ppo_policy(envs::cartpole_spec(), 0);
  EXPECT_THROW(AttackEngine(cartpole_attack(), {}, p, 100, 0), ConfigError);
  EXPECT_THROW(AttackEngine(cartpole_attack(), {backdoor::catalog(16)}, p, 100, 0), ConfigError);
}
