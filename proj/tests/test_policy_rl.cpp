#include <gtest/gtest.h>

#include <cmath>

#include "lsai/policy_rl.hpp"

using namespace lsai;

namespace {

Observation some_obs(double v = 0.1) {
  Observation o{};
  for (std::size_t k = 0; k < kObsDim; ++k) o[k] = v * static_cast<double>(k % 5) - 0.2;
  return o;
}

}  // namespace

TEST(Act, ZeroActorNoNoiseIsHalf) {
  MlpModel actor{ParamVector(default_topology(kObsDim, kActDim)), Activation::Sigmoid};
  auto rng = make_rng(1);
  const auto a = act(actor, some_obs(), 0.0, rng);
  EXPECT_EQ(a.heading, 0.5);
  EXPECT_EQ(a.speed_fraction, 0.5);
}

TEST(Act, DeterministicWithoutNoiseAndPerSeedWithNoise) {
  auto rng = make_rng(2);
  const auto actor = make_actor(rng);
  auto r1 = make_rng(5), r2 = make_rng(5), r3 = make_rng(6);
  const auto a = act(actor, some_obs(), 0.0, r1), b = act(actor, some_obs(), 0.0, r3);
  EXPECT_EQ(a.heading, b.heading);
  EXPECT_EQ(a.speed_fraction, b.speed_fraction);
  auto n1 = make_rng(7), n2 = make_rng(7);
  for (int k = 0; k < 20; ++k) {
    const auto x = act(actor, some_obs(), 0.3, n1), y = act(actor, some_obs(), 0.3, n2);
    EXPECT_EQ(x.heading, y.heading);
    EXPECT_EQ(x.speed_fraction, y.speed_fraction);
    EXPECT_GE(x.heading, 0.0);
    EXPECT_LE(x.heading, 1.0);
  }
  (void)r2;
}

TEST(Steer, RoundTripsAndPointsAtRegion) {
  auto o = some_obs();
  o[9] = 0.0;  // bearing pi, i.e. 0.5 turns
  const Action straight = steer({0.5, 0.7}, o);
  EXPECT_NEAR(straight.heading, 0.5, 1e-15);
  EXPECT_EQ(straight.speed_fraction, 0.7);
  auto rng = make_rng(3);
  for (int k = 0; k < 100; ++k) {
    o[9] = uniform(rng, -1, 1);
    const Action p{uniform(rng, 0, 1), uniform(rng, 0, 1)};
    const Action back = unsteer(steer(p, o), o);
    EXPECT_NEAR(std::remainder(back.heading - p.heading, 1.0), 0.0, 1e-12);
  }
}

TEST(CriticTarget, Examples) {
  EXPECT_EQ(critic_target(1.5, true, 100.0, 0.99), 1.5);
  EXPECT_DOUBLE_EQ(critic_target(1.0, false, 2.0, 0.99), 2.98);
  EXPECT_EQ(critic_target(-3.0, false, 7.0, 0.0), -3.0);
}

TEST(Replay, FifoEviction) {
  ReplayBuffer buf(5);
  for (int k = 0; k < 8; ++k) {
    Transition t;
    t.reward = k;
    buf.push(t);
  }
  EXPECT_EQ(buf.size(), 5u);
  for (std::size_t i = 0; i < 5; ++i) EXPECT_EQ(buf.at(i).reward, static_cast<double>(i + 3));
}

TEST(SoftUpdate, TauOneCopiesTauZeroKeeps) {
  auto rng = make_rng(4);
  auto agent = make_agent(rng, 1000);
  agent.actor_target = make_actor(rng);
  agent.critic_target = make_critic(rng);
  for (int k = 0; k < 200; ++k) {
    Transition t;
    t.obs = some_obs(uniform(rng, 0, 0.2));
    t.next_obs = some_obs(uniform(rng, 0, 0.2));
    t.action = {uniform(rng, 0, 1), uniform(rng, 0, 1)};
    t.reward = uniform(rng, -1, 1);
    agent.buffer.push(t);
  }
  DdpgConfig cfg;
  cfg.batch_size = 32;
  cfg.tau = 1.0;
  auto a1 = agent;
  ASSERT_TRUE(ddpg_update(a1, cfg, rng).applied);
  EXPECT_EQ(a1.actor_target, a1.actor);
  EXPECT_EQ(a1.critic_target, a1.critic);
  cfg.tau = 0.0;
  auto a0 = agent;
  ASSERT_TRUE(ddpg_update(a0, cfg, rng).applied);
  EXPECT_EQ(a0.actor_target, agent.actor_target);
  EXPECT_EQ(a0.critic_target, agent.critic_target);
}

TEST(SoftUpdate, ClosedFormOnScalars) {
  const double tau = 0.3;
  ParamVector target({{1, 1}}, {2.0, -1.0});
  std::vector<double> online{0.5, 4.0, -2.0, 1.0, 3.0};
  for (double th : online) soft_update(target, ParamVector({{1, 1}}, {th, th}), tau);
  const std::size_t n = online.size();
  double expect = std::pow(1 - tau, n) * 2.0;
  for (std::size_t k = 1; k <= n; ++k) expect += tau * std::pow(1 - tau, n - k) * online[k - 1];
  EXPECT_NEAR(target.values()[0], expect, 1e-12);
}

TEST(DdpgUpdate, InsufficientBufferIsNoop) {
  auto rng = make_rng(5);
  auto agent = make_agent(rng, 100);
  const auto before = agent.critic;
  DdpgConfig cfg;
  EXPECT_FALSE(ddpg_update(agent, cfg, rng).applied);
  EXPECT_EQ(agent.critic, before);
}

TEST(DdpgUpdate, LinearCriticMatchesHandSgd) {
  // Single-layer nets: Q(s,a) = w . [s; a] + b, one transition, plain SGD.
  auto rng = make_rng(6);
  DdpgAgent<MlpModel> agent{make_mlp({{kObsDim, kActDim}}, Activation::Sigmoid, rng),
                            make_mlp({{kObsDim + kActDim, 1}}, Activation::Identity, rng),
                            {}, {}, ReplayBuffer(10), {}, {}};
  agent.actor_target = make_mlp({{kObsDim, kActDim}}, Activation::Sigmoid, rng);
  agent.critic_target = make_mlp({{kObsDim + kActDim, 1}}, Activation::Identity, rng);
  Transition t;
  t.obs = some_obs(0.1);
  t.next_obs = some_obs(0.3);
  t.action = {0.25, 0.75};
  t.reward = 0.7;
  agent.buffer.push(t);
  DdpgConfig cfg;
  cfg.optimizer = Optimizer::Sgd;
  cfg.critic_lr = 0.05;
  cfg.grad_clip = 1e12;
  cfg.gamma = 0.9;

  auto linear = [](const MlpModel& m, const std::vector<double>& x) {
    double q = m.params.values()[x.size()];
    for (std::size_t k = 0; k < x.size(); ++k) q += m.params.values()[k] * x[k];
    return q;
  };
  const auto mu_next = forward(agent.actor_target, t.next_obs);
  std::vector<double> xn(t.next_obs.begin(), t.next_obs.end());
  xn.insert(xn.end(), mu_next.begin(), mu_next.end());
  const double y = t.reward + cfg.gamma * linear(agent.critic_target, xn);
  std::vector<double> x(t.obs.begin(), t.obs.end());
  x.push_back(t.action.heading);
  x.push_back(t.action.speed_fraction);
  const double err = linear(agent.critic, x) - y;
  std::vector<double> expect = agent.critic.params.values();
  for (std::size_t k = 0; k < x.size(); ++k) expect[k] -= cfg.critic_lr * err * x[k];
  expect[x.size()] -= cfg.critic_lr * err;

  const std::vector<std::size_t> batch{0};
  ddpg_update_on(agent, batch, cfg);
  for (std::size_t k = 0; k < expect.size(); ++k) EXPECT_NEAR(agent.critic.params.values()[k], expect[k], 1e-14);
}

TEST(Reward, Examples) {
  const RewardWeights w{1.0, 0.5, 5.0, 2.0, 0.2};
  EXPECT_NEAR(sensing_reward({10, 2.0, false, 0.3}, w), 8.8, 1e-12);
  EXPECT_DOUBLE_EQ(sensing_reward({0, 1.0, false, 0.0}, w), -0.5);
  EXPECT_DOUBLE_EQ(sensing_reward({3, 1.0, true, 0.1}, w) - sensing_reward({3, 1.0, false, 0.1}, w), -5.0);
}

TEST(Reward, DecomposesIntoFourTerms) {
  auto rng = make_rng(7);
  for (int k = 0; k < 200; ++k) {
    const SensingDelta d{std::floor(uniform(rng, 0, 30)), uniform(rng, 0, 20), uniform_index(rng, 2) == 1,
                         uniform(rng, 0, 1)};
    const RewardWeights w{uniform(rng, 0, 2), uniform(rng, 0, 1), uniform(rng, 0, 10), uniform(rng, 0, 3),
                          uniform(rng, 0, 1)};
    const double expect = w.coverage * d.new_cells - w.energy * d.energy_spent - (d.collision ? w.collision : 0.0) -
                          w.overlap * std::max(0.0, d.max_jaccard - w.jaccard_threshold);
    EXPECT_NEAR(sensing_reward(d, w), expect, 1e-12);
  }
}

TEST(Observation, FixedDimensionFiniteNormalized) {
  WorldConfig c;
  c.n_robots = 6;
  c.seed = 3;
  WorldState w = spawn(c);
  CellMap known(w.coverage.size(), 0);
  auto rng = make_rng(8);
  for (int t = 0; t < 50; ++t) {
    std::vector<Action> a(c.n_robots);
    for (auto& x : a) x = {uniform(rng, 0, 1), uniform(rng, 0, 1)};
    step_in_place(w, a, 1.0);
    absorb_footprint(known, w.robots[0]);
    for (std::size_t i = 0; i < c.n_robots; ++i) {
      const auto o = build_observation(w, i, known);
      EXPECT_EQ(o.size(), 12u);
      for (double v : o) {
        EXPECT_TRUE(std::isfinite(v));
        EXPECT_GE(v, -1.0);
        EXPECT_LE(v, 1.0);
      }
    }
  }
}

TEST(Observation, NeighborsBeyondRangeAreZeroPadded) {
  WorldConfig c;
  c.n_robots = 2;
  c.obstacle_fraction = 0.0;
  WorldState w = spawn(c);
  w.robots[0].position = {10, 10};
  w.robots[1].position = {190, 190};
  CellMap known(w.coverage.size(), 0);
  const auto o = build_observation(w, 0, known, ObservationConfig{4, 60.0});
  for (std::size_t k = 3; k < 9; ++k) EXPECT_EQ(o[k], 0.0);
  w.robots[1].position = {40, 10};
  const auto near = build_observation(w, 0, known, ObservationConfig{4, 60.0});
  EXPECT_DOUBLE_EQ(near[3], 30.0 / 200.0);
  EXPECT_DOUBLE_EQ(near[4], 0.0);
}

TEST(Region, PointsAtUncoveredBlock) {
  WorldConfig c;
  c.arena_size = 40.0;
  c.n_robots = 1;
  c.obstacle_fraction = 0.0;
  WorldState w = spawn(c);
  CellMap known(c.cell_count(), 1);
  // leave only the 4x4 block in the top-right corner uncovered
  for (std::size_t y = 4; y < 8; ++y) {
    for (std::size_t x = 4; x < 8; ++x) known[y * 8 + x] = 0;
  }
  const auto r = nearest_uncovered_region(w, {5, 5}, known);
  ASSERT_TRUE(r.found);
  EXPECT_DOUBLE_EQ(r.centroid.x, 30.0);
  EXPECT_DOUBLE_EQ(r.centroid.y, 30.0);
  std::fill(known.begin(), known.end(), 1);
  EXPECT_FALSE(nearest_uncovered_region(w, {5, 5}, known).found);
}
