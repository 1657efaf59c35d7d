#include <gtest/gtest.h>

#include <cmath>

#include "lsai/fusion.hpp"
#include "lsai/splitting.hpp"

using namespace lsai;

namespace {

SubModel pruned(const MlpModel& m, double s) {
  SubModel sub{0, m, build_mask(m.params, s)};
  sub.model.params = apply_mask(sub.model.params, sub.mask);
  return sub;
}

std::vector<double> random_input(std::size_t n, Rng& rng) {
  std::vector<double> x(n);
  for (auto& v : x) v = uniform(rng, -1, 1);
  return x;
}

FusionSnapshot open_snapshot(std::size_t robots) {
  WorldConfig c;
  c.n_robots = robots;
  c.obstacle_fraction = 0.0;
  c.seed = 11;
  FusionSnapshot s{spawn(c), 0, CellMap(c.cell_count(), 0), {}, 1.0};
  return s;
}

double loss(const FusedModel& f, const Dataset& d) {
  double total = 0;
  for (const auto& s : d) {
    const auto y = fused_forward(f, std::span<const double>(s.input));
    for (std::size_t k = 0; k < y.size(); ++k) total += 0.5 * (y[k] - s.target[k]) * (y[k] - s.target[k]);
  }
  return total;
}

}  // namespace

TEST(Branches, OnePerSharedHiddenLayer) {
  auto rng = make_rng(1);
  const auto sai = make_actor(rng);
  const auto sub = pruned(make_actor(rng), 0.5);
  const auto br = enumerate_branches(sai, sub);
  ASSERT_EQ(br.size(), 3u);
  for (std::size_t k = 0; k < br.size(); ++k) {
    EXPECT_EQ(br[k].r, k + 1);
    for (double v : br[k].transform.values()) EXPECT_EQ(v, 0.0);
  }
  const auto shallow = make_mlp(mlp_topology(kObsDim, std::vector<std::size_t>{16}, kActDim), Activation::Sigmoid, rng);
  EXPECT_EQ(enumerate_branches(shallow, sub).size(), 1u);
  const auto other = make_mlp(default_topology(5, 2), Activation::Sigmoid, rng);
  EXPECT_THROW(enumerate_branches(other, sub), std::invalid_argument);
}

TEST(Fused, ZeroBranchIsIdentityOnPolicy) {
  auto rng = make_rng(2);
  const auto sai = make_actor(rng);
  const auto sub = pruned(make_actor(rng), 0.5);
  for (const auto& b : enumerate_branches(sai, sub)) {
    const FusedModel f{sai, sub, b};
    for (int t = 0; t < 100; ++t) {
      const auto x = random_input(kObsDim, rng);
      EXPECT_EQ(fused_forward(f, std::span<const double>(x)), forward(sai, x));
    }
  }
}

TEST(TrainBranch, ZeroStepsUnchangedAndBranchGradientMatchesFiniteDifference) {
  auto rng = make_rng(3);
  const auto sai = make_mlp(mlp_topology(3, std::vector<std::size_t>{4, 4}, 2), Activation::Sigmoid, rng);
  const auto sub = pruned(make_mlp(mlp_topology(3, std::vector<std::size_t>{5, 4}, 2), Activation::Sigmoid, rng), 0.3);
  const auto teacher = make_mlp(mlp_topology(3, std::vector<std::size_t>{4, 4}, 2), Activation::Sigmoid, rng);
  std::vector<std::vector<double>> xs;
  for (int k = 0; k < 8; ++k) xs.push_back(random_input(3, rng));
  const auto data = distillation_set(teacher, xs);
  for (auto b : enumerate_branches(sai, sub)) {
    for (auto& v : b.transform.values()) v = uniform(rng, -0.5, 0.5);
    const FusedModel f{sai, sub, b};
    EXPECT_EQ(train_branch(b, f, data, 0, {}).transform, b.transform);
    Batch x(3, data.size()), y(2, data.size());
    for (std::size_t s = 0; s < data.size(); ++s) {
      x.set_sample(s, data[s].input);
      y.set_sample(s, data[s].target);
    }
    const auto g = branch_gradient(f, x, y);
    for (std::size_t k = 0; k < b.transform.size(); ++k) {
      const double h = 1e-6;
      auto plus = f, minus = f;
      plus.branch.transform.values()[k] += h;
      minus.branch.transform.values()[k] -= h;
      const double fd = (loss(plus, data) - loss(minus, data)) / (2 * h);
      EXPECT_NEAR(g.values()[k], fd, 1e-7 * std::max(1.0, std::abs(fd))) << "r=" << b.r << " k=" << k;
    }
  }
}

TEST(TrainBranch, ReducesLossAndFreezesBaseAndSub) {
  auto rng = make_rng(4);
  const auto sai = make_actor(rng);
  const auto sub = pruned(make_actor(rng), 0.5);
  const auto teacher = make_actor(rng);
  std::vector<std::vector<double>> xs;
  for (int k = 0; k < 64; ++k) xs.push_back(random_input(kObsDim, rng));
  const auto data = distillation_set(teacher, xs);
  const auto b0 = enumerate_branches(sai, sub)[1];
  FusedModel f{sai, sub, b0};
  const double before = loss(f, data);
  f.branch = train_branch(b0, f, data, 50, SgdConfig{0.05, 32});
  EXPECT_LT(loss(f, data), before);
  EXPECT_EQ(f.base.params, sai.params);
  EXPECT_EQ(f.sub.model.params, sub.model.params);
  // policy gradients of the fused actor touch only the base
  Batch obs(kObsDim, 2), dl(kActDim, 2);
  for (std::size_t s = 0; s < 2; ++s) obs.set_sample(s, xs[s]);
  std::fill(dl.data.begin(), dl.data.end(), 1.0);
  EXPECT_EQ(policy_gradient(f, obs, dl).size(), sai.params.size());
}

TEST(Evaluate, RestingActorCostsOnlyIdleEnergy) {
  auto rng = make_rng(5);
  auto sai = make_actor(rng);
  const auto last = sai.params.layer_count() - 1;
  sai.params.biases(last)[1] = -1000.0;  // speed output pinned at 0
  const auto sub = pruned(make_actor(rng), 0.5);
  const FusedModel f{sai, sub, enumerate_branches(sai, sub)[0]};
  const auto snap = open_snapshot(3);
  const auto obj = evaluate_branch(f, snap, 10, 2.0, 0.0, 7);
  EXPECT_DOUBLE_EQ(obj.energy_used, snap.world.config.e_idle * snap.dt * 10);
  EXPECT_DOUBLE_EQ(obj.value, 2.0 * snap.world.config.e_idle * snap.dt * 10);
}

TEST(Evaluate, AlphaZeroSingleRobotIsZeroAndDeterministic) {
  auto rng = make_rng(6);
  const auto sai = make_actor(rng);
  const auto sub = pruned(make_actor(rng), 0.5);
  const FusedModel f{sai, sub, enumerate_branches(sai, sub)[2]};
  const auto snap = open_snapshot(1);
  EXPECT_EQ(evaluate_branch(f, snap, 20, 0.0, 10.0, 1).value, 0.0);
  const auto multi = open_snapshot(4);
  const auto a = evaluate_branch(f, multi, 20, 1.0, 10.0, 3, 0.2);
  const auto b = evaluate_branch(f, multi, 20, 1.0, 10.0, 3, 0.2);
  EXPECT_EQ(a.value, b.value);
  EXPECT_EQ(a.collision_count, b.collision_count);
}

TEST(Argmin, FirstMinimumWins) {
  const std::vector<BranchObjective> a{{0, 0, 3.0}, {0, 0, 1.0}, {0, 0, 2.0}};
  EXPECT_EQ(argmin_objective(a), 1u);
  const std::vector<BranchObjective> tie{{0, 0, 2.0}, {0, 0, 2.0}, {0, 0, 5.0}};
  EXPECT_EQ(argmin_objective(tie), 0u);
  EXPECT_THROW(argmin_objective(std::vector<BranchObjective>{}), std::invalid_argument);
}

TEST(FuseUpdate, SelectsArgminOfReportedObjectives) {
  auto rng = make_rng(7);
  const auto sai = make_actor(rng);
  const auto sub = pruned(make_actor(rng), 0.5);
  std::vector<std::vector<double>> xs;
  for (int k = 0; k < 16; ++k) xs.push_back(random_input(kObsDim, rng));
  const auto data = distillation_set(sub.model, xs);
  FusionConfig cfg;
  cfg.branch_train_steps = 5;
  cfg.rollout_steps = 10;
  const auto res = fuse_update(sai, sub, open_snapshot(3), data, cfg, 9);
  ASSERT_EQ(res.objectives.size(), 3u);
  EXPECT_EQ(res.selected, argmin_objective(res.objectives));
  EXPECT_EQ(res.fused.branch.transform, res.branches[res.selected].transform);
}

TEST(Fallback, PredicateAndBudget) {
  EXPECT_TRUE(fallback_triggered(17, 16, 0.0, 5.0));
  EXPECT_FALSE(fallback_triggered(16, 16, 5.0, 5.0));
  EXPECT_TRUE(fallback_triggered(1, 16, 5.1, 5.0));
  FusionConfig cfg;
  EXPECT_EQ(cfg.fallback_iterations(200), 20u);
  EXPECT_EQ(cfg.fallback_iterations(3), 1u);
}

TEST(Fallback, RetrainProducesValidPolicy) {
  auto rng = make_rng(8);
  auto agent = make_agent(rng, 2000);
  TrainingSetup setup;
  setup.world.arena_size = 50.0;
  setup.world.n_robots = 4;  // forced to one robot inside
  setup.ddpg.steps_per_episode = 20;
  setup.ddpg.batch_size = 8;
  setup.ddpg.warmup_steps = 0;
  const auto before = agent.actor.params;
  const auto m = fallback_retrain(agent, setup, 2, rng);
  EXPECT_TRUE(m.params.same_shape(before));
  for (double v : m.params.values()) EXPECT_TRUE(std::isfinite(v));
  EXPECT_NE(m.params, before);
  EXPECT_THROW(fallback_retrain(agent, setup, 0, rng), std::invalid_argument);
}

TEST(BranchWire, RoundTrip) {
  auto rng = make_rng(9);
  auto b = enumerate_branches(make_actor(rng), pruned(make_actor(rng), 0.5))[1];
  for (auto& v : b.transform.values()) v = uniform(rng, -1, 1);
  const auto bytes = serialize_branch(b);
  EXPECT_EQ(bytes.size(), branch_wire_size(b));
  const auto back = deserialize_branch(bytes);
  EXPECT_EQ(back.r, b.r);
  EXPECT_EQ(back.transform, b.transform);
}
