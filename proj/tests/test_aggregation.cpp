#include <gtest/gtest.h>

#include <cmath>

#include "lsai/aggregation.hpp"

using namespace lsai;

namespace {

ParamVector vec(std::vector<double> v) {
  const std::size_t n = v.size();
  return ParamVector({LayerShape{n, 1}}, [&] {
    v.push_back(0.0);  // bias
    return v;
  }());
}

ParamVector scalar(double x) { return ParamVector({LayerShape{1, 1}}, {x, 0.0}); }

}  // namespace

TEST(AttentionScore, ParallelOrthogonalAndByHand) {
  const auto g = vec({0.0, 0.0});
  EXPECT_DOUBLE_EQ(attention_score(vec({1, 0}), g, vec({2, 0})), 1.0);
  EXPECT_DOUBLE_EQ(attention_score(vec({1, 0}), g, vec({0, 1})), 0.0);
  EXPECT_NEAR(attention_score(vec({3, 4}), g, vec({4, 3})), 24.0 / 25.0, 1e-15);
}

TEST(AttentionScore, TinyNormGivesZero) {
  EXPECT_EQ(attention_score(vec({1, 1}), vec({1, 1}), vec({1, 0})), 0.0);
  EXPECT_EQ(attention_score(vec({1, 0}), vec({0, 0}), vec({1e-13, 0})), 0.0);
}

TEST(AttentionScore, RejectsShapeMismatch) {
  EXPECT_THROW(attention_score(vec({1, 0}), vec({0, 0, 0}), vec({1, 0})), std::invalid_argument);
}

TEST(AttentionWeights, EqualScoresUniform) {
  std::vector<AttentionScore> s{{0, 0.3}, {1, 0.3}, {2, 0.3}, {3, 0.3}};
  for (double w : attention_weights(s, 0.5).weights) EXPECT_DOUBLE_EQ(w, 0.25);
}

TEST(AttentionWeights, SoftmaxByHand) {
  std::vector<AttentionScore> s{{0, 1.0}, {1, 0.0}};
  const auto w = attention_weights(s, 1.0);
  EXPECT_NEAR(w.weights[0], 0.7311, 1e-4);
  EXPECT_NEAR(w.weights[1], 0.2689, 1e-4);
}

TEST(AttentionWeights, RejectsEmptyAndBadTemperature) {
  std::vector<AttentionScore> none;
  EXPECT_THROW(attention_weights(none, 1.0), std::invalid_argument);
  std::vector<AttentionScore> s{{0, 1.0}};
  EXPECT_THROW(attention_weights(s, 0.0), std::invalid_argument);
  EXPECT_THROW(attention_weights(s, -1.0), std::invalid_argument);
}

TEST(AttentionWeights, PropertiesOnRandomScores) {
  auto rng = make_rng(11);
  for (int t = 0; t < 500; ++t) {
    const std::size_t n = 2 + uniform_index(rng, 10);
    std::vector<AttentionScore> s(n);
    for (std::size_t i = 0; i < n; ++i) s[i] = {i, uniform(rng, -1, 1)};
    const double temp = uniform(rng, 0.05, 3.0);
    const auto w = attention_weights(s, temp);
    double total = 0;
    for (double x : w.weights) {
      EXPECT_GE(x, 0.0);
      total += x;
    }
    EXPECT_NEAR(total, 1.0, 1e-9);
    // monotone in score
    for (std::size_t a = 0; a < n; ++a) {
      for (std::size_t b = 0; b < n; ++b) {
        if (s[a].score > s[b].score) EXPECT_GT(w.weights[a], w.weights[b]);
      }
    }
    // permutation only permutes
    auto rev = s;
    std::reverse(rev.begin(), rev.end());
    const auto wr = attention_weights(rev, temp);
    for (std::size_t i = 0; i < n; ++i) EXPECT_NEAR(wr.weight_of(i), w.weight_of(i), 1e-15);
  }
}

TEST(Aggregate, SingleModelIdentity) {
  const std::vector<ParamVector> m{vec({1.5, -2.25, 3})};
  const std::vector<double> w{1.0};
  EXPECT_EQ(aggregate(m, w), m[0]);
}

TEST(Aggregate, HalfHalfIsMean) {
  const std::vector<ParamVector> m{vec({1, 2}), vec({3, 6})};
  const std::vector<double> w{0.5, 0.5};
  EXPECT_EQ(aggregate(m, w).values(), (std::vector<double>{2, 4, 0}));
  EXPECT_EQ(aggregate(m, w), fedavg(m));
}

TEST(Aggregate, WeightedScalarByHand) {
  const std::vector<ParamVector> m{scalar(2), scalar(4), scalar(6)};
  const std::vector<double> w{0.2, 0.3, 0.5};
  EXPECT_NEAR(aggregate(m, w).values()[0], 4.6, 1e-12);
}

TEST(Aggregate, RejectsBadInputs) {
  const std::vector<ParamVector> none;
  const std::vector<double> nw;
  EXPECT_THROW(aggregate(none, nw), std::invalid_argument);
  const std::vector<ParamVector> mixed{vec({1}), vec({1, 2})};
  const std::vector<double> half{0.5, 0.5};
  EXPECT_THROW(aggregate(mixed, half), std::invalid_argument);
  const std::vector<ParamVector> two{vec({1}), vec({2})};
  const std::vector<double> off{0.5, 0.6};
  EXPECT_THROW(aggregate(two, off), std::invalid_argument);
}

TEST(Aggregate, ConvexHullAndFedAvgEquivalence) {
  auto rng = make_rng(12);
  for (int t = 0; t < 200; ++t) {
    const std::size_t n = 1 + uniform_index(rng, 6);
    std::vector<ParamVector> m;
    std::vector<AttentionScore> s, eq;
    for (std::size_t i = 0; i < n; ++i) {
      m.push_back(init_uniform({{4, 3}}, rng));
      s.push_back({i, uniform(rng, -1, 1)});
      eq.push_back({i, 0.1});
    }
    const auto out = aggregate(m, attention_weights(s, 0.5).weights);
    for (std::size_t k = 0; k < out.size(); ++k) {
      double lo = m[0].values()[k], hi = lo;
      for (const auto& p : m) {
        lo = std::min(lo, p.values()[k]);
        hi = std::max(hi, p.values()[k]);
      }
      EXPECT_GE(out.values()[k], lo);
      EXPECT_LE(out.values()[k], hi);
    }
    EXPECT_EQ(aggregate(m, attention_weights(eq, 0.5).weights).values(), fedavg(m).values());
  }
}

TEST(AttentionAggregate, ZeroUpdateDegeneracy) {
  auto rng = make_rng(13);
  const auto g = init_uniform({{3, 2}}, rng);
  const std::vector<ParamVector> locals{g, g, g};
  const std::vector<RobotId> ids{4, 5, 6};
  const auto res = attention_aggregate(ids, locals, g, 0.5);
  for (const auto& s : res.scores) EXPECT_EQ(s.score, 0.0);
  EXPECT_EQ(res.lai, g);
}

TEST(AttentionAggregate, SingleUploaderCopied) {
  auto rng = make_rng(14);
  const auto g = init_uniform({{3, 2}}, rng);
  const auto a = init_uniform({{3, 2}}, rng);
  const std::vector<ParamVector> locals{a};
  const std::vector<RobotId> ids{2};
  const auto res = attention_aggregate(ids, locals, g, 0.5);
  EXPECT_EQ(res.weights.weights, std::vector<double>{1.0});
  EXPECT_EQ(res.lai, a);
}

TEST(History, EmaWithDecay) {
  EXPECT_DOUBLE_EQ(update_history(0.0, 1.0, 0.9), 0.1);
  EXPECT_NEAR(update_history(0.5, -1.0, 0.9), 0.35, 1e-15);
}

TEST(SelectParticipants, AllInRadius) {
  auto rng = make_rng(15);
  std::vector<EligibilityRecord> r{{0, -0.9, {1, 1}}, {1, 0.2, {5, 5}}, {2, 0.0, {9, 0}}};
  EXPECT_EQ(select_participants(r, {0, 0}, 100.0, -1.0, rng), (std::vector<RobotId>{0, 1, 2}));
}

TEST(SelectParticipants, FarRobotExcluded) {
  auto rng = make_rng(16);
  std::vector<EligibilityRecord> r{{0, 0, {1, 0}}, {1, 0, {0, 1}}, {2, 0, {20, 0}}};
  EXPECT_EQ(select_participants(r, {0, 0}, 10.0, -1.0, rng), (std::vector<RobotId>{0, 1}));
}

TEST(SelectParticipants, HistoryThresholdByHand) {
  auto rng = make_rng(17);
  std::vector<EligibilityRecord> r{{0, 0.9, {1, 0}}, {1, 0.5, {2, 0}}, {2, 0.1, {3, 0}},
                                   {3, -0.2, {4, 0}}, {4, 0.8, {5, 0}}};
  EXPECT_EQ(select_participants(r, {0, 0}, 50.0, 0.4, rng), (std::vector<RobotId>{0, 1, 4}));
}

TEST(SelectParticipants, RelaxesToNearestTwo) {
  auto rng = make_rng(18);
  std::vector<EligibilityRecord> r{{0, -0.9, {30, 0}}, {1, 0.9, {1, 0}}, {2, -0.9, {2, 0}}};
  // only robot 1 passes the history filter and it alone is in radius 5
  EXPECT_EQ(select_participants(r, {0, 0}, 5.0, 0.0, rng), (std::vector<RobotId>{1, 2}));
  std::vector<EligibilityRecord> none;
  EXPECT_TRUE(select_participants(none, {0, 0}, 5.0, 0.0, rng).empty());
}
