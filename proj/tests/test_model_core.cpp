#include <gtest/gtest.h>

#include <cmath>

#include "lsai/model_core.hpp"
#include "lsai/rng.hpp"

using namespace lsai;

namespace {

MlpModel linear(std::size_t in, std::size_t out, std::vector<double> values,
                Activation act = Activation::Identity) {
  return {ParamVector({LayerShape{in, out}}, std::move(values)), act};
}

}  // namespace

TEST(Forward, ZeroParamsSigmoidOutputIsHalf) {
  MlpModel m{ParamVector(default_topology(5, 3)), Activation::Sigmoid};
  for (double v : forward(m, std::vector<double>{1.0, -2.0, 3.0, 0.5, 9.0})) EXPECT_EQ(v, 0.5);
}

TEST(Forward, SigmoidChainByHand) {
  // 1 -> 1 (sigmoid) -> 1 (identity), w=1 b=0 on both layers, input 0:
  // hidden = sigmoid(0) = 0.5, output = 1 * 0.5 + 0.
  MlpModel m{ParamVector({{1, 1}, {1, 1}}, {1.0, 0.0, 1.0, 0.0}), Activation::Identity};
  EXPECT_DOUBLE_EQ(forward(m, std::vector<double>{0.0})[0], 0.5);
}

TEST(Forward, DotProductByHand) {
  EXPECT_DOUBLE_EQ(forward(linear(2, 1, {3.0, 4.0, 0.0}), std::vector<double>{1.0, 1.0})[0], 7.0);
}

TEST(Forward, RejectsWrongInputLength) {
  EXPECT_THROW(forward(linear(2, 1, {3.0, 4.0, 0.0}), std::vector<double>{1.0}), std::invalid_argument);
}

TEST(Forward, DeterministicAndSigmoidBounded) {
  auto rng = make_rng(3);
  const auto m = make_mlp(default_topology(12, 2), Activation::Sigmoid, rng);
  const std::vector<double> x{1, 2, 3, 4, 5, 6, -7, 8, 9, 10, 11, 50};
  const auto a = forward(m, x), b = forward(m, x);
  EXPECT_EQ(a, b);
  for (double v : a) {
    EXPECT_GT(v, 0.0);
    EXPECT_LT(v, 1.0);
  }
}

TEST(Forward, BatchedEqualsSingleBitExact) {
  auto rng = make_rng(4);
  const auto m = make_mlp(default_topology(12, 2), Activation::Sigmoid, rng);
  const std::size_t n = 37;
  Batch x(12, n);
  std::vector<std::vector<double>> rows;
  for (std::size_t b = 0; b < n; ++b) {
    std::vector<double> r(12);
    for (auto& v : r) v = uniform(rng, -1, 1);
    x.set_sample(b, r);
    rows.push_back(r);
  }
  const Batch y = forward_batch(m, x);
  for (std::size_t b = 0; b < n; ++b) {
    const auto single = forward(m, rows[b]);
    for (std::size_t o = 0; o < 2; ++o) EXPECT_EQ(y.data[o * n + b], single[o]);
  }
}

TEST(Backprop, ZeroResidualGivesZeroGradient) {
  auto rng = make_rng(5);
  const auto m = make_mlp(default_topology(4, 2), Activation::Sigmoid, rng);
  const std::vector<double> x{0.1, 0.2, 0.3, 0.4};
  const auto grad = backprop(m, x, forward(m, x));
  for (double g : grad.values()) EXPECT_EQ(g, 0.0);
}

TEST(Backprop, LinearByHand) {
  // y = w x with w=2, x=3, t=0: L = (wx)^2 / 2, dL/dw = w x^2 = 18.
  MlpModel m = linear(1, 1, {2.0, 0.0});
  const auto g = backprop(m, std::vector<double>{3.0}, std::vector<double>{0.0});
  EXPECT_DOUBLE_EQ(g.values()[0], 18.0);
  EXPECT_DOUBLE_EQ(g.values()[1], 6.0);  // dL/db = w x
}

TEST(Backprop, MatchesCentralDifferencesUpTo888) {
  auto rng = make_rng(6);
  for (int t = 0; t < 30; ++t) {
    const std::size_t in = 1 + uniform_index(rng, 6), out = 1 + uniform_index(rng, 3);
    std::vector<std::size_t> hidden(1 + uniform_index(rng, 3));
    for (auto& h : hidden) h = 1 + uniform_index(rng, 8);
    auto m = make_mlp(mlp_topology(in, hidden, out), t % 2 ? Activation::Sigmoid : Activation::Identity, rng);
    std::vector<double> x(in), y(out);
    for (auto& v : x) v = uniform(rng, -2, 2);
    for (auto& v : y) v = uniform(rng, -1, 1);
    const auto g = backprop(m, x, y);
    double diff = 0, na = 0, nf = 0;
    for (std::size_t k = 0; k < m.params.size(); ++k) {
      const double keep = m.params.values()[k];
      m.params.values()[k] = keep + 1e-5;
      const double up = mse_loss(forward_batch(m, Batch::column(x)), Batch::column(y));
      m.params.values()[k] = keep - 1e-5;
      const double down = mse_loss(forward_batch(m, Batch::column(x)), Batch::column(y));
      m.params.values()[k] = keep;
      const double fd = (up - down) / 2e-5;
      diff += (g.values()[k] - fd) * (g.values()[k] - fd);
      na += g.values()[k] * g.values()[k];
      nf += fd * fd;
    }
    EXPECT_LT(std::sqrt(diff) / (std::sqrt(na) + std::sqrt(nf) + 1e-300), 1e-4) << "net " << t;
  }
}

TEST(Backprop, NonFiniteLossNamesLayer) {
  MlpModel m = linear(1, 1, {1e200, 0.0});
  try {
    backprop(m, std::vector<double>{1e200}, std::vector<double>{0.0});
    FAIL() << "expected NumericError";
  } catch (const NumericError& e) {
    EXPECT_NE(std::string(e.what()).find("layer 0"), std::string::npos) << e.what();
  }
}

TEST(Sgd, ZeroGradientIsFixedPoint) {
  const ParamVector p({{2, 2}}, {1, 2, 3, 4, 5, 6});
  EXPECT_EQ(sgd_step(p, ParamVector(p.shapes()), SgdConfig{0.1, 1}), p);
}

TEST(Sgd, StepByHand) {
  const ParamVector p({{1, 1}}, {1.0, 0.0});
  const ParamVector g({{1, 1}}, {2.0, 0.0});
  EXPECT_DOUBLE_EQ(sgd_step(p, g, SgdConfig{0.1, 1}).values()[0], 0.8);
}

TEST(Sgd, TwoStepsEqualOneSummedStep) {
  const ParamVector p({{1, 2}}, {1.0, -1.0, 0.5, 0.25});
  const ParamVector g1({{1, 2}}, {0.5, 0.25, -1.0, 2.0});
  const ParamVector g2({{1, 2}}, {0.125, 0.5, 1.0, -0.5});
  ParamVector sum(p.shapes());
  for (std::size_t k = 0; k < 4; ++k) sum.values()[k] = g1.values()[k] + g2.values()[k];
  const SgdConfig cfg{0.5, 1};
  const auto two = sgd_step(sgd_step(p, g1, cfg), g2, cfg);
  const auto one = sgd_step(p, sum, cfg);
  for (std::size_t k = 0; k < 4; ++k) EXPECT_NEAR(two.values()[k], one.values()[k], 1e-15);
}

TEST(Sgd, RejectsShapeMismatch) {
  EXPECT_THROW(sgd_step(ParamVector({{1, 1}}), ParamVector({{2, 1}}), SgdConfig{}), std::invalid_argument);
}

TEST(Serialize, EmptyRoundTrips) {
  const ParamVector p;
  EXPECT_EQ(deserialize(serialize(p)), p);
}

TEST(Serialize, DefaultTopologyByteLength) {
  // 12 -> 64 -> 64 -> 64 -> 2: (12*64+64) + 2*(64*64+64) + (64*2+2) = 9282 reals,
  // header = magic 4 + version 2 + count 2 + 4 layers * 8.
  const ParamVector p(default_topology(12, 2));
  EXPECT_EQ(p.size(), 9282u);
  EXPECT_EQ(serialize(p).size(), 8u * 9282u + 8u + 4u * 8u);
}

TEST(Serialize, RandomRoundTripsBitExact) {
  auto rng = make_rng(7);
  for (int t = 0; t < 1000; ++t) {
    std::vector<std::size_t> hidden(uniform_index(rng, 3));
    for (auto& h : hidden) h = 1 + uniform_index(rng, 6);
    ParamVector p = init_uniform(mlp_topology(1 + uniform_index(rng, 5), hidden, 1 + uniform_index(rng, 3)), rng);
    const auto back = deserialize(serialize(p));
    ASSERT_EQ(back.shapes(), p.shapes());
    for (std::size_t k = 0; k < p.size(); ++k) {
      ASSERT_EQ(std::bit_cast<std::uint64_t>(back.values()[k]), std::bit_cast<std::uint64_t>(p.values()[k]));
    }
  }
}

TEST(Serialize, TruncatedOrCorruptBytesRejected) {
  auto rng = make_rng(8);
  const auto bytes = serialize(init_uniform(default_topology(3, 1), rng));
  for (std::size_t cut : {0ul, 3ul, 7ul, 20ul, bytes.size() - 1}) {
    EXPECT_THROW(deserialize(std::span(bytes).first(cut)), FormatError) << cut;
  }
  auto bad = bytes;
  bad[0] = 'X';
  EXPECT_THROW(deserialize(bad), FormatError);
  auto longer = bytes;
  longer.push_back(0);
  EXPECT_THROW(deserialize(longer), FormatError);
}
