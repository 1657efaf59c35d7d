#include <gtest/gtest.h>

#include <sstream>

#include "lsai/config.hpp"

using namespace lsai;

namespace {

ScenarioConfig parse(const std::string& text, const std::filesystem::path& base = {}) {
  std::istringstream in(text);
  return parse_scenario(in, base);
}

std::string error_key(const std::string& text) {
  try {
    parse(text);
  } catch (const ConfigError& e) {
    return e.key();
  }
  return "<no error>";
}

}  // namespace

TEST(Config, EmptyFileGivesDefaults) {
  const auto c = parse("");
  const ScenarioConfig d;
  EXPECT_EQ(c.world.arena_size, d.world.arena_size);
  EXPECT_EQ(c.experiment.rounds, d.experiment.rounds);
  EXPECT_EQ(c.robots, d.robots);
}

TEST(Config, ReadsValuesAndInlineComments) {
  const auto c = parse(
      "; leading comment\n"
      "[world]\n"
      "arena_size = 100   ; metres\n"
      "n_targets = 7 # targets\n"
      "[ddpg]\n"
      "optimizer = sgd\n"
      "invert_gradients = false\n"
      "[experiment]\n"
      "robots = 2, 4,8\n"
      "seeds = 3\n");
  EXPECT_EQ(c.world.arena_size, 100.0);
  EXPECT_EQ(c.world.n_targets, 7u);
  EXPECT_EQ(c.ddpg.optimizer, Optimizer::Sgd);
  EXPECT_FALSE(c.ddpg.invert_gradients);
  EXPECT_EQ(c.robots, (std::vector<std::size_t>{2, 4, 8}));
  EXPECT_EQ(c.seeds, 3u);
}

TEST(Config, ErrorsNameTheKey) {
  EXPECT_EQ(error_key("[wrold]\nsize = 3\n"), "wrold.size");
  EXPECT_EQ(error_key("[world]\nsize = 3\n"), "world.size");
  EXPECT_EQ(error_key("[world]\nn_robots = many\n"), "world.n_robots");
  EXPECT_EQ(error_key("[world]\nn_robots = 3x\n"), "world.n_robots");
  EXPECT_EQ(error_key("[ddpg]\noptimizer = rmsprop\n"), "ddpg.optimizer");
  EXPECT_EQ(error_key("[experiment]\nrobots = 2,,3\n"), "experiment.robots");
  EXPECT_EQ(error_key("[experiment]\nrobots = 0\n"), "experiment.robots");
}

TEST(Config, SemanticValidationFails) {
  EXPECT_THROW(parse("[world]\ncell_size = 7\n"), ConfigError);
  EXPECT_THROW(parse("[world]\nn_targets = 0\n"), ConfigError);
}

TEST(Config, RelativeModelPathResolvesAgainstFileDir) {
  const auto c = parse("[experiment]\npretrained_model = models/p.lspt\n", "/srv/scen");
  EXPECT_EQ(c.experiment.pretrained_model, "/srv/scen/models/p.lspt");
  const auto abs = parse("[experiment]\npretrained_model = /abs/p.lspt\n", "/srv/scen");
  EXPECT_EQ(abs.experiment.pretrained_model, "/abs/p.lspt");
}

TEST(Config, ShippedScenariosLoad) {
  const std::filesystem::path dir = std::filesystem::path(LSAI_SOURCE_DIR) / "scenarios";
  const auto desk = load_scenario(dir / "desk.ini");
  EXPECT_TRUE(std::filesystem::exists(desk.experiment.pretrained_model));
  const auto big = load_scenario(dir / "full_scale.ini");
  EXPECT_EQ(big.world.n_robots, 60u);
  EXPECT_THROW(load_scenario(dir / "missing.ini"), ConfigError);
}
