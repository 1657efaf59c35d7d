#include <gtest/gtest.h>

#include <sstream>

#include "lsai/run_files.hpp"
#include "lsai/verify.hpp"

using namespace lsai;

namespace {

const std::string& sample_trace() {
  static const std::string t = [] {
    auto rng = make_rng(1);
    const PretrainedSai sai{make_actor(rng), make_critic(rng)};
    return render_run(verify::tiny_scenario(), Method::Distributed, 3, 2, sai, true).trace;
  }();
  return t;
}

ReplayResult replay(const std::string& s) {
  std::istringstream in(s);
  return replay_trace(in);
}

std::vector<std::string> lines_of(const std::string& s) {
  std::vector<std::string> out;
  std::istringstream in(s);
  for (std::string l; std::getline(in, l);) out.push_back(l);
  return out;
}

std::string join(const std::vector<std::string>& ls) {
  std::string s;
  for (const auto& l : ls) s += l + "\n";
  return s;
}

std::size_t line_of_tick(const std::vector<std::string>& ls, std::size_t k) {
  for (std::size_t i = 0; i < ls.size(); ++i) {
    if (ls[i].rfind("tick " + std::to_string(k) + " ", 0) == 0) return i;
  }
  return ls.size();
}

}  // namespace

TEST(Trace, SelfReplayPasses) {
  const auto r = replay(sample_trace());
  EXPECT_TRUE(r.ok) << r.message;
  EXPECT_EQ(r.ticks_checked, verify::tiny_scenario().experiment.ticks() + 1);
}

TEST(Trace, TruncationNamesMissingTick) {
  auto ls = lines_of(sample_trace());
  ls.resize(line_of_tick(ls, 11));
  const auto r = replay(join(ls));
  EXPECT_FALSE(r.ok);
  EXPECT_EQ(r.message, "trace truncated: missing tick 11");
}

TEST(Trace, EditedCoverageIsDetected) {
  auto ls = lines_of(sample_trace());
  const auto i = line_of_tick(ls, 7);
  std::istringstream ss(ls[i]);
  std::string tag, clock;
  std::size_t tick = 0, covered = 0;
  std::string rest;
  ss >> tag >> tick >> clock >> covered;
  std::getline(ss, rest);
  ls[i] = "tick 7 " + clock + " " + std::to_string(covered + 1) + rest;
  const auto r = replay(join(ls));
  EXPECT_FALSE(r.ok);
  EXPECT_NE(r.message.find("coverage mismatch at tick 7"), std::string::npos) << r.message;
}

TEST(Trace, TeleportIsDetected) {
  auto ls = lines_of(sample_trace());
  const auto i = line_of_tick(ls, 5) + 1;  // robot 0 at tick 5
  std::istringstream ss(ls[i]);
  std::string tag, id, x, y, e;
  ss >> tag >> id >> x >> y >> e;
  ls[i] = "robot 0 " + std::to_string(std::stod(x) + 30.0) + " " + y + " " + e;
  const auto r = replay(join(ls));
  EXPECT_FALSE(r.ok);
  EXPECT_NE(r.message.find("tick 5 robot 0"), std::string::npos) << r.message;
}

TEST(Trace, RejectsNonTrace) {
  EXPECT_FALSE(replay("hello\n").ok);
  EXPECT_FALSE(replay("").ok);
}

TEST(CoverageHash, SensitiveToEveryCell) {
  CellMap a(100, 0);
  const auto h0 = coverage_hash(a);
  for (std::size_t k = 0; k < a.size(); ++k) {
    a[k] = 1;
    EXPECT_NE(coverage_hash(a), h0);
    a[k] = 0;
  }
}
