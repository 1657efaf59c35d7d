#pragma once

// Plain-text world trace: one block per tick with robot positions and energy
// plus the recorded coverage/sensing state, and a replay checker that
// recomputes those from the positions.

#include <cmath>
#include <cstdint>
#include <cstdio>
#include <istream>
#include <optional>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include "lsai/world.hpp"

namespace lsai {

inline constexpr const char* kTraceMagic = "# lsai-trace v1";

/// FNV-1a over the coverage bitmap.
inline std::uint64_t coverage_hash(const CellMap& m) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (auto b : m) {
    h ^= b;
    h *= 0x100000001b3ULL;
  }
  return h;
}

namespace detail {

inline std::string g17(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

}  // namespace detail

class TraceWriter {
 public:
  TraceWriter(std::ostream& os, double dt, std::size_t ticks) : os_(os), dt_(dt), ticks_(ticks) {}

  void header(const WorldState& w) {
    const auto& c = w.config;
    os_ << kTraceMagic << '\n';
    os_ << "config " << detail::g17(c.arena_size) << ' ' << detail::g17(c.cell_size) << ' '
        << w.robots.size() << ' ' << w.targets.size() << ' ' << detail::g17(c.sensing_radius) << ' '
        << detail::g17(c.max_speed) << ' ' << detail::g17(c.e_idle) << ' ' << detail::g17(c.e_move)
        << ' ' << detail::g17(dt_) << ' ' << ticks_ << '\n';
    os_ << "obstacles";
    for (std::size_t k = 0; k < w.obstacles.size(); ++k) {
      if (w.obstacles[k]) os_ << ' ' << k;
    }
    os_ << '\n';
    for (std::size_t t = 0; t < w.targets.size(); ++t) os_ << "target " << t << ' ' << w.targets[t].cell << '\n';
  }

  void tick(const WorldState& w) {
    os_ << "tick " << w.tick << ' ' << detail::g17(w.clock) << ' ' << w.covered_count() << ' '
        << coverage_hash(w.coverage) << ' ' << w.sensed_count() << '\n';
    for (const auto& r : w.robots) {
      os_ << "robot " << r.id << ' ' << detail::g17(r.position.x) << ' ' << detail::g17(r.position.y)
          << ' ' << detail::g17(r.energy) << '\n';
    }
  }

  void finish() { os_ << "end\n"; }

 private:
  std::ostream& os_;
  double dt_;
  std::size_t ticks_;
};

struct ReplayResult {
  bool ok = false;
  std::size_t ticks_checked = 0;
  std::string message;
};

/// Re-derives footprints, coverage and sensed targets from the recorded
/// positions, and checks each robot's motion against the speed limit and the
/// energy ledger.
inline ReplayResult replay_trace(std::istream& in) {
  ReplayResult res;
  auto fail = [&](std::string msg) {
    res.ok = false;
    res.message = std::move(msg);
    return res;
  };
  std::string line;
  if (!std::getline(in, line) || line != kTraceMagic) return fail("not a trace: missing header");

  WorldConfig cfg;
  std::size_t n_robots = 0, n_targets = 0, ticks = 0;
  double dt = 0.0;
  {
    if (!std::getline(in, line)) return fail("trace truncated: missing config line");
    std::istringstream ss(line);
    std::string tag;
    ss >> tag >> cfg.arena_size >> cfg.cell_size >> n_robots >> n_targets >> cfg.sensing_radius >>
        cfg.max_speed >> cfg.e_idle >> cfg.e_move >> dt >> ticks;
    if (tag != "config" || !ss) return fail("bad config line");
  }
  const std::size_t cells = cfg.cell_count();
  CellMap obstacles(cells, 0);
  {
    if (!std::getline(in, line)) return fail("trace truncated: missing obstacle line");
    std::istringstream ss(line);
    std::string tag;
    ss >> tag;
    if (tag != "obstacles") return fail("bad obstacle line");
    std::size_t c = 0;
    while (ss >> c) {
      if (c >= cells) return fail("obstacle cell out of range");
      obstacles[c] = 1;
    }
  }
  std::vector<CellIndex> target_cells(n_targets);
  for (std::size_t t = 0; t < n_targets; ++t) {
    std::string tag;
    std::size_t idx = 0, cell = 0;
    if (!std::getline(in, line)) return fail("trace truncated: missing target " + std::to_string(t));
    std::istringstream ss(line);
    ss >> tag >> idx >> cell;
    if (tag != "target" || idx != t || cell >= cells) return fail("bad target line " + std::to_string(t));
    target_cells[t] = static_cast<CellIndex>(cell);
  }

  CellMap coverage(cells, 0);
  std::vector<bool> sensed(n_targets, false);
  std::vector<Vec2> prev_pos(n_robots);
  std::vector<double> prev_energy(n_robots);
  for (std::size_t k = 0; k <= ticks; ++k) {
    if (!std::getline(in, line) || line.rfind("tick ", 0) != 0) {
      return fail("trace truncated: missing tick " + std::to_string(k));
    }
    std::istringstream ts(line);
    std::string tag;
    std::size_t tick = 0, covered = 0, sensed_rec = 0;
    std::uint64_t hash = 0;
    double clock = 0.0;
    ts >> tag >> tick >> clock >> covered >> hash >> sensed_rec;
    if (!ts || tick != k) return fail("missing tick " + std::to_string(k) + " (found '" + line + "')");

    std::vector<Vec2> pos(n_robots);
    std::vector<double> energy(n_robots);
    for (std::size_t i = 0; i < n_robots; ++i) {
      if (!std::getline(in, line)) {
        return fail("trace truncated: tick " + std::to_string(k) + " missing robot " + std::to_string(i));
      }
      std::istringstream rs(line);
      std::size_t id = 0;
      rs >> tag >> id >> pos[i].x >> pos[i].y >> energy[i];
      if (!rs || tag != "robot" || id != i) {
        return fail("bad robot line at tick " + std::to_string(k) + ": '" + line + "'");
      }
    }

    if (k > 0) {
      for (std::size_t i = 0; i < n_robots; ++i) {
        const double moved = distance(prev_pos[i], pos[i]);
        const std::string where = "tick " + std::to_string(k) + " robot " + std::to_string(i);
        if (moved > cfg.max_speed * dt * (1.0 + 1e-9)) {
          return fail("motion mismatch at " + where + ": moved " + detail::g17(moved) + " m");
        }
        double expect = prev_energy[i];
        if (prev_energy[i] > 0.0) {
          const double idle = cfg.e_idle * dt;
          if (prev_energy[i] <= idle) {
            expect = 0.0;
          } else {
            expect = prev_energy[i] - idle;
            if (moved > 0.0) expect = std::max(0.0, expect - cfg.e_move * moved);
          }
        } else if (moved > 0.0) {
          return fail("motion mismatch at " + where + ": dead robot moved");
        }
        if (std::abs(expect - energy[i]) > 1e-9 * std::max(1.0, std::abs(expect))) {
          return fail("energy mismatch at " + where + ": recorded " + detail::g17(energy[i]) +
                      ", expected " + detail::g17(expect));
        }
      }
    }

    std::vector<CellSet> fps(n_robots);
    for (std::size_t i = 0; i < n_robots; ++i) {
      if (energy[i] <= 0.0) continue;
      fps[i] = footprint(pos[i], cfg.sensing_radius, cfg);
      for (auto c : fps[i]) coverage[c] = 1;
    }
    for (std::size_t t = 0; t < n_targets; ++t) {
      if (sensed[t]) continue;
      for (const auto& f : fps) {
        if (std::binary_search(f.begin(), f.end(), target_cells[t])) {
          sensed[t] = true;
          break;
        }
      }
    }
    const auto cov = static_cast<std::size_t>(std::count(coverage.begin(), coverage.end(), 1));
    if (cov != covered || coverage_hash(coverage) != hash) {
      return fail("coverage mismatch at tick " + std::to_string(k) + ": recorded " +
                  std::to_string(covered) + " cells, recomputed " + std::to_string(cov));
    }
    const auto sc = static_cast<std::size_t>(std::count(sensed.begin(), sensed.end(), true));
    if (sc != sensed_rec) {
      return fail("sensing mismatch at tick " + std::to_string(k) + ": recorded " +
                  std::to_string(sensed_rec) + ", recomputed " + std::to_string(sc));
    }
    prev_pos = std::move(pos);
    prev_energy = std::move(energy);
    ++res.ticks_checked;
  }
  if (!std::getline(in, line) || line != "end") return fail("trace truncated: missing end marker");
  res.ok = true;
  res.message = "ok";
  return res;
}

}  // namespace lsai
