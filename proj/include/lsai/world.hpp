#pragma once

// 2D sensing arena: robot kinematics, disk footprints over a square cell grid,
// targets, coverage, collisions and the linear energy model.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <deque>
#include <limits>
#include <numbers>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "lsai/rng.hpp"

namespace lsai {

struct Vec2 {
  double x = 0.0;
  double y = 0.0;

  friend Vec2 operator+(Vec2 a, Vec2 b) { return {a.x + b.x, a.y + b.y}; }
  friend Vec2 operator-(Vec2 a, Vec2 b) { return {a.x - b.x, a.y - b.y}; }
  friend Vec2 operator*(double s, Vec2 a) { return {s * a.x, s * a.y}; }
  friend bool operator==(Vec2, Vec2) = default;
};

inline double norm(Vec2 v) { return std::hypot(v.x, v.y); }
inline double distance(Vec2 a, Vec2 b) { return norm(a - b); }

using CellIndex = std::uint32_t;
using CellSet = std::vector<CellIndex>;  // sorted, unique
using CellMap = std::vector<std::uint8_t>;

struct WorldConfig {
  double arena_size = 200.0;
  double cell_size = 5.0;
  std::size_t n_robots = 8;
  std::size_t n_targets = 10;
  double max_speed = 1.5;  // 5.4 km/h
  double sensing_radius = 15.0;
  double obstacle_fraction = 0.05;
  std::uint64_t seed = 1;

  double e_idle = 1.0;  // J/s
  double e_move = 5.0;  // J/m
  double initial_energy = 50000.0;
  double max_turn_rate = std::numbers::pi / 2.0;  // rad/s
  double collision_distance = 2.0;
  std::size_t trajectory_capacity = 64;

  std::size_t cells_per_side() const {
    return static_cast<std::size_t>(std::llround(arena_size / cell_size));
  }
  std::size_t cell_count() const { return cells_per_side() * cells_per_side(); }

  void validate() const {
    if (!(arena_size > 0.0) || !(cell_size > 0.0)) {
      throw std::invalid_argument("world: arena_size and cell_size must be > 0");
    }
    const double ratio = arena_size / cell_size;
    if (std::abs(ratio - std::round(ratio)) > 1e-9 || cells_per_side() < 4) {
      throw std::invalid_argument("world: arena must divide into at least 4x4 whole cells");
    }
    if (n_targets < 1) throw std::invalid_argument("world: n_targets must be >= 1");
    if (!(max_speed > 0.0)) throw std::invalid_argument("world: max_speed must be > 0");
    if (!(sensing_radius >= 0.0)) throw std::invalid_argument("world: sensing_radius must be >= 0");
    if (!(obstacle_fraction >= 0.0 && obstacle_fraction < 1.0)) {
      throw std::invalid_argument("world: obstacle_fraction must be in [0,1)");
    }
    if (e_idle < 0.0 || e_move < 0.0 || initial_energy < 0.0) {
      throw std::invalid_argument("world: energy constants must be >= 0");
    }
    if (!(max_turn_rate > 0.0)) throw std::invalid_argument("world: max_turn_rate must be > 0");
  }
};

struct RobotState {
  std::size_t id = 0;
  Vec2 position;
  Vec2 velocity;
  double heading = 0.0;  // orientation, radians in [0, 2pi)
  double energy = 0.0;
  double distance_traveled = 0.0;
  double alive_time = 0.0;
  std::deque<Vec2> trajectory;
  CellSet footprint;

  bool alive() const noexcept { return energy > 0.0; }
};

struct Target {
  Vec2 position;
  CellIndex cell = 0;
  bool sensed = false;
  double first_sensed_time = std::numeric_limits<double>::infinity();
};

struct Collision {
  double time = 0.0;
  std::size_t a = 0;  // a < b
  std::size_t b = 0;
};

/// Action as produced by the sigmoid head: both components in [0, 1].
struct Action {
  double heading = 0.5;         // x 2pi radians
  double speed_fraction = 0.0;  // x max_speed
};

struct WorldState {
  WorldConfig config;
  std::vector<RobotState> robots;
  std::vector<Target> targets;
  CellMap coverage;   // ever covered
  CellMap obstacles;
  double clock = 0.0;
  std::size_t tick = 0;
  std::vector<Collision> collision_log;
  std::size_t spawn_covered = 0;  // cells covered by the initial footprints

  std::size_t sensed_count() const {
    return static_cast<std::size_t>(
        std::count_if(targets.begin(), targets.end(), [](const Target& t) { return t.sensed; }));
  }
  std::size_t covered_count() const {
    return static_cast<std::size_t>(std::count(coverage.begin(), coverage.end(), 1));
  }
};

// ---------------------------------------------------------------------------
// Grid helpers.

inline CellIndex cell_of(Vec2 p, const WorldConfig& cfg) {
  const auto n = static_cast<long>(cfg.cells_per_side());
  const auto cx = std::clamp(static_cast<long>(std::floor(p.x / cfg.cell_size)), 0L, n - 1);
  const auto cy = std::clamp(static_cast<long>(std::floor(p.y / cfg.cell_size)), 0L, n - 1);
  return static_cast<CellIndex>(cy * n + cx);
}

inline Vec2 cell_center(CellIndex c, const WorldConfig& cfg) {
  const auto n = cfg.cells_per_side();
  return {(static_cast<double>(c % n) + 0.5) * cfg.cell_size,
          (static_cast<double>(c / n) + 0.5) * cfg.cell_size};
}

/// Cells whose centers lie within `radius` of `position`, ascending.
inline CellSet footprint(Vec2 position, double radius, const WorldConfig& cfg) {
  const auto n = static_cast<long>(cfg.cells_per_side());
  const double cs = cfg.cell_size;
  const auto lo = [&](double v) {
    return std::clamp(static_cast<long>(std::floor((v - radius) / cs - 0.5)), 0L, n - 1);
  };
  const auto hi = [&](double v) {
    return std::clamp(static_cast<long>(std::ceil((v + radius) / cs - 0.5)), 0L, n - 1);
  };
  const double r2 = radius * radius;
  CellSet out;
  for (long cy = lo(position.y); cy <= hi(position.y); ++cy) {
    const double dy = (static_cast<double>(cy) + 0.5) * cs - position.y;
    for (long cx = lo(position.x); cx <= hi(position.x); ++cx) {
      const double dx = (static_cast<double>(cx) + 0.5) * cs - position.x;
      if (dx * dx + dy * dy <= r2) out.push_back(static_cast<CellIndex>(cy * n + cx));
    }
  }
  return out;
}

/// |a ∩ b| / |a ∪ b| over sorted cell sets; 0 when both are empty.
inline double jaccard(std::span<const CellIndex> a, std::span<const CellIndex> b) {
  std::size_t i = 0, j = 0, inter = 0;
  while (i < a.size() && j < b.size()) {
    if (a[i] < b[j]) {
      ++i;
    } else if (b[j] < a[i]) {
      ++j;
    } else {
      ++inter;
      ++i;
      ++j;
    }
  }
  const std::size_t uni = a.size() + b.size() - inter;
  return uni == 0 ? 0.0 : static_cast<double>(inter) / static_cast<double>(uni);
}

inline double wrap_angle(double a) {
  constexpr double two_pi = 2.0 * std::numbers::pi;
  a = std::fmod(a, two_pi);
  return a < 0.0 ? a + two_pi : a;
}

/// Signed shortest rotation from `from` to `to`, in (-pi, pi].
inline double angle_diff(double to, double from) {
  double d = wrap_angle(to - from);
  return d > std::numbers::pi ? d - 2.0 * std::numbers::pi : d;
}

// ---------------------------------------------------------------------------
// Stepping.

namespace detail {

inline void sense(WorldState& w) {
  for (auto& r : w.robots) {
    if (!r.alive()) {
      r.footprint.clear();
      continue;
    }
    r.footprint = footprint(r.position, w.config.sensing_radius, w.config);
    for (auto c : r.footprint) w.coverage[c] = 1;
  }
  for (auto& t : w.targets) {
    if (t.sensed) continue;
    for (const auto& r : w.robots) {
      if (std::binary_search(r.footprint.begin(), r.footprint.end(), t.cell)) {
        t.sensed = true;
        t.first_sensed_time = w.clock;
        break;
      }
    }
  }
}

}  // namespace detail

struct RobotStepInfo {
  double distance = 0.0;
  double energy_spent = 0.0;
  bool collided = false;
};

/// Advances the world by `dt` seconds. `actions` holds one entry per robot;
/// dead robots ignore theirs and hold position.
inline std::vector<RobotStepInfo> step_in_place(WorldState& w, std::span<const Action> actions,
                                                double dt) {
  if (!(dt > 0.0)) throw std::invalid_argument("step: dt must be > 0");
  if (actions.size() != w.robots.size()) {
    throw std::invalid_argument("step: expected " + std::to_string(w.robots.size()) +
                                " actions, got " + std::to_string(actions.size()));
  }
  const auto& cfg = w.config;
  std::vector<RobotStepInfo> info(w.robots.size());
  for (std::size_t i = 0; i < w.robots.size(); ++i) {
    auto& r = w.robots[i];
    r.velocity = {};
    if (!r.alive()) continue;
    const double before = r.energy;

    const double idle = cfg.e_idle * dt;
    if (r.energy <= idle) {
      r.alive_time += cfg.e_idle > 0.0 ? r.energy / cfg.e_idle : dt;
      r.energy = 0.0;
      info[i].energy_spent = before;
      continue;
    }
    r.energy -= idle;
    r.alive_time += dt;

    const auto& a = actions[i];
    const double target = wrap_angle(std::clamp(a.heading, 0.0, 1.0) * 2.0 * std::numbers::pi);
    const double max_turn = cfg.max_turn_rate * dt;
    r.heading = wrap_angle(r.heading + std::clamp(angle_diff(target, r.heading), -max_turn, max_turn));

    double travel = std::clamp(a.speed_fraction, 0.0, 1.0) * cfg.max_speed * dt;
    if (cfg.e_move > 0.0) travel = std::min(travel, r.energy / cfg.e_move);
    if (travel > 0.0) {
      const Vec2 old = r.position;
      Vec2 next = old + travel * Vec2{std::cos(r.heading), std::sin(r.heading)};
      next.x = std::clamp(next.x, 0.0, cfg.arena_size);
      next.y = std::clamp(next.y, 0.0, cfg.arena_size);
      // Blocked moves slide along whichever axis stays free.
      if (w.obstacles[cell_of(next, cfg)] != 0) {
        const Vec2 along_x{next.x, old.y};
        const Vec2 along_y{old.x, next.y};
        if (w.obstacles[cell_of(along_x, cfg)] == 0) {
          next = along_x;
        } else if (w.obstacles[cell_of(along_y, cfg)] == 0) {
          next = along_y;
        }
      }
      if (w.obstacles[cell_of(next, cfg)] == 0 && next != old) {
        const double moved = distance(old, next);
        r.position = next;
        r.distance_traveled += moved;
        r.energy = std::max(0.0, r.energy - cfg.e_move * moved);
        r.velocity = (1.0 / dt) * (next - old);
        info[i].distance = moved;
      }
    }
    r.trajectory.push_back(r.position);
    while (r.trajectory.size() > cfg.trajectory_capacity) r.trajectory.pop_front();
    info[i].energy_spent = before - r.energy;
  }

  w.clock += dt;
  ++w.tick;
  detail::sense(w);

  for (std::size_t a = 0; a < w.robots.size(); ++a) {
    if (!w.robots[a].alive()) continue;
    for (std::size_t b = a + 1; b < w.robots.size(); ++b) {
      if (!w.robots[b].alive()) continue;
      if (distance(w.robots[a].position, w.robots[b].position) < cfg.collision_distance) {
        w.collision_log.push_back({w.clock, a, b});
        info[a].collided = info[b].collided = true;
      }
    }
  }
  return info;
}

inline WorldState step(WorldState w, std::span<const Action> actions, double dt) {
  step_in_place(w, actions, dt);
  return w;
}

// ---------------------------------------------------------------------------
// Spawning.

inline WorldState spawn(const WorldConfig& cfg) {
  cfg.validate();
  auto rng = make_rng(cfg.seed, 0x5707);
  WorldState w;
  w.config = cfg;
  const std::size_t cells = cfg.cell_count();
  w.coverage.assign(cells, 0);
  w.obstacles.assign(cells, 0);

  std::vector<CellIndex> order(cells);
  for (std::size_t c = 0; c < cells; ++c) order[c] = static_cast<CellIndex>(c);
  std::shuffle(order.begin(), order.end(), rng);

  const auto n_obstacles =
      static_cast<std::size_t>(std::floor(cfg.obstacle_fraction * static_cast<double>(cells)));
  const std::size_t free_cells = cells - n_obstacles;
  if (cfg.n_robots + cfg.n_targets > free_cells) {
    throw std::invalid_argument("spawn: arena too small: " + std::to_string(cfg.n_robots) +
                                " robots + " + std::to_string(cfg.n_targets) + " targets need " +
                                std::to_string(cfg.n_robots + cfg.n_targets) +
                                " free cells, have " + std::to_string(free_cells));
  }
  for (std::size_t k = 0; k < n_obstacles; ++k) w.obstacles[order[k]] = 1;

  std::size_t next = n_obstacles;
  for (std::size_t i = 0; i < cfg.n_robots; ++i) {
    RobotState r;
    r.id = i;
    r.position = cell_center(order[next++], cfg);
    r.heading = uniform(rng, 0.0, 2.0 * std::numbers::pi);
    r.energy = cfg.initial_energy;
    r.trajectory.push_back(r.position);
    w.robots.push_back(std::move(r));
  }
  for (std::size_t t = 0; t < cfg.n_targets; ++t) {
    const CellIndex c = order[next++];
    const Vec2 corner = cell_center(c, cfg) - Vec2{0.5 * cfg.cell_size, 0.5 * cfg.cell_size};
    Target target;
    target.position = corner + Vec2{uniform(rng, 0.0, cfg.cell_size), uniform(rng, 0.0, cfg.cell_size)};
    target.cell = c;
    w.targets.push_back(target);
  }
  detail::sense(w);
  w.spawn_covered = w.covered_count();
  return w;
}

}  // namespace lsai
