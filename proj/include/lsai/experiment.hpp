#pragma once

// Metrics, the three mission pipelines (LSAI, Centralized, Distributed),
// pretraining of the shared starting policy, sweeps and result files.

#include <algorithm>
#include <atomic>
#include <cctype>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <deque>
#include <functional>
#include <limits>
#include <map>
#include <numbers>
#include <optional>
#include <ostream>
#include <stdexcept>
#include <string>
#include <thread>
#include <tuple>
#include <vector>

#include "lsai/aggregation.hpp"
#include "lsai/comms.hpp"
#include "lsai/fusion.hpp"
#include "lsai/model_core.hpp"
#include "lsai/policy_rl.hpp"
#include "lsai/rng.hpp"
#include "lsai/splitting.hpp"
#include "lsai/world.hpp"

namespace lsai {

// ---------------------------------------------------------------------------
// Metrics.

inline double sensing_accuracy(const WorldState& w) {
  if (w.targets.empty()) throw std::invalid_argument("sensing_accuracy: no targets");
  return static_cast<double>(w.sensed_count()) / static_cast<double>(w.targets.size());
}

/// Cells first covered after spawn, over the footprint-sweep bound
/// sum_i d_i * 2r / cell_area. Zero when nobody moved.
inline double path_efficiency(const WorldState& w) {
  double travelled = 0.0;
  for (const auto& r : w.robots) travelled += r.distance_traveled;
  if (!(travelled > 0.0)) return 0.0;
  const double cs = w.config.cell_size;
  const double bound = travelled * 2.0 * w.config.sensing_radius / (cs * cs);
  if (!(bound > 0.0)) return 0.0;
  const double fresh = static_cast<double>(w.covered_count() - w.spawn_covered);
  return std::clamp(fresh / bound, 0.0, 1.0);
}

struct ResponseTime {
  double seconds = std::numeric_limits<double>::infinity();
  bool censored = true;
};

/// Clock at which the sensed fraction first reached `threshold`.
inline ResponseTime response_time(const WorldState& w, double threshold) {
  if (!(threshold > 0.0 && threshold <= 1.0)) {
    throw std::invalid_argument("response_time: threshold must be in (0,1]");
  }
  std::vector<double> times;
  for (const auto& t : w.targets) times.push_back(t.first_sensed_time);
  std::sort(times.begin(), times.end());
  const auto k = static_cast<std::size_t>(std::ceil(threshold * static_cast<double>(times.size()) - 1e-9));
  const double t = times[std::max<std::size_t>(k, 1) - 1];
  if (!std::isfinite(t)) return {};
  return {t, false};
}

struct Metrics {
  double sensing_accuracy = 0.0;
  double path_efficiency = 0.0;
  double response_time_s = std::numeric_limits<double>::infinity();
  bool censored = true;
  double energy_total_j = 0.0;
  std::size_t collisions = 0;
  std::size_t bytes_transmitted = 0;
  std::size_t rounds = 0;
  double wall_ms = 0.0;

  friend bool operator==(const Metrics&, const Metrics&) = default;
};

// ---------------------------------------------------------------------------
// Configuration.

enum class Method { LSAI, Centralized, Distributed };

inline constexpr Method kAllMethods[] = {Method::LSAI, Method::Centralized, Method::Distributed};

inline const char* method_name(Method m) {
  switch (m) {
    case Method::LSAI: return "LSAI";
    case Method::Centralized: return "Centralized";
    case Method::Distributed: return "Distributed";
  }
  return "?";
}

inline std::optional<Method> parse_method(const std::string& s) {
  std::string l;
  for (char c : s) l += static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  if (l == "lsai") return Method::LSAI;
  if (l == "centralized") return Method::Centralized;
  if (l == "distributed") return Method::Distributed;
  return std::nullopt;
}

struct CommsConfig {
  LinkConfig link{1e6, 0.05, 0.0};
  LinkConfig cloud_link{1e6, 0.05, 2.0};
  double radio_range = 60.0;
  double cloud_compute_s = 1.0;  // modelled cloud training + planning per round

  void validate() const {
    link.validate();
    cloud_link.validate();
    if (!(radio_range > 0.0)) throw std::invalid_argument("comms: radio_range must be > 0");
    if (cloud_compute_s < 0.0) throw std::invalid_argument("comms: cloud_compute_s must be >= 0");
  }
};

struct MissionConfig {
  double dt = 1.0;
  double horizon_s = 300.0;
  double round_period_s = 60.0;
  std::size_t rounds = 5;
  double participants_fraction = 1.0;
  std::size_t local_updates = 8;       // DDPG updates per robot (or per robot on the cloud) per round
  std::size_t trajectory_window = 64;  // recent observations used as distillation states
  double response_threshold = 0.9;
  std::size_t edges_per_side = 1;
  std::size_t pretrain_robots = 4;
  std::uint64_t pretrain_seed = 7;
  std::string pretrained_model;  // resolved path; empty = pretrain in process
  std::size_t mission_replay_capacity = 5000;

  std::size_t ticks() const { return static_cast<std::size_t>(std::llround(horizon_s / dt)); }

  void validate() const {
    if (!(dt > 0.0)) throw std::invalid_argument("experiment: dt must be > 0");
    if (!(horizon_s >= dt)) throw std::invalid_argument("experiment: horizon_s must be >= dt");
    if (!(round_period_s >= dt)) throw std::invalid_argument("experiment: round_period_s must be >= dt");
    if (!(participants_fraction > 0.0 && participants_fraction <= 1.0)) {
      throw std::invalid_argument("experiment: participants_fraction must be in (0,1]");
    }
    if (!(response_threshold > 0.0 && response_threshold <= 1.0)) {
      throw std::invalid_argument("experiment: response_threshold must be in (0,1]");
    }
    if (edges_per_side < 1) throw std::invalid_argument("experiment: edges_per_side must be >= 1");
    if (pretrain_robots < 1) throw std::invalid_argument("experiment: pretrain_robots must be >= 1");
    if (mission_replay_capacity < 1) {
      throw std::invalid_argument("experiment: mission_replay_capacity must be >= 1");
    }
  }
};

struct ScenarioConfig {
  WorldConfig world;
  DdpgConfig ddpg;
  RewardWeights reward;
  ObservationConfig observation;
  AggregationConfig aggregation;
  PruneSchedule splitting;
  SgdConfig split_sgd{0.05, 64};
  FusionConfig fusion;
  CommsConfig comms;
  MissionConfig experiment;

  // Sweep defaults.
  std::vector<std::size_t> robots{4, 8, 12};
  std::size_t seeds = 10;
  std::uint64_t seed = 1;  // default for single runs

  void validate() const {
    world.validate();
    ddpg.validate();
    aggregation.validate();
    splitting.validate();
    split_sgd.validate();
    fusion.validate();
    comms.validate();
    experiment.validate();
  }
};

// ---------------------------------------------------------------------------
// Pretrained starting policy, shared by every robot of every method.

struct PretrainedSai {
  MlpModel actor;
  MlpModel critic;
  friend bool operator==(const PretrainedSai&, const PretrainedSai&) = default;
};

inline TrainingSetup pretrain_setup(const ScenarioConfig& cfg) {
  TrainingSetup s;
  s.world = cfg.world;
  s.world.n_robots = cfg.experiment.pretrain_robots;
  s.world.seed = cfg.experiment.pretrain_seed;
  s.ddpg = cfg.ddpg;
  s.reward = cfg.reward;
  s.observation = cfg.observation;
  s.dt = cfg.experiment.dt;
  return s;
}

inline PretrainedSai pretrain_sai(const ScenarioConfig& cfg, TrainingLog* log = nullptr) {
  auto rng = make_rng(cfg.experiment.pretrain_seed, 0xA11CE);
  auto agent = make_agent(rng, cfg.ddpg.replay_capacity);
  auto l = train_episodes(agent, pretrain_setup(cfg), cfg.ddpg.episodes, rng);
  if (log != nullptr) *log = std::move(l);
  return {agent.actor, agent.critic};
}

// "LSPT" | version u16 | actor bytes u32 | actor | critic bytes u32 | critic
inline std::vector<std::uint8_t> serialize_pretrained(const PretrainedSai& p) {
  const auto a = serialize(p.actor.params);
  const auto c = serialize(p.critic.params);
  detail::ByteWriter w(14 + a.size() + c.size());
  w.raw("LSPT", 4);
  w.u16(1);
  w.u32(static_cast<std::uint32_t>(a.size()));
  w.raw(reinterpret_cast<const char*>(a.data()), a.size());
  w.u32(static_cast<std::uint32_t>(c.size()));
  w.raw(reinterpret_cast<const char*>(c.data()), c.size());
  return w.take();
}

inline PretrainedSai deserialize_pretrained(std::span<const std::uint8_t> bytes) {
  detail::ByteReader r(bytes);
  if (!r.expect("LSPT", 4)) throw FormatError("bad magic: not a pretrained policy");
  if (r.u16("version") != 1) throw FormatError("unsupported pretrained policy version");
  PretrainedSai p;
  p.actor = {deserialize(r.take(r.u32("actor size"), "actor")), Activation::Sigmoid};
  p.critic = {deserialize(r.take(r.u32("critic size"), "critic")), Activation::Identity};
  if (r.remaining() != 0) throw FormatError("trailing bytes after pretrained policy");
  if (p.actor.params.shapes() != default_topology(kObsDim, kActDim) ||
      p.critic.params.shapes() != default_topology(kObsDim + kActDim, 1)) {
    throw FormatError("pretrained policy has unexpected topology");
  }
  return p;
}

// ---------------------------------------------------------------------------
// Run results.

struct RoundReport {
  std::size_t round = 0;
  double time_s = 0.0;
  std::vector<RobotId> participants;
  AttentionWeights weights;  // LSAI only
  std::size_t bytes = 0;
  std::vector<std::pair<RobotId, double>> completions;
  double sensing_accuracy = 0.0;  // at round start
  double coverage = 0.0;          // free-cell fraction at round start
  std::vector<std::string> warnings;
};

struct RunResult {
  Metrics metrics;
  std::vector<RoundReport> rounds;
  std::vector<Packet> packets;
};

struct RunOptions {
  bool record_wall_time = false;
  std::function<void(const WorldState&)> on_tick;  // after spawn and after each step
};

inline std::string scenario_id(Method m, std::size_t n, std::uint64_t seed) {
  return std::string(method_name(m)) + "-n" + std::to_string(n) + "-s" + std::to_string(seed);
}

namespace detail {

struct Schedule {
  double t0 = 0.0;
  double dt = 1.0;
  std::vector<Action> entries;
};

struct Delivery {
  double at = 0.0;
  std::optional<FusedModel> model;
  CellMap map;  // empty: none
  std::optional<Schedule> schedule;
};

struct RobotCtx {
  DdpgAgent<FusedModel> agent;
  CellMap known;
  std::deque<Observation> recent;
  Rng rng;
  double history = 0.0;
  std::vector<Delivery> inbox;
  std::optional<Schedule> schedule;
  bool dirty = true;  // observation needs rebuilding
};

inline void merge_map(CellMap& into, const CellMap& from) {
  for (std::size_t c = 0; c < into.size(); ++c) into[c] |= from[c];
}

inline Action hold_action(const RobotState& r) {
  return {r.heading / (2.0 * std::numbers::pi), 0.0};
}

class Mission {
 public:
  Mission(const ScenarioConfig& cfg, Method method, std::size_t n_robots, std::uint64_t seed,
          const PretrainedSai& sai, const RunOptions& opt)
      : cfg_(cfg), method_(method), seed_(seed), opt_(opt), sai_(sai) {
    cfg_.validate();
    WorldConfig wc = cfg.world;
    wc.n_robots = n_robots;
    wc.seed = mix_seed(seed, 0x3011D);
    world_ = spawn(wc);
    const std::size_t cells = world_.coverage.size();
    for (std::size_t i = 0; i < n_robots; ++i) {
      RobotCtx r{{unfused(sai.actor), sai.critic, unfused(sai.actor), sai.critic,
                  ReplayBuffer(cfg.experiment.mission_replay_capacity), {}, {}},
                 CellMap(cells, 0), {}, make_rng(seed, 0x1000 + i), 0.0, {}, {}, true};
      absorb_footprint(r.known, world_.robots[i]);
      robots_.push_back(std::move(r));
    }
    obs_.resize(n_robots);
    topo_.edge_positions = edge_grid(wc.arena_size, cfg.experiment.edges_per_side);
    topo_.edge_radius = cfg.aggregation.edge_radius;
    topo_.radio_range = cfg.comms.radio_range;
    topo_.link = cfg.comms.link;
    topo_.cloud_link = cfg.comms.cloud_link;
    edge_models_.assign(topo_.edge_positions.size(), sai.actor.params);
    if (method == Method::Centralized) {
      cloud_.emplace(DdpgAgent<FusedModel>{unfused(sai.actor), sai.critic, unfused(sai.actor),
                                           sai.critic,
                                           ReplayBuffer(cfg.experiment.mission_replay_capacity),
                                           {}, {}});
    }
  }

  RunResult run() {
    const auto wall0 = std::chrono::steady_clock::now();
    const auto& ex = cfg_.experiment;
    const std::size_t ticks = ex.ticks();
    std::vector<std::size_t> round_ticks;
    for (std::size_t m = 0; m < ex.rounds; ++m) {
      const auto k = static_cast<std::size_t>(std::llround(static_cast<double>(m) * ex.round_period_s / ex.dt));
      if (k >= ticks) break;
      round_ticks.push_back(k);
    }
    if (opt_.on_tick) opt_.on_tick(world_);
    std::size_t next_round = 0;
    for (std::size_t k = 0; k < ticks; ++k) {
      if (next_round < round_ticks.size() && round_ticks[next_round] == k) {
        try {
          run_round(next_round);
        } catch (const std::exception& e) {
          throw std::runtime_error("round " + std::to_string(next_round) + ": " + e.what());
        }
        ++next_round;
      }
      deliver();
      tick();
      if (opt_.on_tick) opt_.on_tick(world_);
    }

    RunResult res;
    auto& m = res.metrics;
    m.sensing_accuracy = sensing_accuracy(world_);
    m.path_efficiency = path_efficiency(world_);
    const auto rt = response_time(world_, ex.response_threshold);
    m.response_time_s = rt.seconds;
    m.censored = rt.censored;
    for (const auto& r : world_.robots) m.energy_total_j += world_.config.initial_energy - r.energy;
    m.collisions = world_.collision_log.size();
    m.bytes_transmitted = bytes_;
    m.rounds = reports_.size();
    if (opt_.record_wall_time) {
      m.wall_ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - wall0).count();
    }
    res.rounds = std::move(reports_);
    res.packets = std::move(packets_);
    return res;
  }

 private:
  double sigma() const { return cfg_.ddpg.noise_sigma_final; }

  void deliver() {
    for (auto& r : robots_) {
      auto it = r.inbox.begin();
      while (it != r.inbox.end()) {
        if (it->at > world_.clock) {
          ++it;
          continue;
        }
        if (it->model) {
          r.agent.actor = *it->model;
          r.agent.actor_target = *it->model;
          r.agent.actor_opt = {};
        }
        if (!it->map.empty()) merge_map(r.known, it->map);
        if (it->schedule) r.schedule = std::move(it->schedule);
        r.dirty = true;
        it = r.inbox.erase(it);
      }
    }
  }

  Action scheduled_action(const RobotCtx& ctx, const RobotState& r) const {
    if (!ctx.schedule) return hold_action(r);
    const auto& s = *ctx.schedule;
    const double idx = std::round((world_.clock - s.t0) / s.dt);
    if (idx < 0.0 || idx >= static_cast<double>(s.entries.size())) return hold_action(r);
    return s.entries[static_cast<std::size_t>(idx)];
  }

  void tick() {
    const std::size_t n = robots_.size();
    std::vector<Action> actions(n), commands(n);
    for (std::size_t i = 0; i < n; ++i) {
      auto& ctx = robots_[i];
      if (ctx.dirty) {
        obs_[i] = build_observation(world_, i, ctx.known, cfg_.observation);
        ctx.dirty = false;
      }
      if (!world_.robots[i].alive()) {
        commands[i] = hold_action(world_.robots[i]);
        actions[i] = unsteer(commands[i], obs_[i]);
      } else if (method_ == Method::Centralized) {
        commands[i] = scheduled_action(ctx, world_.robots[i]);
        actions[i] = unsteer(commands[i], obs_[i]);
      } else {
        actions[i] = act(ctx.agent.actor, obs_[i], sigma(), ctx.rng);
        commands[i] = steer(actions[i], obs_[i]);
      }
    }
    const auto info = step_in_place(world_, commands, cfg_.experiment.dt);
    for (std::size_t i = 0; i < n; ++i) {
      auto& ctx = robots_[i];
      if (!world_.robots[i].alive() && info[i].energy_spent == 0.0) continue;
      SensingDelta d;
      d.new_cells = static_cast<double>(absorb_footprint(ctx.known, world_.robots[i]));
      d.energy_spent = info[i].energy_spent;
      d.collision = info[i].collided;
      d.max_jaccard = max_neighbor_jaccard(world_, i);
      const double reward = sensing_reward(d, cfg_.reward);
      const Observation next = build_observation(world_, i, ctx.known, cfg_.observation);
      const Transition t{obs_[i], actions[i], reward, next, false};
      if (method_ == Method::Centralized) {
        pending_upload_.push_back(t);
      } else {
        ctx.agent.buffer.push(t);
      }
      ctx.recent.push_back(obs_[i]);
      while (ctx.recent.size() > cfg_.experiment.trajectory_window) ctx.recent.pop_front();
      obs_[i] = next;
    }
  }

  RoundReport begin_report(std::size_t m) const {
    RoundReport rep;
    rep.round = m;
    rep.time_s = world_.clock;
    rep.sensing_accuracy = sensing_accuracy(world_);
    rep.coverage = free_coverage_fraction(world_, world_.coverage);
    return rep;
  }

  void finish_report(RoundReport rep, ExchangeResult& ex) {
    rep.bytes = ex.total_bytes;
    for (std::size_t k = 0; k < ex.robots.size(); ++k) rep.completions.emplace_back(ex.robots[k], ex.completion[k]);
    for (auto id : ex.unreachable) rep.warnings.push_back("robot " + std::to_string(id) + " unreachable");
    bytes_ += ex.total_bytes;
    packets_.insert(packets_.end(), ex.packets.begin(), ex.packets.end());
    reports_.push_back(std::move(rep));
  }

  void local_training() {
    for (std::size_t i = 0; i < robots_.size(); ++i) {
      if (!world_.robots[i].alive()) continue;
      auto& ctx = robots_[i];
      for (std::size_t u = 0; u < cfg_.experiment.local_updates; ++u) ddpg_update(ctx.agent, cfg_.ddpg, ctx.rng);
    }
  }

  std::vector<std::size_t> alive_robots() const {
    std::vector<std::size_t> out;
    for (std::size_t i = 0; i < world_.robots.size(); ++i) {
      if (world_.robots[i].alive()) out.push_back(i);
    }
    return out;
  }

  std::size_t map_bytes() const {
    PayloadSpec s;
    s.mode = PayloadMode::CoverageMap;
    s.cells = world_.coverage.size();
    return payload_size(s);
  }

  void run_round(std::size_t m) {
    switch (method_) {
      case Method::LSAI: lsai_round(m); break;
      case Method::Distributed: distributed_round(m); break;
      case Method::Centralized: centralized_round(m); break;
    }
  }

  // Keeps the top fraction of an edge's selection by history (ties by id).
  std::vector<RobotId> trim_participants(std::vector<RobotId> sel) const {
    const double f = cfg_.experiment.participants_fraction;
    if (f >= 1.0 || sel.size() <= 2) return sel;
    const auto keep = std::max<std::size_t>(
        2, static_cast<std::size_t>(std::ceil(f * static_cast<double>(sel.size()))));
    std::stable_sort(sel.begin(), sel.end(), [&](RobotId a, RobotId b) {
      return robots_[a].history > robots_[b].history;
    });
    sel.resize(std::min(keep, sel.size()));
    std::sort(sel.begin(), sel.end());
    return sel;
  }

  void lsai_round(std::size_t m) {
    RoundReport rep = begin_report(m);
    local_training();
    const auto alive = alive_robots();
    const auto shapes = sai_.actor.params.shapes();
    Rng round_rng = make_rng(seed_, 0x50000 + m);

    // Group robots by edge and pick participants per edge.
    const std::size_t edges = topo_.edge_positions.size();
    std::vector<std::vector<EligibilityRecord>> per_edge(edges);
    for (auto i : alive) {
      const auto e = topo_.edge_of(world_.robots[i].position);
      if (!e) {
        rep.warnings.push_back("robot " + std::to_string(i) + " outside every edge radius");
        continue;
      }
      per_edge[*e].push_back({i, robots_[i].history, world_.robots[i].position});
    }
    std::vector<std::vector<RobotId>> chosen(edges);
    std::vector<RobotId> participants;
    for (std::size_t e = 0; e < edges; ++e) {
      if (per_edge[e].empty()) continue;
      chosen[e] = trim_participants(select_participants(per_edge[e], topo_.edge_positions[e],
                                                        topo_.edge_radius,
                                                        cfg_.aggregation.min_history, round_rng));
      participants.insert(participants.end(), chosen[e].begin(), chosen[e].end());
    }
    std::sort(participants.begin(), participants.end());
    rep.participants = participants;
    if (participants.empty()) {
      rep.warnings.push_back("no participants");
      reports_.push_back(std::move(rep));
      return;
    }

    // Fusion workload decides the modelled edge compute time and fallback.
    std::vector<bool> fallback(edges, false);
    double compute_s = 0.0;
    for (std::size_t e = 0; e < edges; ++e) {
      const double t = static_cast<double>(chosen[e].size()) * cfg_.fusion.fusion_time_per_robot_s;
      if (fallback_triggered(chosen[e].size(), cfg_.fusion.fusion_capacity, t, cfg_.fusion.deadline_s)) {
        fallback[e] = true;
        rep.warnings.push_back("edge " + std::to_string(e) + " fallback: " + std::to_string(chosen[e].size()) +
                               " robots, modelled fusion time " + format_seconds(t) + " s");
      } else {
        compute_s = std::max(compute_s, t);
      }
    }

    PayloadSpec up;
    up.mode = PayloadMode::LsaiUplink;
    up.sai_shapes = shapes;
    PayloadSpec traj;
    traj.mode = PayloadMode::CentralizedUplink;
    PayloadSpec down;
    down.mode = PayloadMode::LsaiDownlink;
    down.sai_shapes = shapes;
    down.branch_params = 0;
    for (std::size_t l = 0; l + 1 < shapes.size(); ++l) {
      down.branch_params = std::max(down.branch_params, shapes[l].output_dim * shapes[l].output_dim + shapes[l].output_dim);
    }

    ExchangeRequest req;
    req.round = m;
    req.start_time = world_.clock;
    req.server_compute_s = compute_s;
    for (auto i : participants) {
      traj.observations = robots_[i].recent.size();
      req.participants.push_back(i);
      req.positions.push_back(world_.robots[i].position);
      req.uplink_bytes.push_back(payload_size(up));
      req.uplink_extra_bytes.push_back(payload_size(traj) + map_bytes());
      const auto e = *topo_.edge_of(world_.robots[i].position);
      req.downlink_bytes.push_back(fallback[e] ? 0 : payload_size(down));
      req.downlink_extra_bytes.push_back(map_bytes());
    }
    ExchangeResult ex = round_trip_model_exchange(topo_, req);

    for (std::size_t e = 0; e < edges; ++e) {
      if (chosen[e].empty()) continue;
      std::vector<ParamVector> locals;
      for (auto i : chosen[e]) locals.push_back(robots_[i].agent.actor.base.params);
      auto agg = attention_aggregate(chosen[e], locals, edge_models_[e], cfg_.aggregation.temperature);
      for (const auto& s : agg.scores) {
        auto& h = robots_[s.robot_id].history;
        h = update_history(h, s.score, cfg_.aggregation.history_decay);
      }
      for (std::size_t k = 0; k < agg.weights.robot_ids.size(); ++k) {
        rep.weights.robot_ids.push_back(agg.weights.robot_ids[k]);
        rep.weights.weights.push_back(agg.weights.weights[k]);
      }
      rep.weights.temperature = agg.weights.temperature;
      edge_models_[e] = agg.lai;
      const MlpModel lai{agg.lai, Activation::Sigmoid};

      CellMap merged(world_.coverage.size(), 0);
      for (auto i : chosen[e]) merge_map(merged, robots_[i].known);

      for (auto i : chosen[e]) {
        auto& ctx = robots_[i];
        const double at = ex.completion_of(i).value_or(world_.clock);
        if (fallback[e]) {
          TrainingSetup local = pretrain_setup(cfg_);
          local.world.seed = mix_seed(seed_, 0xFA11 + 1000 * m + i);
          ctx.agent.actor.base =
              fallback_retrain(ctx.agent, local, cfg_.fusion.fallback_iterations(cfg_.ddpg.episodes), ctx.rng);
          ctx.dirty = true;
          ctx.inbox.push_back({at, std::nullopt, merged, std::nullopt});
          continue;
        }
        std::vector<std::vector<double>> states;
        for (const auto& o : ctx.recent) states.emplace_back(o.begin(), o.end());
        const Dataset data = distillation_set(lai, states);
        auto split = split_for_robot(lai, cfg_.splitting, data, i, cfg_.split_sgd);
        if (split.fine_tune_skipped) {
          rep.warnings.push_back("robot " + std::to_string(i) + " fine-tune skipped: no trajectory data");
        }
        FusionSnapshot snap{world_, i, merged, cfg_.observation, cfg_.experiment.dt};
        auto fr = fuse_update(ctx.agent.actor.base, split.sub, snap, data, cfg_.fusion,
                              mix_seed(seed_, 0xF0000 + 1000 * m + i));
        ctx.inbox.push_back({at, std::move(fr.fused), merged, std::nullopt});
      }
    }
    finish_report(std::move(rep), ex);
  }

  void distributed_round(std::size_t m) {
    RoundReport rep = begin_report(m);
    local_training();
    const auto alive = alive_robots();
    rep.participants = alive;
    if (alive.size() < 2) {
      reports_.push_back(std::move(rep));
      return;
    }
    PayloadSpec peer;
    peer.mode = PayloadMode::DistributedPeer;
    peer.sai_shapes = sai_.actor.params.shapes();
    Topology topo = topo_;
    topo.kind = TopologyKind::Distributed;
    ExchangeRequest req;
    req.round = m;
    req.start_time = world_.clock;
    for (auto i : alive) {
      req.participants.push_back(i);
      req.positions.push_back(world_.robots[i].position);
      req.uplink_bytes.push_back(payload_size(peer));
      req.downlink_bytes.push_back(0);
    }
    ExchangeResult ex = round_trip_model_exchange(topo, req);
    for (std::size_t a = 0; a < alive.size(); ++a) {
      const auto i = alive[a];
      std::vector<ParamVector> models{robots_[i].agent.actor.base.params};
      for (std::size_t b = 0; b < alive.size(); ++b) {
        const auto j = alive[b];
        if (a == b || distance(req.positions[a], req.positions[b]) > topo.radio_range) continue;
        models.push_back(robots_[j].agent.actor.base.params);
      }
      if (models.size() == 1) continue;
      FusedModel avg = unfused(MlpModel{fedavg(models), Activation::Sigmoid});
      robots_[i].inbox.push_back({ex.completion_of(i).value_or(world_.clock), std::move(avg), {}, std::nullopt});
    }
    finish_report(std::move(rep), ex);
  }

  void centralized_round(std::size_t m) {
    RoundReport rep = begin_report(m);
    auto& cloud = *cloud_;
    const auto alive = alive_robots();
    rep.participants = alive;
    if (alive.empty()) {
      reports_.push_back(std::move(rep));
      return;
    }
    // Observations were logged robot by robot each tick; count per robot for
    // the uplink and pool them on the cloud.
    for (std::size_t k = 0; k < pending_upload_.size(); ++k) cloud.buffer.push(pending_upload_[k]);
    const std::size_t per_robot_obs = uploaded_ticks_pending();
    pending_upload_.clear();

    Rng cloud_rng = make_rng(seed_, 0xC1000 + m);
    for (std::size_t u = 0; u < cfg_.experiment.local_updates * alive.size(); ++u) {
      ddpg_update(cloud, cfg_.ddpg, cloud_rng);
    }

    // Open-loop plan per robot: each is rolled forward alone in a copy of the
    // current world, the other robots frozen where they were reported.
    const double dt = cfg_.experiment.dt;
    const auto steps = static_cast<std::size_t>(std::llround(cfg_.experiment.round_period_s / dt));
    std::vector<Schedule> plans(robots_.size(), Schedule{world_.clock, dt, {}});
    Rng plan_rng = make_rng(seed_, 0xD1000 + m);
    for (auto i : alive) {
      WorldState sim = world_;
      CellMap known = world_.coverage;
      std::vector<Action> actions(robots_.size());
      for (std::size_t j = 0; j < robots_.size(); ++j) actions[j] = hold_action(sim.robots[j]);
      for (std::size_t s = 0; s < steps; ++s) {
        const Observation o = build_observation(sim, i, known, cfg_.observation);
        actions[i] = steer(act(cloud.actor, o, 0.0, plan_rng), o);
        plans[i].entries.push_back(actions[i]);
        step_in_place(sim, actions, dt);
        absorb_footprint(known, sim.robots[i]);
      }
    }

    PayloadSpec upl;
    upl.mode = PayloadMode::CentralizedUplink;
    upl.observations = per_robot_obs;
    PayloadSpec dnl;
    dnl.mode = PayloadMode::CentralizedDownlink;
    dnl.schedule_entries = steps;
    Topology topo = topo_;
    topo.kind = TopologyKind::Centralized;
    ExchangeRequest req;
    req.round = m;
    req.start_time = world_.clock;
    req.server_compute_s = cfg_.comms.cloud_compute_s;
    for (auto i : alive) {
      req.participants.push_back(i);
      req.positions.push_back(world_.robots[i].position);
      req.uplink_bytes.push_back(payload_size(upl));
      req.downlink_bytes.push_back(payload_size(dnl));
    }
    ExchangeResult ex = round_trip_model_exchange(topo, req);
    for (auto i : alive) {
      robots_[i].inbox.push_back({ex.completion_of(i).value_or(world_.clock), std::nullopt, {}, std::move(plans[i])});
    }
    last_upload_tick_ = world_.tick;
    finish_report(std::move(rep), ex);
  }

  std::size_t uploaded_ticks_pending() const { return world_.tick - last_upload_tick_; }

  ScenarioConfig cfg_;
  Method method_;
  std::uint64_t seed_;
  RunOptions opt_;
  const PretrainedSai& sai_;
  WorldState world_;
  std::vector<RobotCtx> robots_;
  std::vector<Observation> obs_;
  Topology topo_;
  std::vector<ParamVector> edge_models_;
  std::optional<DdpgAgent<FusedModel>> cloud_;
  std::vector<Transition> pending_upload_;
  std::size_t last_upload_tick_ = 0;
  std::size_t bytes_ = 0;
  std::vector<Packet> packets_;
  std::vector<RoundReport> reports_;
};

}  // namespace detail

inline RunResult run_method(const ScenarioConfig& cfg, Method method, std::size_t n_robots,
                            std::uint64_t seed, const PretrainedSai& sai, const RunOptions& opt = {}) {
  detail::Mission mission(cfg, method, n_robots, seed, sai, opt);
  return mission.run();
}

// ---------------------------------------------------------------------------
// Sweeps.

struct RunRow {
  std::string scenario_id;
  Method method = Method::LSAI;
  std::size_t n_robots = 0;
  std::size_t n_targets = 0;
  std::uint64_t seed = 0;
  Metrics metrics;
  bool failed = false;
  std::string error;
};

struct SummaryRow {
  Method method = Method::LSAI;
  std::size_t n_robots = 0;
  std::size_t runs = 0;    // successful
  std::size_t failed = 0;
  std::size_t censored = 0;
  // mean and sample std of each metric; censored response times count as the horizon
  double mean_accuracy = 0.0, std_accuracy = 0.0;
  double mean_path_efficiency = 0.0, std_path_efficiency = 0.0;
  double mean_response_s = 0.0, std_response_s = 0.0;
  double mean_energy_j = 0.0, std_energy_j = 0.0;
  double mean_collisions = 0.0, std_collisions = 0.0;
  double mean_bytes = 0.0, std_bytes = 0.0;
};

struct SweepSpec {
  std::vector<Method> methods;
  std::vector<std::size_t> robots;
  std::vector<std::uint64_t> seeds;
  std::size_t jobs = 1;
  bool record_wall_time = false;
};

struct SweepResult {
  std::vector<RunRow> rows;
  std::vector<SummaryRow> summary;
};

namespace detail {

inline std::pair<double, double> mean_std(const std::vector<double>& v) {
  if (v.empty()) return {0.0, 0.0};
  double s = 0.0;
  for (double x : v) s += x;
  const double mean = s / static_cast<double>(v.size());
  if (v.size() < 2) return {mean, 0.0};
  double q = 0.0;
  for (double x : v) q += (x - mean) * (x - mean);
  return {mean, std::sqrt(q / static_cast<double>(v.size() - 1))};
}

}  // namespace detail

inline std::vector<SummaryRow> summarize(const std::vector<RunRow>& rows, double horizon_s) {
  std::vector<SummaryRow> out;
  std::map<std::pair<int, std::size_t>, std::vector<const RunRow*>> cells;
  for (const auto& r : rows) cells[{static_cast<int>(r.method), r.n_robots}].push_back(&r);
  for (const auto& [key, group] : cells) {
    SummaryRow s;
    s.method = static_cast<Method>(key.first);
    s.n_robots = key.second;
    std::vector<double> acc, eff, rt, en, col, by;
    for (const auto* r : group) {
      if (r->failed) {
        ++s.failed;
        continue;
      }
      ++s.runs;
      const auto& m = r->metrics;
      if (m.censored) ++s.censored;
      acc.push_back(m.sensing_accuracy);
      eff.push_back(m.path_efficiency);
      rt.push_back(m.censored ? horizon_s : m.response_time_s);
      en.push_back(m.energy_total_j);
      col.push_back(static_cast<double>(m.collisions));
      by.push_back(static_cast<double>(m.bytes_transmitted));
    }
    std::tie(s.mean_accuracy, s.std_accuracy) = detail::mean_std(acc);
    std::tie(s.mean_path_efficiency, s.std_path_efficiency) = detail::mean_std(eff);
    std::tie(s.mean_response_s, s.std_response_s) = detail::mean_std(rt);
    std::tie(s.mean_energy_j, s.std_energy_j) = detail::mean_std(en);
    std::tie(s.mean_collisions, s.std_collisions) = detail::mean_std(col);
    std::tie(s.mean_bytes, s.std_bytes) = detail::mean_std(by);
    out.push_back(s);
  }
  return out;
}

/// Runs the full cross product. Runs are independent, so `jobs` threads pull
/// them from a shared counter; rows are sorted (method, robots, seed) after.
inline SweepResult sweep(const ScenarioConfig& cfg, const SweepSpec& spec, const PretrainedSai& sai) {
  if (spec.methods.empty() || spec.robots.empty() || spec.seeds.empty()) {
    throw std::invalid_argument("sweep: methods, robot counts and seeds must be nonempty");
  }
  std::vector<RunRow> rows;
  for (auto m : spec.methods) {
    for (auto n : spec.robots) {
      for (auto s : spec.seeds) {
        RunRow r;
        r.scenario_id = scenario_id(m, n, s);
        r.method = m;
        r.n_robots = n;
        r.n_targets = cfg.world.n_targets;
        r.seed = s;
        rows.push_back(r);
      }
    }
  }
  std::atomic<std::size_t> next{0};
  RunOptions opt;
  opt.record_wall_time = spec.record_wall_time;
  auto worker = [&] {
    for (std::size_t k = next++; k < rows.size(); k = next++) {
      auto& r = rows[k];
      try {
        r.metrics = run_method(cfg, r.method, r.n_robots, r.seed, sai, opt).metrics;
      } catch (const std::exception& e) {
        r.failed = true;
        r.error = e.what();
      }
    }
  };
  const std::size_t jobs = std::max<std::size_t>(1, std::min(spec.jobs, rows.size()));
  std::vector<std::thread> pool;
  for (std::size_t j = 1; j < jobs; ++j) pool.emplace_back(worker);
  worker();
  for (auto& t : pool) t.join();

  std::stable_sort(rows.begin(), rows.end(), [](const RunRow& a, const RunRow& b) {
    if (a.method != b.method) return static_cast<int>(a.method) < static_cast<int>(b.method);
    if (a.n_robots != b.n_robots) return a.n_robots < b.n_robots;
    return a.seed < b.seed;
  });
  SweepResult res;
  res.summary = summarize(rows, cfg.experiment.horizon_s);
  res.rows = std::move(rows);
  return res;
}

// ---------------------------------------------------------------------------
// Result files.

inline constexpr const char* kResultsColumns =
    "scenario_id,method,n_robots,n_targets,seed,sensing_accuracy,path_efficiency,response_time_s,"
    "censored,energy_total_j,collisions,bytes_transmitted,rounds,wall_ms";

inline std::string format_number(double v) {
  if (std::isnan(v)) return "nan";
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.10g", v);
  return buf;
}

inline void write_results_csv(std::ostream& os, const std::vector<RunRow>& rows) {
  os << kResultsColumns << '\n';
  for (const auto& r : rows) {
    os << r.scenario_id << ',' << method_name(r.method) << ',' << r.n_robots << ',' << r.n_targets << ','
       << r.seed << ',';
    if (r.failed) {
      os << "nan,nan,nan,failed,nan,nan,nan,nan,nan\n";
      continue;
    }
    const auto& m = r.metrics;
    os << format_number(m.sensing_accuracy) << ',' << format_number(m.path_efficiency) << ','
       << format_number(m.response_time_s) << ',' << (m.censored ? 1 : 0) << ','
       << format_number(m.energy_total_j) << ',' << m.collisions << ',' << m.bytes_transmitted << ','
       << m.rounds << ',' << format_number(m.wall_ms) << '\n';
  }
}

inline void write_summary_csv(std::ostream& os, const std::vector<SummaryRow>& rows) {
  os << "method,n_robots,runs,failed,censored,mean_sensing_accuracy,std_sensing_accuracy,"
        "mean_path_efficiency,std_path_efficiency,mean_response_time_s,std_response_time_s,"
        "mean_energy_total_j,std_energy_total_j,mean_collisions,std_collisions,"
        "mean_bytes_transmitted,std_bytes_transmitted\n";
  for (const auto& s : rows) {
    os << method_name(s.method) << ',' << s.n_robots << ',' << s.runs << ',' << s.failed << ','
       << s.censored << ',' << format_number(s.mean_accuracy) << ',' << format_number(s.std_accuracy) << ','
       << format_number(s.mean_path_efficiency) << ',' << format_number(s.std_path_efficiency) << ','
       << format_number(s.mean_response_s) << ',' << format_number(s.std_response_s) << ','
       << format_number(s.mean_energy_j) << ',' << format_number(s.std_energy_j) << ','
       << format_number(s.mean_collisions) << ',' << format_number(s.std_collisions) << ','
       << format_number(s.mean_bytes) << ',' << format_number(s.std_bytes) << '\n';
  }
}

inline void write_rounds_csv(std::ostream& os, const std::vector<RoundReport>& reports) {
  os << "round,time_s,participants,attention_weights,bytes,last_completion_s,sensing_accuracy,coverage,"
        "warnings\n";
  for (const auto& r : reports) {
    std::string parts, weights, warns;
    for (auto id : r.participants) parts += (parts.empty() ? "" : ";") + std::to_string(id);
    for (std::size_t k = 0; k < r.weights.robot_ids.size(); ++k) {
      weights += (k ? ";" : "") + std::to_string(r.weights.robot_ids[k]) + ":" + format_number(r.weights.weights[k]);
    }
    double last = r.time_s;
    for (const auto& c : r.completions) last = std::max(last, c.second);
    for (const auto& w : r.warnings) warns += (warns.empty() ? "" : "; ") + w;
    os << r.round << ',' << format_seconds(r.time_s) << ',' << parts << ',' << weights << ',' << r.bytes << ','
       << format_seconds(last) << ',' << format_number(r.sensing_accuracy) << ',' << format_number(r.coverage)
       << ",\"" << warns << "\"\n";
  }
}

}  // namespace lsai
