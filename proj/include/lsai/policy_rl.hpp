#pragma once

// DDPG actor-critic for sensing-path planning: observations, replay buffer,
// TD targets, soft target updates and the coverage/energy/collision/overlap
// reward.
//
// The DDPG routines are templates over the actor type. An actor `A` provides,
// via ADL:
//   Batch        policy_forward(const A&, const Batch& obs);
//   ParamVector  policy_gradient(const A&, const Batch& obs, const Batch& dl_dout);
//   ParamVector& trainable_params(A&);
// MlpModel is the plain case; fused actors live in fusion.hpp.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <limits>
#include <numbers>
#include <span>
#include <stdexcept>
#include <vector>

#include "lsai/model_core.hpp"
#include "lsai/rng.hpp"
#include "lsai/world.hpp"

namespace lsai {

inline constexpr std::size_t kNeighbors = 3;
inline constexpr std::size_t kObsDim = 2 + 1 + 2 * kNeighbors + 2 + 1;
inline constexpr std::size_t kActDim = 2;

using Observation = std::array<double, kObsDim>;

struct ObservationConfig {
  std::size_t region_cells = 4;  // side of an uncovered-region block, in cells
  double neighbor_range = 60.0;  // other robots are perceived within this distance
};

struct RegionTarget {
  bool found = false;
  Vec2 centroid;
};

/// Nearest block with uncovered free cells, by distance to the centroid of
/// those cells; blocks whose known-covered free fraction is below one half
/// come first. Blocks whose centroid is closer to one of `others` are left to
/// that robot (the first `tie_before` of them also win exact ties), unless
/// that leaves nothing.
inline RegionTarget nearest_uncovered_region(const WorldState& w, Vec2 from, const CellMap& known,
                                             const ObservationConfig& oc = {},
                                             std::span<const Vec2> others = {},
                                             std::size_t tie_before = 0) {
  const auto& cfg = w.config;
  const std::size_t n = cfg.cells_per_side();
  const std::size_t bs = std::max<std::size_t>(1, oc.region_cells);
  // Candidates ranked by (sparse block, owned by us); lower tier wins.
  RegionTarget best[4];
  double best_d[4];
  for (auto& d : best_d) d = std::numeric_limits<double>::infinity();
  for (std::size_t by = 0; by < n; by += bs) {
    for (std::size_t bx = 0; bx < n; bx += bs) {
      std::size_t free = 0, covered = 0;
      double sx = 0.0, sy = 0.0;
      for (std::size_t cy = by; cy < std::min(n, by + bs); ++cy) {
        for (std::size_t cx = bx; cx < std::min(n, bx + bs); ++cx) {
          const std::size_t c = cy * n + cx;
          if (w.obstacles[c]) continue;
          ++free;
          if (known[c]) {
            ++covered;
          } else {
            sx += (static_cast<double>(cx) + 0.5) * cfg.cell_size;
            sy += (static_cast<double>(cy) + 0.5) * cfg.cell_size;
          }
        }
      }
      if (covered == free) continue;
      const double k = static_cast<double>(free - covered);
      const Vec2 centroid{sx / k, sy / k};
      const double d = distance(from, centroid);
      bool mine = true;
      for (std::size_t j = 0; j < others.size(); ++j) {
        const double od = distance(others[j], centroid);
        if (od < d || (od == d && j < tie_before)) {
          mine = false;
          break;
        }
      }
      const std::size_t tier = (2 * covered >= free ? 2 : 0) + (mine ? 0 : 1);
      if (d < best_d[tier]) {
        best_d[tier] = d;
        best[tier] = {true, centroid};
      }
    }
  }
  for (const auto& b : best) {
    if (b.found) return b;
  }
  return {};
}

/// Observation of robot `i`, using `known` as its view of covered cells.
inline Observation build_observation(const WorldState& w, std::size_t i, const CellMap& known,
                                     const ObservationConfig& oc = {}) {
  const auto& cfg = w.config;
  const auto& me = w.robots.at(i);
  const double L = cfg.arena_size;
  Observation obs{};
  obs[0] = 2.0 * me.position.x / L - 1.0;
  obs[1] = 2.0 * me.position.y / L - 1.0;
  obs[2] = cfg.initial_energy > 0.0 ? std::clamp(me.energy / cfg.initial_energy, 0.0, 1.0) : 0.0;

  std::vector<std::pair<double, std::size_t>> nbrs;
  for (std::size_t j = 0; j < w.robots.size(); ++j) {
    if (j == i || !w.robots[j].alive()) continue;
    const double d = distance(me.position, w.robots[j].position);
    if (d <= oc.neighbor_range) nbrs.emplace_back(d, j);
  }
  std::sort(nbrs.begin(), nbrs.end());
  for (std::size_t k = 0; k < kNeighbors && k < nbrs.size(); ++k) {
    const Vec2 rel = w.robots[nbrs[k].second].position - me.position;
    obs[3 + 2 * k] = rel.x / L;
    obs[4 + 2 * k] = rel.y / L;
  }

  std::vector<Vec2> others;
  std::size_t lower = 0;
  for (const auto& [d, j] : nbrs) {
    if (j < i) ++lower;
  }
  for (const auto& [d, j] : nbrs) {
    if (j < i) others.push_back(w.robots[j].position);
  }
  for (const auto& [d, j] : nbrs) {
    if (j > i) others.push_back(w.robots[j].position);
  }
  const auto region = nearest_uncovered_region(w, me.position, known, oc, others, lower);
  if (region.found) {
    const Vec2 d = region.centroid - me.position;
    obs[9] = wrap_angle(std::atan2(d.y, d.x)) / std::numbers::pi - 1.0;
    obs[10] = norm(d) / (L * std::numbers::sqrt2);
  }

  // Known-covered or blocked fraction of the disk one sensing radius ahead.
  const double r = cfg.sensing_radius;
  Vec2 ahead = me.position + r * Vec2{std::cos(me.heading), std::sin(me.heading)};
  ahead.x = std::clamp(ahead.x, 0.0, L);
  ahead.y = std::clamp(ahead.y, 0.0, L);
  std::size_t total = 0, covered = 0;
  for (auto c : footprint(ahead, r, cfg)) {
    ++total;
    covered += (w.obstacles[c] || known[c]) ? 1 : 0;
  }
  obs[11] = total == 0 ? 1.0 : static_cast<double>(covered) / static_cast<double>(total);
  return obs;
}

inline Action to_action(std::span<const double> out) { return {out[0], out[1]}; }

// ---------------------------------------------------------------------------
// Actor interface for plain MLPs.

inline Batch policy_forward(const MlpModel& actor, const Batch& obs) {
  return forward_batch(actor, obs);
}

inline ParamVector policy_gradient(const MlpModel& actor, const Batch& obs, const Batch& dl_dout) {
  const auto trace = forward_trace(actor, obs);
  return std::move(backward(actor, trace, dl_dout).param_grad);
}

inline ParamVector& trainable_params(MlpModel& actor) { return actor.params; }

/// Deterministic actor output plus N(0, sigma) per component, clamped to [0, 1].
template <class Actor>
Action act(const Actor& actor, const Observation& obs, double noise_sigma, Rng& rng) {
  const Batch out = policy_forward(actor, Batch::column(obs));
  Action a{out.data[0], out.data[1]};
  if (noise_sigma > 0.0) {
    a.heading += gaussian(rng, noise_sigma);
    a.speed_fraction += gaussian(rng, noise_sigma);
  }
  a.heading = std::clamp(a.heading, 0.0, 1.0);
  a.speed_fraction = std::clamp(a.speed_fraction, 0.0, 1.0);
  return a;
}

/// Policy actions are egocentric: the heading output is an offset, in turns,
/// from the bearing to the nearest uncovered region (0.5 = straight at it).
/// steer() maps one to the absolute world command; unsteer() inverts it.
inline Action steer(const Action& policy, const Observation& obs) {
  double h = 0.5 * (obs[9] + 1.0) + policy.heading - 0.5;
  h -= std::floor(h);
  return {h, policy.speed_fraction};
}

inline Action unsteer(const Action& world, const Observation& obs) {
  double h = world.heading - 0.5 * (obs[9] + 1.0) + 0.5;
  h -= std::floor(h);
  return {h, world.speed_fraction};
}

inline Action random_action(Rng& rng) { return {uniform(rng, 0.0, 1.0), uniform(rng, 0.0, 1.0)}; }

inline double critic_target(double reward, bool done, double q_next, double gamma) {
  return reward + (done ? 0.0 : gamma * q_next);
}

// ---------------------------------------------------------------------------
// Replay buffer (FIFO ring).

struct Transition {
  Observation obs{};
  Action action;
  double reward = 0.0;
  Observation next_obs{};
  bool done = false;
};

class ReplayBuffer {
 public:
  explicit ReplayBuffer(std::size_t capacity = 50000) : capacity_(capacity) {
    if (capacity_ == 0) throw std::invalid_argument("ReplayBuffer: capacity must be >= 1");
  }

  void push(const Transition& t) {
    if (items_.size() < capacity_) {
      items_.push_back(t);
    } else {
      items_[head_] = t;
      head_ = (head_ + 1) % capacity_;
    }
    ++pushed_;
  }

  std::size_t size() const noexcept { return items_.size(); }
  std::size_t capacity() const noexcept { return capacity_; }
  std::size_t total_pushed() const noexcept { return pushed_; }

  /// i-th oldest entry still held.
  const Transition& at(std::size_t i) const { return items_.at((head_ + i) % items_.size()); }

  std::vector<std::size_t> sample_indices(std::size_t n, Rng& rng) const {
    std::vector<std::size_t> idx(n);
    for (auto& k : idx) k = uniform_index(rng, items_.size());
    return idx;
  }

 private:
  std::size_t capacity_;
  std::vector<Transition> items_;
  std::size_t head_ = 0;
  std::size_t pushed_ = 0;
};

// ---------------------------------------------------------------------------
// Configuration and agent.

enum class Optimizer { Sgd, Adam };

struct DdpgConfig {
  double gamma = 0.99;
  std::size_t batch_size = 128;
  double actor_lr = 3e-4;
  double critic_lr = 1e-2;
  double tau = 0.01;
  double noise_sigma = 0.1;
  double noise_sigma_final = 0.01;
  std::size_t episodes = 300;
  std::size_t steps_per_episode = 100;
  std::size_t update_every = 1;
  std::size_t warmup_steps = 2500;  // uniform-random actions before the actor takes over
  std::size_t replay_capacity = 50000;
  double grad_clip = 10.0;
  Optimizer optimizer = Optimizer::Adam;
  // Scale dQ/da by the distance to the bound it pushes toward, so sigmoid
  // outputs are not driven into saturation.
  bool invert_gradients = true;

  void validate() const {
    if (!(gamma > 0.0 && gamma <= 1.0)) throw std::invalid_argument("ddpg: gamma must be in (0,1]");
    if (!(tau >= 0.0 && tau <= 1.0)) throw std::invalid_argument("ddpg: tau must be in [0,1]");
    if (batch_size < 1) throw std::invalid_argument("ddpg: batch_size must be >= 1");
    if (!(actor_lr > 0.0) || !(critic_lr > 0.0)) {
      throw std::invalid_argument("ddpg: learning rates must be > 0");
    }
    if (noise_sigma < 0.0 || noise_sigma_final < 0.0) {
      throw std::invalid_argument("ddpg: noise scales must be >= 0");
    }
    if (steps_per_episode < 1 || update_every < 1 || replay_capacity < 1) {
      throw std::invalid_argument("ddpg: step counts must be >= 1");
    }
  }

  /// Linear decay from noise_sigma to noise_sigma_final across the episode budget.
  double sigma_at(std::size_t episode, std::size_t total) const {
    if (total <= 1) return noise_sigma;
    const double f = static_cast<double>(std::min(episode, total - 1)) /
                     static_cast<double>(total - 1);
    return noise_sigma + f * (noise_sigma_final - noise_sigma);
  }
};

/// Adam moments for one parameter vector; empty until the first step.
struct AdamState {
  std::vector<double> m, v;
  std::uint64_t t = 0;
};

inline void adam_step(ParamVector& p, const ParamVector& grad, AdamState& st, double lr,
                      double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8) {
  require_same_shape(p, grad, "adam_step");
  auto& v = p.values();
  const auto& g = grad.values();
  if (st.m.size() != v.size()) {
    st.m.assign(v.size(), 0.0);
    st.v.assign(v.size(), 0.0);
    st.t = 0;
  }
  ++st.t;
  const double c1 = 1.0 - std::pow(beta1, static_cast<double>(st.t));
  const double c2 = 1.0 - std::pow(beta2, static_cast<double>(st.t));
  for (std::size_t k = 0; k < v.size(); ++k) {
    st.m[k] = beta1 * st.m[k] + (1.0 - beta1) * g[k];
    st.v[k] = beta2 * st.v[k] + (1.0 - beta2) * g[k] * g[k];
    v[k] -= lr * (st.m[k] / c1) / (std::sqrt(st.v[k] / c2) + eps);
  }
}

template <class Actor>
struct DdpgAgent {
  Actor actor;
  MlpModel critic;
  Actor actor_target;
  MlpModel critic_target;
  ReplayBuffer buffer;
  AdamState actor_opt;
  AdamState critic_opt;
};

inline MlpModel make_actor(Rng& rng) {
  return make_mlp(default_topology(kObsDim, kActDim), Activation::Sigmoid, rng);
}

inline MlpModel make_critic(Rng& rng) {
  return make_mlp(default_topology(kObsDim + kActDim, 1), Activation::Identity, rng);
}

inline DdpgAgent<MlpModel> make_agent(Rng& rng, std::size_t replay_capacity = 50000) {
  auto actor = make_actor(rng);
  auto critic = make_critic(rng);
  return {actor, critic, actor, critic, ReplayBuffer(replay_capacity), {}, {}};
}

/// target <- tau * online + (1 - tau) * target
inline void soft_update(ParamVector& target, const ParamVector& online, double tau) {
  require_same_shape(target, online, "soft_update");
  auto& t = target.values();
  const auto& o = online.values();
  for (std::size_t k = 0; k < t.size(); ++k) t[k] = tau * o[k] + (1.0 - tau) * t[k];
}

namespace detail {

inline Batch critic_input(const Batch& obs, const Batch& act) {
  Batch x(kObsDim + kActDim, obs.samples);
  std::copy(obs.data.begin(), obs.data.end(), x.data.begin());
  std::copy(act.data.begin(), act.data.end(), x.data.begin() + static_cast<std::ptrdiff_t>(obs.data.size()));
  return x;
}

inline void apply_grad(ParamVector& p, ParamVector grad, AdamState& st, double lr,
                       const DdpgConfig& cfg) {
  clip_norm(grad, cfg.grad_clip);
  if (cfg.optimizer == Optimizer::Adam) {
    adam_step(p, grad, st, lr);
    return;
  }
  auto& v = p.values();
  const auto& g = grad.values();
  for (std::size_t k = 0; k < v.size(); ++k) v[k] -= lr * g[k];
}

}  // namespace detail

struct UpdateStats {
  bool applied = false;
  double critic_loss = 0.0;
  double mean_q = 0.0;
};

/// One DDPG step on `batch` (indices into the agent's buffer).
template <class Actor>
UpdateStats ddpg_update_on(DdpgAgent<Actor>& agent, std::span<const std::size_t> batch,
                           const DdpgConfig& cfg) {
  const std::size_t n = batch.size();
  Batch obs(kObsDim, n), next(kObsDim, n), act(kActDim, n);
  std::vector<double> reward(n), done(n);
  for (std::size_t b = 0; b < n; ++b) {
    const auto& t = agent.buffer.at(batch[b]);
    obs.set_sample(b, t.obs);
    next.set_sample(b, t.next_obs);
    act.at(0, b) = t.action.heading;
    act.at(1, b) = t.action.speed_fraction;
    reward[b] = t.reward;
    done[b] = t.done ? 1.0 : 0.0;
  }

  // Critic: regress Q(s, a) toward r + gamma * Q'(s', mu'(s')).
  const Batch next_act = policy_forward(agent.actor_target, next);
  const Batch q_next = forward_batch(agent.critic_target, detail::critic_input(next, next_act));
  const auto ctrace = forward_trace(agent.critic, detail::critic_input(obs, act));
  Batch dq(1, n);
  UpdateStats stats;
  const double inv_n = 1.0 / static_cast<double>(n);
  for (std::size_t b = 0; b < n; ++b) {
    const double y = critic_target(reward[b], done[b] != 0.0, q_next.data[b], cfg.gamma);
    const double err = ctrace.output().data[b] - y;
    dq.data[b] = err * inv_n;
    stats.critic_loss += 0.5 * err * err * inv_n;
  }
  auto cgrad = backward(agent.critic, ctrace, dq).param_grad;
  detail::apply_grad(agent.critic.params, std::move(cgrad), agent.critic_opt, cfg.critic_lr, cfg);

  // Actor: ascend Q(s, mu(s)) through the updated critic.
  const Batch mu = policy_forward(agent.actor, obs);
  const auto qtrace = forward_trace(agent.critic, detail::critic_input(obs, mu));
  Batch neg(1, n);
  for (std::size_t b = 0; b < n; ++b) {
    neg.data[b] = -inv_n;
    stats.mean_q += qtrace.output().data[b] * inv_n;
  }
  BackwardOptions opts;
  opts.param_grad = false;
  opts.input_grad = true;
  const auto dx = backward(agent.critic, qtrace, neg, opts).input_grad;
  Batch dl_da(kActDim, n);
  std::copy(dx.data.begin() + static_cast<std::ptrdiff_t>(kObsDim * n), dx.data.end(),
            dl_da.data.begin());
  if (cfg.invert_gradients) {
    for (std::size_t k = 0; k < dl_da.data.size(); ++k) {
      const double a = mu.data[k];
      // dl_da < 0 means the loss falls as a grows, i.e. Q pushes a up.
      dl_da.data[k] *= dl_da.data[k] < 0.0 ? (1.0 - a) : a;
    }
  }
  auto agrad = policy_gradient(agent.actor, obs, dl_da);
  detail::apply_grad(trainable_params(agent.actor), std::move(agrad), agent.actor_opt, cfg.actor_lr,
                     cfg);

  soft_update(trainable_params(agent.actor_target), trainable_params(agent.actor), cfg.tau);
  soft_update(agent.critic_target.params, agent.critic.params, cfg.tau);
  stats.applied = true;
  return stats;
}

/// Samples a minibatch and updates; a no-op (applied == false) while the
/// buffer holds fewer than batch_size transitions.
template <class Actor>
UpdateStats ddpg_update(DdpgAgent<Actor>& agent, const DdpgConfig& cfg, Rng& rng) {
  if (agent.buffer.size() < cfg.batch_size) return {};
  const auto idx = agent.buffer.sample_indices(cfg.batch_size, rng);
  return ddpg_update_on(agent, idx, cfg);
}

// ---------------------------------------------------------------------------
// Reward.

struct RewardWeights {
  double coverage = 1.0;
  double energy = 0.05;  // per joule
  double collision = 5.0;
  double overlap = 2.0;
  double jaccard_threshold = 0.2;
};

struct SensingDelta {
  double new_cells = 0.0;
  double energy_spent = 0.0;
  bool collision = false;
  double max_jaccard = 0.0;
};

struct RewardTerms {
  double coverage = 0.0;
  double energy = 0.0;
  double collision = 0.0;
  double overlap = 0.0;
  double total() const { return coverage - energy - collision - overlap; }
};

inline RewardTerms reward_terms(const SensingDelta& d, const RewardWeights& w) {
  return {w.coverage * d.new_cells, w.energy * d.energy_spent, d.collision ? w.collision : 0.0,
          w.overlap * std::max(0.0, d.max_jaccard - w.jaccard_threshold)};
}

inline double sensing_reward(const SensingDelta& d, const RewardWeights& w = {}) {
  return reward_terms(d, w).total();
}

/// Max Jaccard overlap between robot i's footprint and any other live robot's.
inline double max_neighbor_jaccard(const WorldState& w, std::size_t i) {
  double best = 0.0;
  for (std::size_t j = 0; j < w.robots.size(); ++j) {
    if (j == i || !w.robots[j].alive()) continue;
    best = std::max(best, jaccard(w.robots[i].footprint, w.robots[j].footprint));
  }
  return best;
}

/// Marks robot i's footprint into `known`; returns how many cells were new.
inline std::size_t absorb_footprint(CellMap& known, const RobotState& r) {
  std::size_t fresh = 0;
  for (auto c : r.footprint) {
    if (!known[c]) {
      known[c] = 1;
      ++fresh;
    }
  }
  return fresh;
}

inline double free_coverage_fraction(const WorldState& w, const CellMap& covered) {
  std::size_t free = 0, cov = 0;
  for (std::size_t c = 0; c < covered.size(); ++c) {
    if (w.obstacles[c]) continue;
    ++free;
    cov += covered[c] ? 1 : 0;
  }
  return free == 0 ? 0.0 : static_cast<double>(cov) / static_cast<double>(free);
}

// ---------------------------------------------------------------------------
// Training episodes. Every robot of the episode world acts with the shared
// actor, keeps its own known-coverage map and feeds the one replay buffer.

struct TrainingSetup {
  WorldConfig world;
  DdpgConfig ddpg;
  RewardWeights reward;
  ObservationConfig observation;
  double dt = 1.0;
};

struct TrainingLog {
  std::vector<double> episode_coverage;  // free-cell coverage fraction at episode end
  std::vector<double> episode_return;    // summed over robots
};

/// Runs `episodes` training episodes starting at episode index `first_episode`
/// (which sets the exploration-noise schedule position and world seeds).
/// `warmup` toggles the uniform-random warmup phase.
template <class Actor>
TrainingLog train_episodes(DdpgAgent<Actor>& agent, const TrainingSetup& setup,
                           std::size_t episodes, Rng& rng, std::size_t first_episode = 0,
                           std::size_t schedule_length = 0, bool warmup = true) {
  setup.ddpg.validate();
  if (setup.world.n_robots < 1) throw std::invalid_argument("train_episodes: need a robot");
  const std::size_t total = schedule_length == 0 ? episodes : schedule_length;
  const std::size_t n = setup.world.n_robots;
  TrainingLog log;
  WorldConfig wc = setup.world;
  std::vector<Action> actions(n), commands(n);
  std::vector<Observation> obs(n);
  for (std::size_t e = 0; e < episodes; ++e) {
    const std::size_t ep = first_episode + e;
    wc.seed = mix_seed(setup.world.seed, 0xE0000 + ep);
    WorldState w = spawn(wc);
    std::vector<CellMap> known(n);
    for (std::size_t i = 0; i < n; ++i) {
      known[i].assign(w.coverage.size(), 0);
      absorb_footprint(known[i], w.robots[i]);
    }
    const double sigma = setup.ddpg.sigma_at(ep, total);
    double ret = 0.0;
    for (std::size_t i = 0; i < n; ++i) obs[i] = build_observation(w, i, known[i], setup.observation);
    for (std::size_t s = 0; s < setup.ddpg.steps_per_episode; ++s) {
      const std::size_t global_step = ep * setup.ddpg.steps_per_episode + s;
      const bool random = warmup && global_step < setup.ddpg.warmup_steps;
      for (std::size_t i = 0; i < n; ++i) {
        actions[i] = random ? random_action(rng) : act(agent.actor, obs[i], sigma, rng);
      }
      for (std::size_t i = 0; i < n; ++i) commands[i] = steer(actions[i], obs[i]);
      const auto info = step_in_place(w, commands, setup.dt);
      const bool done = s + 1 == setup.ddpg.steps_per_episode;
      for (std::size_t i = 0; i < n; ++i) {
        if (!w.robots[i].alive() && info[i].energy_spent == 0.0) continue;
        SensingDelta d;
        d.new_cells = static_cast<double>(absorb_footprint(known[i], w.robots[i]));
        d.energy_spent = info[i].energy_spent;
        d.collision = info[i].collided;
        d.max_jaccard = n > 1 ? max_neighbor_jaccard(w, i) : 0.0;
        const double r = sensing_reward(d, setup.reward);
        ret += r;
        const Observation next = build_observation(w, i, known[i], setup.observation);
        agent.buffer.push({obs[i], actions[i], r, next, done});
        obs[i] = next;
      }
      if ((s + 1) % setup.ddpg.update_every == 0) ddpg_update(agent, setup.ddpg, rng);
    }
    CellMap uni(w.coverage.size(), 0);
    for (const auto& k : known) {
      for (std::size_t c = 0; c < uni.size(); ++c) uni[c] |= k[c];
    }
    log.episode_coverage.push_back(free_coverage_fraction(w, uni));
    log.episode_return.push_back(ret);
  }
  return log;
}

}  // namespace lsai
