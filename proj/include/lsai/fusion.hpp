#pragma once

// Fusion of a robot's own policy with the sub-model it receives from the edge.
// A branch r feeds the sub-model's hidden layer r through a learnable affine
// map g^r and adds it to the policy's pre-activation at hidden layer r. Each
// candidate branch is trained on distillation data, rolled out in a cloned
// world, and the cheapest (energy + collisions) one is kept.

#include <cstddef>
#include <cstdint>
#include <limits>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "lsai/model_core.hpp"
#include "lsai/policy_rl.hpp"
#include "lsai/splitting.hpp"
#include "lsai/world.hpp"

namespace lsai {

struct ModelGraph {
  std::vector<LayerShape> layers;
  std::vector<std::size_t> injection_points;  // hidden layer index r, 1-based

  static ModelGraph of(const MlpModel& m) {
    ModelGraph g{m.params.shapes(), {}};
    for (std::size_t r = 1; r <= m.hidden_count(); ++r) g.injection_points.push_back(r);
    return g;
  }
};

enum class CombineOp { Sum };

struct FusionBranch {
  std::size_t r = 0;
  ParamVector transform;  // one layer: sub width at r -> policy width at r
  CombineOp combine_op = CombineOp::Sum;

  friend bool operator==(const FusionBranch&, const FusionBranch&) = default;
};

/// A policy with an optional fused sub-model. Without a branch it behaves as
/// the plain base network.
struct FusedModel {
  MlpModel base;
  SubModel sub;
  FusionBranch branch;

  bool fused() const noexcept { return branch.r != 0; }
};

inline FusedModel unfused(MlpModel base) { return FusedModel{std::move(base), {}, {}}; }

struct BranchObjective {
  double energy_used = 0.0;
  std::size_t collision_count = 0;
  double value = 0.0;
};

struct FusionConfig {
  std::size_t branch_train_steps = 50;
  double alpha = 1.0;   // per joule
  double beta = 10.0;   // per collision
  std::size_t rollout_steps = 20;
  SgdConfig sgd{0.05, 128};
  std::size_t fusion_capacity = 16;       // robots one edge can fuse per round
  double fusion_time_per_robot_s = 0.25;  // modelled edge compute per robot
  double deadline_s = 5.0;
  double fallback_fraction = 0.1;  // of the normal episode budget

  void validate() const {
    sgd.validate();
    if (rollout_steps < 1) throw std::invalid_argument("fusion: rollout_steps must be >= 1");
    if (alpha < 0.0 || beta < 0.0) throw std::invalid_argument("fusion: alpha, beta must be >= 0");
    if (!(fallback_fraction > 0.0 && fallback_fraction <= 1.0)) {
      throw std::invalid_argument("fusion: fallback_fraction must be in (0,1]");
    }
    if (deadline_s < 0.0 || fusion_time_per_robot_s < 0.0) {
      throw std::invalid_argument("fusion: times must be >= 0");
    }
  }

  std::size_t fallback_iterations(std::size_t normal_episodes) const {
    const auto n = static_cast<std::size_t>(
        std::llround(fallback_fraction * static_cast<double>(normal_episodes)));
    return std::max<std::size_t>(1, n);
  }
};

/// One branch per hidden layer, transforms zero-initialized.
inline std::vector<FusionBranch> enumerate_branches(const MlpModel& sai, const SubModel& sub) {
  if (sai.input_dim() != sub.model.input_dim()) {
    throw std::invalid_argument("enumerate_branches: input dims differ (" +
                                std::to_string(sai.input_dim()) + " vs " +
                                std::to_string(sub.model.input_dim()) + ")");
  }
  std::vector<FusionBranch> out;
  const std::size_t depth = std::min(sai.hidden_count(), sub.model.hidden_count());
  for (std::size_t r = 1; r <= depth; ++r) {
    const std::size_t in = sub.model.params.shapes()[r - 1].output_dim;
    const std::size_t width = sai.params.shapes()[r - 1].output_dim;
    out.push_back({r, ParamVector({LayerShape{in, width}}), CombineOp::Sum});
  }
  return out;
}

namespace detail {

/// Post-activation of hidden layer r (1-based) of `m`.
inline Batch hidden_activation(const MlpModel& m, const Batch& input, std::size_t r) {
  Batch h = input;
  for (std::size_t l = 0; l < r; ++l) {
    Batch z(m.params.shapes()[l].output_dim, input.samples);
    affine(m.params.weights(l), m.params.biases(l), h, z);
    activate(m.activation_of(l), z);
    h = std::move(z);
  }
  return h;
}

inline Batch branch_addend(const FusionBranch& b, const Batch& h_sub) {
  const auto& s = b.transform.shapes().front();
  if (h_sub.features != s.input_dim) {
    throw std::invalid_argument("fusion: transform expects " + std::to_string(s.input_dim) +
                                " sub features, got " + std::to_string(h_sub.features));
  }
  Batch out(s.output_dim, h_sub.samples);
  affine(b.transform.weights(0), b.transform.biases(0), h_sub, out);
  return out;
}

struct FusedTrace {
  Batch h_sub;
  Batch addend;
  ForwardTrace base;
};

inline FusedTrace fused_trace(const FusedModel& f, const Batch& input) {
  FusedTrace t;
  if (!f.fused()) {
    t.base = forward_trace(f.base, input);
    return t;
  }
  t.h_sub = hidden_activation(f.sub.model, input, f.branch.r);
  t.addend = branch_addend(f.branch, t.h_sub);
  const Injection inj{f.branch.r - 1, &t.addend};
  t.base = forward_trace(f.base, input, &inj);
  return t;
}

}  // namespace detail

inline Batch fused_forward(const FusedModel& f, const Batch& input) {
  return std::move(detail::fused_trace(f, input).base.acts.back());
}

inline std::vector<double> fused_forward(const FusedModel& f, std::span<const double> input) {
  return fused_forward(f, Batch::column(input)).data;
}

// Actor interface: local DDPG trains the base network through the fused
// forward pass; the sub-model and transform stay frozen until the next round.
inline Batch policy_forward(const FusedModel& f, const Batch& obs) { return fused_forward(f, obs); }

inline ParamVector policy_gradient(const FusedModel& f, const Batch& obs, const Batch& dl_dout) {
  const auto t = detail::fused_trace(f, obs);
  return std::move(backward(f.base, t.base, dl_dout).param_grad);
}

inline ParamVector& trainable_params(FusedModel& f) { return f.base.params; }

/// Gradient of the mean distillation loss with respect to the transform only.
inline ParamVector branch_gradient(const FusedModel& f, const Batch& x, const Batch& y) {
  if (!f.fused()) throw std::invalid_argument("branch_gradient: model has no branch");
  const auto t = detail::fused_trace(f, x);
  Batch g = t.base.output();
  for (std::size_t k = 0; k < g.data.size(); ++k) g.data[k] -= y.data[k];
  BackwardOptions opts;
  opts.param_grad = false;
  opts.injection_layer = f.branch.r - 1;
  const Batch dz = backward(f.base, t.base, g, opts).injection_grad;

  ParamVector grad(f.branch.transform.shapes());
  auto gw = grad.weights(0);
  auto gb = grad.biases(0);
  const std::size_t n = x.samples, in = t.h_sub.features;
  for (std::size_t o = 0; o < dz.features; ++o) {
    const double* d = dz.data.data() + o * n;
    double bsum = 0.0;
    for (std::size_t b = 0; b < n; ++b) bsum += d[b];
    gb[o] = bsum;
    for (std::size_t i = 0; i < in; ++i) {
      const double* h = t.h_sub.data.data() + i * n;
      double acc = 0.0;
      for (std::size_t b = 0; b < n; ++b) acc += d[b] * h[b];
      gw[o * in + i] = acc;
    }
  }
  return grad;
}

/// SGD on the transform of `branch` inside `fused`; base and sub are read-only.
inline FusionBranch train_branch(FusionBranch branch, const FusedModel& fused, const Dataset& data,
                                 std::size_t steps, const SgdConfig& cfg) {
  if (steps == 0) return branch;
  cfg.validate();
  if (data.empty()) throw std::invalid_argument("train_branch: empty dataset");
  if (data.front().input.size() != fused.base.input_dim() ||
      data.front().target.size() != fused.base.output_dim()) {
    throw std::invalid_argument("train_branch: dataset dims do not match fused model");
  }
  FusedModel work{fused.base, fused.sub, std::move(branch)};
  const std::size_t bs = std::min(cfg.batch_size, data.size());
  const double inv = 1.0 / static_cast<double>(bs);
  for (std::size_t step = 0; step < steps; ++step) {
    auto [x, y] = cyclic_batch(data, (step * bs) % data.size(), bs);
    const ParamVector g = branch_gradient(work, x, y);
    auto& v = work.branch.transform.values();
    const auto& gv = g.values();
    for (std::size_t k = 0; k < v.size(); ++k) v[k] -= cfg.learning_rate * (gv[k] * inv);
  }
  return std::move(work.branch);
}

/// Everything a branch rollout needs: a world to clone, which robot runs the
/// fused policy, and that robot's coverage map for its observations.
struct FusionSnapshot {
  WorldState world;
  std::size_t robot = 0;
  CellMap known;
  ObservationConfig observation;
  double dt = 1.0;
};

/// Rolls the fused actor out for `rollout_steps` in a clone of the snapshot
/// (other robots hold position) and scores alpha * energy + beta * collisions
/// involving the robot. Exploration noise is off, so the seed only matters
/// when `noise_sigma` > 0.
inline BranchObjective evaluate_branch(const FusedModel& fused, const FusionSnapshot& snap,
                                       std::size_t rollout_steps, double alpha, double beta,
                                       std::uint64_t rng_seed, double noise_sigma = 0.0) {
  if (rollout_steps < 1) throw std::invalid_argument("evaluate_branch: rollout_steps must be >= 1");
  WorldState w = snap.world;
  CellMap known = snap.known;
  Rng rng = make_rng(rng_seed, 0xB7A4);
  std::vector<Action> actions(w.robots.size(), Action{0.5, 0.0});
  BranchObjective obj;
  for (std::size_t s = 0; s < rollout_steps; ++s) {
    const Observation obs = build_observation(w, snap.robot, known, snap.observation);
    actions[snap.robot] = steer(act(fused, obs, noise_sigma, rng), obs);
    for (std::size_t j = 0; j < w.robots.size(); ++j) {
      if (j != snap.robot) actions[j] = Action{0.5, 0.0};
    }
    const auto info = step_in_place(w, actions, snap.dt);
    obj.energy_used += info[snap.robot].energy_spent;
    for (const auto& c : w.collision_log) {
      if (c.time == w.clock && (c.a == snap.robot || c.b == snap.robot)) ++obj.collision_count;
    }
    absorb_footprint(known, w.robots[snap.robot]);
  }
  obj.value = alpha * obj.energy_used + beta * static_cast<double>(obj.collision_count);
  return obj;
}

struct FuseResult {
  FusedModel fused;
  std::vector<FusionBranch> branches;  // trained, in r order
  std::vector<BranchObjective> objectives;
  std::size_t selected = 0;  // index into branches
};

/// Index of the smallest value; the first one wins ties.
inline std::size_t argmin_objective(std::span<const BranchObjective> objs) {
  if (objs.empty()) throw std::invalid_argument("argmin_objective: no branches");
  std::size_t best = 0;
  for (std::size_t k = 1; k < objs.size(); ++k) {
    if (objs[k].value < objs[best].value) best = k;
  }
  return best;
}

inline FuseResult fuse_update(const MlpModel& sai, const SubModel& sub, const FusionSnapshot& snap,
                              const Dataset& data, const FusionConfig& cfg,
                              std::uint64_t rng_seed) {
  cfg.validate();
  FuseResult res;
  for (auto b : enumerate_branches(sai, sub)) {
    FusedModel probe{sai, sub, b};
    if (!data.empty()) b = train_branch(std::move(b), probe, data, cfg.branch_train_steps, cfg.sgd);
    const FusedModel trained{sai, sub, b};
    res.objectives.push_back(
        evaluate_branch(trained, snap, cfg.rollout_steps, cfg.alpha, cfg.beta, rng_seed));
    res.branches.push_back(std::move(b));
  }
  res.selected = argmin_objective(res.objectives);
  res.fused = FusedModel{sai, sub, res.branches[res.selected]};
  return res;
}

inline bool fallback_triggered(std::size_t robots_at_edge, std::size_t fusion_capacity,
                               double fusion_elapsed_s, double deadline_s) {
  return robots_at_edge > fusion_capacity || fusion_elapsed_s > deadline_s;
}

/// Re-trains the robot's policy with `iterations` short single-robot episodes
/// on its local setup, continuing from its own replay data.
template <class Actor>
MlpModel fallback_retrain(DdpgAgent<Actor>& agent, const TrainingSetup& local,
                          std::size_t iterations, Rng& rng) {
  if (iterations < 1) throw std::invalid_argument("fallback_retrain: iterations must be >= 1");
  TrainingSetup s = local;
  s.world.n_robots = 1;
  train_episodes(agent, s, iterations, rng, s.ddpg.episodes, s.ddpg.episodes + iterations, false);
  const auto& p = trainable_params(agent.actor);
  return MlpModel{p, Activation::Sigmoid};
}

// ---------------------------------------------------------------------------
// Wire format: "LSFB" | version u16 | r u16 | in u32 | out u32 | f64 weights
// then biases.

inline std::size_t branch_wire_size(const FusionBranch& b) {
  return 4 + 2 + 2 + 4 + 4 + 8 * b.transform.size();
}

inline std::vector<std::uint8_t> serialize_branch(const FusionBranch& b) {
  const auto& s = b.transform.shapes().at(0);
  detail::ByteWriter w(branch_wire_size(b));
  w.raw("LSFB", 4);
  w.u16(1);
  w.u16(static_cast<std::uint16_t>(b.r));
  w.u32(static_cast<std::uint32_t>(s.input_dim));
  w.u32(static_cast<std::uint32_t>(s.output_dim));
  for (double v : b.transform.values()) w.f64(v);
  return w.take();
}

inline FusionBranch deserialize_branch(std::span<const std::uint8_t> bytes) {
  detail::ByteReader r(bytes);
  if (!r.expect("LSFB", 4)) throw FormatError("bad magic: not a fusion branch");
  if (r.u16("version") != 1) throw FormatError("unsupported fusion branch version");
  FusionBranch b;
  b.r = r.u16("branch index");
  const std::size_t in = r.u32("transform input dim");
  const std::size_t out = r.u32("transform output dim");
  if (b.r == 0 || in == 0 || out == 0) throw FormatError("degenerate fusion branch header");
  const std::size_t n = in * out + out;
  if (r.remaining() != 8 * n) throw FormatError("fusion branch value count mismatch");
  std::vector<double> v(n);
  for (auto& x : v) {
    x = r.f64("transform value");
    if (!std::isfinite(x)) throw FormatError("non-finite transform value");
  }
  b.transform = ParamVector({LayerShape{in, out}}, std::move(v));
  return b;
}

}  // namespace lsai
