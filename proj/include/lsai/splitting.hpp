#pragma once

// Magnitude pruning of the edge model into per-robot sub-models: global
// ranking, binary masks, masked fine-tuning and the per-robot split schedule.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <numeric>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "lsai/model_core.hpp"

namespace lsai {

struct SparsityMask {
  std::vector<std::uint8_t> bits;  // 1 = keep
  double sparsity = 0.0;

  std::size_t size() const noexcept { return bits.size(); }
  std::size_t count_zeros() const noexcept {
    return static_cast<std::size_t>(std::count(bits.begin(), bits.end(), 0));
  }
  friend bool operator==(const SparsityMask&, const SparsityMask&) = default;
};

inline void check_sparsity(double sparsity) {
  if (!(sparsity >= 0.0 && sparsity < 1.0)) {
    throw std::invalid_argument("sparsity must be in [0,1), got " + std::to_string(sparsity));
  }
}

/// Zeros the floor(sparsity * P) smallest-magnitude prunable coordinates, P
/// being the number of prunable ones (all of them when `prunable` is empty).
/// Equal magnitudes prune the lower index first.
inline SparsityMask build_mask(std::span<const double> values, double sparsity,
                               const std::vector<bool>& prunable = {}) {
  check_sparsity(sparsity);
  if (!prunable.empty() && prunable.size() != values.size()) {
    throw std::invalid_argument("build_mask: prunable flags do not match value count");
  }
  std::vector<std::size_t> order;
  order.reserve(values.size());
  for (std::size_t k = 0; k < values.size(); ++k) {
    if (prunable.empty() || prunable[k]) order.push_back(k);
  }
  const auto n_zero =
      static_cast<std::size_t>(std::floor(sparsity * static_cast<double>(order.size())));
  std::nth_element(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(n_zero), order.end(),
                   [&](std::size_t a, std::size_t b) {
                     const double ma = std::abs(values[a]), mb = std::abs(values[b]);
                     return ma < mb || (ma == mb && a < b);
                   });
  SparsityMask mask{std::vector<std::uint8_t>(values.size(), 1), sparsity};
  for (std::size_t k = 0; k < n_zero; ++k) mask.bits[order[k]] = 0;
  return mask;
}

/// Model masks rank weights only; biases are never pruned.
inline SparsityMask build_mask(const ParamVector& params, double sparsity) {
  return build_mask(params.values(), sparsity, weight_flags(params));
}

inline std::vector<double> apply_mask(std::span<const double> values, const SparsityMask& mask) {
  if (mask.size() != values.size()) {
    throw std::invalid_argument("apply_mask: mask length " + std::to_string(mask.size()) +
                                " != value count " + std::to_string(values.size()));
  }
  std::vector<double> out(values.size());
  for (std::size_t k = 0; k < out.size(); ++k) out[k] = mask.bits[k] ? values[k] : 0.0;
  return out;
}

inline ParamVector apply_mask(const ParamVector& params, const SparsityMask& mask) {
  return ParamVector(params.shapes(), apply_mask(params.values(), mask));
}

struct SubModel {
  std::size_t robot_id = 0;
  MlpModel model;
  SparsityMask mask;

  const ParamVector& params() const noexcept { return model.params; }
  friend bool operator==(const SubModel&, const SubModel&) = default;
};

struct PruneSchedule {
  std::size_t rounds = 3;
  double final_sparsity = 0.5;
  std::size_t fine_tune_steps = 20;  // per round

  void validate() const {
    if (rounds < 1) throw std::invalid_argument("prune schedule: rounds must be >= 1");
    check_sparsity(final_sparsity);
  }

  /// Linear ramp; round is 1-based.
  double sparsity_at(std::size_t round) const {
    return final_sparsity * static_cast<double>(round) / static_cast<double>(rounds);
  }
};

/// Masked SGD: each step takes the next cyclic minibatch, zeroes the gradient
/// under the mask, and steps with the mean-over-batch gradient.
inline SubModel fine_tune(SubModel sub, const Dataset& data, std::size_t steps,
                          const SgdConfig& cfg) {
  if (steps == 0) return sub;
  cfg.validate();
  if (data.empty()) throw std::invalid_argument("fine_tune: empty dataset");
  if (sub.mask.size() != sub.model.params.size()) {
    throw std::invalid_argument("fine_tune: mask does not match model");
  }
  for (const auto& s : data) {
    if (s.input.size() != sub.model.input_dim() || s.target.size() != sub.model.output_dim()) {
      throw std::invalid_argument("fine_tune: dataset dims do not match model " +
                                  std::to_string(sub.model.input_dim()) + "->" +
                                  std::to_string(sub.model.output_dim()));
    }
  }
  const std::size_t bs = std::min(cfg.batch_size, data.size());
  const double inv = 1.0 / static_cast<double>(bs);
  auto& v = sub.model.params.values();
  for (std::size_t step = 0; step < steps; ++step) {
    auto [x, y] = cyclic_batch(data, (step * bs) % data.size(), bs);
    const ParamVector g = batch_gradient(sub.model, x, y);
    const auto& gv = g.values();
    for (std::size_t k = 0; k < v.size(); ++k) {
      v[k] = sub.mask.bits[k] ? v[k] - cfg.learning_rate * (gv[k] * inv) : 0.0;
    }
  }
  return sub;
}

/// Distillation pairs: each state labelled with the teacher's output.
inline Dataset distillation_set(const MlpModel& teacher, std::span<const std::vector<double>> states) {
  Dataset data;
  data.reserve(states.size());
  for (const auto& s : states) data.push_back({s, forward(teacher, s)});
  return data;
}

struct SplitResult {
  SubModel sub;
  bool fine_tune_skipped = false;  // steps requested but no trajectory data
};

/// Masks come from the edge model's magnitudes at the ramped sparsity of each
/// round, so every robot of an edge gets the same masks; the surviving values
/// are fine-tuned on the robot's own trajectory data.
inline SplitResult split_for_robot(const MlpModel& lai, const PruneSchedule& schedule,
                                   const Dataset& trajectory_data, std::size_t robot_id,
                                   const SgdConfig& cfg = {}) {
  schedule.validate();
  SplitResult res;
  res.sub.robot_id = robot_id;
  res.sub.model = lai;
  res.sub.mask = build_mask(lai.params, 0.0);
  const bool can_tune = !trajectory_data.empty();
  res.fine_tune_skipped = !can_tune && schedule.fine_tune_steps > 0;
  for (std::size_t round = 1; round <= schedule.rounds; ++round) {
    res.sub.mask = build_mask(lai.params, schedule.sparsity_at(round));
    res.sub.model.params = apply_mask(res.sub.model.params, res.sub.mask);
    if (can_tune) res.sub = fine_tune(std::move(res.sub), trajectory_data, schedule.fine_tune_steps, cfg);
  }
  return res;
}

// ---------------------------------------------------------------------------
// Wire format: "LSSM" | version u16 | robot id u32 | sparsity f64 |
// output activation u8 | mask length u32 | packed mask bits (LSB first) |
// embedded LSAI model bytes.

inline std::vector<std::uint8_t> serialize_submodel(const SubModel& sub) {
  const auto model = serialize(sub.model.params);
  detail::ByteWriter w(model.size() + 23 + (sub.mask.size() + 7) / 8);
  w.raw("LSSM", 4);
  w.u16(1);
  w.u32(static_cast<std::uint32_t>(sub.robot_id));
  w.f64(sub.mask.sparsity);
  w.u8(sub.model.output_activation == Activation::Sigmoid ? 1 : 0);
  w.u32(static_cast<std::uint32_t>(sub.mask.size()));
  std::vector<std::uint8_t> packed((sub.mask.size() + 7) / 8, 0);
  for (std::size_t k = 0; k < sub.mask.size(); ++k) {
    if (sub.mask.bits[k]) packed[k / 8] = static_cast<std::uint8_t>(packed[k / 8] | (1u << (k % 8)));
  }
  for (auto b : packed) w.u8(b);
  w.raw(reinterpret_cast<const char*>(model.data()), model.size());
  return w.take();
}

inline std::size_t submodel_wire_size(std::span<const LayerShape> shapes) {
  const std::size_t n = param_count(shapes);
  return 4 + 2 + 4 + 8 + 1 + 4 + (n + 7) / 8 + serialized_size(shapes);
}

inline SubModel deserialize_submodel(std::span<const std::uint8_t> bytes) {
  detail::ByteReader r(bytes);
  if (!r.expect("LSSM", 4)) throw FormatError("bad magic: not a sub-model");
  if (r.u16("version") != 1) throw FormatError("unsupported sub-model version");
  SubModel sub;
  sub.robot_id = r.u32("robot id");
  sub.mask.sparsity = r.f64("sparsity");
  const auto act = r.u8("output activation");
  if (act > 1) throw FormatError("bad output activation tag");
  sub.model.output_activation = act == 1 ? Activation::Sigmoid : Activation::Identity;
  const std::size_t n = r.u32("mask length");
  const auto packed = r.take((n + 7) / 8, "mask bits");
  sub.mask.bits.resize(n);
  for (std::size_t k = 0; k < n; ++k) sub.mask.bits[k] = (packed[k / 8] >> (k % 8)) & 1u;
  sub.model.params = deserialize(r.take(r.remaining(), "model"));
  if (sub.model.params.size() != n) throw FormatError("mask length does not match model");
  for (std::size_t k = 0; k < n; ++k) {
    if (!sub.mask.bits[k] && sub.model.params.values()[k] != 0.0) {
      throw FormatError("masked coordinate " + std::to_string(k) + " is nonzero");
    }
  }
  return sub;
}

}  // namespace lsai
