#pragma once

// Attention-weighted model aggregation at an edge server, plus plain FedAvg
// and participant selection from position and score history.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "lsai/model_core.hpp"
#include "lsai/rng.hpp"
#include "lsai/world.hpp"

namespace lsai {

using RobotId = std::size_t;

struct AttentionScore {
  RobotId robot_id = 0;
  double score = 0.0;
};

struct AttentionWeights {
  std::vector<RobotId> robot_ids;
  std::vector<double> weights;
  double temperature = 0.5;

  double weight_of(RobotId id) const {
    for (std::size_t k = 0; k < robot_ids.size(); ++k) {
      if (robot_ids[k] == id) return weights[k];
    }
    throw std::out_of_range("AttentionWeights: no robot " + std::to_string(id));
  }
};

struct EligibilityRecord {
  RobotId robot_id = 0;
  double historical_score = 0.0;
  Vec2 last_known_position;
};

struct AggregationConfig {
  double temperature = 0.5;
  double history_decay = 0.9;
  double min_history = -0.2;
  double edge_radius = 400.0;  // meters

  void validate() const {
    if (!(temperature > 0.0)) throw std::invalid_argument("aggregation: temperature must be > 0");
    if (!(history_decay >= 0.0 && history_decay <= 1.0)) {
      throw std::invalid_argument("aggregation: history_decay must be in [0,1]");
    }
    if (!(min_history >= -1.0 && min_history <= 1.0)) {
      throw std::invalid_argument("aggregation: min_history must be in [-1,1]");
    }
    if (!(edge_radius > 0.0)) throw std::invalid_argument("aggregation: edge_radius must be > 0");
  }
};

inline constexpr double kNormEpsilon = 1e-12;

/// Cosine between (local - global_prev) and mean_update; 0 if either norm < 1e-12.
inline double attention_score(const ParamVector& local, const ParamVector& global_prev,
                              const ParamVector& mean_update) {
  require_same_shape(local, global_prev, "attention_score");
  require_same_shape(local, mean_update, "attention_score");
  const auto& a = local.values();
  const auto& g = global_prev.values();
  const auto& m = mean_update.values();
  double dot = 0.0, nd = 0.0, nm = 0.0;
  for (std::size_t k = 0; k < a.size(); ++k) {
    const double d = a[k] - g[k];
    dot += d * m[k];
    nd += d * d;
    nm += m[k] * m[k];
  }
  nd = std::sqrt(nd);
  nm = std::sqrt(nm);
  if (nd < kNormEpsilon || nm < kNormEpsilon) return 0.0;
  return std::clamp(dot / (nd * nm), -1.0, 1.0);
}

/// Mean over participants of (theta_j - theta_g).
inline ParamVector mean_update(std::span<const ParamVector> locals, const ParamVector& global_prev) {
  if (locals.empty()) throw std::invalid_argument("mean_update: no models");
  ParamVector out(global_prev.shapes());
  auto& o = out.values();
  const auto& g = global_prev.values();
  const double inv_n = 1.0 / static_cast<double>(locals.size());
  for (const auto& p : locals) {
    require_same_shape(p, global_prev, "mean_update");
    const auto& v = p.values();
    for (std::size_t k = 0; k < o.size(); ++k) o[k] += inv_n * (v[k] - g[k]);
  }
  return out;
}

/// Softmax of score / temperature, computed relative to the max score.
inline AttentionWeights attention_weights(std::span<const AttentionScore> scores,
                                          double temperature) {
  if (scores.empty()) throw std::invalid_argument("attention_weights: empty score list");
  if (!(temperature > 0.0) || !std::isfinite(temperature)) {
    throw std::invalid_argument("attention_weights: temperature must be > 0");
  }
  AttentionWeights w;
  w.temperature = temperature;
  double top = scores.front().score;
  for (const auto& s : scores) {
    if (!std::isfinite(s.score)) throw std::invalid_argument("attention_weights: non-finite score");
    top = std::max(top, s.score);
  }
  double total = 0.0;
  for (const auto& s : scores) {
    w.robot_ids.push_back(s.robot_id);
    w.weights.push_back(std::exp((s.score - top) / temperature));
    total += w.weights.back();
  }
  for (auto& x : w.weights) x /= total;
  return w;
}

namespace detail {

inline void check_models(std::span<const ParamVector> models, const char* what) {
  if (models.empty()) throw std::invalid_argument(std::string(what) + ": empty model list");
  for (const auto& m : models) require_same_shape(m, models.front(), what);
}

// Rounding can push a weighted sum one ulp past the inputs; pin it back so the
// result stays inside the coordinate-wise hull.
inline double clamp_to_inputs(double v, std::span<const ParamVector> models, std::size_t k) {
  double lo = models.front().values()[k], hi = lo;
  for (const auto& m : models) {
    lo = std::min(lo, m.values()[k]);
    hi = std::max(hi, m.values()[k]);
  }
  return std::clamp(v, lo, hi);
}

}  // namespace detail

/// theta = sum_i w_i * theta_i, accumulated in list order.
inline ParamVector aggregate(std::span<const ParamVector> models, std::span<const double> weights) {
  detail::check_models(models, "aggregate");
  if (weights.size() != models.size()) {
    throw std::invalid_argument("aggregate: " + std::to_string(weights.size()) + " weights for " +
                                std::to_string(models.size()) + " models");
  }
  double total = 0.0;
  for (double w : weights) {
    if (!(w >= 0.0)) throw std::invalid_argument("aggregate: weights must be >= 0");
    total += w;
  }
  if (std::abs(total - 1.0) > 1e-6) {
    throw std::invalid_argument("aggregate: weights sum to " + std::to_string(total));
  }
  ParamVector out(models.front().shapes());
  auto& o = out.values();
  for (std::size_t k = 0; k < o.size(); ++k) {
    double acc = 0.0;
    for (std::size_t i = 0; i < models.size(); ++i) acc += weights[i] * models[i].values()[k];
    o[k] = detail::clamp_to_inputs(acc, models, k);
  }
  return out;
}

/// Plain federated averaging: every model weighted 1/n.
inline ParamVector fedavg(std::span<const ParamVector> models) {
  detail::check_models(models, "fedavg");
  const double inv_n = 1.0 / static_cast<double>(models.size());
  ParamVector out(models.front().shapes());
  auto& o = out.values();
  for (std::size_t k = 0; k < o.size(); ++k) {
    double acc = 0.0;
    for (const auto& m : models) acc += inv_n * m.values()[k];
    o[k] = detail::clamp_to_inputs(acc, models, k);
  }
  return out;
}

inline double update_history(double historical, double score, double decay) {
  return std::clamp(decay * historical + (1.0 - decay) * score, -1.0, 1.0);
}

/// Robots within `radius` of the edge whose history is >= min_history. With
/// fewer than two such robots the history filter is dropped: every robot in
/// radius is taken, or the nearest two overall if fewer than two are in
/// radius. Distance ties are broken by a seeded shuffle. Result is sorted by id.
inline std::vector<RobotId> select_participants(std::span<const EligibilityRecord> records,
                                                Vec2 edge_position, double radius,
                                                double min_history, Rng& rng) {
  if (!(radius > 0.0)) throw std::invalid_argument("select_participants: radius must be > 0");
  std::vector<RobotId> chosen;
  if (records.empty()) return chosen;

  std::size_t in_radius = 0;
  for (const auto& r : records) {
    if (distance(r.last_known_position, edge_position) > radius) continue;
    ++in_radius;
    if (r.historical_score >= min_history) chosen.push_back(r.robot_id);
  }
  if (chosen.size() < 2) {
    std::vector<std::size_t> order(records.size());
    for (std::size_t k = 0; k < order.size(); ++k) order[k] = k;
    std::shuffle(order.begin(), order.end(), rng);
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
      return distance(records[a].last_known_position, edge_position) <
             distance(records[b].last_known_position, edge_position);
    });
    const std::size_t take = std::min(records.size(), std::max<std::size_t>(2, in_radius));
    chosen.clear();
    for (std::size_t k = 0; k < take; ++k) chosen.push_back(records[order[k]].robot_id);
  }
  std::sort(chosen.begin(), chosen.end());
  return chosen;
}

struct AggregationResult {
  ParamVector lai;
  std::vector<AttentionScore> scores;
  AttentionWeights weights;
};

/// Scores each upload against the previous global model, softmaxes the
/// scores and returns the weighted aggregate.
inline AggregationResult attention_aggregate(std::span<const RobotId> ids,
                                             std::span<const ParamVector> locals,
                                             const ParamVector& global_prev, double temperature) {
  if (ids.size() != locals.size()) {
    throw std::invalid_argument("attention_aggregate: id/model count mismatch");
  }
  detail::check_models(locals, "attention_aggregate");
  AggregationResult res;
  const ParamVector mean = mean_update(locals, global_prev);
  for (std::size_t i = 0; i < locals.size(); ++i) {
    res.scores.push_back({ids[i], attention_score(locals[i], global_prev, mean)});
  }
  res.weights = attention_weights(res.scores, temperature);
  res.lai = aggregate(locals, res.weights.weights);
  return res;
}

}  // namespace lsai
