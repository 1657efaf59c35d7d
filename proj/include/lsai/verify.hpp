#pragma once

// Self-check suites behind `lsai verify`: each compares a library routine with
// an independent brute-force oracle on seeded random fixtures.

#include <algorithm>
#include <bit>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <functional>
#include <numeric>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "lsai/aggregation.hpp"
#include "lsai/comms.hpp"
#include "lsai/experiment.hpp"
#include "lsai/fusion.hpp"
#include "lsai/model_core.hpp"
#include "lsai/run_files.hpp"
#include "lsai/splitting.hpp"
#include "lsai/trace.hpp"
#include "lsai/world.hpp"

namespace lsai {

struct SuiteResult {
  std::string name;
  bool ok = false;
  std::string detail;
  double seconds = 0.0;
};

struct VerifyOptions {
  bool fault_prune_mask = false;  // flip one mask bit in the first prune fixture
};

namespace verify {

inline MlpModel random_small_net(Rng& rng) {
  const std::size_t in = 1 + uniform_index(rng, 4);
  const std::size_t out = 1 + uniform_index(rng, 3);
  std::vector<std::size_t> hidden(1 + uniform_index(rng, 2));
  for (auto& h : hidden) h = 2 + uniform_index(rng, 4);
  const auto act = uniform_index(rng, 2) == 0 ? Activation::Sigmoid : Activation::Identity;
  return make_mlp(mlp_topology(in, hidden, out), act, rng);
}

inline std::vector<double> random_vector(Rng& rng, std::size_t n, double lo, double hi) {
  std::vector<double> v(n);
  for (auto& x : v) x = uniform(rng, lo, hi);
  return v;
}

/// Worst relative error ||g - fd|| / (||g|| + ||fd||) over 100 random nets.
inline SuiteResult gradcheck() {
  SuiteResult r{"gradcheck", false, {}, 0.0};
  auto rng = make_rng(20240101, 1);
  double worst = 0.0;
  for (int net = 0; net < 100; ++net) {
    MlpModel m = random_small_net(rng);
    const auto x = random_vector(rng, m.input_dim(), -1.0, 1.0);
    const auto y = random_vector(rng, m.output_dim(), -1.0, 1.0);
    const ParamVector g = backprop(m, x, y);
    const Batch bx = Batch::column(x), by = Batch::column(y);
    const double h = 1e-5;
    double diff = 0.0, na = 0.0, nf = 0.0;
    for (std::size_t k = 0; k < m.params.size(); ++k) {
      const double keep = m.params.values()[k];
      m.params.values()[k] = keep + h;
      const double up = mse_loss(forward_batch(m, bx), by);
      m.params.values()[k] = keep - h;
      const double down = mse_loss(forward_batch(m, bx), by);
      m.params.values()[k] = keep;
      const double fd = (up - down) / (2.0 * h);
      const double a = g.values()[k];
      diff += (a - fd) * (a - fd);
      na += a * a;
      nf += fd * fd;
    }
    const double denom = std::sqrt(na) + std::sqrt(nf);
    const double rel = denom > 0.0 ? std::sqrt(diff) / denom : 0.0;
    worst = std::max(worst, rel);
  }
  r.ok = worst < 1e-4;
  std::ostringstream d;
  d << "nets=100 worst_rel_err=" << worst;
  r.detail = d.str();
  return r;
}

inline SuiteResult softmax() {
  SuiteResult r{"softmax", false, {}, 0.0};
  auto rng = make_rng(20240101, 2);
  double worst_sum = 0.0, worst_shift = 0.0;
  for (int t = 0; t < 1000; ++t) {
    const std::size_t n = 1 + uniform_index(rng, 16);
    const double temp = uniform(rng, 0.1, 2.0);
    const double shift = uniform(rng, -100.0, 100.0);
    std::vector<AttentionScore> s(n), shifted(n);
    for (std::size_t i = 0; i < n; ++i) {
      s[i] = {i, uniform(rng, -10.0, 10.0)};
      shifted[i] = {i, s[i].score + shift};
    }
    const auto w = attention_weights(s, temp);
    const auto ws = attention_weights(shifted, temp);
    double total = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      total += w.weights[i];
      worst_shift = std::max(worst_shift, std::abs(w.weights[i] - ws.weights[i]));
    }
    worst_sum = std::max(worst_sum, std::abs(total - 1.0));
  }
  // Equal scores must reproduce plain averaging bit for bit.
  bool uniform_ok = true;
  for (int t = 0; t < 50; ++t) {
    const std::size_t n = 1 + uniform_index(rng, 12);
    const auto shapes = default_topology(kObsDim, kActDim);
    std::vector<ParamVector> models;
    std::vector<AttentionScore> s;
    for (std::size_t i = 0; i < n; ++i) {
      models.push_back(init_uniform(shapes, rng));
      s.push_back({i, 0.25});
    }
    const auto w = attention_weights(s, 0.5);
    if (aggregate(models, w.weights).values() != fedavg(models).values()) uniform_ok = false;
  }
  r.ok = worst_sum <= 1e-9 && worst_shift <= 1e-12 && uniform_ok;
  std::ostringstream d;
  d << "vectors=1000 max_sum_err=" << worst_sum << " max_shift_err=" << worst_shift
    << " uniform_equals_fedavg=" << (uniform_ok ? "yes" : "no");
  r.detail = d.str();
  return r;
}

/// Indices a sort-based oracle prunes: the floor(s * N) smallest magnitudes,
/// lower index first on ties.
inline std::vector<std::size_t> prune_oracle(const std::vector<double>& v, double s) {
  std::vector<std::size_t> idx(v.size());
  std::iota(idx.begin(), idx.end(), 0);
  std::stable_sort(idx.begin(), idx.end(),
                   [&](std::size_t a, std::size_t b) { return std::abs(v[a]) < std::abs(v[b]); });
  idx.resize(static_cast<std::size_t>(std::floor(s * static_cast<double>(v.size()))));
  std::sort(idx.begin(), idx.end());
  return idx;
}

inline SuiteResult prune(const VerifyOptions& opt = {}) {
  SuiteResult r{"prune", false, {}, 0.0};
  auto rng = make_rng(20240101, 3);
  std::size_t fixtures = 0, bad = 0;
  bool first = true;
  for (int t = 0; t < 20; ++t) {
    const std::size_t n = 10 + uniform_index(rng, 491);
    auto v = random_vector(rng, n, -1.0, 1.0);
    // a few exact ties so the tie order is exercised
    for (std::size_t k = 0; k + 1 < n; k += 17) v[k + 1] = -v[k];
    for (int tenth = 0; tenth <= 9; ++tenth) {
      const double s = tenth / 10.0;
      auto mask = build_mask(v, s);
      if (first && opt.fault_prune_mask && tenth == 5) mask.bits[n / 2] ^= 1;
      std::vector<std::size_t> zeros;
      for (std::size_t k = 0; k < n; ++k) {
        if (!mask.bits[k]) zeros.push_back(k);
      }
      const auto expect = prune_oracle(v, s);
      ++fixtures;
      if (mask.count_zeros() != static_cast<std::size_t>(std::floor(s * static_cast<double>(n))) ||
          zeros != expect) {
        ++bad;
      }
    }
    first = false;
  }
  // Masked coordinates stay exactly +0.0 through fine-tuning.
  MlpModel m = make_mlp(default_topology(kObsDim, kActDim), Activation::Sigmoid, rng);
  SubModel sub{0, m, build_mask(m.params, 0.5)};
  sub.model.params = apply_mask(sub.model.params, sub.mask);
  Dataset data;
  for (int k = 0; k < 64; ++k) {
    data.push_back({random_vector(rng, kObsDim, 0.0, 1.0), random_vector(rng, kActDim, 0.0, 1.0)});
  }
  sub = fine_tune(std::move(sub), data, 500, SgdConfig{0.05, 32});
  std::size_t leaked = 0;
  for (std::size_t k = 0; k < sub.mask.size(); ++k) {
    if (!sub.mask.bits[k] && std::bit_cast<std::uint64_t>(sub.model.params.values()[k]) != 0) ++leaked;
  }
  r.ok = bad == 0 && leaked == 0;
  std::ostringstream d;
  d << "fixtures=" << fixtures << " mismatched=" << bad << " masked_nonzero_after_500_steps=" << leaked;
  r.detail = d.str();
  return r;
}

inline SuiteResult jaccard_suite() {
  SuiteResult r{"jaccard", false, {}, 0.0};
  auto rng = make_rng(20240101, 4);
  std::size_t bad = 0;
  auto random_set = [&](std::size_t universe) {
    std::set<CellIndex> s;
    const std::size_t n = uniform_index(rng, 40);
    for (std::size_t k = 0; k < n; ++k) s.insert(static_cast<CellIndex>(uniform_index(rng, universe)));
    return CellSet(s.begin(), s.end());
  };
  for (int t = 0; t < 1000; ++t) {
    const std::size_t universe = 1 + uniform_index(rng, 80);
    const auto a = random_set(universe), b = random_set(universe);
    std::size_t inter = 0, uni = 0;
    for (std::size_t c = 0; c < universe; ++c) {
      const bool in_a = std::find(a.begin(), a.end(), static_cast<CellIndex>(c)) != a.end();
      const bool in_b = std::find(b.begin(), b.end(), static_cast<CellIndex>(c)) != b.end();
      inter += in_a && in_b;
      uni += in_a || in_b;
    }
    const double expect = uni == 0 ? 0.0 : static_cast<double>(inter) / static_cast<double>(uni);
    if (jaccard(a, b) != expect) ++bad;
  }
  r.ok = bad == 0;
  r.detail = "pairs=1000 mismatched=" + std::to_string(bad);
  return r;
}

/// Hand-computed FIFO timelines on one link.
struct LinkFixture {
  LinkConfig link;
  std::vector<std::pair<std::size_t, double>> packets;  // size, created_at
  std::vector<double> delivered;
};

inline std::vector<LinkFixture> link_fixtures() {
  return {
      // idle link: tx = size / bandwidth, plus processing
      {{1000.0, 0.5, 0.0}, {{2000, 0.0}, {1000, 10.0}}, {2.5, 11.5}},
      // back-to-back: the second waits for the first to leave the wire
      {{1e6, 0.05, 0.0}, {{500000, 0.0}, {250000, 0.1}, {250000, 0.2}}, {0.55, 0.8, 1.05}},
      // cloud backhaul adds to every packet but does not hold the wire
      {{100.0, 0.0, 2.0}, {{100, 0.0}, {100, 0.0}, {50, 5.0}}, {3.0, 4.0, 7.5}},
  };
}

/// FIFO link timelines against hand fixtures, and the energy ledger of a
/// recorded run checked through trace replay.
inline SuiteResult link_ledger() {
  SuiteResult r{"link-ledger", false, {}, 0.0};
  std::size_t link_bad = 0;
  for (const auto& fx : link_fixtures()) {
    Channel ch(fx.link);
    for (std::size_t k = 0; k < fx.packets.size(); ++k) {
      Packet p{0, "a", "b", fx.packets[k].first, fx.packets[k].second, std::nullopt};
      if (std::abs(ch.send(p, nullptr) - fx.delivered[k]) > 1e-12) ++link_bad;
    }
  }
  // Energy ledger on a recorded run, via the trace replay.
  ScenarioConfig cfg;
  cfg.world.arena_size = 60.0;
  cfg.world.n_targets = 4;
  cfg.experiment.horizon_s = 40.0;
  cfg.experiment.round_period_s = 20.0;
  cfg.experiment.rounds = 2;
  auto rng = make_rng(20240101, 5);
  const PretrainedSai sai{make_actor(rng), make_critic(rng)};
  const auto files = render_run(cfg, Method::Distributed, 3, 11, sai, true);
  std::istringstream in(files.trace);
  const auto rep = replay_trace(in);
  r.ok = link_bad == 0 && rep.ok;
  r.detail = "link_fixtures=3 link_mismatched=" + std::to_string(link_bad) +
              " ledger_replay=" + (rep.ok ? std::string("ok") : rep.message);
  return r;
}

inline SuiteResult fusion_argmin() {
  SuiteResult r{"fusion-argmin", false, {}, 0.0};
  auto rng = make_rng(20240101, 6);
  // Zero transforms leave the base network untouched, bit for bit.
  std::size_t identity_bad = 0;
  const MlpModel sai = make_actor(rng);
  const MlpModel lai = make_actor(rng);
  SubModel sub{0, lai, build_mask(lai.params, 0.3)};
  sub.model.params = apply_mask(sub.model.params, sub.mask);
  const auto branches = enumerate_branches(sai, sub);
  for (int t = 0; t < 100; ++t) {
    const auto x = random_vector(rng, kObsDim, -1.0, 2.0);
    const auto base = forward(sai, x);
    for (const auto& b : branches) {
      if (fused_forward(FusedModel{sai, sub, b}, x) != base) ++identity_bad;
    }
  }
  // Selected branch vs exhaustive re-evaluation of every branch.
  std::size_t argmin_bad = 0, seeds = 0, wrong_count = 0;
  for (std::uint64_t seed = 1; seed <= 20; ++seed, ++seeds) {
    auto srng = make_rng(seed, 0xF5);
    WorldConfig wc;
    wc.arena_size = 60.0;
    wc.n_robots = 3;
    wc.n_targets = 4;
    wc.seed = seed;
    FusionSnapshot snap{spawn(wc), 0, CellMap(wc.cell_count(), 0), {}, 1.0};
    absorb_footprint(snap.known, snap.world.robots[0]);
    const MlpModel base = make_actor(srng);
    const MlpModel edge = make_actor(srng);
    SubModel s{0, edge, build_mask(edge.params, 0.5)};
    s.model.params = apply_mask(s.model.params, s.mask);
    std::vector<std::vector<double>> states;
    for (int k = 0; k < 32; ++k) states.push_back(random_vector(srng, kObsDim, 0.0, 1.0));
    const Dataset data = distillation_set(edge, states);
    FusionConfig fc;
    fc.branch_train_steps = 10;
    const auto res = fuse_update(base, s, snap, data, fc, seed);
    if (res.branches.size() != 3) ++wrong_count;
    std::vector<double> values;
    for (const auto& b : res.branches) {
      values.push_back(
          evaluate_branch(FusedModel{base, s, b}, snap, fc.rollout_steps, fc.alpha, fc.beta, seed).value);
    }
    std::size_t best = 0;
    for (std::size_t k = 0; k < values.size(); ++k) {
      bool beats_all = true;
      for (std::size_t j = 0; j < values.size(); ++j) {
        if (values[j] < values[k] || (values[j] == values[k] && j < k)) beats_all = false;
      }
      if (beats_all) best = k;
    }
    if (res.selected != best) ++argmin_bad;
  }
  r.ok = identity_bad == 0 && argmin_bad == 0 && wrong_count == 0;
  std::ostringstream d;
  d << "identity_inputs=100 identity_mismatched=" << identity_bad << " seeds=" << seeds
    << " argmin_mismatched=" << argmin_bad << " wrong_branch_count=" << wrong_count;
  r.detail = d.str();
  return r;
}

/// Small mission used by the determinism check.
inline ScenarioConfig tiny_scenario() {
  ScenarioConfig cfg;
  cfg.world.arena_size = 60.0;
  cfg.world.n_targets = 4;
  cfg.experiment.horizon_s = 30.0;
  cfg.experiment.round_period_s = 10.0;
  cfg.experiment.rounds = 3;
  cfg.experiment.local_updates = 2;
  cfg.ddpg.batch_size = 16;
  cfg.fusion.branch_train_steps = 5;
  cfg.fusion.rollout_steps = 5;
  return cfg;
}

inline SuiteResult determinism() {
  SuiteResult r{"determinism", false, {}, 0.0};
  const auto cfg = tiny_scenario();
  auto rng = make_rng(20240101, 7);
  const PretrainedSai sai{make_actor(rng), make_critic(rng)};
  std::size_t bad = 0;
  for (auto m : kAllMethods) {
    const auto a = render_run(cfg, m, 3, 5, sai, true);
    const auto b = render_run(cfg, m, 3, 5, sai, true);
    if (a.results_csv != b.results_csv || a.rounds_csv != b.rounds_csv || a.packets_csv != b.packets_csv ||
        a.trace != b.trace) {
      ++bad;
    }
  }
  SweepSpec spec{{std::begin(kAllMethods), std::end(kAllMethods)}, {2, 3}, {1, 2}, 1, false};
  std::ostringstream s1, s2;
  write_results_csv(s1, sweep(cfg, spec, sai).rows);
  spec.jobs = 3;
  write_results_csv(s2, sweep(cfg, spec, sai).rows);
  const bool sweep_ok = s1.str() == s2.str();
  r.ok = bad == 0 && sweep_ok;
  r.detail = "runs_mismatched=" + std::to_string(bad) + " sweep_jobs1_vs_jobs3=" + (sweep_ok ? "equal" : "differ");
  return r;
}

}  // namespace verify

inline const std::vector<std::string>& verify_suite_names() {
  static const std::vector<std::string> names{"gradcheck",   "softmax",       "prune",      "jaccard",
                                              "link-ledger", "fusion-argmin", "determinism"};
  return names;
}

/// Runs the named suites (all when `only` is empty) in a fixed order.
inline std::vector<SuiteResult> run_verify(const std::vector<std::string>& only = {},
                                           const VerifyOptions& opt = {}) {
  std::vector<SuiteResult> out;
  auto want = [&](const std::string& n) {
    return only.empty() || std::find(only.begin(), only.end(), n) != only.end();
  };
  auto timed = [&](const std::string& n, const std::function<SuiteResult()>& f) {
    if (!want(n)) return;
    const auto t0 = std::chrono::steady_clock::now();
    SuiteResult res;
    try {
      res = f();
    } catch (const std::exception& e) {
      res = {n, false, std::string("exception: ") + e.what(), 0.0};
    }
    res.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    out.push_back(std::move(res));
  };
  timed("gradcheck", verify::gradcheck);
  timed("softmax", verify::softmax);
  timed("prune", [&] { return verify::prune(opt); });
  timed("jaccard", verify::jaccard_suite);
  timed("link-ledger", verify::link_ledger);
  timed("fusion-argmin", verify::fusion_argmin);
  timed("determinism", verify::determinism);
  return out;
}

}  // namespace lsai
