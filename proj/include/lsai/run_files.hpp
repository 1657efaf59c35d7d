#pragma once

// The files one `run` writes, rendered in memory so the CLI and the
// determinism checks share one code path.

#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "lsai/experiment.hpp"
#include "lsai/trace.hpp"

namespace lsai {

struct RunFiles {
  RunRow row;
  std::vector<RoundReport> rounds;
  std::string results_csv;
  std::string rounds_csv;
  std::string packets_csv;
  std::string trace;  // empty unless requested
};

inline RunFiles render_run(const ScenarioConfig& cfg, Method method, std::size_t n_robots,
                           std::uint64_t seed, const PretrainedSai& sai, bool with_trace,
                           bool record_wall_time = false) {
  std::ostringstream trace_os;
  std::optional<TraceWriter> tw;
  if (with_trace) tw.emplace(trace_os, cfg.experiment.dt, cfg.experiment.ticks());
  RunOptions opt;
  opt.record_wall_time = record_wall_time;
  bool first = true;
  if (tw) {
    opt.on_tick = [&](const WorldState& w) {
      if (first) tw->header(w);
      first = false;
      tw->tick(w);
    };
  }
  auto res = run_method(cfg, method, n_robots, seed, sai, opt);
  if (tw) tw->finish();

  RunFiles f;
  f.row.scenario_id = scenario_id(method, n_robots, seed);
  f.row.method = method;
  f.row.n_robots = n_robots;
  f.row.n_targets = cfg.world.n_targets;
  f.row.seed = seed;
  f.row.metrics = res.metrics;
  std::ostringstream r, rd, p;
  write_results_csv(r, {f.row});
  write_rounds_csv(rd, res.rounds);
  write_packet_log_header(p);
  write_packet_log(p, res.packets);
  f.results_csv = r.str();
  f.rounds_csv = rd.str();
  f.packets_csv = p.str();
  f.trace = trace_os.str();
  f.rounds = std::move(res.rounds);
  return f;
}

}  // namespace lsai
