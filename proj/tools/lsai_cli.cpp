// Command-line front end: run, sweep, verify, replay, pretrain.
// Exit codes: 0 success, 1 runtime failure, 2 configuration or usage error.
// Progress lines on stdout are space-separated key=value pairs.

#include <CLI11.hpp>
#include <json.hpp>

#include <filesystem>
#include <fstream>
#include <iostream>
#include <iterator>
#include <sstream>
#include <string>
#include <vector>

#include "lsai.hpp"

namespace fs = std::filesystem;
using namespace lsai;

namespace {

constexpr int kExitRuntime = 1;
constexpr int kExitConfig = 2;

struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

void write_file(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  out << text;
  if (!out) throw std::runtime_error("cannot write " + path.string());
}

std::string quote(const std::string& s) {
  if (s.find_first_of(" \t\"=") == std::string::npos && !s.empty()) return s;
  std::string q = "\"";
  for (char c : s) {
    if (c == '"' || c == '\\') q += '\\';
    q += c;
  }
  return q + "\"";
}

ScenarioConfig load_config(const std::string& path) {
  if (path.empty()) return ScenarioConfig{};
  return load_scenario(path);
}

PretrainedSai obtain_sai(const ScenarioConfig& cfg) {
  const auto& path = cfg.experiment.pretrained_model;
  if (path.empty()) {
    std::cout << "event=pretrain episodes=" << cfg.ddpg.episodes << " robots=" << cfg.experiment.pretrain_robots
              << " seed=" << cfg.experiment.pretrain_seed << std::endl;
    return pretrain_sai(cfg);
  }
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("experiment.pretrained_model", "cannot read " + path);
  const std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), {});
  try {
    return deserialize_pretrained(bytes);
  } catch (const FormatError& e) {
    throw ConfigError("experiment.pretrained_model", path + ": " + e.what());
  }
}

Method require_method(const std::string& name) {
  const auto m = parse_method(name);
  if (!m) throw UsageError("unknown method '" + name + "' (expected LSAI, Centralized or Distributed)");
  return *m;
}

std::vector<std::size_t> parse_robot_list(const std::string& raw) {
  std::vector<std::size_t> out;
  std::stringstream ss(raw);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (item.empty()) continue;
    std::size_t pos = 0;
    unsigned long v = 0;
    try {
      v = std::stoul(item, &pos);
    } catch (const std::exception&) {
      pos = 0;
    }
    if (pos != item.size() || v == 0) throw UsageError("bad robot count '" + item + "'");
    out.push_back(v);
  }
  if (out.empty()) throw UsageError("--robots must list at least one robot count");
  return out;
}

nlohmann::ordered_json summary_json(const ScenarioConfig& cfg, const SweepSpec& spec,
                                    const SweepResult& res) {
  nlohmann::ordered_json j;
  j["horizon_s"] = cfg.experiment.horizon_s;
  j["response_threshold"] = cfg.experiment.response_threshold;
  j["arena_size"] = cfg.world.arena_size;
  j["n_targets"] = cfg.world.n_targets;
  j["seeds"] = spec.seeds;
  j["censored_response_counts_as"] = "horizon_s";
  auto& cells = j["cells"] = nlohmann::ordered_json::array();
  for (const auto& s : res.summary) {
    nlohmann::ordered_json c;
    c["method"] = method_name(s.method);
    c["n_robots"] = s.n_robots;
    c["runs"] = s.runs;
    c["failed"] = s.failed;
    c["censored"] = s.censored;
    auto stat = [&](const char* key, double mean, double sd) {
      c[key] = {{"mean", mean}, {"std", sd}};
    };
    stat("sensing_accuracy", s.mean_accuracy, s.std_accuracy);
    stat("path_efficiency", s.mean_path_efficiency, s.std_path_efficiency);
    stat("response_time_s", s.mean_response_s, s.std_response_s);
    stat("energy_total_j", s.mean_energy_j, s.std_energy_j);
    stat("collisions", s.mean_collisions, s.std_collisions);
    stat("bytes_transmitted", s.mean_bytes, s.std_bytes);
    cells.push_back(std::move(c));
  }
  return j;
}

int cmd_run(const std::string& config, const std::string& method_s, std::uint64_t seed, bool seed_set,
            std::size_t robots, const std::string& out, bool no_trace, bool wall_time) {
  const auto cfg = load_config(config);
  const Method method = require_method(method_s);
  const std::size_t n = robots > 0 ? robots : cfg.world.n_robots;
  const std::uint64_t s = seed_set ? seed : cfg.seed;
  const auto sai = obtain_sai(cfg);
  fs::create_directories(out);
  RunFiles f;
  try {
    f = render_run(cfg, method, n, s, sai, !no_trace, wall_time);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    std::cout << "event=run_failed method=" << method_name(method) << " seed=" << s
              << " error=" << quote(e.what()) << std::endl;
    return kExitRuntime;
  }
  const fs::path dir(out);
  write_file(dir / "results.csv", f.results_csv);
  write_file(dir / "rounds.csv", f.rounds_csv);
  write_file(dir / "packets.csv", f.packets_csv);
  if (!no_trace) write_file(dir / "trace.txt", f.trace);
  for (const auto& r : f.rounds) {
    for (const auto& w : r.warnings) {
      std::cout << "event=warning round=" << r.round << " message=" << quote(w) << '\n';
    }
  }
  const auto& m = f.row.metrics;
  std::cout << "event=run scenario_id=" << f.row.scenario_id << " method=" << method_name(method)
            << " n_robots=" << n << " seed=" << s << " sensing_accuracy=" << format_number(m.sensing_accuracy)
            << " path_efficiency=" << format_number(m.path_efficiency)
            << " response_time_s=" << format_number(m.response_time_s) << " censored=" << (m.censored ? 1 : 0)
            << " bytes_transmitted=" << m.bytes_transmitted << " rounds=" << m.rounds << " out=" << quote(out)
            << std::endl;
  return 0;
}

int cmd_sweep(const std::string& config, const std::string& method_s, const std::string& robots_s,
              bool robots_set, std::size_t seeds, bool seeds_set, std::size_t jobs, const std::string& out,
              bool wall_time) {
  const auto cfg = load_config(config);
  SweepSpec spec;
  if (method_s == "all" || method_s == "ALL") {
    spec.methods.assign(std::begin(kAllMethods), std::end(kAllMethods));
  } else {
    spec.methods.push_back(require_method(method_s));
  }
  spec.robots = robots_set ? parse_robot_list(robots_s) : cfg.robots;
  const std::size_t n_seeds = seeds_set ? seeds : cfg.seeds;
  if (n_seeds < 1) throw UsageError("--seeds must be >= 1");
  for (std::size_t k = 0; k < n_seeds; ++k) spec.seeds.push_back(cfg.seed + k);
  if (jobs < 1) throw UsageError("--jobs must be >= 1");
  spec.jobs = jobs;
  spec.record_wall_time = wall_time;
  const auto sai = obtain_sai(cfg);
  fs::create_directories(out);

  std::cout << "event=sweep_start runs=" << spec.methods.size() * spec.robots.size() * spec.seeds.size()
            << " jobs=" << jobs << std::endl;
  const auto res = sweep(cfg, spec, sai);
  std::size_t failed = 0;
  for (const auto& r : res.rows) {
    if (r.failed) {
      ++failed;
      std::cout << "event=run_failed scenario_id=" << r.scenario_id << " error=" << quote(r.error) << '\n';
    }
  }
  const fs::path dir(out);
  std::ostringstream results, summary;
  write_results_csv(results, res.rows);
  write_summary_csv(summary, res.summary);
  write_file(dir / "results.csv", results.str());
  write_file(dir / "summary.csv", summary.str());
  write_file(dir / "summary.json", summary_json(cfg, spec, res).dump(2) + "\n");
  for (const auto& s : res.summary) {
    std::cout << "event=cell method=" << method_name(s.method) << " n_robots=" << s.n_robots << " runs=" << s.runs
              << " failed=" << s.failed << " mean_sensing_accuracy=" << format_number(s.mean_accuracy)
              << " mean_path_efficiency=" << format_number(s.mean_path_efficiency)
              << " mean_response_time_s=" << format_number(s.mean_response_s) << " censored=" << s.censored
              << '\n';
  }
  std::cout << "event=sweep_done rows=" << res.rows.size() << " failed=" << failed << " out=" << quote(out)
            << std::endl;
  return failed == res.rows.size() ? kExitRuntime : 0;
}

int cmd_verify(const std::vector<std::string>& suites, const std::string& fault) {
  VerifyOptions opt;
  if (fault == "prune-mask") {
    opt.fault_prune_mask = true;
  } else if (!fault.empty()) {
    throw UsageError("unknown fault '" + fault + "'");
  }
  for (const auto& s : suites) {
    const auto& names = verify_suite_names();
    if (std::find(names.begin(), names.end(), s) == names.end()) throw UsageError("unknown suite '" + s + "'");
  }
  bool all_ok = true;
  for (const auto& r : run_verify(suites, opt)) {
    all_ok = all_ok && r.ok;
    std::cout << "suite=" << r.name << " result=" << (r.ok ? "pass" : "fail") << " seconds=" << format_number(r.seconds)
              << ' ' << r.detail << std::endl;
  }
  std::cout << "verify=" << (all_ok ? "pass" : "fail") << std::endl;
  return all_ok ? 0 : kExitRuntime;
}

int cmd_replay(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw UsageError("cannot open trace " + path);
  const auto r = replay_trace(in);
  std::cout << "replay=" << (r.ok ? "ok" : "mismatch") << " ticks_checked=" << r.ticks_checked
            << " message=" << quote(r.message) << std::endl;
  if (!r.ok) std::cerr << "error: " << r.message << '\n';
  return r.ok ? 0 : kExitRuntime;
}

int cmd_pretrain(const std::string& config, const std::string& out) {
  auto cfg = load_config(config);
  TrainingLog log;
  const auto sai = pretrain_sai(cfg, &log);
  const auto bytes = serialize_pretrained(sai);
  const fs::path p(out);
  if (p.has_parent_path()) fs::create_directories(p.parent_path());
  write_file(p, std::string(bytes.begin(), bytes.end()));
  auto mean = [](auto first, auto last) {
    double s = 0.0;
    std::size_t n = 0;
    for (auto it = first; it != last; ++it, ++n) s += *it;
    return n ? s / static_cast<double>(n) : 0.0;
  };
  const auto& cov = log.episode_coverage;
  const std::size_t k = std::min<std::size_t>(10, cov.size());
  std::cout << "event=pretrain episodes=" << cov.size() << " first10_coverage=" << format_number(mean(cov.begin(), cov.begin() + k))
            << " last10_coverage=" << format_number(mean(cov.end() - k, cov.end())) << " bytes=" << bytes.size()
            << " out=" << quote(out) << std::endl;
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Edge-cloud cooperative multi-robot sensing simulator"};
  app.require_subcommand(1);

  std::string config, method = "LSAI", out, robots_s, trace, fault;
  std::uint64_t seed = 1;
  std::size_t robots = 0, seeds = 0, jobs = 1;
  bool no_trace = false, wall_time = false;
  std::vector<std::string> suites;

  auto* run = app.add_subcommand("run", "Run one mission");
  run->add_option("--config", config, "Scenario file")->required();
  run->add_option("--method", method, "LSAI, Centralized or Distributed")->required();
  auto* seed_opt = run->add_option("--seed", seed, "Scenario seed (default: experiment.seed)");
  run->add_option("--robots", robots, "Robot count (default: world.n_robots)");
  run->add_option("--out", out, "Output directory")->required();
  run->add_flag("--no-trace", no_trace, "Skip trace.txt");
  run->add_flag("--wall-time", wall_time, "Record wall_ms (makes output non-reproducible)");

  auto* sw = app.add_subcommand("sweep", "Run methods x robot counts x seeds");
  sw->add_option("--config", config, "Scenario file")->required();
  sw->add_option("--method", method, "A method name or 'all'")->capture_default_str();
  auto* robots_opt = sw->add_option("--robots", robots_s, "Comma-separated robot counts");
  auto* seeds_opt = sw->add_option("--seeds", seeds, "Number of seeds, counting up from experiment.seed");
  sw->add_option("--jobs", jobs, "Parallel runs")->capture_default_str();
  sw->add_option("--out", out, "Output directory")->required();
  sw->add_flag("--wall-time", wall_time, "Record wall_ms (makes output non-reproducible)");

  auto* ver = app.add_subcommand("verify", "Run the self-check suites");
  ver->add_option("--suite", suites, "Restrict to these suites");
  ver->add_option("--inject-fault", fault)->group("");

  auto* rep = app.add_subcommand("replay", "Check a recorded trace");
  rep->add_option("--trace", trace, "Trace file")->required();

  auto* pre = app.add_subcommand("pretrain", "Train the starting policy and save it");
  pre->add_option("--config", config, "Scenario file")->required();
  pre->add_option("--out", out, "Model file")->required();

  if (argc >= 2 && std::string(argv[1]) == "sweep") method = "all";
  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : kExitConfig;
  }

  try {
    if (*run) return cmd_run(config, method, seed, seed_opt->count() > 0, robots, out, no_trace, wall_time);
    if (*sw) {
      return cmd_sweep(config, method, robots_s, robots_opt->count() > 0, seeds, seeds_opt->count() > 0, jobs,
                       out, wall_time);
    }
    if (*ver) return cmd_verify(suites, fault);
    if (*rep) return cmd_replay(trace);
    if (*pre) return cmd_pretrain(config, out);
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    std::cout << "error=config key=" << quote(e.key()) << " message=" << quote(e.what()) << std::endl;
    return kExitConfig;
  } catch (const UsageError& e) {
    std::cerr << "usage error: " << e.what() << '\n';
    return kExitConfig;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitRuntime;
  }
  return kExitConfig;
}
