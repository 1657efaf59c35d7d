#pragma once

// Scenario files: sectioned INI (world, ddpg, aggregation, splitting, fusion,
// comms, experiment). Every key is optional and defaults to the built-in desk
// scenario; unknown sections or keys are errors that name the key path.

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>

#include <charconv>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>
#include <stdexcept>
#include <string>
#include <system_error>
#include <vector>

#include "lsai/experiment.hpp"

namespace lsai {

class ConfigError : public std::runtime_error {
 public:
  ConfigError(std::string key, const std::string& what)
      : std::runtime_error(key.empty() ? what : key + ": " + what), key_(std::move(key)) {}
  const std::string& key() const noexcept { return key_; }

 private:
  std::string key_;
};

namespace detail {

inline std::string trim(std::string s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

template <class T>
T parse_number(const std::string& key, const std::string& raw) {
  const std::string s = trim(raw);
  T v{};
  const auto* end = s.data() + s.size();
  const auto [p, ec] = std::from_chars(s.data(), end, v);
  if (s.empty() || ec != std::errc() || p != end) {
    throw ConfigError(key, "cannot parse '" + raw + "' as a number");
  }
  return v;
}

inline bool parse_bool(const std::string& key, const std::string& raw) {
  const std::string s = trim(raw);
  if (s == "true" || s == "1" || s == "yes" || s == "on") return true;
  if (s == "false" || s == "0" || s == "no" || s == "off") return false;
  throw ConfigError(key, "expected true or false, got '" + raw + "'");
}

inline std::vector<std::size_t> parse_size_list(const std::string& key, const std::string& raw) {
  std::vector<std::size_t> out;
  std::stringstream ss(raw);
  std::string item;
  while (std::getline(ss, item, ',')) out.push_back(parse_number<std::size_t>(key, item));
  if (out.empty()) throw ConfigError(key, "list must not be empty");
  return out;
}

using Setter = std::function<void(const std::string& key, const std::string& value)>;
using Schema = std::map<std::string, std::map<std::string, Setter>>;

template <class T>
Setter num(T& field) {
  return [&field](const std::string& k, const std::string& v) { field = parse_number<T>(k, v); };
}
inline Setter flag(bool& field) {
  return [&field](const std::string& k, const std::string& v) { field = parse_bool(k, v); };
}

inline Schema scenario_schema(ScenarioConfig& c, std::string& pretrained_raw) {
  Schema s;
  auto& w = s["world"];
  w["arena_size"] = num(c.world.arena_size);
  w["cell_size"] = num(c.world.cell_size);
  w["n_robots"] = num(c.world.n_robots);
  w["n_targets"] = num(c.world.n_targets);
  w["max_speed"] = num(c.world.max_speed);
  w["sensing_radius"] = num(c.world.sensing_radius);
  w["obstacle_fraction"] = num(c.world.obstacle_fraction);
  w["e_idle"] = num(c.world.e_idle);
  w["e_move"] = num(c.world.e_move);
  w["initial_energy"] = num(c.world.initial_energy);
  w["max_turn_rate"] = num(c.world.max_turn_rate);
  w["collision_distance"] = num(c.world.collision_distance);
  w["trajectory_capacity"] = num(c.world.trajectory_capacity);

  auto& d = s["ddpg"];
  d["gamma"] = num(c.ddpg.gamma);
  d["batch_size"] = num(c.ddpg.batch_size);
  d["actor_lr"] = num(c.ddpg.actor_lr);
  d["critic_lr"] = num(c.ddpg.critic_lr);
  d["tau"] = num(c.ddpg.tau);
  d["noise_sigma"] = num(c.ddpg.noise_sigma);
  d["noise_sigma_final"] = num(c.ddpg.noise_sigma_final);
  d["episodes"] = num(c.ddpg.episodes);
  d["steps_per_episode"] = num(c.ddpg.steps_per_episode);
  d["update_every"] = num(c.ddpg.update_every);
  d["warmup_steps"] = num(c.ddpg.warmup_steps);
  d["replay_capacity"] = num(c.ddpg.replay_capacity);
  d["grad_clip"] = num(c.ddpg.grad_clip);
  d["invert_gradients"] = flag(c.ddpg.invert_gradients);
  d["optimizer"] = [&c](const std::string& k, const std::string& v) {
    const auto t = trim(v);
    if (t == "adam") c.ddpg.optimizer = Optimizer::Adam;
    else if (t == "sgd") c.ddpg.optimizer = Optimizer::Sgd;
    else throw ConfigError(k, "expected adam or sgd, got '" + v + "'");
  };
  d["reward_coverage"] = num(c.reward.coverage);
  d["reward_energy"] = num(c.reward.energy);
  d["reward_collision"] = num(c.reward.collision);
  d["reward_overlap"] = num(c.reward.overlap);
  d["reward_jaccard_threshold"] = num(c.reward.jaccard_threshold);
  d["region_cells"] = num(c.observation.region_cells);
  d["neighbor_range"] = num(c.observation.neighbor_range);

  auto& a = s["aggregation"];
  a["temperature"] = num(c.aggregation.temperature);
  a["history_decay"] = num(c.aggregation.history_decay);
  a["min_history"] = num(c.aggregation.min_history);
  a["edge_radius"] = num(c.aggregation.edge_radius);
  a["participants_fraction"] = num(c.experiment.participants_fraction);

  auto& sp = s["splitting"];
  sp["rounds"] = num(c.splitting.rounds);
  sp["final_sparsity"] = num(c.splitting.final_sparsity);
  sp["fine_tune_steps"] = num(c.splitting.fine_tune_steps);
  sp["learning_rate"] = num(c.split_sgd.learning_rate);
  sp["batch_size"] = num(c.split_sgd.batch_size);

  auto& f = s["fusion"];
  f["branch_train_steps"] = num(c.fusion.branch_train_steps);
  f["alpha"] = num(c.fusion.alpha);
  f["beta"] = num(c.fusion.beta);
  f["rollout_steps"] = num(c.fusion.rollout_steps);
  f["learning_rate"] = num(c.fusion.sgd.learning_rate);
  f["batch_size"] = num(c.fusion.sgd.batch_size);
  f["fusion_capacity"] = num(c.fusion.fusion_capacity);
  f["fusion_time_per_robot_s"] = num(c.fusion.fusion_time_per_robot_s);
  f["deadline_s"] = num(c.fusion.deadline_s);
  f["fallback_fraction"] = num(c.fusion.fallback_fraction);

  auto& m = s["comms"];
  m["bandwidth"] = num(c.comms.link.bandwidth);
  m["processing_delay"] = num(c.comms.link.processing_delay);
  m["backhaul_delay"] = num(c.comms.link.backhaul_delay);
  m["cloud_bandwidth"] = num(c.comms.cloud_link.bandwidth);
  m["cloud_processing_delay"] = num(c.comms.cloud_link.processing_delay);
  m["cloud_backhaul_delay"] = num(c.comms.cloud_link.backhaul_delay);
  m["radio_range"] = num(c.comms.radio_range);
  m["cloud_compute_s"] = num(c.comms.cloud_compute_s);
  m["edges_per_side"] = num(c.experiment.edges_per_side);

  auto& e = s["experiment"];
  e["dt"] = num(c.experiment.dt);
  e["horizon_s"] = num(c.experiment.horizon_s);
  e["round_period_s"] = num(c.experiment.round_period_s);
  e["rounds"] = num(c.experiment.rounds);
  e["local_updates"] = num(c.experiment.local_updates);
  e["trajectory_window"] = num(c.experiment.trajectory_window);
  e["response_threshold"] = num(c.experiment.response_threshold);
  e["pretrain_robots"] = num(c.experiment.pretrain_robots);
  e["pretrain_seed"] = num(c.experiment.pretrain_seed);
  e["mission_replay_capacity"] = num(c.experiment.mission_replay_capacity);
  e["pretrained_model"] = [&pretrained_raw](const std::string&, const std::string& v) {
    pretrained_raw = trim(v);
  };
  e["robots"] = [&c](const std::string& k, const std::string& v) { c.robots = parse_size_list(k, v); };
  e["seeds"] = num(c.seeds);
  e["seed"] = num(c.seed);
  return s;
}

}  // namespace detail

/// Parses scenario text. A relative pretrained_model path is resolved
/// against `base_dir`.
inline ScenarioConfig parse_scenario(std::istream& in, const std::filesystem::path& base_dir = {}) {
  namespace pt = boost::property_tree;
  // Full-line and trailing comments start with ';' or '#' (trailing ones
  // after whitespace); boost's reader only knows full-line ';'.
  std::ostringstream cleaned;
  for (std::string line; std::getline(in, line);) {
    for (std::size_t k = 0; k < line.size(); ++k) {
      if ((line[k] == ';' || line[k] == '#') && (k == 0 || line[k - 1] == ' ' || line[k - 1] == '\t')) {
        line.resize(k);
        break;
      }
    }
    cleaned << line << '\n';
  }
  std::istringstream text(cleaned.str());
  pt::ptree tree;
  try {
    pt::ini_parser::read_ini(text, tree);
  } catch (const pt::ini_parser_error& e) {
    throw ConfigError("", "line " + std::to_string(e.line()) + ": " + e.message());
  }
  ScenarioConfig cfg;
  std::string pretrained_raw;
  const auto schema = detail::scenario_schema(cfg, pretrained_raw);
  for (const auto& [section, body] : tree) {
    const auto sec = schema.find(section);
    if (sec == schema.end()) {
      // read_ini puts keys outside any section at the top level
      if (body.empty()) throw ConfigError(section, "key outside any section");
      throw ConfigError(section + "." + body.begin()->first, "unknown section '" + section + "'");
    }
    for (const auto& [key, value] : body) {
      const std::string path = section + "." + key;
      const auto it = sec->second.find(key);
      if (it == sec->second.end()) throw ConfigError(path, "unknown key");
      it->second(path, value.data());
    }
  }
  if (!pretrained_raw.empty()) {
    std::filesystem::path p(pretrained_raw);
    if (p.is_relative() && !base_dir.empty()) p = base_dir / p;
    cfg.experiment.pretrained_model = p.lexically_normal().string();
  }
  if (cfg.robots.empty() || cfg.seeds < 1) throw ConfigError("experiment.robots", "robots and seeds must be nonempty");
  for (auto n : cfg.robots) {
    if (n < 1) throw ConfigError("experiment.robots", "robot counts must be >= 1");
  }
  try {
    cfg.validate();
  } catch (const std::invalid_argument& e) {
    throw ConfigError("", e.what());
  }
  return cfg;
}

inline ScenarioConfig load_scenario(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("", "cannot open scenario file " + path.string());
  return parse_scenario(in, path.parent_path());
}

}  // namespace lsai
