#pragma once

// Simulated terminal/edge/cloud links: FIFO transmission timing, round-trip
// model exchanges per topology, payload sizes, and the packet log.

#include <algorithm>
#include <cstddef>
#include <cstdint>
#include <cstdio>
#include <optional>
#include <ostream>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "lsai/model_core.hpp"
#include "lsai/world.hpp"

namespace lsai {

struct LinkConfig {
  double bandwidth = 1e6;  // bytes/s
  double processing_delay = 0.05;
  double backhaul_delay = 0.0;

  void validate() const {
    if (!(bandwidth > 0.0)) throw std::invalid_argument("link: bandwidth must be > 0");
    if (processing_delay < 0.0 || backhaul_delay < 0.0) {
      throw std::invalid_argument("link: delays must be >= 0");
    }
  }
};

struct Packet {
  std::size_t round = 0;
  std::string src;
  std::string dst;
  std::size_t size = 0;  // bytes
  double created_at = 0.0;
  std::optional<double> delivered_at;
};

struct TransmitResult {
  double delivered_at = 0.0;
  double busy_until = 0.0;
};

/// FIFO serialization on one link.
inline TransmitResult transmit(const LinkConfig& link, const Packet& p, double link_busy_until) {
  const double start = std::max(p.created_at, link_busy_until);
  const double tx = static_cast<double>(p.size) / link.bandwidth;
  return {start + tx + link.processing_delay + link.backhaul_delay, start + tx};
}

/// A link plus its FIFO state; transmit() through it keeps the log.
class Channel {
 public:
  explicit Channel(LinkConfig cfg = {}) : cfg_(cfg) { cfg_.validate(); }

  double send(Packet& p, std::vector<Packet>* log) {
    const auto r = transmit(cfg_, p, busy_until_);
    busy_until_ = r.busy_until;
    p.delivered_at = r.delivered_at;
    if (log != nullptr) log->push_back(p);
    return r.delivered_at;
  }

  double busy_until() const noexcept { return busy_until_; }
  const LinkConfig& config() const noexcept { return cfg_; }

 private:
  LinkConfig cfg_;
  double busy_until_ = 0.0;
};

inline std::string robot_node(std::size_t i) { return "robot" + std::to_string(i); }
inline std::string edge_node(std::size_t e) { return "edge" + std::to_string(e); }
inline const char* cloud_node() { return "cloud"; }

enum class TopologyKind { EdgeLSAI, Centralized, Distributed };

struct Topology {
  TopologyKind kind = TopologyKind::EdgeLSAI;
  std::vector<Vec2> edge_positions;  // EdgeLSAI only
  double edge_radius = 400.0;        // terminal reaches an edge within this distance
  double radio_range = 60.0;         // Distributed peer range
  LinkConfig link;                   // terminal <-> edge, terminal <-> terminal
  LinkConfig cloud_link{1e6, 0.05, 2.0};

  /// Nearest edge within edge_radius (lowest index on ties), if any.
  std::optional<std::size_t> edge_of(Vec2 p) const {
    std::optional<std::size_t> best;
    double best_d = 0.0;
    for (std::size_t e = 0; e < edge_positions.size(); ++e) {
      const double d = distance(p, edge_positions[e]);
      if (d <= edge_radius && (!best || d < best_d)) {
        best = e;
        best_d = d;
      }
    }
    return best;
  }
};

/// k x k grid of edge servers at the centers of equal arena blocks.
inline std::vector<Vec2> edge_grid(double arena_size, std::size_t k) {
  std::vector<Vec2> out;
  const double block = arena_size / static_cast<double>(k);
  for (std::size_t y = 0; y < k; ++y) {
    for (std::size_t x = 0; x < k; ++x) {
      out.push_back({(static_cast<double>(x) + 0.5) * block, (static_cast<double>(y) + 0.5) * block});
    }
  }
  return out;
}

struct ExchangeRequest {
  std::size_t round = 0;
  double start_time = 0.0;
  std::vector<std::size_t> participants;  // robot ids
  std::vector<Vec2> positions;            // aligned with participants
  std::vector<std::size_t> uplink_bytes;  // aligned with participants
  std::vector<std::size_t> downlink_bytes;
  // Optional second packet each way (0 = none), sent right behind the first.
  std::vector<std::size_t> uplink_extra_bytes;
  std::vector<std::size_t> downlink_extra_bytes;
  double server_compute_s = 0.0;  // between last upload and first downlink
};

struct ExchangeResult {
  std::vector<std::size_t> robots;         // completed participants
  std::vector<double> completion;          // aligned with robots
  std::vector<std::size_t> unreachable;    // excluded participants
  std::vector<std::size_t> group;          // edge index per completed robot (0 for cloud)
  std::size_t total_bytes = 0;
  std::vector<Packet> packets;

  std::optional<double> completion_of(std::size_t robot) const {
    for (std::size_t k = 0; k < robots.size(); ++k) {
      if (robots[k] == robot) return completion[k];
    }
    return std::nullopt;
  }
};

/// Uploads from every participant, then downlinks back, through one shared
/// FIFO channel per server (each edge, or the cloud). Downlinks are created
/// once the server has every upload of its group plus server_compute_s.
/// Extra packets follow their robot's main packet on the same channel.
/// Distributed topology: each participant unicasts its uplink payload to every
/// other participant within radio range over its own channel; completion is
/// the last arrival at that robot.
inline ExchangeResult round_trip_model_exchange(const Topology& topo, const ExchangeRequest& req) {
  const std::size_t n = req.participants.size();
  if (n == 0) throw std::invalid_argument("round_trip_model_exchange: no participants");
  if (req.positions.size() != n || req.uplink_bytes.size() != n || req.downlink_bytes.size() != n ||
      (!req.uplink_extra_bytes.empty() && req.uplink_extra_bytes.size() != n) ||
      (!req.downlink_extra_bytes.empty() && req.downlink_extra_bytes.size() != n)) {
    throw std::invalid_argument("round_trip_model_exchange: per-robot vectors must align");
  }
  auto extra = [](const std::vector<std::size_t>& v, std::size_t k) -> std::size_t {
    return v.empty() ? 0 : v[k];
  };
  ExchangeResult res;

  if (topo.kind == TopologyKind::Distributed) {
    std::vector<double> done(n, req.start_time);
    for (std::size_t a = 0; a < n; ++a) {
      Channel ch(topo.link);
      for (std::size_t b = 0; b < n; ++b) {
        if (a == b || distance(req.positions[a], req.positions[b]) > topo.radio_range) continue;
        Packet p{req.round, robot_node(req.participants[a]), robot_node(req.participants[b]),
                 req.uplink_bytes[a], req.start_time, std::nullopt};
        done[b] = std::max(done[b], ch.send(p, &res.packets));
        res.total_bytes += p.size;
      }
    }
    for (std::size_t a = 0; a < n; ++a) {
      res.robots.push_back(req.participants[a]);
      res.completion.push_back(done[a]);
      res.group.push_back(0);
    }
    return res;
  }

  // Group participants by server.
  const bool cloud = topo.kind == TopologyKind::Centralized;
  const std::size_t servers = cloud ? 1 : topo.edge_positions.size();
  std::vector<std::vector<std::size_t>> members(servers);
  for (std::size_t k = 0; k < n; ++k) {
    if (cloud) {
      members[0].push_back(k);
      continue;
    }
    const auto e = topo.edge_of(req.positions[k]);
    if (e) {
      members[*e].push_back(k);
    } else {
      res.unreachable.push_back(req.participants[k]);
    }
  }

  for (std::size_t s = 0; s < servers; ++s) {
    if (members[s].empty()) continue;
    Channel ch(cloud ? topo.cloud_link : topo.link);
    const std::string server = cloud ? std::string(cloud_node()) : edge_node(s);
    double all_in = req.start_time;
    for (std::size_t k : members[s]) {
      Packet p{req.round, robot_node(req.participants[k]), server, req.uplink_bytes[k],
               req.start_time, std::nullopt};
      all_in = std::max(all_in, ch.send(p, &res.packets));
      res.total_bytes += p.size;
      if (const auto x = extra(req.uplink_extra_bytes, k); x > 0) {
        Packet q{req.round, p.src, server, x, req.start_time, std::nullopt};
        all_in = std::max(all_in, ch.send(q, &res.packets));
        res.total_bytes += q.size;
      }
    }
    const double ready = all_in + req.server_compute_s;
    for (std::size_t k : members[s]) {
      Packet p{req.round, server, robot_node(req.participants[k]), req.downlink_bytes[k], ready,
               std::nullopt};
      double t = ch.send(p, &res.packets);
      res.total_bytes += p.size;
      if (const auto x = extra(req.downlink_extra_bytes, k); x > 0) {
        Packet q{req.round, server, p.dst, x, ready, std::nullopt};
        t = std::max(t, ch.send(q, &res.packets));
        res.total_bytes += q.size;
      }
      res.robots.push_back(req.participants[k]);
      res.completion.push_back(t);
      res.group.push_back(s);
    }
  }
  return res;
}

// ---------------------------------------------------------------------------
// Payload sizes.

inline constexpr std::size_t kObsBatchHeader = 12;     // "LSOB" | ver u16 | dims u16 | count u32
inline constexpr std::size_t kScheduleHeader = 28;     // "LSAS" | ver u16 | pad u16 | count u32 | t0 f64 | dt f64
inline constexpr std::size_t kScheduleEntryBytes = 16;  // heading f64, speed f64
inline constexpr std::size_t kCoverageMapHeader = 12;  // "LSCM" | ver u16 | pad u16 | cells u32

enum class PayloadMode {
  LsaiUplink,
  LsaiDownlink,
  DistributedPeer,
  CentralizedUplink,
  CentralizedDownlink,
  CoverageMap,
};

struct PayloadSpec {
  PayloadMode mode = PayloadMode::LsaiUplink;
  std::vector<LayerShape> sai_shapes;     // LSAI / Distributed
  std::size_t branch_params = 0;          // LsaiDownlink: transform weights + biases
  std::size_t observations = 0;           // CentralizedUplink
  std::size_t obs_dims = 12;
  std::size_t schedule_entries = 0;       // CentralizedDownlink
  std::size_t cells = 0;                  // CoverageMap
};

inline std::size_t payload_size(const PayloadSpec& s) {
  switch (s.mode) {
    case PayloadMode::LsaiUplink:
    case PayloadMode::DistributedPeer:
      return serialized_size(s.sai_shapes);
    case PayloadMode::LsaiDownlink: {
      // sub-model: "LSSM" header (23 bytes) + packed mask + model; branch: 16-byte header + values
      const std::size_t n = param_count(s.sai_shapes);
      return 23 + (n + 7) / 8 + serialized_size(s.sai_shapes) + 16 + 8 * s.branch_params;
    }
    case PayloadMode::CentralizedUplink:
      return kObsBatchHeader + s.observations * s.obs_dims * 8;
    case PayloadMode::CentralizedDownlink:
      return kScheduleHeader + s.schedule_entries * kScheduleEntryBytes;
    case PayloadMode::CoverageMap:
      return kCoverageMapHeader + (s.cells + 7) / 8;
  }
  return 0;
}

// ---------------------------------------------------------------------------
// Packet log.

inline void write_packet_log_header(std::ostream& os) {
  os << "round,src,dst,bytes,created_at_s,delivered_at_s\n";
}

inline std::string format_seconds(double t) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.6f", t);
  return buf;
}

inline void write_packet_log(std::ostream& os, std::span<const Packet> packets) {
  for (const auto& p : packets) {
    os << p.round << ',' << p.src << ',' << p.dst << ',' << p.size << ','
       << format_seconds(p.created_at) << ','
       << (p.delivered_at ? format_seconds(*p.delivered_at) : std::string("pending")) << '\n';
  }
}

}  // namespace lsai
