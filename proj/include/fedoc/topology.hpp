#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include <json.hpp>

#include "fedoc/common.hpp"

namespace fedoc {

// Chain of edge servers; pair p always denotes the overlap between cells p and p+1
// (all indices zero-based).

enum class RoleKind { Local, NormalOverlap, RelayOverlap };

struct ClientRole {
  RoleKind kind = RoleKind::Local;
  std::size_t index = 0;  // home cell for Local, overlap pair otherwise
};

inline const char* to_string(RoleKind k) {
  switch (k) {
    case RoleKind::Local: return "LC";
    case RoleKind::NormalOverlap: return "NOC";
    case RoleKind::RelayOverlap: return "ROC";
  }
  return "?";
}

struct Point {
  double x = 0.0;
  double y = 0.0;
};

inline double distance(Point a, Point b) { return std::hypot(a.x - b.x, a.y - b.y); }

enum class RocPolicy { Random, ClosestToMidpoint };

struct TopologySpec {
  std::size_t num_servers = 3;
  std::size_t num_clients = 60;
  std::vector<std::size_t> overlap_sizes{10, 10};
  std::vector<std::size_t> local_sizes;  // explicit per-cell LC counts; used when balance is off
  bool balance = true;
  double radius_m = 600.0;
  double overlap_fraction = 0.25;  // ES spacing is 2 * radius * (1 - overlap_fraction)
  RocPolicy roc_policy = RocPolicy::Random;

  bool operator==(const TopologySpec&) const = default;
};

struct Topology {
  std::size_t num_servers = 0;
  std::vector<std::vector<std::size_t>> local_clients;    // U_l, one list per cell
  std::vector<std::vector<std::size_t>> overlap_clients;  // V_{l,l+1}, one list per pair
  // Declared relay clients per pair. A valid topology has exactly one entry for
  // every non-empty overlap; the list form lets validation report bad inputs.
  std::vector<std::vector<std::size_t>> relay_clients;
  std::vector<Point> client_positions;
  std::vector<Point> server_positions;
  double cell_radius = 0.0;

  std::size_t num_clients() const { return client_positions.size(); }
  std::size_t num_pairs() const { return overlap_clients.size(); }

  std::optional<std::size_t> relay(std::size_t pair) const {
    if (pair >= relay_clients.size() || relay_clients[pair].size() != 1) return std::nullopt;
    return relay_clients[pair].front();
  }

  // N_{l,l+1}: overlap clients other than the relay.
  std::vector<std::size_t> normal_overlap(std::size_t pair) const {
    std::vector<std::size_t> out;
    const auto roc = relay(pair);
    for (std::size_t k : overlap_clients[pair])
      if (!roc || *roc != k) out.push_back(k);
    return out;
  }

  ClientRole role(std::size_t k) const {
    for (std::size_t l = 0; l < local_clients.size(); ++l)
      if (std::find(local_clients[l].begin(), local_clients[l].end(), k) != local_clients[l].end())
        return {RoleKind::Local, l};
    for (std::size_t p = 0; p < overlap_clients.size(); ++p) {
      const auto& v = overlap_clients[p];
      if (std::find(v.begin(), v.end(), k) != v.end()) {
        const auto roc = relay(p);
        return {roc && *roc == k ? RoleKind::RelayOverlap : RoleKind::NormalOverlap, p};
      }
    }
    throw Error("client " + std::to_string(k) + " has no role");
  }

  std::vector<ClientRole> roles() const {
    std::vector<ClientRole> out(num_clients());
    for (std::size_t l = 0; l < local_clients.size(); ++l)
      for (std::size_t k : local_clients[l]) out[k] = {RoleKind::Local, l};
    for (std::size_t p = 0; p < overlap_clients.size(); ++p) {
      const auto roc = relay(p);
      for (std::size_t k : overlap_clients[p])
        out[k] = {roc && *roc == k ? RoleKind::RelayOverlap : RoleKind::NormalOverlap, p};
    }
    return out;
  }

  // Servers that reach client k, ascending.
  std::vector<std::size_t> covering_servers(std::size_t k) const {
    const ClientRole r = role(k);
    if (r.kind == RoleKind::Local) return {r.index};
    return {r.index, r.index + 1};
  }

  // Cell the relay of `pair` is grouped with when edge models are rewritten as
  // neighbour averages of per-cell aggregates: the chain-end side of the pair.
  // For three cells this gives b_{1,2} -> cell 1 and b_{2,3} -> cell 3.
  std::size_t relay_attachment(std::size_t pair) const {
    const std::size_t half = (num_servers + 1) / 2;
    return pair + 2 <= half ? pair : pair + 1;
  }
};

// Per-cell LC counts that equalise the effective load U_l + (V_{l-1,l} + V_{l,l+1}) / 2.
// Non-integral targets are rounded by largest remainder (ties to the lower index).
inline std::vector<std::size_t> balanced_local_sizes(std::size_t num_clients,
                                                     const std::vector<std::size_t>& overlap_sizes) {
  const std::size_t L = overlap_sizes.size() + 1;
  std::size_t overlap_total = 0;
  for (auto v : overlap_sizes) overlap_total += v;
  check(overlap_total <= num_clients, "overlap clients exceed the client count");
  const double per_cell = static_cast<double>(num_clients) / static_cast<double>(L);
  std::vector<double> target(L);
  for (std::size_t l = 0; l < L; ++l) {
    double shared = 0.0;
    if (l > 0) shared += overlap_sizes[l - 1] / 2.0;
    if (l + 1 < L) shared += overlap_sizes[l] / 2.0;
    target[l] = per_cell - shared;
    check(target[l] >= -1e-9, "balance constraint infeasible: cell " + std::to_string(l) +
                                  " would need a negative number of local clients");
  }
  std::vector<std::size_t> sizes(L);
  std::size_t assigned = 0;
  for (std::size_t l = 0; l < L; ++l) {
    sizes[l] = static_cast<std::size_t>(std::floor(target[l] + 1e-9));
    assigned += sizes[l];
  }
  std::size_t remaining = num_clients - overlap_total - assigned;
  std::vector<std::size_t> order(L);
  for (std::size_t l = 0; l < L; ++l) order[l] = l;
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return target[a] - std::floor(target[a] + 1e-9) > target[b] - std::floor(target[b] + 1e-9) + 1e-12;
  });
  for (std::size_t i = 0; remaining > 0; i = (i + 1) % L, --remaining) ++sizes[order[i]];
  return sizes;
}

namespace detail {

inline bool inside(Point p, Point c, double r) { return distance(p, c) <= r; }

inline Point sample_in_disk(Rng& rng, Point c, double r) {
  const double rad = r * std::sqrt(rng.uniform());
  const double ang = 2.0 * 3.14159265358979323846 * rng.uniform();
  return {c.x + rad * std::cos(ang), c.y + rad * std::sin(ang)};
}

// Uniform point covered by exactly the servers in `cover`.
inline Point sample_region(Rng& rng, const std::vector<Point>& servers, double radius,
                           const std::vector<std::size_t>& cover) {
  for (int attempt = 0; attempt < 1000000; ++attempt) {
    const Point p = sample_in_disk(rng, servers[cover.front()], radius);
    bool ok = true;
    for (std::size_t s = 0; s < servers.size() && ok; ++s) {
      const bool wanted = std::find(cover.begin(), cover.end(), s) != cover.end();
      ok = inside(p, servers[s], radius) == wanted;
    }
    if (ok) return p;
  }
  throw Error("rejection sampling failed: region is empty or vanishingly small");
}

}  // namespace detail

inline Topology build_topology(const TopologySpec& spec, std::uint64_t seed) {
  const std::size_t L = spec.num_servers;
  check(L >= 1, "topology: num_servers must be at least 1");
  check(spec.overlap_sizes.size() == L - 1,
        "topology: overlap_sizes needs exactly num_servers - 1 entries");
  check(spec.radius_m > 0.0, "topology: radius_m must be positive");
  std::size_t overlap_total = 0;
  for (auto v : spec.overlap_sizes) overlap_total += v;
  if (overlap_total > 0)
    check(spec.overlap_fraction > 0.0,
          "topology: infeasible geometry, overlaps requested but cells are disjoint");
  if (L >= 3)
    check(spec.overlap_fraction < 0.5,
          "topology: overlap_fraction >= 0.5 makes non-adjacent cells overlap");
  check(spec.overlap_fraction < 1.0, "topology: overlap_fraction must be below 1");

  std::vector<std::size_t> local_sizes;
  if (spec.balance) {
    local_sizes = balanced_local_sizes(spec.num_clients, spec.overlap_sizes);
  } else {
    check(spec.local_sizes.size() == L, "topology: local_sizes needs one entry per cell");
    local_sizes = spec.local_sizes;
  }
  std::size_t total = overlap_total;
  for (auto u : local_sizes) total += u;
  check(total == spec.num_clients, "topology: local + overlap counts (" + std::to_string(total) +
                                       ") do not match num_clients (" +
                                       std::to_string(spec.num_clients) + ")");

  Topology t;
  t.num_servers = L;
  t.cell_radius = spec.radius_m;
  const double spacing = 2.0 * spec.radius_m * (1.0 - spec.overlap_fraction);
  for (std::size_t l = 0; l < L; ++l) t.server_positions.push_back({spacing * static_cast<double>(l), 0.0});

  Rng rng(derive_seed(seed, 0x7090));
  t.client_positions.resize(spec.num_clients);
  t.local_clients.resize(L);
  t.overlap_clients.resize(L - 1);
  t.relay_clients.resize(L - 1);
  std::size_t next = 0;
  // Ids are laid out cell by cell: U_0, V_{0,1}, U_1, V_{1,2}, ...
  for (std::size_t l = 0; l < L; ++l) {
    for (std::size_t i = 0; i < local_sizes[l]; ++i) {
      t.client_positions[next] = detail::sample_region(rng, t.server_positions, spec.radius_m, {l});
      t.local_clients[l].push_back(next++);
    }
    if (l + 1 < L) {
      for (std::size_t i = 0; i < spec.overlap_sizes[l]; ++i) {
        t.client_positions[next] =
            detail::sample_region(rng, t.server_positions, spec.radius_m, {l, l + 1});
        t.overlap_clients[l].push_back(next++);
      }
    }
  }
  for (std::size_t p = 0; p + 1 < L; ++p) {
    const auto& v = t.overlap_clients[p];
    if (v.empty()) continue;
    std::size_t pick = v[rng.below(v.size())];
    if (spec.roc_policy == RocPolicy::ClosestToMidpoint) {
      const Point mid{(t.server_positions[p].x + t.server_positions[p + 1].x) / 2.0, 0.0};
      pick = *std::min_element(v.begin(), v.end(), [&](std::size_t a, std::size_t b) {
        return distance(t.client_positions[a], mid) < distance(t.client_positions[b], mid);
      });
    }
    t.relay_clients[p] = {pick};
  }
  return t;
}

struct Violation {
  std::string invariant;
  std::vector<std::size_t> ids;
  std::string detail;
};

inline std::vector<Violation> validate_topology(const Topology& t) {
  std::vector<Violation> out;
  const std::size_t K = t.num_clients();
  if (t.local_clients.size() != t.num_servers || t.server_positions.size() != t.num_servers ||
      t.overlap_clients.size() + 1 != std::max<std::size_t>(t.num_servers, 1) ||
      t.relay_clients.size() != t.overlap_clients.size()) {
    out.push_back({"chain shape", {}, "per-cell and per-pair lists do not match num_servers"});
    return out;
  }
  std::vector<int> seen(K, 0);
  std::vector<std::size_t> bad_ids;
  auto count = [&](std::size_t k) {
    if (k >= K) bad_ids.push_back(k);
    else ++seen[k];
  };
  for (const auto& u : t.local_clients)
    for (auto k : u) count(k);
  for (const auto& v : t.overlap_clients)
    for (auto k : v) count(k);
  if (!bad_ids.empty()) out.push_back({"client id range", bad_ids, "ids beyond the position table"});
  std::vector<std::size_t> dup, missing;
  for (std::size_t k = 0; k < K; ++k) {
    if (seen[k] > 1) dup.push_back(k);
    if (seen[k] == 0) missing.push_back(k);
  }
  if (!dup.empty()) out.push_back({"duplicate membership", dup, "client listed in more than one set"});
  if (!missing.empty()) out.push_back({"missing membership", missing, "client listed in no set"});

  for (std::size_t p = 0; p < t.overlap_clients.size(); ++p) {
    const auto& v = t.overlap_clients[p];
    const auto& r = t.relay_clients[p];
    const std::size_t expected = v.empty() ? 0 : 1;
    if (r.size() != expected) {
      out.push_back({"relay cardinality", r,
                     "pair " + std::to_string(p) + " declares " + std::to_string(r.size()) +
                         " relays, expected " + std::to_string(expected)});
    }
    for (auto b : r)
      if (std::find(v.begin(), v.end(), b) == v.end())
        out.push_back({"relay membership", {b}, "relay of pair " + std::to_string(p) + " is not in its overlap set"});
  }

  const double R = t.cell_radius;
  std::vector<std::size_t> geo;
  auto covered_exactly = [&](std::size_t k, const std::vector<std::size_t>& cover) {
    for (std::size_t s = 0; s < t.num_servers; ++s) {
      const bool wanted = std::find(cover.begin(), cover.end(), s) != cover.end();
      if (detail::inside(t.client_positions[k], t.server_positions[s], R) != wanted) return false;
    }
    return true;
  };
  for (std::size_t l = 0; l < t.local_clients.size(); ++l)
    for (auto k : t.local_clients[l])
      if (k < K && !covered_exactly(k, {l})) geo.push_back(k);
  for (std::size_t p = 0; p < t.overlap_clients.size(); ++p)
    for (auto k : t.overlap_clients[p])
      if (k < K && !covered_exactly(k, {p, p + 1})) geo.push_back(k);
  if (!geo.empty()) out.push_back({"geometric consistency", geo, "position outside its designated region"});
  return out;
}

inline nlohmann::json to_json(const Topology& t) {
  using nlohmann::json;
  json j;
  j["num_servers"] = t.num_servers;
  j["cell_radius_m"] = t.cell_radius;
  j["servers"] = json::array();
  for (std::size_t l = 0; l < t.num_servers; ++l)
    j["servers"].push_back({{"id", l}, {"x", t.server_positions[l].x}, {"y", t.server_positions[l].y}});
  j["local_clients"] = t.local_clients;
  j["overlap_clients"] = t.overlap_clients;
  j["relay_clients"] = json::array();
  for (std::size_t p = 0; p < t.num_pairs(); ++p) {
    const auto r = t.relay(p);
    j["relay_clients"].push_back(r ? json(*r) : json(nullptr));
  }
  j["clients"] = json::array();
  const auto roles = t.roles();
  for (std::size_t k = 0; k < t.num_clients(); ++k)
    j["clients"].push_back({{"id", k},
                            {"role", to_string(roles[k].kind)},
                            {roles[k].kind == RoleKind::Local ? "cell" : "pair", roles[k].index},
                            {"x", t.client_positions[k].x},
                            {"y", t.client_positions[k].y}});
  return j;
}

inline Topology topology_from_json(const nlohmann::json& j) {
  Topology t;
  t.num_servers = j.at("num_servers").get<std::size_t>();
  t.cell_radius = j.at("cell_radius_m").get<double>();
  for (const auto& s : j.at("servers")) t.server_positions.push_back({s.at("x"), s.at("y")});
  t.local_clients = j.at("local_clients").get<std::vector<std::vector<std::size_t>>>();
  t.overlap_clients = j.at("overlap_clients").get<std::vector<std::vector<std::size_t>>>();
  for (const auto& r : j.at("relay_clients")) {
    if (r.is_null()) t.relay_clients.push_back({});
    else t.relay_clients.push_back({r.get<std::size_t>()});
  }
  t.client_positions.resize(j.at("clients").size());
  for (const auto& c : j.at("clients"))
    t.client_positions.at(c.at("id").get<std::size_t>()) = {c.at("x"), c.at("y")};
  return t;
}

}  // namespace fedoc
