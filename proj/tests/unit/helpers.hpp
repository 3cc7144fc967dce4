#pragma once

#include <filesystem>
#include <string>

#include "fedoc/topology.hpp"

namespace fedoc::testing {

inline std::filesystem::path temp_dir(const std::string& name) {
  auto p = std::filesystem::temp_directory_path() / ("fedoc_test_" + name);
  std::filesystem::remove_all(p);
  std::filesystem::create_directories(p);
  return p;
}

// Hand-built chain with explicit U_l / V_{l,l+1} / relays. Servers sit 1 km
// apart with 600 m cells; locals at their server, overlaps at the pair midpoint.
inline Topology hand_topology(std::vector<std::vector<std::size_t>> locals,
                              std::vector<std::vector<std::size_t>> overlaps,
                              std::vector<std::vector<std::size_t>> relays) {
  Topology t;
  t.num_servers = locals.size();
  t.local_clients = std::move(locals);
  t.overlap_clients = std::move(overlaps);
  t.relay_clients = std::move(relays);
  t.cell_radius = 600.0;
  for (std::size_t l = 0; l < t.num_servers; ++l) t.server_positions.push_back({1000.0 * l, 0.0});
  std::size_t k = 0;
  for (const auto& u : t.local_clients) k += u.size();
  for (const auto& v : t.overlap_clients) k += v.size();
  t.client_positions.assign(k, Point{});
  for (std::size_t l = 0; l < t.num_servers; ++l)
    for (auto c : t.local_clients[l]) t.client_positions[c] = {1000.0 * l + 10.0, 0.0};
  for (std::size_t p = 0; p < t.overlap_clients.size(); ++p)
    for (auto c : t.overlap_clients[p]) t.client_positions[c] = {1000.0 * p + 500.0, 0.0};
  return t;
}

}  // namespace fedoc::testing
