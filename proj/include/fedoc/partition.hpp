#pragma once

#include <algorithm>
#include <cmath>
#include <numeric>
#include <vector>

#include <json.hpp>

#include "fedoc/dataset.hpp"
#include "fedoc/topology.hpp"

namespace fedoc {

struct PartitionSpec {
  std::size_t classes_per_client = 2;
  std::size_t classes_per_cell = 5;
  std::size_t samples_per_client = 0;  // 0: derived from the class pools
  // Equal shards take the smallest per-holder share over all classes; otherwise
  // every class pool is split evenly among its holders and all data is used.
  bool equal_shards = true;
  double size_skew = 0.0;              // shard size factor drawn from [1 - skew, 1]

  bool operator==(const PartitionSpec&) const = default;
};

struct PartitionPlan {
  std::size_t num_classes = 0;
  std::vector<std::vector<std::size_t>> client_indices;
  // Cell whose class allowance a client draws from. Local clients use their own
  // cell, relays their attachment cell and normal overlap clients a seeded coin
  // flip between the two covering cells. This is also the fixed-assignment ES.
  std::vector<std::size_t> client_cell;
  std::vector<std::vector<std::size_t>> cell_classes;
  std::vector<std::vector<std::size_t>> client_classes;
  std::vector<std::vector<double>> client_histograms;
  std::vector<std::vector<std::size_t>> cell_members;
  std::vector<std::vector<double>> cell_histograms;
  std::vector<double> global_histogram;

  std::size_t num_clients() const { return client_indices.size(); }
  std::size_t num_cells() const { return cell_members.size(); }
  std::vector<double> sample_counts() const {
    std::vector<double> n;
    for (const auto& idx : client_indices) n.push_back(static_cast<double>(idx.size()));
    return n;
  }
};

inline std::vector<double> class_histogram(const Dataset& ds, const std::vector<std::size_t>& idx) {
  std::vector<double> h(ds.num_classes, 0.0);
  if (idx.empty()) return h;
  for (auto i : idx) h[static_cast<std::size_t>(ds.labels[i])] += 1.0;
  for (auto& v : h) v /= static_cast<double>(idx.size());
  return h;
}

inline double histogram_gap(const std::vector<double>& a, const std::vector<double>& b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += std::abs(a[i] - b[i]);
  return s;
}

// Sample-weighted mean of member histograms, i.e. the pooled histogram of a cell.
inline std::vector<double> pooled_histogram(const PartitionPlan& plan, const std::vector<std::size_t>& members) {
  std::vector<double> h(plan.num_classes, 0.0);
  double total = 0.0;
  for (auto k : members) {
    const double n = static_cast<double>(plan.client_indices[k].size());
    total += n;
    for (std::size_t i = 0; i < plan.num_classes; ++i) h[i] += n * plan.client_histograms[k][i];
  }
  if (total > 0)
    for (auto& v : h) v /= total;
  return h;
}

inline PartitionPlan partition_noniid(const Dataset& ds, const Topology& topo, const PartitionSpec& spec,
                                      std::uint64_t seed) {
  const std::size_t C = ds.num_classes;
  const std::size_t L = topo.num_servers;
  const std::size_t K = topo.num_clients();
  check(spec.classes_per_client >= 1, "partition: classes_per_client must be at least 1");
  check(spec.classes_per_client <= spec.classes_per_cell,
        "partition: classes_per_client exceeds classes_per_cell");
  check(spec.classes_per_cell <= C, "partition: classes_per_cell exceeds the number of classes");
  check(spec.size_skew >= 0.0 && spec.size_skew < 1.0, "partition: size_skew must lie in [0, 1)");

  Rng rng(derive_seed(seed, 0x9a27));
  PartitionPlan plan;
  plan.num_classes = C;

  plan.client_cell.assign(K, 0);
  const auto roles = topo.roles();
  for (std::size_t k = 0; k < K; ++k) {
    const auto r = roles[k];
    if (r.kind == RoleKind::Local) plan.client_cell[k] = r.index;
    else if (r.kind == RoleKind::RelayOverlap) plan.client_cell[k] = topo.relay_attachment(r.index);
    else plan.client_cell[k] = r.index + rng.below(2);
  }
  plan.cell_members.assign(L, {});
  for (std::size_t k = 0; k < K; ++k) plan.cell_members[plan.client_cell[k]].push_back(k);

  // Evenly staggered windows over a shuffled class order: neighbours share
  // classes and the union covers every class when L * per_cell >= C.
  std::vector<std::size_t> perm(C);
  std::iota(perm.begin(), perm.end(), 0);
  rng.shuffle(perm);
  plan.cell_classes.assign(L, {});
  for (std::size_t j = 0; j < L; ++j) {
    const std::size_t start = j * C / L;
    for (std::size_t t = 0; t < spec.classes_per_cell; ++t) plan.cell_classes[j].push_back(perm[(start + t) % C]);
    std::sort(plan.cell_classes[j].begin(), plan.cell_classes[j].end());
  }

  plan.client_classes.assign(K, {});
  std::vector<std::size_t> slots(C, 0);
  for (std::size_t j = 0; j < L; ++j) {
    const auto& allow = plan.cell_classes[j];
    for (std::size_t i = 0; i < plan.cell_members[j].size(); ++i) {
      const std::size_t k = plan.cell_members[j][i];
      for (std::size_t t = 0; t < spec.classes_per_client; ++t) {
        const std::size_t c = allow[(i * spec.classes_per_client + t) % allow.size()];
        plan.client_classes[k].push_back(c);
        ++slots[c];
      }
    }
  }

  // Per-(client, class) quota.
  auto pools = ds.indices_by_class();
  std::vector<std::size_t> class_quota(C, 0);
  for (std::size_t c = 0; c < C; ++c) {
    if (slots[c] == 0) continue;
    class_quota[c] = spec.samples_per_client > 0 ? spec.samples_per_client / spec.classes_per_client
                                                 : pools[c].size() / slots[c];
    check(class_quota[c] >= 1, "partition: infeasible, class " + std::to_string(c) +
                                   " cannot give every holder a sample");
  }
  if (spec.equal_shards && spec.samples_per_client == 0) {
    std::size_t q = std::numeric_limits<std::size_t>::max();
    for (std::size_t c = 0; c < C; ++c)
      if (slots[c] > 0) q = std::min(q, class_quota[c]);
    for (std::size_t c = 0; c < C; ++c)
      if (slots[c] > 0) class_quota[c] = q;
  }
  std::vector<double> client_scale(K, 1.0);
  if (spec.size_skew > 0.0)
    for (auto& f : client_scale) f = rng.uniform(1.0 - spec.size_skew, 1.0);
  auto take = [&](std::size_t k, std::size_t c) {
    return std::max<std::size_t>(1, static_cast<std::size_t>(std::floor(class_quota[c] * client_scale[k])));
  };

  std::vector<std::size_t> demand(C, 0);
  for (std::size_t k = 0; k < K; ++k)
    for (auto c : plan.client_classes[k]) demand[c] += take(k, c);
  for (std::size_t c = 0; c < C; ++c)
    check(demand[c] <= pools[c].size(), "partition: infeasible, class " + std::to_string(c) + " needs " +
                                            std::to_string(demand[c]) + " samples but has " +
                                            std::to_string(pools[c].size()));

  for (auto& p : pools) rng.shuffle(p);
  std::vector<std::size_t> cursor(C, 0);
  plan.client_indices.assign(K, {});
  for (std::size_t k = 0; k < K; ++k) {
    for (auto c : plan.client_classes[k]) {
      for (std::size_t i = 0, n = take(k, c); i < n; ++i) plan.client_indices[k].push_back(pools[c][cursor[c]++]);
    }
    std::sort(plan.client_indices[k].begin(), plan.client_indices[k].end());
  }

  for (std::size_t k = 0; k < K; ++k) plan.client_histograms.push_back(class_histogram(ds, plan.client_indices[k]));
  for (std::size_t j = 0; j < L; ++j) plan.cell_histograms.push_back(pooled_histogram(plan, plan.cell_members[j]));
  std::vector<std::size_t> all(K);
  std::iota(all.begin(), all.end(), 0);
  plan.global_histogram = pooled_histogram(plan, all);
  return plan;
}

// Per-client sum_i |P_k(i) - P_cell(i)| against the client's own cell.
inline std::vector<double> heterogeneity(const PartitionPlan& plan) {
  std::vector<double> out;
  for (std::size_t k = 0; k < plan.num_clients(); ++k)
    out.push_back(histogram_gap(plan.client_histograms[k], plan.cell_histograms[plan.client_cell[k]]));
  return out;
}

inline nlohmann::json to_json(const PartitionPlan& plan) {
  nlohmann::json j;
  j["num_classes"] = plan.num_classes;
  j["cell_classes"] = plan.cell_classes;
  j["cell_members"] = plan.cell_members;
  j["cell_histograms"] = plan.cell_histograms;
  j["global_histogram"] = plan.global_histogram;
  j["clients"] = nlohmann::json::array();
  for (std::size_t k = 0; k < plan.num_clients(); ++k)
    j["clients"].push_back({{"id", k},
                            {"cell", plan.client_cell[k]},
                            {"classes", plan.client_classes[k]},
                            {"num_samples", plan.client_indices[k].size()},
                            {"histogram", plan.client_histograms[k]},
                            {"indices", plan.client_indices[k]}});
  return j;
}

}  // namespace fedoc
