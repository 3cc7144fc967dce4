#pragma once

#include <algorithm>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "fedoc/aggregation.hpp"
#include "fedoc/channel.hpp"
#include "fedoc/topology.hpp"

namespace fedoc {

enum class Algorithm { FedOcFastest, FedOcFixed, Hfl, FedMes, FlEocd };

inline constexpr Algorithm kAllAlgorithms[] = {Algorithm::FedOcFastest, Algorithm::FedOcFixed, Algorithm::Hfl,
                                               Algorithm::FedMes, Algorithm::FlEocd};

inline const char* to_string(Algorithm a) {
  switch (a) {
    case Algorithm::FedOcFastest: return "fedoc-fastest";
    case Algorithm::FedOcFixed: return "fedoc-fixed";
    case Algorithm::Hfl: return "hfl";
    case Algorithm::FedMes: return "fedmes";
    case Algorithm::FlEocd: return "fl-eocd";
  }
  return "?";
}

inline Algorithm parse_algorithm(const std::string& s) {
  for (auto a : kAllAlgorithms)
    if (s == to_string(a)) return a;
  throw Error("unknown algorithm '" + s + "' (expected fedoc-fastest, fedoc-fixed, hfl, fedmes or fl-eocd)");
}

inline bool uses_relay(Algorithm a) { return a == Algorithm::FedOcFastest || a == Algorithm::FedOcFixed; }
inline bool multi_upload(Algorithm a) { return a == Algorithm::FedMes || a == Algorithm::FlEocd; }

struct EngineConfig {
  Algorithm algorithm = Algorithm::FedOcFastest;
  double kappa = kInf;  // cloud every kappa rounds; inf is cloud-free
  // Cloud after 0-based round i when (i + 1 + cloud_phase) % kappa == 0.
  std::size_t cloud_phase = 0;
  std::size_t epochs = 5;
  ChannelParams channel;
  bool timing = true;  // off: every latency is zero (hand-built topologies without geometry)
  bool record_models = false;
};

inline constexpr int kSelectAll = -1;  // OC initialised from and uploading to every covering ES
inline constexpr int kSelectNone = -2;

template <class P>
struct RoundTrace {
  std::size_t round = 0;
  bool cloud = false;
  std::vector<EdgeTiming> timing;
  std::vector<double> ready;  // per-ES broadcast-ready time for the next round
  double t_cloud = 0.0;
  double cumulative_time = 0.0;
  std::vector<int> selection;  // per client: ES whose model it started from
  std::vector<std::uint64_t> checksums;
  // Populated when record_models is set.
  std::vector<P> edge_models;     // after the round (post cloud when applicable)
  std::vector<P> cell_models;     // cell-partition averages over each ES's uploaders plus attached relay
  std::vector<double> cell_weights;
  std::optional<P> cloud_model;
};

// Trainer: (initial model, client id, round) -> locally trained model.
template <class P>
using Trainer = std::function<P(const P&, std::size_t, std::size_t)>;

template <class P>
class Engine {
 public:
  Engine(Topology topo, std::vector<double> data_sizes, std::vector<std::size_t> home, EngineConfig cfg,
         std::uint64_t seed)
      : topo_(std::move(topo)), n_(std::move(data_sizes)), home_(std::move(home)), cfg_(std::move(cfg)),
        seed_(seed) {
    const std::size_t K = topo_.num_clients();
    const std::size_t L = topo_.num_servers;
    check(n_.size() == K && home_.size() == K, "engine: data sizes / home cells must cover every client");
    check(cfg_.kappa >= 1.0, "engine: kappa must be at least 1");
    check(cfg_.epochs >= 1, "engine: need at least one epoch");
    for (std::size_t k = 0; k < K; ++k) {
      check(n_[k] > 0.0, "engine: client " + std::to_string(k) + " has no data");
      const auto cov = topo_.covering_servers(k);
      check(std::find(cov.begin(), cov.end(), home_[k]) != cov.end(),
            "engine: home ES of client " + std::to_string(k) + " does not cover it");
    }
    roles_ = topo_.roles();
    attached_.assign(L, {});
    for (std::size_t p = 0; p < topo_.num_pairs(); ++p)
      if (auto b = topo_.relay(p)) attached_[topo_.relay_attachment(p)].push_back(*b);
    if (cfg_.timing) {
      cfg_.channel.validate();
      gains_ = sample_gains(topo_, cfg_.channel, derive_seed(seed_, 0));
      epoch_times_ = sample_epoch_times(K, cfg_.channel, derive_seed(seed_, 0));
    } else {
      epoch_times_.assign(K, 0.0);
    }
    ready_.assign(L, 0.0);
    prev_weight_.assign(L, 0.0);
    for (std::size_t k = 0; k < K; ++k)
      for (auto l : topo_.covering_servers(k)) prev_weight_[l] += n_[k];
    cache_.assign(K, {});
  }

  const Topology& topology() const { return topo_; }
  const EngineConfig& config() const { return cfg_; }
  const std::vector<P>& edge_models() const { return edge_; }
  const std::vector<double>& ready_times() const { return ready_; }
  double clock() const { return clock_; }
  std::size_t rounds_done() const { return round_; }

  void initialize(const std::vector<P>& per_es) {
    check(per_es.size() == topo_.num_servers, "engine: one initial model per ES required");
    edge_ = per_es;
  }
  void initialize(const P& shared) { edge_.assign(topo_.num_servers, shared); }

  bool is_cloud_round(std::size_t r) const {
    if (!std::isfinite(cfg_.kappa)) return false;
    const auto k = static_cast<std::size_t>(cfg_.kappa);
    return (r + 1 + cfg_.cloud_phase) % k == 0;
  }

  // Cell partition: each ES's uploaders plus the relays attached to it. Used by
  // the cloud step and exposed for the analysis.
  std::vector<std::vector<std::size_t>> cell_partition(const std::vector<std::vector<std::size_t>>& uploaders) const {
    auto parts = uploaders;
    if (uses_relay(cfg_.algorithm))
      for (std::size_t l = 0; l < parts.size(); ++l) {
        parts[l].insert(parts[l].end(), attached_[l].begin(), attached_[l].end());
        std::sort(parts[l].begin(), parts[l].end());
      }
    return parts;
  }

  RoundTrace<P> step(const Trainer<P>& train) {
    check(edge_.size() == topo_.num_servers, "engine: not initialised");
    const std::size_t L = topo_.num_servers;
    const std::size_t K = topo_.num_clients();
    const std::size_t r = round_;
    const Algorithm algo = cfg_.algorithm;
    RoundTrace<P> tr;
    tr.round = r;

    if (cfg_.timing) {
      if (cfg_.channel.resample_fading && r > 0) gains_ = sample_gains(topo_, cfg_.channel, derive_seed(seed_, r));
      if (cfg_.channel.resample_compute && r > 0)
        epoch_times_ = sample_epoch_times(K, cfg_.channel, derive_seed(seed_, r));
    }
    std::vector<double> t_cast(L, 0.0);
    if (cfg_.timing)
      for (std::size_t l = 0; l < L; ++l) t_cast[l] = broadcast_latency(cell_min_gain(topo_, gains_, l), cfg_.channel);
    std::vector<double> arrival(L);
    for (std::size_t l = 0; l < L; ++l) arrival[l] = ready_[l] + t_cast[l];

    // (1) initialisation
    tr.selection.assign(K, kSelectNone);
    std::vector<double> start(K, 0.0);
    std::vector<P> init_storage;
    init_storage.reserve(K);
    std::vector<const P*> init(K, nullptr);
    std::vector<std::vector<std::size_t>> trainers(L);
    for (std::size_t k = 0; k < K; ++k) {
      const auto role = roles_[k];
      if (role.kind == RoleKind::Local) {
        tr.selection[k] = static_cast<int>(role.index);
      } else if (multi_upload(algo)) {
        tr.selection[k] = kSelectAll;
      } else if (algo == Algorithm::FedOcFastest) {
        const std::size_t a = role.index, b = role.index + 1;
        tr.selection[k] = static_cast<int>(arrival[b] < arrival[a] ? b : a);
      } else {
        tr.selection[k] = static_cast<int>(home_[k]);
      }
      if (tr.selection[k] >= 0) {
        const auto l = static_cast<std::size_t>(tr.selection[k]);
        init[k] = &edge_[l];
        start[k] = arrival[l];
        trainers[l].push_back(k);
      } else {
        const std::size_t a = role.index, b = role.index + 1;
        init_storage.push_back(weighted_average<P>({{prev_weight_[a], &edge_[a]}, {prev_weight_[b], &edge_[b]}}));
        init[k] = &init_storage.back();
        start[k] = std::max(arrival[a], arrival[b]);
        trainers[a].push_back(k);
        trainers[b].push_back(k);
      }
    }

    // (2) local training
    std::vector<P> local;
    local.reserve(K);
    std::vector<double> finish(K);
    for (std::size_t k = 0; k < K; ++k) {
      local.push_back(train(*init[k], k, r));
      finish[k] = start[k] + static_cast<double>(cfg_.epochs) * epoch_times_[k];
    }

    // Uploaded payloads: FL-EOCD overlap clients merge their stale cache first.
    std::vector<P> eocd_upload;
    std::vector<const P*> upload(K);
    for (std::size_t k = 0; k < K; ++k) upload[k] = &local[k];
    if (algo == Algorithm::FlEocd) {
      eocd_upload.reserve(K);
      for (std::size_t k = 0; k < K; ++k) {
        if (roles_[k].kind == RoleKind::Local || cache_[k].empty()) continue;
        std::vector<Term<P>> terms;
        for (const auto& [w, m] : cache_[k]) terms.push_back({w, &m});
        terms.push_back({n_[k], &local[k]});
        eocd_upload.push_back(weighted_average(terms));
        upload[k] = &eocd_upload.back();
      }
    }

    std::vector<std::vector<std::size_t>> uploaders(L);
    for (std::size_t k = 0; k < K; ++k) {
      const auto role = roles_[k];
      if (tr.selection[k] == kSelectAll) {
        uploaders[role.index].push_back(k);
        uploaders[role.index + 1].push_back(k);
      } else if (role.kind == RoleKind::RelayOverlap && uses_relay(algo)) {
        continue;  // held for the relay stage
      } else {
        uploaders[static_cast<std::size_t>(tr.selection[k])].push_back(k);
      }
    }

    tr.timing = cfg_.timing ? round_times(topo_, gains_, epoch_times_, cfg_.epochs, trainers, uploaders,
                                          cfg_.channel, uses_relay(algo))
                            : std::vector<EdgeTiming>(L);

    // (3) per-ES average over S_l
    std::vector<std::optional<P>> cell(L);
    std::vector<double> cell_n(L, 0.0);
    std::vector<double> done(L);
    for (std::size_t l = 0; l < L; ++l) {
      double last = arrival[l];
      if (!uploaders[l].empty()) {
        std::vector<Term<P>> terms;
        last = 0.0;
        for (auto k : uploaders[l]) {
          terms.push_back({n_[k], upload[k]});
          cell_n[l] += n_[k];
          last = std::max(last, finish[k]);
        }
        cell[l] = weighted_average(terms);
        last += tr.timing[l].t_upload;
      }
      done[l] = last;
    }

    // (4) relay and (5) three-way merge
    std::vector<P> next(L);
    std::vector<double> complete = done;
    if (uses_relay(algo)) {
      struct Relay {
        std::optional<P> model;
        double weight = 0.0;
        double arrival = 0.0;
      };
      auto relay_into = [&](std::size_t pair, std::size_t from, std::size_t to) {
        Relay out;
        const auto b = topo_.relay(pair);
        if (!b) return out;
        out.model = weighted_average<P>({{cell_n[from], cell[from] ? &*cell[from] : nullptr}, {n_[*b], &local[*b]}});
        out.weight = cell_n[from] + n_[*b];
        const double hop = cfg_.timing ? pair_relay_latency(topo_, gains_, pair, from, to, cfg_.channel) : 0.0;
        out.arrival = std::max(done[from], finish[*b]) + hop;
        return out;
      };
      for (std::size_t l = 0; l < L; ++l) {
        Relay left, right;
        if (l > 0) left = relay_into(l - 1, l - 1, l);
        if (l + 1 < L) right = relay_into(l, l + 1, l);
        std::vector<Term<P>> terms;
        if (left.model) terms.push_back({left.weight, &*left.model});
        if (cell[l]) terms.push_back({cell_n[l], &*cell[l]});
        if (right.model) terms.push_back({right.weight, &*right.model});
        next[l] = terms.empty() ? edge_[l] : weighted_average(terms);
        if (left.model) complete[l] = std::max(complete[l], left.arrival);
        if (right.model) complete[l] = std::max(complete[l], right.arrival);
      }
    } else {
      for (std::size_t l = 0; l < L; ++l) next[l] = cell[l] ? *cell[l] : edge_[l];
    }

    // Cell-partition averages (uploaders plus attached relays).
    const auto parts = cell_partition(uploaders);
    std::vector<std::optional<P>> hat(L);
    std::vector<double> hat_n(L, 0.0);
    const bool cloud = is_cloud_round(r);
    if (cloud || cfg_.record_models) {
      for (std::size_t l = 0; l < L; ++l) {
        if (parts[l].empty()) continue;
        std::vector<Term<P>> terms;
        for (auto k : parts[l]) {
          const bool relay = roles_[k].kind == RoleKind::RelayOverlap && uses_relay(algo);
          terms.push_back({n_[k], relay ? &local[k] : upload[k]});
          hat_n[l] += n_[k];
        }
        hat[l] = weighted_average(terms);
      }
    }

    // Stale caches for FL-EOCD: the models broadcast this round with the
    // weights that produced them.
    if (algo == Algorithm::FlEocd)
      for (std::size_t k = 0; k < K; ++k)
        if (roles_[k].kind != RoleKind::Local) {
          const std::size_t a = roles_[k].index, b = a + 1;
          cache_[k] = {{prev_weight_[a], edge_[a]}, {prev_weight_[b], edge_[b]}};
        }

    for (std::size_t l = 0; l < L; ++l)
      if (cell_n[l] > 0.0) prev_weight_[l] = cell_n[l];

    tr.cloud = cloud;
    double latest = 0.0;
    for (auto c : complete) latest = std::max(latest, c);
    if (cloud) {
      std::vector<Term<P>> terms;
      for (std::size_t l = 0; l < L; ++l)
        if (hat[l]) terms.push_back({hat_n[l], &*hat[l]});
      P global = weighted_average(terms);
      tr.t_cloud = cfg_.timing ? cloud_latency(tr.timing, cfg_.channel) : 0.0;
      for (std::size_t l = 0; l < L; ++l) {
        next[l] = global;
        complete[l] = latest + tr.t_cloud;
      }
      if (cfg_.record_models) tr.cloud_model = std::move(global);
    }

    for (std::size_t l = 0; l < L; ++l) {
      ensure(!cfg_.timing || complete[l] > ready_[l], "event clock did not advance at ES " + std::to_string(l));
      ready_[l] = complete[l];
    }
    edge_ = std::move(next);
    clock_ = std::max(clock_, *std::max_element(ready_.begin(), ready_.end()));
    tr.ready = ready_;
    tr.cumulative_time = clock_;
    for (const auto& m : edge_) tr.checksums.push_back(PayloadOps<P>::checksum(m));
    if (cfg_.record_models) {
      tr.edge_models = edge_;
      for (std::size_t l = 0; l < L; ++l) {
        tr.cell_models.push_back(hat[l] ? *hat[l] : edge_[l]);
        tr.cell_weights.push_back(hat_n[l]);
      }
    }
    ++round_;
    return tr;
  }

 private:
  Topology topo_;
  std::vector<double> n_;
  std::vector<std::size_t> home_;
  EngineConfig cfg_;
  std::uint64_t seed_;
  std::vector<ClientRole> roles_;
  std::vector<std::vector<std::size_t>> attached_;
  GainTable gains_;
  std::vector<double> epoch_times_;
  std::vector<P> edge_;
  std::vector<double> ready_;
  std::vector<double> prev_weight_;
  std::vector<std::vector<std::pair<double, P>>> cache_;
  std::size_t round_ = 0;
  double clock_ = 0.0;
};

// ---------------------------------------------------------------------------

struct PropagationReport {
  std::size_t num_servers = 0;
  std::vector<std::vector<TagSet>> history;  // history[r][l]: ES l after r rounds
  std::optional<std::size_t> completion_round;
  bool passed = false;
};

// Tag-mode FedOC on the chain: ES l starts with {l}, training passes tags
// through, every aggregation is a union. Passes when ES 0 first holds all L
// tags after exactly L - 1 rounds.
inline PropagationReport marker_propagation_check(const Topology& topo, std::size_t rounds, std::uint64_t seed,
                                                  Algorithm algo = Algorithm::FedOcFastest) {
  const std::size_t L = topo.num_servers;
  std::vector<std::size_t> home(topo.num_clients());
  const auto roles = topo.roles();
  for (std::size_t k = 0; k < home.size(); ++k)
    home[k] = roles[k].kind == RoleKind::RelayOverlap ? topo.relay_attachment(roles[k].index) : roles[k].index;
  EngineConfig cfg;
  cfg.algorithm = algo;
  cfg.kappa = kInf;
  cfg.timing = !topo.client_positions.empty() && !topo.server_positions.empty();
  Engine<TagSet> eng(topo, std::vector<double>(topo.num_clients(), 1.0), home, cfg, seed);
  std::vector<TagSet> init(L);
  for (std::size_t l = 0; l < L; ++l) init[l] = {l};
  eng.initialize(init);

  PropagationReport rep;
  rep.num_servers = L;
  rep.history.push_back(init);
  auto full = [&](const TagSet& s) { return s.size() == L; };
  if (full(init[0])) rep.completion_round = 0;
  const Trainer<TagSet> pass = [](const TagSet& m, std::size_t, std::size_t) { return m; };
  for (std::size_t r = 0; r < rounds; ++r) {
    eng.step(pass);
    rep.history.push_back(eng.edge_models());
    if (!rep.completion_round && full(eng.edge_models()[0])) rep.completion_round = r + 1;
  }
  rep.passed = rep.completion_round && *rep.completion_round == L - 1;
  return rep;
}

}  // namespace fedoc
