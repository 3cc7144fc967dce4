#pragma once

#include <algorithm>
#include <cmath>
#include <span>
#include <vector>

#include "fedoc/topology.hpp"

namespace fedoc {

inline double dbm_per_hz_to_watts(double dbm) { return std::pow(10.0, (dbm - 30.0) / 10.0); }

struct ChannelParams {
  double bandwidth_hz = 50e6;
  double client_power_w = 1.0;
  double es_power_w = 5.0;
  double noise_psd_w = dbm_per_hz_to_watts(-174.0);  // W/Hz
  double pathloss_intercept_db = 128.1;
  double pathloss_slope_db = 37.6;
  double rayleigh_variance = 1.0;
  double fading_floor = 1e-6;
  double model_bits = 22270.0 * 64.0;
  double cloud_ratio = 10.0;  // t_c
  double epoch_time_min_s = 0.1;
  double epoch_time_max_s = 0.2;
  bool natural_log = false;         // rates in nats instead of bits (sensitivity checks only)
  bool resample_fading = false;     // new small-scale fading every round
  bool distinct_relay_legs = false; // separate ES->ROC and ROC->ES gains in the relay formula
  bool resample_compute = true;     // new per-epoch compute times every round

  bool operator==(const ChannelParams&) const = default;

  void validate() const {
    check(bandwidth_hz > 0 && client_power_w > 0 && es_power_w > 0 && noise_psd_w > 0,
          "channel: bandwidth, powers and noise must be positive");
    check(model_bits > 0, "channel: model size must be positive");
    check(cloud_ratio > 0, "channel: cloud_ratio must be positive");
    check(rayleigh_variance > 0 && fading_floor > 0, "channel: fading parameters must be positive");
    check(epoch_time_min_s > 0 && epoch_time_min_s <= epoch_time_max_s,
          "channel: epoch time range must satisfy 0 < min <= max");
  }

  double log_rate(double x) const { return natural_log ? std::log1p(x) : std::log2(1.0 + x); }
};

inline double pathloss_db(double distance_m, const ChannelParams& p) {
  return p.pathloss_intercept_db + p.pathloss_slope_db * std::log10(std::max(distance_m, 1.0) / 1000.0);
}

// Client-to-ES power gains for every covering link (uplink and downlink share a
// sample). gain[k][l] is 0 where client k is outside cell l.
struct GainTable {
  std::vector<std::vector<double>> gain;
  std::size_t clamped_links = 0;  // links closer than 1 m, evaluated at 1 m

  double at(std::size_t client, std::size_t server) const {
    const double g = gain[client][server];
    ensure(g > 0.0, "no link between client " + std::to_string(client) + " and ES " + std::to_string(server));
    return g;
  }
};

inline GainTable sample_gains(const Topology& topo, const ChannelParams& params, std::uint64_t seed) {
  GainTable t;
  t.gain.assign(topo.num_clients(), std::vector<double>(topo.num_servers, 0.0));
  Rng rng(derive_seed(seed, 0xfade));
  for (std::size_t k = 0; k < topo.num_clients(); ++k) {
    for (auto l : topo.covering_servers(k)) {
      const double d = distance(topo.client_positions[k], topo.server_positions[l]);
      if (d < 1.0) ++t.clamped_links;
      const double fading = std::max(params.fading_floor, -std::log1p(-rng.uniform()) * params.rayleigh_variance);
      t.gain[k][l] = std::pow(10.0, -pathloss_db(d, params) / 10.0) * fading;
    }
  }
  return t;
}

// Equal split of the cell's half band among |S| uploaders; the weakest link sets
// the pace.
inline double upload_latency(std::span<const double> uploader_gains, const ChannelParams& p) {
  check(!uploader_gains.empty(), "upload_latency: no uploaders");
  const double band = p.bandwidth_hz / (2.0 * static_cast<double>(uploader_gains.size()));
  const double gmin = *std::min_element(uploader_gains.begin(), uploader_gains.end());
  return p.model_bits / (band * p.log_rate(gmin * p.client_power_w / (band * p.noise_psd_w)));
}

inline double broadcast_latency(double min_downlink_gain, const ChannelParams& p) {
  const double band = p.bandwidth_hz / 2.0;
  return p.model_bits / (band * p.log_rate(min_downlink_gain * p.es_power_w / (band * p.noise_psd_w)));
}

// Two-leg ES -> ROC -> ES hop on a quarter band.
inline double relay_latency(double down_gain, double up_gain, const ChannelParams& p) {
  const double q = p.bandwidth_hz / 4.0;
  const double snr_scale = 4.0 / (p.bandwidth_hz * p.noise_psd_w);
  const double rate = q * (p.log_rate(snr_scale * down_gain * p.es_power_w) +
                           p.log_rate(snr_scale * up_gain * p.client_power_w));
  return p.model_bits / rate;
}

// Directed relay from ES `from` to ES `to` through the pair's ROC.
inline double pair_relay_latency(const Topology& topo, const GainTable& g, std::size_t pair, std::size_t from,
                                 std::size_t to, const ChannelParams& p) {
  const auto roc = topo.relay(pair);
  if (!roc) return 0.0;
  const double down = g.at(*roc, from);
  const double up = g.at(*roc, to);
  if (p.distinct_relay_legs) return relay_latency(down, up, p);
  const double shared = std::min(down, up);
  return relay_latency(shared, shared, p);
}

// Worst downlink gain among all clients inside cell l.
inline double cell_min_gain(const Topology& topo, const GainTable& g, std::size_t l) {
  double m = 0.0;
  bool any = false;
  for (std::size_t k = 0; k < topo.num_clients(); ++k) {
    const double v = g.gain[k][l];
    if (v > 0.0 && (!any || v < m)) {
      m = v;
      any = true;
    }
  }
  return any ? m : 1.0;
}

inline std::vector<double> sample_epoch_times(std::size_t num_clients, const ChannelParams& p, std::uint64_t seed) {
  Rng rng(derive_seed(seed, 0xc0de));
  std::vector<double> t(num_clients);
  for (auto& v : t) v = rng.uniform(p.epoch_time_min_s, p.epoch_time_max_s);
  return t;
}

struct EdgeTiming {
  double t_cast = 0.0;
  double t_comp = 0.0;
  double t_upload = 0.0;
  double t_relay = 0.0;
  double t_edge = 0.0;
};

// Static per-ES breakdown. `trainers[l]` are the clients initialised from ES l,
// `uploaders[l]` the set S_l. Relay time is the max over the ES's two pairs,
// zero for missing neighbours or when `with_relay` is off.
inline std::vector<EdgeTiming> round_times(const Topology& topo, const GainTable& g,
                                           std::span<const double> epoch_times, std::size_t epochs,
                                           const std::vector<std::vector<std::size_t>>& trainers,
                                           const std::vector<std::vector<std::size_t>>& uploaders,
                                           const ChannelParams& p, bool with_relay) {
  const std::size_t L = topo.num_servers;
  std::vector<EdgeTiming> out(L);
  for (std::size_t l = 0; l < L; ++l) {
    auto& t = out[l];
    t.t_cast = broadcast_latency(cell_min_gain(topo, g, l), p);
    for (auto k : trainers[l]) t.t_comp = std::max(t.t_comp, static_cast<double>(epochs) * epoch_times[k]);
    if (!uploaders[l].empty()) {
      std::vector<double> gains;
      for (auto k : uploaders[l]) gains.push_back(g.at(k, l));
      t.t_upload = upload_latency(gains, p);
    }
    if (with_relay) {
      if (l > 0) t.t_relay = std::max(t.t_relay, pair_relay_latency(topo, g, l - 1, l - 1, l, p));
      if (l + 1 < L) t.t_relay = std::max(t.t_relay, pair_relay_latency(topo, g, l, l + 1, l, p));
    }
    t.t_edge = t.t_cast + t.t_comp + t.t_upload;
  }
  return out;
}

inline double cloud_latency(const std::vector<EdgeTiming>& times, const ChannelParams& p) {
  double m = 0.0;
  for (const auto& t : times) m = std::max(m, t.t_edge);
  return p.cloud_ratio * m;
}

}  // namespace fedoc
