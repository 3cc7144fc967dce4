// One pass/fail line per acceptance criterion. `--only N` runs a single one.

#include <CLI11.hpp>

#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <sstream>

#include "fedoc/analysis.hpp"
#include "fedoc/experiment.hpp"

using namespace fedoc;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string fmt3(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.4g", v);
  return buf;
}

std::string source_path(const std::string& rel) { return std::string(FEDOC_SOURCE_DIR) + "/" + rel; }

ExperimentConfig load_shipped(const std::string& rel) {
  auto c = parse_config(source_path(rel));
  const char* env = std::getenv("FEDOC_DATA_DIR");
  if (c.dataset.mnist_dir.empty() && !(env && *env)) c.dataset.mnist_dir = source_path("data/mnist");
  return c;
}

fs::path scratch(const std::string& name) {
  auto p = fs::temp_directory_path() / ("fedoc_acceptance_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

std::vector<std::size_t> fixed_homes(const Topology& t) {
  std::vector<std::size_t> h(t.num_clients());
  const auto roles = t.roles();
  for (std::size_t k = 0; k < h.size(); ++k)
    h[k] = roles[k].kind == RoleKind::RelayOverlap ? t.relay_attachment(roles[k].index) : roles[k].index;
  return h;
}

Topology random_chain(Rng& rng, std::size_t max_servers) {
  TopologySpec s;
  s.num_servers = 1 + rng.below(max_servers);
  s.overlap_sizes.clear();
  std::size_t ov = 0;
  for (std::size_t p = 0; p + 1 < s.num_servers; ++p) {
    s.overlap_sizes.push_back(rng.below(5));
    ov += s.overlap_sizes.back();
  }
  s.num_clients = ov + 3 * s.num_servers + rng.below(10);
  return build_topology(s, rng.next());
}

std::vector<double> random_sizes(Rng& rng, std::size_t k) {
  std::vector<double> n(k);
  for (auto& v : n) v = rng.uniform(1.0, 200.0);
  return n;
}

double composition_error(const Composition& c) {
  double sum = 0.0, neg = 0.0;
  for (const auto& [id, v] : c) {
    sum += v;
    neg = std::max(neg, -v);
  }
  return std::max(neg, std::abs(sum - 1.0));
}

// ---------------------------------------------------------------------------

Outcome c1_aggregation_algebra() {
  Rng rng(101);
  double worst_mass = 0.0, worst_idem = 0.0;
  std::size_t aggregations = 0;
  for (int inst = 0; inst < 100; ++inst) {
    const auto topo = random_chain(rng, 4);
    const auto n = random_sizes(rng, topo.num_clients());
    EngineConfig cfg;
    cfg.algorithm = rng.below(2) ? Algorithm::FedOcFastest : Algorithm::FedOcFixed;
    cfg.kappa = static_cast<double>(1 + rng.below(3));
    cfg.record_models = true;
    const auto seed = rng.next();

    Engine<Composition> mass(topo, n, fixed_homes(topo), cfg, seed);
    mass.initialize(Composition{{1u << 20, 1.0}});
    for (int r = 0; r < 4; ++r) {
      const auto tr =
          mass.step([](const Composition&, std::size_t k, std::size_t) { return Composition{{k, 1.0}}; });
      for (const auto& m : tr.edge_models) worst_mass = std::max(worst_mass, composition_error(m));
      for (const auto& m : tr.cell_models) worst_mass = std::max(worst_mass, composition_error(m));
      if (tr.cloud_model) worst_mass = std::max(worst_mass, composition_error(*tr.cloud_model));
      aggregations += tr.edge_models.size() + tr.cell_models.size() + (tr.cloud_model ? 1 : 0);
    }

    const double c = rng.uniform(-5.0, 5.0);
    Engine<double> same(topo, n, fixed_homes(topo), cfg, seed);
    same.initialize(c);
    for (int r = 0; r < 4; ++r) {
      const auto tr = same.step([c](const double&, std::size_t, std::size_t) { return c; });
      for (double v : tr.edge_models) worst_idem = std::max(worst_idem, std::abs(v - c) / std::max(1.0, std::abs(c)));
      if (tr.cloud_model) worst_idem = std::max(worst_idem, std::abs(*tr.cloud_model - c));
    }
  }
  return {worst_mass <= 1e-12 && worst_idem <= 1e-12,
          std::to_string(aggregations) + " aggregations, max mass error " + fmt3(worst_mass) +
              ", max idempotence error " + fmt3(worst_idem)};
}

ExperimentConfig synthetic_config(std::size_t servers, std::vector<std::size_t> overlaps, std::size_t clients) {
  auto c = parse_config_text(R"(
rounds: 20
dataset: {kind: synthetic, synthetic: {classes: 10, dims: 20, per_class: 80, test_per_class: 20}}
model: {kind: mlp, hidden: 8, activation: tanh}
training: {epochs: 2, batch_size: 10, schedule: {initial: 0.1, decay: 0.99}}
)");
  c.topology.num_servers = servers;
  c.topology.overlap_sizes = std::move(overlaps);
  c.topology.num_clients = clients;
  return c;
}

Outcome c2_reductions() {
  std::size_t compared = 0;
  for (double kappa : {1.0, 5.0, kInf}) {
    auto a = synthetic_config(3, {0, 0}, 30);
    a.kappa = kappa;
    auto b = a;
    a.algorithm = Algorithm::FedOcFastest;
    b.algorithm = Algorithm::Hfl;
    Experiment ea(a), eb(b);
    Engine<ModelParams> fa(ea.topo, ea.plan.sample_counts(), ea.plan.client_cell, ea.engine_config(), 9);
    Engine<ModelParams> fb(eb.topo, eb.plan.sample_counts(), eb.plan.client_cell, eb.engine_config(), 9);
    const auto init = init_model(ea.arch, 5);
    fa.initialize(init);
    fb.initialize(init);
    auto trainer = [](const Experiment& e) {
      return Trainer<ModelParams>([&e](const ModelParams& m, std::size_t k, std::size_t r) {
        return local_sgd(m, e.data.train, e.plan.client_indices[k], e.cfg.training, r, derive_seed(3, r + 1, k));
      });
    };
    const auto ta = trainer(ea), tb = trainer(eb);
    for (int r = 0; r < 20; ++r) {
      fa.step(ta);
      fb.step(tb);
      if (fa.edge_models() != fb.edge_models())
        return {false, "FedOC and HFL diverge at round " + std::to_string(r) + " (kappa " + format_kappa(kappa) + ")"};
      ++compared;
    }
  }

  auto s = synthetic_config(1, {}, 8);
  Experiment e(s);
  Engine<ModelParams> eng(e.topo, e.plan.sample_counts(), e.plan.client_cell, e.engine_config(), 4);
  ModelParams w = init_model(e.arch, 11);
  eng.initialize(w);
  const auto n = e.plan.sample_counts();
  for (std::size_t r = 0; r < 20; ++r) {
    auto local = [&](const ModelParams& m, std::size_t k) {
      return local_sgd(m, e.data.train, e.plan.client_indices[k], s.training, r, derive_seed(7, r + 1, k));
    };
    eng.step([&](const ModelParams& m, std::size_t k, std::size_t) { return local(m, k); });
    // FedAvg: sum_k n_k w_k / sum_k n_k, accumulated in client order.
    ModelParams acc = local(w, 0);
    double total = n[0];
    for (auto& v : acc.w) v *= n[0];
    for (std::size_t k = 1; k < n.size(); ++k) {
      const auto wk = local(w, k);
      for (std::size_t i = 0; i < acc.w.size(); ++i) acc.w[i] += n[k] * wk.w[i];
      total += n[k];
    }
    for (auto& v : acc.w) v /= total;
    w = acc;
    if (eng.edge_models()[0] != w) return {false, "L=1 FedOC differs from FedAvg at round " + std::to_string(r)};
    ++compared;
  }
  return {true, std::to_string(compared) + " rounds bit-identical (3 kappa settings + single-cell FedAvg)"};
}

Outcome c3_rewrite() {
  Rng rng(303);
  double worst = 0.0;
  for (int inst = 0; inst < 50; ++inst) {
    TopologySpec s;
    s.overlap_sizes = {1 + rng.below(5), 1 + rng.below(5)};
    s.num_clients = 30 + rng.below(20);
    const auto topo = build_topology(s, rng.next());
    const auto n = random_sizes(rng, topo.num_clients());
    std::vector<double> x(topo.num_clients());
    for (auto& v : x) v = rng.uniform(-10.0, 10.0);
    EngineConfig cfg;
    cfg.algorithm = rng.below(2) ? Algorithm::FedOcFastest : Algorithm::FedOcFixed;
    Engine<double> eng(topo, n, fixed_homes(topo), cfg, rng.next());
    eng.initialize(std::vector<double>{rng.uniform(-1, 1), rng.uniform(-1, 1), rng.uniform(-1, 1)});
    const auto tr = eng.step([&](const double&, std::size_t k, std::size_t) { return x[k]; });

    // Regrouped form: every ES model is one flat average over its own uploaders,
    // each neighbour's uploaders and the relay of every adjacent pair.
    const auto roles = topo.roles();
    std::vector<std::vector<std::size_t>> S(3);
    for (std::size_t k = 0; k < topo.num_clients(); ++k)
      if (roles[k].kind != RoleKind::RelayOverlap) S[static_cast<std::size_t>(tr.selection[k])].push_back(k);
    for (std::size_t l = 0; l < 3; ++l) {
      std::vector<std::size_t> members = S[l];
      if (l > 0) {
        members.insert(members.end(), S[l - 1].begin(), S[l - 1].end());
        members.push_back(*topo.relay(l - 1));
      }
      if (l < 2) {
        members.insert(members.end(), S[l + 1].begin(), S[l + 1].end());
        members.push_back(*topo.relay(l));
      }
      double num = 0.0, den = 0.0;
      for (auto k : members) {
        num += n[k] * x[k];
        den += n[k];
      }
      worst = std::max(worst, std::abs(eng.edge_models()[l] - num / den));
    }
  }
  return {worst <= 1e-12, "50 instances, max deviation " + fmt3(worst)};
}

Outcome c4_zero_sums() {
  const auto rho = rho_seed({1, 1, 1});
  const auto mu = mu_seed({1, 1, 1});
  const Triple er{1.0 / 6, 1.0 / 6, -1.0 / 3}, em{-1.0 / 3, 1.0 / 6, 1.0 / 6};
  double hand = 0.0;
  for (int j = 0; j < 3; ++j) hand = std::max({hand, std::abs(rho[j] - er[j]), std::abs(mu[j] - em[j])});
  Rng rng(404);
  double worst = 0.0;
  for (int t = 0; t < 100; ++t) {
    const Triple n{rng.uniform(0.1, 1000.0), rng.uniform(0.1, 1000.0), rng.uniform(0.1, 1000.0)};
    auto r = rho_seed(n), m = mu_seed(n);
    worst = std::max({worst, std::abs(sum(r)), std::abs(sum(m))});
    for (int s = 0; s < 20; ++s) {
      r = mix_back(r, n);
      m = mix_back(m, n);
      worst = std::max({worst, std::abs(sum(r)), std::abs(sum(m))});
    }
  }
  return {worst <= 1e-14 && hand <= 1e-15,
          "max |sum| " + fmt3(worst) + " over 100 x 20 steps, hand case error " + fmt3(hand)};
}

Outcome c5_bound() {
  BoundSpec s;  // d=10, C=3, kappa=4, E=3, R=13
  const auto rep = bound_check(s);
  return {rep.lemma_holds && rep.lemma.closed_dominates,
          "divergence " + fmt3(rep.divergence) + " <= rhs " + fmt3(rep.lemma.rhs) + "; intra " +
              fmt3(rep.lemma.eps_intra) + " <= " + fmt3(rep.lemma.eps_intra_closed) + ", inter " +
              fmt3(rep.lemma.eps_inter) + " <= " + fmt3(rep.lemma.eps_inter_closed)};
}

Outcome c6_propagation() {
  std::string detail;
  bool ok = true;
  for (std::size_t L = 1; L <= 4; ++L) {
    TopologySpec s;
    s.num_servers = L;
    s.num_clients = 12 * L;
    s.overlap_sizes.assign(L - 1, 4);
    const auto rep = marker_propagation_check(build_topology(s, L), L + 2, L);
    ok = ok && rep.passed;
    detail += (L > 1 ? ", " : "") + std::string("L=") + std::to_string(L) + ":" +
              (rep.completion_round ? std::to_string(*rep.completion_round) : "never");
  }
  return {ok, "completion rounds " + detail};
}

Outcome c7_latency() {
  ChannelParams p;
  double worst_ratio = 0.0;
  for (double d = 1.0; d <= 600.0; d += 1.0) {
    const double g = std::pow(10.0, -pathloss_db(d, p) / 10.0);
    const std::vector<double> up(20, g);
    worst_ratio = std::max(worst_ratio, relay_latency(g, g, p) / upload_latency(up, p));
  }
  Rng rng(707);
  std::size_t violations = 0;
  for (int i = 0; i < 100; ++i) {
    ChannelParams q;
    q.bandwidth_hz = rng.uniform(1e6, 2e8);
    q.model_bits = rng.uniform(1e4, 1e8);
    const std::size_t n = 1 + rng.below(40);
    const double gmin = std::pow(10.0, rng.uniform(-15.0, -8.0));
    std::vector<double> g(n, gmin);
    for (std::size_t k = 1; k < n; ++k) g[k] = gmin * rng.uniform(1.0, 100.0);
    const double t = upload_latency(g, q);
    ChannelParams wide = q, big = q;
    wide.bandwidth_hz *= rng.uniform(1.01, 3.0);
    big.model_bits *= rng.uniform(1.01, 3.0);
    auto more = g;
    more.push_back(gmin * rng.uniform(1.0, 100.0));
    if (!(upload_latency(g, wide) < t)) ++violations;
    if (!(upload_latency(g, big) > t)) ++violations;
    if (!(upload_latency(more, q) > t)) ++violations;
  }
  return {worst_ratio < 0.1 && violations == 0, "max relay/upload ratio " + fmt3(worst_ratio) + " (|S|=20, 1-600 m), " +
                                                    std::to_string(violations) + " monotonicity violations in 100 draws"};
}

Outcome c8_kappa_sweep() {
  const auto cfg = load_shipped("configs/mnist_kappa_sweep.yaml");
  const auto pts = sweep_kappa(cfg, scratch("sweep"));
  std::ostringstream os;
  std::optional<std::size_t> best;
  for (std::size_t i = 0; i < pts.size(); ++i) {
    os << (i ? ", " : "") << "k=" << format_kappa(pts[i].kappa) << ":"
       << (pts[i].time_to_target ? fmt3(*pts[i].time_to_target) + "s" : "timeout");
    if (pts[i].time_to_target && (!best || *pts[i].time_to_target < *pts[best.value()].time_to_target)) best = i;
  }
  if (!best) return {false, os.str() + "; no kappa reached the target"};
  const bool interior = *best > 0 && *best + 1 < pts.size();
  const auto& inf = pts.back();
  const double tmin = *pts[*best].time_to_target;
  const bool inf_ok = std::isinf(inf.kappa) && (!inf.time_to_target || *inf.time_to_target >= 2.0 * tmin);
  return {interior && inf_ok, os.str() + (interior ? "; interior minimum" : "; minimum at the grid edge") +
                                  (inf_ok ? "" : "; kappa=inf too fast")};
}

Outcome c9_ranking() {
  const auto cfg = load_shipped("configs/mnist_compare.yaml");
  const auto rep = compare_algorithms(cfg, scratch("compare"));
  std::size_t wins = 0;
  std::ostringstream os;
  std::map<Algorithm, double> mean_acc;
  for (auto seed : cfg.compare_seeds) {
    const auto& fast = rep.at(seed, Algorithm::FedOcFastest);
    bool ok = fast.result.time_to_target.has_value();
    for (auto a : cfg.compare_algorithms) {
      mean_acc[a] += rep.at(seed, a).result.accuracy_at(rep.horizon) / static_cast<double>(cfg.compare_seeds.size());
      if (a == Algorithm::FedOcFastest || !ok) continue;
      const auto& other = rep.at(seed, a).result.time_to_target;
      const double factor = a == Algorithm::Hfl ? 0.8 : 1.0;
      if (other && *fast.result.time_to_target > factor * *other) ok = false;
    }
    wins += ok;
    os << "seed " << seed << ":"
       << (fast.result.time_to_target ? fmt3(*fast.result.time_to_target) + "s" : "timeout") << (ok ? "+" : "-")
       << " ";
  }
  constexpr double band = 0.01;
  const double fast = mean_acc[Algorithm::FedOcFastest], fixed = mean_acc[Algorithm::FedOcFixed];
  const double eocd = mean_acc[Algorithm::FlEocd], mes = mean_acc[Algorithm::FedMes], hfl = mean_acc[Algorithm::Hfl];
  const bool order = fast >= fixed - band && fixed >= std::max(eocd, mes) - band && std::min(eocd, mes) >= hfl - band;
  os << "| mean accuracy at " << fmt3(rep.horizon) << "s: fastest " << fmt3(fast) << ", fixed " << fmt3(fixed)
     << ", fl-eocd " << fmt3(eocd) << ", fedmes " << fmt3(mes) << ", hfl " << fmt3(hfl);
  return {wins >= 2 && order, std::to_string(wins) + "/3 seeds fastest; " + os.str()};
}

double fd_error(const ModelParams& m, const Dataset& ds, const std::vector<std::size_t>& batch,
                const std::vector<std::size_t>& coords) {
  const auto g = loss_and_grad(m, ds, batch).grad;
  ModelParams p = m;
  double num = 0.0, a = 0.0, b = 0.0;
  for (auto i : coords) {
    const double h = 1e-6 * std::max(1.0, std::abs(m.w[i]));
    p.w[i] = m.w[i] + h;
    const double up = loss_and_grad(p, ds, batch).loss;
    p.w[i] = m.w[i] - h;
    const double dn = loss_and_grad(p, ds, batch).loss;
    p.w[i] = m.w[i];
    const double fd = (up - dn) / (2.0 * h);
    num += (fd - g[i]) * (fd - g[i]);
    a += fd * fd;
    b += g[i] * g[i];
  }
  return std::sqrt(num) / std::max(std::sqrt(std::max(a, b)), 1e-12);
}

Outcome c10_gradients() {
  const auto mnist = load_shipped("configs/mnist_kappa_sweep.yaml");
  auto split = load_mnist_dir(mnist.data_dir());
  const Dataset synth = make_synthetic({10, 20, 50, 0.5}, 10);
  struct Case {
    std::string name;
    Architecture arch;
    const Dataset* data;
  };
  const std::vector<Case> cases{{"logistic", {ModelKind::Logistic, 20, 0, 10}, &synth},
                                {"mlp-tanh", {ModelKind::Mlp, 784, 28, 10, Activation::Tanh}, &split.train},
                                {"mlp-relu", {ModelKind::Mlp, 784, 28, 10, Activation::Relu}, &split.train}};
  Rng rng(1010);
  std::ostringstream os;
  bool ok = true;
  for (const auto& c : cases) {
    double worst = 0.0;
    for (int t = 0; t < 20; ++t) {
      auto m = init_model(c.arch, rng.next());
      for (auto& v : m.w) v += 0.05 * rng.normal();
      std::vector<std::size_t> batch;
      for (std::size_t i = 0; i < 1 + rng.below(16); ++i) batch.push_back(rng.below(c.data->size()));
      // Every coordinate of small models; 300 random ones plus every bias of the MLP.
      std::vector<std::size_t> coords;
      if (m.size() <= 1000) {
        for (std::size_t i = 0; i < m.size(); ++i) coords.push_back(i);
      } else {
        for (int i = 0; i < 300; ++i) coords.push_back(rng.below(m.size()));
        for (std::size_t i = 784 * 28; i < 784 * 28 + 28; ++i) coords.push_back(i);
        for (std::size_t i = m.size() - 10 - 280; i < m.size(); ++i) coords.push_back(i);
      }
      worst = std::max(worst, fd_error(m, *c.data, batch, coords));
    }
    ok = ok && worst <= 1e-5;
    os << c.name << " " << fmt3(worst) << "  ";
  }
  return {ok, "max relative error: " + os.str()};
}

Outcome c11_determinism() {
  const auto dir = scratch("replay");
  std::size_t checked = 0;
  std::vector<ExperimentConfig> runs;
  for (auto a : kAllAlgorithms) {
    auto c = synthetic_config(3, {4, 4}, 40);
    c.rounds = 8;
    c.kappa = 3;
    c.algorithm = a;
    runs.push_back(c);
  }
  auto m = load_shipped("configs/mnist_compare.yaml");
  m.rounds = 3;
  runs.push_back(m);
  for (std::size_t i = 0; i < runs.size(); ++i) {
    const auto first = dir / ("run" + std::to_string(i));
    run_experiment(runs[i], first);
    const auto rep = replay_manifest((first / "manifest.json").string(), dir / ("replay" + std::to_string(i)));
    const bool same = read_text((first / "metrics.csv").string()) ==
                      read_text((dir / ("replay" + std::to_string(i)) / "metrics.csv").string());
    if (!rep.identical || !same)
      return {false, "run " + std::to_string(i) + " (" + to_string(runs[i].algorithm) + ") replayed differently"};
    ++checked;
  }
  return {true, std::to_string(checked) + " manifests replayed byte-for-byte"};
}

struct Criterion {
  int id;
  std::string name;
  double limit_s;  // 0: no runtime limit
  std::function<Outcome()> run;
};

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"fedoc acceptance checks"};
  int only = 0;
  app.add_option("--only", only, "run a single criterion (1-11)");
  CLI11_PARSE(app, argc, argv);

  const std::vector<Criterion> all{
      {1, "aggregation algebra", 1, c1_aggregation_algebra},
      {2, "reduction equivalences", 30, c2_reductions},
      {3, "regrouped edge model", 0, c3_rewrite},
      {4, "coefficient zero sums", 0, c4_zero_sums},
      {5, "lemma bound", 120, c5_bound},
      {6, "marker propagation", 1, c6_propagation},
      {7, "latency model", 0, c7_latency},
      {8, "kappa sweep shape", 900, c8_kappa_sweep},
      {9, "algorithm ranking", 1800, c9_ranking},
      {10, "gradient correctness", 10, c10_gradients},
      {11, "manifest determinism", 0, c11_determinism},
  };

  bool all_pass = true;
  for (const auto& c : all) {
    if (only && c.id != only) continue;
    const auto t0 = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = c.run();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    if (c.limit_s > 0 && secs > c.limit_s) {
      o.pass = false;
      o.detail += "; runtime " + fmt3(secs) + "s exceeds " + fmt3(c.limit_s) + "s";
    }
    std::printf("criterion %2d %-24s %s  %s  [%.2fs]\n", c.id, c.name.c_str(), o.pass ? "PASS" : "FAIL",
                o.detail.c_str(), secs);
    std::fflush(stdout);
    all_pass = all_pass && o.pass;
  }
  return all_pass ? 0 : 2;
}
