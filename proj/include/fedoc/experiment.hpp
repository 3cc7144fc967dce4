#pragma once

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <numeric>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <openssl/evp.h>

#include <json.hpp>

#include "fedoc/config.hpp"
#include "fedoc/partition.hpp"
#include "fedoc/protocol.hpp"

namespace fedoc {

namespace fs = std::filesystem;

// Git blob hash: SHA-1 over "blob <len>\0" + content.
inline std::string git_blob_sha1(const std::string& content) {
  const std::string data = "blob " + std::to_string(content.size()) + '\0' + content;
  unsigned char md[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  ensure(EVP_Digest(data.data(), data.size(), md, &len, EVP_sha1(), nullptr) == 1, "SHA-1 digest failed");
  std::ostringstream os;
  for (unsigned int i = 0; i < len; ++i) os << std::hex << std::setw(2) << std::setfill('0') << int(md[i]);
  return os.str();
}

inline std::string read_text(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  check(in.good(), "cannot read " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

inline void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  check(out.good(), "cannot write " + path.string());
  out << text;
}

// Shortest round-trip decimal; keeps CSVs byte-stable across runs.
inline std::string fmt(double v) {
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  if (std::isnan(v)) return "nan";
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

struct DataBundle {
  Dataset train;
  Dataset test;
};

inline DataBundle load_data(const ExperimentConfig& cfg) {
  DataBundle d;
  if (cfg.dataset.kind == "synthetic") {
    auto spec = cfg.dataset.synthetic;
    const std::size_t train_n = spec.per_class * spec.classes;
    spec.per_class += cfg.dataset.synthetic_test_per_class;
    const Dataset all = make_synthetic(spec, cfg.seeds.data_seed());
    std::vector<std::size_t> tr(train_n), te(all.size() - train_n);
    std::iota(tr.begin(), tr.end(), 0);
    std::iota(te.begin(), te.end(), train_n);
    d.train = subset(all, tr, "synthetic-train");
    d.test = subset(all, te, "synthetic-test");
  } else {
    auto split = load_mnist_dir(cfg.data_dir());
    d.train = stratified_subset(split.train, cfg.dataset.train_subset, derive_seed(cfg.seeds.data_seed(), 1));
    d.test = stratified_subset(split.test, cfg.dataset.test_subset, derive_seed(cfg.seeds.data_seed(), 2));
  }
  if (cfg.dataset.standardize) {
    double mean = 0.0, sq = 0.0;
    for (double v : d.train.features) mean += v;
    mean /= static_cast<double>(d.train.features.size());
    for (double v : d.train.features) sq += (v - mean) * (v - mean);
    const double sd = std::sqrt(sq / static_cast<double>(d.train.features.size()));
    for (auto* ds : {&d.train, &d.test})
      for (double& v : ds->features) v = (v - mean) / sd;
  }
  d.train.validate();
  check(d.test.size() > 0, "test set is empty");
  return d;
}

// CI-sized variant: caps the data and the number of rounds.
inline ExperimentConfig desk_scale(ExperimentConfig c) {
  auto cap = [](std::size_t v, std::size_t m) { return v == 0 ? m : std::min(v, m); };
  c.dataset.train_subset = cap(c.dataset.train_subset, 6000);
  c.dataset.test_subset = cap(c.dataset.test_subset, 1500);
  c.rounds = std::min<std::size_t>(c.rounds, 300);
  return c;
}

struct MetricRow {
  std::size_t round = 0;  // completed rounds
  double time = 0.0;
  double accuracy = 0.0;
  double loss = 0.0;
  std::vector<double> es_accuracy;
};

struct RunResult {
  std::vector<MetricRow> metrics;
  std::size_t rounds_done = 0;
  double simulated_time = 0.0;
  std::optional<double> time_to_target;
  std::optional<std::size_t> rounds_to_target;
  std::vector<ModelParams> final_models;
  std::string metrics_csv;

  double final_accuracy() const { return metrics.empty() ? 0.0 : metrics.back().accuracy; }
  // Accuracy of the last evaluation at or before simulated time t.
  double accuracy_at(double t) const {
    double a = metrics.empty() ? 0.0 : metrics.front().accuracy;
    for (const auto& m : metrics)
      if (m.time <= t) a = m.accuracy;
    return a;
  }
};

inline std::string metrics_header(std::size_t L) {
  std::string h = "round,algorithm,kappa,simulated_time_s,accuracy,loss";
  for (std::size_t l = 0; l < L; ++l) h += ",accuracy_es" + std::to_string(l);
  return h + "\n";
}

struct Experiment {
  ExperimentConfig cfg;
  DataBundle data;
  Topology topo;
  PartitionPlan plan;
  Architecture arch;

  explicit Experiment(ExperimentConfig c) : cfg(std::move(c)) {
    validate(cfg);
    data = load_data(cfg);
    topo = build_topology(cfg.topology, cfg.seeds.topology_seed());
    const auto bad = validate_topology(topo);
    if (!bad.empty()) throw Error("topology: " + bad.front().invariant + " " + bad.front().detail);
    plan = partition_noniid(data.train, topo, cfg.partition, cfg.seeds.data_seed());
    arch = cfg.architecture(data.train.dims, data.train.num_classes);
  }

  EngineConfig engine_config() const {
    EngineConfig e;
    e.algorithm = cfg.algorithm;
    e.kappa = cfg.kappa;
    e.epochs = cfg.training.epochs;
    e.channel = cfg.channel_params(arch);
    return e;
  }

  // Writes every artefact into `out` when non-empty.
  RunResult run(const fs::path& out = {}, bool quiet = true) const {
    const bool write = !out.empty();
    if (write) fs::create_directories(out);
    Engine<ModelParams> eng(topo, plan.sample_counts(), plan.client_cell, engine_config(), cfg.seeds.channel_seed());
    const std::uint64_t train_seed = cfg.seeds.training_seed();
    eng.initialize(init_model(arch, derive_seed(train_seed, 0x1417)));
    const Trainer<ModelParams> train = [&](const ModelParams& m0, std::size_t k, std::size_t r) {
      return local_sgd(m0, data.train, plan.client_indices[k], cfg.training, r, derive_seed(train_seed, r + 1, k));
    };

    RunResult res;
    std::ostringstream metrics, timings, trace;
    metrics << metrics_header(topo.num_servers);
    timings << "round,es,t_cast,t_comp,t_upload,t_relay,t_edge,t_cloud,cumulative_time\n";
    const std::string algo = to_string(cfg.algorithm);
    const std::string kappa = format_kappa(cfg.kappa);

    auto record = [&](std::size_t round, double time) {
      MetricRow row;
      row.round = round;
      row.time = time;
      for (const auto& m : eng.edge_models()) {
        ensure(all_finite(m), "non-finite parameters after round " + std::to_string(round));
        const auto ev = evaluate(m, data.test);
        row.es_accuracy.push_back(ev.accuracy);
        row.accuracy += ev.accuracy;
        row.loss += ev.loss;
      }
      row.accuracy /= static_cast<double>(topo.num_servers);
      row.loss /= static_cast<double>(topo.num_servers);
      metrics << round << ',' << algo << ',' << kappa << ',' << fmt(time) << ',' << fmt(row.accuracy) << ','
              << fmt(row.loss);
      for (double a : row.es_accuracy) metrics << ',' << fmt(a);
      metrics << '\n';
      if (!res.time_to_target && row.accuracy >= cfg.target_accuracy) {
        res.time_to_target = time;
        res.rounds_to_target = round;
      }
      res.metrics.push_back(std::move(row));
      if (!quiet)
        std::fprintf(stderr, "[%s k=%s] round %zu  t=%.2fs  acc=%.4f\n", algo.c_str(), kappa.c_str(), round, time,
                     res.metrics.back().accuracy);
    };

    record(0, 0.0);
    const fs::path ckpt = out / "checkpoints";
    if (write && cfg.checkpoint_interval > 0) fs::create_directories(ckpt);
    for (std::size_t r = 0; r < cfg.rounds; ++r) {
      const auto tr = eng.step(train);
      const std::size_t done = r + 1;
      for (std::size_t l = 0; l < topo.num_servers; ++l) {
        const auto& t = tr.timing[l];
        timings << r << ',' << l << ',' << fmt(t.t_cast) << ',' << fmt(t.t_comp) << ',' << fmt(t.t_upload) << ','
                << fmt(t.t_relay) << ',' << fmt(t.t_edge) << ',' << fmt(tr.t_cloud) << ','
                << fmt(tr.cumulative_time) << '\n';
      }
      nlohmann::json j{{"round", r},           {"cloud", tr.cloud},         {"selection", tr.selection},
                       {"ready", tr.ready},    {"t_cloud", tr.t_cloud},     {"cumulative_time", tr.cumulative_time},
                       {"checksums", tr.checksums}};
      trace << j.dump() << '\n';
      const bool last = done == cfg.rounds || tr.cumulative_time >= cfg.time_budget_s;
      if (done % cfg.eval_interval == 0 || last) record(done, tr.cumulative_time);
      if (write && cfg.checkpoint_interval > 0 && done % cfg.checkpoint_interval == 0)
        for (std::size_t l = 0; l < topo.num_servers; ++l)
          save_checkpoint(eng.edge_models()[l],
                          (ckpt / ("round" + std::to_string(done) + "_es" + std::to_string(l) + ".bin")).string());
      if (last) break;
      if (cfg.stop_at_target && res.time_to_target) break;
    }
    res.rounds_done = eng.rounds_done();
    res.simulated_time = eng.clock();
    res.final_models = eng.edge_models();
    res.metrics_csv = metrics.str();

    if (write) {
      write_text(out / "metrics.csv", res.metrics_csv);
      write_text(out / "timings.csv", timings.str());
      write_text(out / "trace.jsonl", trace.str());
      write_text(out / "topology.json", to_json(topo).dump(2) + "\n");
      write_text(out / "partition.json", to_json(plan).dump() + "\n");
      fs::create_directories(ckpt);
      for (std::size_t l = 0; l < topo.num_servers; ++l)
        save_checkpoint(res.final_models[l], (ckpt / ("final_es" + std::to_string(l) + ".bin")).string());
      nlohmann::json summary{{"algorithm", algo},
                             {"kappa", kappa},
                             {"rounds", res.rounds_done},
                             {"simulated_time_s", res.simulated_time},
                             {"final_accuracy", res.final_accuracy()},
                             {"target_accuracy", cfg.target_accuracy},
                             {"model", describe(arch)}};
      summary["time_to_target_s"] = res.time_to_target ? nlohmann::json(*res.time_to_target) : nlohmann::json();
      summary["rounds_to_target"] = res.rounds_to_target ? nlohmann::json(*res.rounds_to_target) : nlohmann::json();
      write_text(out / "summary.json", summary.dump(2) + "\n");
      write_manifest(out, res);
    }
    return res;
  }

  void write_manifest(const fs::path& out, const RunResult& res) const {
    const std::string yaml = serialize_config(cfg);
    nlohmann::json m;
    m["config"] = yaml;
    m["config_hash"] = git_blob_sha1(yaml);
    m["seeds"] = {{"base", cfg.seeds.base},
                  {"topology", cfg.seeds.topology_seed()},
                  {"data", cfg.seeds.data_seed()},
                  {"training", cfg.seeds.training_seed()},
                  {"channel", cfg.seeds.channel_seed()}};
    m["dataset"] = {{"train", data.train.name},
                    {"train_size", data.train.size()},
                    {"test_size", data.test.size()}};
    m["files"] = nlohmann::json::object();
    for (const char* f : {"metrics.csv", "timings.csv", "trace.jsonl", "topology.json", "partition.json"})
      m["files"][f] = git_blob_sha1(read_text((out / f).string()));
    m["metrics_hash"] = git_blob_sha1(res.metrics_csv);
    write_text(out / "manifest.json", m.dump(2) + "\n");
  }
};

inline RunResult run_experiment(const ExperimentConfig& cfg, const fs::path& out = {}, bool quiet = true) {
  return Experiment(cfg).run(out, quiet);
}

struct ReplayResult {
  bool identical = false;
  std::string expected_hash;
  std::string actual_hash;
};

// Re-runs the config stored in a manifest; the metrics must match byte for byte.
inline ReplayResult replay_manifest(const std::string& manifest_path, const fs::path& out) {
  nlohmann::json m;
  try {
    m = nlohmann::json::parse(read_text(manifest_path));
  } catch (const nlohmann::json::exception& e) {
    throw Error(manifest_path + ": " + e.what());
  }
  check(m.contains("config") && m.contains("metrics_hash"), manifest_path + ": not a run manifest");
  const auto yaml = m.at("config").get<std::string>();
  check(git_blob_sha1(yaml) == m.at("config_hash").get<std::string>(), manifest_path + ": config hash mismatch");
  const auto res = run_experiment(parse_config_text(yaml), out);
  return {git_blob_sha1(res.metrics_csv) == m.at("metrics_hash").get<std::string>(),
          m.at("metrics_hash").get<std::string>(), git_blob_sha1(res.metrics_csv)};
}

// ---------------------------------------------------------------------------

struct SweepPoint {
  double kappa = kInf;
  std::optional<double> time_to_target;
  std::optional<std::size_t> rounds_to_target;
  double final_accuracy = 0.0;
  double simulated_time = 0.0;
  std::size_t rounds = 0;
};

inline std::string sweep_csv(const std::vector<SweepPoint>& pts) {
  std::ostringstream os;
  os << "kappa,reached,time_to_target_s,rounds_to_target,final_accuracy,simulated_time_s,rounds\n";
  for (const auto& p : pts)
    os << format_kappa(p.kappa) << ',' << (p.time_to_target ? 1 : 0) << ','
       << (p.time_to_target ? fmt(*p.time_to_target) : "") << ','
       << (p.rounds_to_target ? std::to_string(*p.rounds_to_target) : "") << ',' << fmt(p.final_accuracy) << ','
       << fmt(p.simulated_time) << ',' << p.rounds << '\n';
  return os.str();
}

// Time to target accuracy for every kappa in the grid. Data, topology and
// partition are built once and shared.
inline std::vector<SweepPoint> sweep_kappa(const ExperimentConfig& base, const fs::path& out = {},
                                           bool quiet = true) {
  Experiment exp(base);
  exp.cfg.stop_at_target = true;
  std::vector<SweepPoint> pts;
  for (double k : base.kappa_grid) {
    exp.cfg.kappa = k;
    const auto res = exp.run(out.empty() ? fs::path() : out / ("kappa_" + format_kappa(k)), quiet);
    pts.push_back({k, res.time_to_target, res.rounds_to_target, res.final_accuracy(), res.simulated_time,
                   res.rounds_done});
  }
  if (!out.empty()) write_text(out / "sweep.csv", sweep_csv(pts));
  return pts;
}

struct CompareEntry {
  std::uint64_t seed = 0;
  Algorithm algorithm = Algorithm::FedOcFastest;
  RunResult result;
};

struct CompareReport {
  double horizon = kInf;  // common simulated-time horizon for final accuracies
  std::vector<CompareEntry> entries;
  std::string joined_csv;
  std::string summary_csv;

  const CompareEntry& at(std::uint64_t seed, Algorithm a) const {
    for (const auto& e : entries)
      if (e.seed == seed && e.algorithm == a) return e;
    throw Error("compare: no entry for seed " + std::to_string(seed) + " / " + to_string(a));
  }
};

// Every algorithm on every seed. A seed fixes topology, data, partition,
// channel and training streams, so all algorithms see identical conditions.
// Final accuracies are read at the shortest simulated time any run reached
// (or the configured time budget).
inline CompareReport compare_algorithms(const ExperimentConfig& base, const fs::path& out = {}, bool quiet = true) {
  CompareReport rep;
  for (auto seed : base.compare_seeds) {
    auto cfg = base;
    cfg.seeds.base = seed;
    Experiment exp(cfg);
    for (auto a : base.compare_algorithms) {
      exp.cfg.algorithm = a;
      const auto dir = out.empty() ? fs::path()
                                   : out / ("seed" + std::to_string(seed)) / to_string(a);
      rep.entries.push_back({seed, a, exp.run(dir, quiet)});
    }
  }
  rep.horizon = base.time_budget_s;
  for (const auto& e : rep.entries) rep.horizon = std::min(rep.horizon, e.result.simulated_time);

  std::ostringstream joined, summary;
  joined << "seed,algorithm,round,simulated_time_s,accuracy,loss\n";
  summary << "seed,algorithm,reached,time_to_target_s,accuracy_at_horizon,horizon_s,final_accuracy,rounds\n";
  for (const auto& e : rep.entries) {
    for (const auto& m : e.result.metrics)
      joined << e.seed << ',' << to_string(e.algorithm) << ',' << m.round << ',' << fmt(m.time) << ','
             << fmt(m.accuracy) << ',' << fmt(m.loss) << '\n';
    const auto& r = e.result;
    summary << e.seed << ',' << to_string(e.algorithm) << ',' << (r.time_to_target ? 1 : 0) << ','
            << (r.time_to_target ? fmt(*r.time_to_target) : "") << ',' << fmt(r.accuracy_at(rep.horizon)) << ','
            << fmt(rep.horizon) << ',' << fmt(r.final_accuracy()) << ',' << r.rounds_done << '\n';
  }
  rep.joined_csv = joined.str();
  rep.summary_csv = summary.str();
  if (!out.empty()) {
    fs::create_directories(out);
    write_text(out / "compare.csv", rep.joined_csv);
    write_text(out / "compare_summary.csv", rep.summary_csv);
  }
  return rep;
}

}  // namespace fedoc
