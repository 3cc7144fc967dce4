#pragma once

#include <cstdlib>
#include <fstream>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <yaml-cpp/yaml.h>

#include "fedoc/channel.hpp"
#include "fedoc/dataset.hpp"
#include "fedoc/learner.hpp"
#include "fedoc/partition.hpp"
#include "fedoc/protocol.hpp"
#include "fedoc/topology.hpp"

namespace fedoc {

struct DatasetConfig {
  std::string kind = "mnist";  // mnist | synthetic
  std::string mnist_dir;       // empty: $FEDOC_DATA_DIR, then data/mnist
  std::size_t train_subset = 6000;  // 0: every available sample
  std::size_t test_subset = 0;
  SyntheticSpec synthetic{10, 20, 100, 0.5};
  std::size_t synthetic_test_per_class = 50;
  bool standardize = false;  // zero mean, unit variance using train statistics

  bool operator==(const DatasetConfig&) const = default;
};

struct ModelConfig {
  std::string kind = "mlp";  // mlp | logistic
  std::size_t hidden = 28;
  std::string activation = "relu";  // relu | tanh

  bool operator==(const ModelConfig&) const = default;
};

struct ChannelConfig {
  ChannelParams params;          // noise_psd_w and model_bits are derived, not read
  double noise_dbm_per_hz = -174.0;
  double model_bits = 0.0;       // 0: parameter count x 64

  bool operator==(const ChannelConfig&) const = default;
};

struct Seeds {
  std::uint64_t base = 1;
  std::optional<std::uint64_t> topology, data, training, channel;

  std::uint64_t get(const std::optional<std::uint64_t>& v, std::uint64_t stream) const {
    return v ? *v : derive_seed(base, stream);
  }
  std::uint64_t topology_seed() const { return get(topology, 1); }
  std::uint64_t data_seed() const { return get(data, 2); }
  std::uint64_t training_seed() const { return get(training, 3); }
  std::uint64_t channel_seed() const { return get(channel, 4); }

  bool operator==(const Seeds&) const = default;
};

struct ExperimentConfig {
  Algorithm algorithm = Algorithm::FedOcFastest;
  double kappa = kInf;
  std::size_t rounds = 500;
  std::size_t eval_interval = 1;
  std::string output_dir = "runs/default";
  std::size_t checkpoint_interval = 0;  // 0: final models only
  bool record_trajectories = false;
  bool stop_at_target = false;
  double target_accuracy = 0.9;
  double time_budget_s = kInf;  // stop once the simulated clock passes this
  std::vector<double> kappa_grid{1, 10, 50, 250, kInf};
  std::vector<Algorithm> compare_algorithms{std::begin(kAllAlgorithms), std::end(kAllAlgorithms)};
  std::vector<std::uint64_t> compare_seeds{1, 2, 3};

  TopologySpec topology;
  DatasetConfig dataset;
  PartitionSpec partition;
  ModelConfig model;
  SgdSpec training{5, 20, LrSchedule::exponential(0.01, 0.995), false};
  ChannelConfig channel;
  Seeds seeds;

  bool operator==(const ExperimentConfig&) const = default;

  Architecture architecture(std::size_t input_dim, std::size_t classes) const {
    return {model.kind == "logistic" ? ModelKind::Logistic : ModelKind::Mlp, input_dim,
            model.kind == "logistic" ? 0 : model.hidden, classes,
            model.activation == "tanh" ? Activation::Tanh : Activation::Relu};
  }

  ChannelParams channel_params(const Architecture& arch) const {
    ChannelParams p = channel.params;
    p.noise_psd_w = dbm_per_hz_to_watts(channel.noise_dbm_per_hz);
    p.model_bits = channel.model_bits > 0 ? channel.model_bits : static_cast<double>(arch.param_count()) * 64.0;
    return p;
  }

  std::string data_dir() const {
    if (!dataset.mnist_dir.empty()) return dataset.mnist_dir;
    if (const char* env = std::getenv("FEDOC_DATA_DIR"); env && *env) return env;
    return "data/mnist";
  }
};

inline std::string format_kappa(double k) {
  if (!std::isfinite(k)) return "inf";
  std::ostringstream os;
  os << static_cast<long long>(k);
  return os.str();
}

inline double parse_kappa(const std::string& s, const std::string& field = "kappa") {
  if (s == "inf" || s == ".inf" || s == "infinity" || s == "Inf") return kInf;
  char* end = nullptr;
  const double v = std::strtod(s.c_str(), &end);
  check(end && *end == '\0' && !s.empty(), field + ": expected a positive integer or 'inf', got '" + s + "'");
  check(v >= 1.0 && v == std::floor(v), field + ": kappa must be an integer >= 1 or 'inf'");
  return v;
}

// ---------------------------------------------------------------------------

namespace detail {

class Reader {
 public:
  Reader(const YAML::Node& node, std::string path) : node_(node), path_(std::move(path)) {
    check(!node_ || node_.IsNull() || node_.IsMap(), where() + ": expected a mapping");
  }

  // Unknown keys are an error, not a warning.
  void finish(std::initializer_list<const char*> allowed) const {
    if (!node_ || node_.IsNull()) return;
    std::set<std::string> ok(allowed.begin(), allowed.end());
    for (const auto& kv : node_) {
      const auto key = kv.first.as<std::string>();
      check(ok.count(key) > 0, "unknown key '" + join(key) + "'");
    }
  }

  template <class T>
  void get(const char* key, T& out) const {
    const auto n = child(key);
    if (!n) return;
    try {
      out = n.template as<T>();
    } catch (const YAML::Exception&) {
      throw Error(join(key) + ": wrong type");
    }
  }

  void get_size(const char* key, std::size_t& out) const {
    const auto n = child(key);
    if (!n) return;
    long long v = 0;
    try {
      v = n.as<long long>();
    } catch (const YAML::Exception&) {
      throw Error(join(key) + ": expected a non-negative integer");
    }
    check(v >= 0, join(key) + ": expected a non-negative integer");
    out = static_cast<std::size_t>(v);
  }

  void get_sizes(const char* key, std::vector<std::size_t>& out) const {
    const auto n = child(key);
    if (!n) return;
    check(n.IsSequence(), join(key) + ": expected a list");
    out.clear();
    for (std::size_t i = 0; i < n.size(); ++i) {
      long long v = -1;
      try {
        v = n[i].as<long long>();
      } catch (const YAML::Exception&) {
      }
      check(v >= 0, join(key) + "[" + std::to_string(i) + "]: expected a non-negative integer");
      out.push_back(static_cast<std::size_t>(v));
    }
  }

  void get_kappa(const char* key, double& out) const {
    const auto n = child(key);
    if (!n) return;
    out = parse_kappa(n.as<std::string>(), join(key));
  }

  void get_seed(const char* key, std::optional<std::uint64_t>& out) const {
    const auto n = child(key);
    if (!n || n.IsNull()) return;
    try {
      out = n.as<std::uint64_t>();
    } catch (const YAML::Exception&) {
      throw Error(join(key) + ": expected a non-negative integer seed");
    }
  }

  Reader section(const char* key) const { return Reader(child(key), join(key)); }
  // Undefined (falsy) when the key is absent.
  YAML::Node child(const char* key) const {
    if (!node_ || !node_.IsMap()) return YAML::Node(YAML::NodeType::Undefined);
    const YAML::Node& n = node_;
    return n[key];
  }
  std::string join(const std::string& key) const { return path_.empty() ? key : path_ + "." + key; }

 private:
  std::string where() const { return path_.empty() ? "config" : path_; }
  YAML::Node node_;
  std::string path_;
};

}  // namespace detail

inline void validate(const ExperimentConfig& c) {
  check(c.eval_interval >= 1, "eval_interval: must be at least 1");
  check(c.kappa >= 1.0, "kappa: must be at least 1 or 'inf'");
  check(c.target_accuracy > 0.0 && c.target_accuracy <= 1.0, "target_accuracy: must lie in (0, 1]");
  check(c.time_budget_s > 0.0, "time_budget_s: must be positive");
  check(!c.kappa_grid.empty(), "kappa_grid: must not be empty");
  check(!c.compare_algorithms.empty(), "compare.algorithms: must not be empty");
  check(!c.compare_seeds.empty(), "compare.seeds: must not be empty");
  check(c.topology.num_servers >= 1, "topology.num_servers: must be at least 1");
  check(c.topology.num_clients >= 1, "topology.num_clients: must be at least 1");
  check(c.topology.overlap_sizes.size() + 1 == c.topology.num_servers,
        "topology.overlap_sizes: need one entry per adjacent pair (num_servers - 1)");
  check(c.topology.radius_m > 0.0, "topology.radius_m: must be positive");
  check(c.topology.overlap_fraction >= 0.0 && c.topology.overlap_fraction < 1.0,
        "topology.overlap_fraction: must lie in [0, 1)");
  check(c.dataset.kind == "mnist" || c.dataset.kind == "synthetic", "dataset.kind: expected 'mnist' or 'synthetic'");
  check(c.dataset.synthetic.classes >= 2, "dataset.synthetic.classes: must be at least 2");
  check(c.dataset.synthetic.dims >= 1, "dataset.synthetic.dims: must be at least 1");
  check(c.partition.classes_per_client >= 1, "partition.classes_per_client: must be at least 1");
  check(c.partition.classes_per_client <= c.partition.classes_per_cell,
        "partition.classes_per_client (" + std::to_string(c.partition.classes_per_client) +
            ") exceeds partition.classes_per_cell (" + std::to_string(c.partition.classes_per_cell) + ")");
  const std::size_t classes = c.dataset.kind == "mnist" ? 10 : c.dataset.synthetic.classes;
  check(c.partition.classes_per_cell <= classes,
        "partition.classes_per_cell: exceeds the number of classes (" + std::to_string(classes) + ")");
  check(c.partition.size_skew >= 0.0 && c.partition.size_skew < 1.0, "partition.size_skew: must lie in [0, 1)");
  check(c.model.kind == "mlp" || c.model.kind == "logistic", "model.kind: expected 'mlp' or 'logistic'");
  check(c.model.kind == "logistic" || c.model.hidden >= 1, "model.hidden: must be at least 1");
  check(c.model.activation == "relu" || c.model.activation == "tanh", "model.activation: expected 'relu' or 'tanh'");
  check(c.training.epochs >= 1, "training.epochs: must be at least 1");
  if (c.training.schedule.kind == LrSchedule::Kind::Exponential) {
    check(c.training.schedule.initial > 0.0, "training.schedule.initial: must be positive");
    check(c.training.schedule.decay > 0.0 && c.training.schedule.decay <= 1.0,
          "training.schedule.decay: must lie in (0, 1]");
  } else {
    check(c.training.epochs >= 2, "training.epochs: the theoretical schedule needs at least 2");
  }
  auto p = c.channel.params;
  p.noise_psd_w = dbm_per_hz_to_watts(c.channel.noise_dbm_per_hz);
  check(c.channel.model_bits >= 0.0, "channel.model_bits: must be non-negative");
  try {
    p.validate();
  } catch (const Error& e) {
    throw Error(std::string("channel: ") + e.what());
  }
}

inline ExperimentConfig parse_config_node(const YAML::Node& root) {
  ExperimentConfig c;
  detail::Reader r(root, "");
  std::string algo;
  r.get("algorithm", algo);
  if (!algo.empty()) c.algorithm = parse_algorithm(algo);
  r.get_kappa("kappa", c.kappa);
  r.get_size("rounds", c.rounds);
  r.get_size("eval_interval", c.eval_interval);
  r.get("output_dir", c.output_dir);
  r.get_size("checkpoint_interval", c.checkpoint_interval);
  r.get("record_trajectories", c.record_trajectories);
  r.get("stop_at_target", c.stop_at_target);
  r.get("target_accuracy", c.target_accuracy);
  if (auto n = r.child("time_budget_s")) {
    const auto s = n.as<std::string>();
    if (s == "inf" || s == ".inf") c.time_budget_s = kInf;
    else r.get("time_budget_s", c.time_budget_s);
  }
  if (auto n = r.child("kappa_grid")) {
    check(n.IsSequence(), "kappa_grid: expected a list");
    c.kappa_grid.clear();
    for (std::size_t i = 0; i < n.size(); ++i)
      c.kappa_grid.push_back(parse_kappa(n[i].as<std::string>(), "kappa_grid[" + std::to_string(i) + "]"));
  }

  {
    auto s = r.section("compare");
    if (auto n = s.child("algorithms")) {
      check(n.IsSequence(), "compare.algorithms: expected a list");
      c.compare_algorithms.clear();
      for (std::size_t i = 0; i < n.size(); ++i) c.compare_algorithms.push_back(parse_algorithm(n[i].as<std::string>()));
    }
    if (auto n = s.child("seeds")) {
      check(n.IsSequence(), "compare.seeds: expected a list");
      c.compare_seeds.clear();
      for (std::size_t i = 0; i < n.size(); ++i) {
        try {
          c.compare_seeds.push_back(n[i].as<std::uint64_t>());
        } catch (const YAML::Exception&) {
          throw Error("compare.seeds[" + std::to_string(i) + "]: expected a non-negative integer");
        }
      }
    }
    s.finish({"algorithms", "seeds"});
  }
  {
    auto s = r.section("topology");
    s.get_size("num_servers", c.topology.num_servers);
    s.get_size("num_clients", c.topology.num_clients);
    s.get_sizes("overlap_sizes", c.topology.overlap_sizes);
    s.get_sizes("local_sizes", c.topology.local_sizes);
    s.get("balance", c.topology.balance);
    s.get("radius_m", c.topology.radius_m);
    s.get("overlap_fraction", c.topology.overlap_fraction);
    std::string policy;
    s.get("roc_policy", policy);
    if (!policy.empty()) {
      check(policy == "random" || policy == "closest-to-midpoint",
            "topology.roc_policy: expected 'random' or 'closest-to-midpoint'");
      c.topology.roc_policy = policy == "random" ? RocPolicy::Random : RocPolicy::ClosestToMidpoint;
    }
    if (!s.child("overlap_sizes") && s.child("num_servers"))
      c.topology.overlap_sizes.assign(c.topology.num_servers > 0 ? c.topology.num_servers - 1 : 0,
                                      c.topology.overlap_sizes.empty() ? 0 : c.topology.overlap_sizes[0]);
    s.finish({"num_servers", "num_clients", "overlap_sizes", "local_sizes", "balance", "radius_m",
              "overlap_fraction", "roc_policy"});
  }
  {
    auto s = r.section("dataset");
    s.get("kind", c.dataset.kind);
    s.get("mnist_dir", c.dataset.mnist_dir);
    s.get_size("train_subset", c.dataset.train_subset);
    s.get_size("test_subset", c.dataset.test_subset);
    s.get("standardize", c.dataset.standardize);
    auto y = s.section("synthetic");
    y.get_size("classes", c.dataset.synthetic.classes);
    y.get_size("dims", c.dataset.synthetic.dims);
    y.get_size("per_class", c.dataset.synthetic.per_class);
    y.get("spread", c.dataset.synthetic.spread);
    y.get_size("test_per_class", c.dataset.synthetic_test_per_class);
    y.finish({"classes", "dims", "per_class", "spread", "test_per_class"});
    s.finish({"kind", "mnist_dir", "train_subset", "test_subset", "standardize", "synthetic"});
  }
  {
    auto s = r.section("partition");
    s.get_size("classes_per_client", c.partition.classes_per_client);
    s.get_size("classes_per_cell", c.partition.classes_per_cell);
    s.get_size("samples_per_client", c.partition.samples_per_client);
    s.get("size_skew", c.partition.size_skew);
    s.get("equal_shards", c.partition.equal_shards);
    s.finish({"classes_per_client", "classes_per_cell", "samples_per_client", "size_skew", "equal_shards"});
  }
  {
    auto s = r.section("model");
    s.get("kind", c.model.kind);
    s.get_size("hidden", c.model.hidden);
    s.get("activation", c.model.activation);
    s.finish({"kind", "hidden", "activation"});
  }
  {
    auto s = r.section("training");
    s.get_size("epochs", c.training.epochs);
    s.get_size("batch_size", c.training.batch_size);
    s.get("iteration_mode", c.training.iteration_mode);
    auto l = s.section("schedule");
    std::string kind;
    l.get("kind", kind);
    if (!kind.empty()) {
      check(kind == "exponential" || kind == "theoretical",
            "training.schedule.kind: expected 'exponential' or 'theoretical'");
      c.training.schedule.kind =
          kind == "exponential" ? LrSchedule::Kind::Exponential : LrSchedule::Kind::Theoretical;
    }
    l.get("initial", c.training.schedule.initial);
    l.get("decay", c.training.schedule.decay);
    l.finish({"kind", "initial", "decay"});
    s.finish({"epochs", "batch_size", "iteration_mode", "schedule"});
    if (c.training.schedule.kind == LrSchedule::Kind::Theoretical) c.training.schedule.epochs = c.training.epochs;
  }
  {
    auto s = r.section("channel");
    auto& p = c.channel.params;
    s.get("bandwidth_hz", p.bandwidth_hz);
    s.get("client_power_w", p.client_power_w);
    s.get("es_power_w", p.es_power_w);
    s.get("noise_dbm_per_hz", c.channel.noise_dbm_per_hz);
    s.get("pathloss_intercept_db", p.pathloss_intercept_db);
    s.get("pathloss_slope_db", p.pathloss_slope_db);
    s.get("rayleigh_variance", p.rayleigh_variance);
    s.get("fading_floor", p.fading_floor);
    s.get("model_bits", c.channel.model_bits);
    s.get("cloud_ratio", p.cloud_ratio);
    s.get("epoch_time_min_s", p.epoch_time_min_s);
    s.get("epoch_time_max_s", p.epoch_time_max_s);
    std::string base;
    s.get("log_base", base);
    if (!base.empty()) {
      check(base == "2" || base == "e", "channel.log_base: expected '2' or 'e'");
      p.natural_log = base == "e";
    }
    s.get("resample_fading", p.resample_fading);
    s.get("resample_compute", p.resample_compute);
    std::string legs;
    s.get("relay_legs", legs);
    if (!legs.empty()) {
      check(legs == "shared" || legs == "distinct", "channel.relay_legs: expected 'shared' or 'distinct'");
      p.distinct_relay_legs = legs == "distinct";
    }
    s.finish({"bandwidth_hz", "client_power_w", "es_power_w", "noise_dbm_per_hz", "pathloss_intercept_db",
              "pathloss_slope_db", "rayleigh_variance", "fading_floor", "model_bits", "cloud_ratio",
              "epoch_time_min_s", "epoch_time_max_s", "log_base", "resample_fading", "resample_compute",
              "relay_legs"});
  }
  {
    auto s = r.section("seeds");
    if (auto n = s.child("base")) {
      try {
        c.seeds.base = n.as<std::uint64_t>();
      } catch (const YAML::Exception&) {
        throw Error("seeds.base: expected a non-negative integer seed");
      }
    }
    s.get_seed("topology", c.seeds.topology);
    s.get_seed("data", c.seeds.data);
    s.get_seed("training", c.seeds.training);
    s.get_seed("channel", c.seeds.channel);
    s.finish({"base", "topology", "data", "training", "channel"});
  }
  r.finish({"algorithm", "kappa", "rounds", "eval_interval", "output_dir", "checkpoint_interval",
            "record_trajectories", "stop_at_target", "target_accuracy", "time_budget_s", "kappa_grid", "compare",
            "topology", "dataset", "partition", "model", "training", "channel", "seeds"});
  validate(c);
  return c;
}

inline ExperimentConfig parse_config_text(const std::string& text) {
  YAML::Node root;
  try {
    root = YAML::Load(text);
  } catch (const YAML::Exception& e) {
    throw Error(std::string("config is not valid YAML: ") + e.what());
  }
  return parse_config_node(root);
}

inline ExperimentConfig parse_config(const std::string& path) {
  std::ifstream in(path);
  check(in.good(), "cannot read config " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  try {
    return parse_config_text(ss.str());
  } catch (const Error& e) {
    throw Error(path + ": " + e.what());
  }
}

// Full, explicit YAML rendering; parse(serialize(c)) == c.
inline std::string serialize_config(const ExperimentConfig& c) {
  YAML::Emitter out;
  out.SetDoublePrecision(17);
  auto kappa_str = [](double k) { return format_kappa(k); };
  out << YAML::BeginMap;
  out << YAML::Key << "algorithm" << YAML::Value << to_string(c.algorithm);
  out << YAML::Key << "kappa" << YAML::Value << kappa_str(c.kappa);
  out << YAML::Key << "rounds" << YAML::Value << c.rounds;
  out << YAML::Key << "eval_interval" << YAML::Value << c.eval_interval;
  out << YAML::Key << "output_dir" << YAML::Value << YAML::DoubleQuoted << c.output_dir;
  out << YAML::Key << "checkpoint_interval" << YAML::Value << c.checkpoint_interval;
  out << YAML::Key << "record_trajectories" << YAML::Value << c.record_trajectories;
  out << YAML::Key << "stop_at_target" << YAML::Value << c.stop_at_target;
  out << YAML::Key << "target_accuracy" << YAML::Value << c.target_accuracy;
  if (std::isfinite(c.time_budget_s)) out << YAML::Key << "time_budget_s" << YAML::Value << c.time_budget_s;
  else out << YAML::Key << "time_budget_s" << YAML::Value << "inf";
  out << YAML::Key << "kappa_grid" << YAML::Value << YAML::Flow << YAML::BeginSeq;
  for (double k : c.kappa_grid) out << kappa_str(k);
  out << YAML::EndSeq;
  out << YAML::Key << "compare" << YAML::Value << YAML::BeginMap;
  out << YAML::Key << "algorithms" << YAML::Value << YAML::Flow << YAML::BeginSeq;
  for (auto a : c.compare_algorithms) out << to_string(a);
  out << YAML::EndSeq;
  out << YAML::Key << "seeds" << YAML::Value << YAML::Flow << c.compare_seeds;
  out << YAML::EndMap;

  const auto& t = c.topology;
  out << YAML::Key << "topology" << YAML::Value << YAML::BeginMap;
  out << YAML::Key << "num_servers" << YAML::Value << t.num_servers;
  out << YAML::Key << "num_clients" << YAML::Value << t.num_clients;
  out << YAML::Key << "overlap_sizes" << YAML::Value << YAML::Flow << t.overlap_sizes;
  out << YAML::Key << "local_sizes" << YAML::Value << YAML::Flow << t.local_sizes;
  out << YAML::Key << "balance" << YAML::Value << t.balance;
  out << YAML::Key << "radius_m" << YAML::Value << t.radius_m;
  out << YAML::Key << "overlap_fraction" << YAML::Value << t.overlap_fraction;
  out << YAML::Key << "roc_policy" << YAML::Value
      << (t.roc_policy == RocPolicy::Random ? "random" : "closest-to-midpoint");
  out << YAML::EndMap;

  const auto& d = c.dataset;
  out << YAML::Key << "dataset" << YAML::Value << YAML::BeginMap;
  out << YAML::Key << "kind" << YAML::Value << d.kind;
  out << YAML::Key << "mnist_dir" << YAML::Value << YAML::DoubleQuoted << d.mnist_dir;
  out << YAML::Key << "train_subset" << YAML::Value << d.train_subset;
  out << YAML::Key << "test_subset" << YAML::Value << d.test_subset;
  out << YAML::Key << "standardize" << YAML::Value << d.standardize;
  out << YAML::Key << "synthetic" << YAML::Value << YAML::BeginMap;
  out << YAML::Key << "classes" << YAML::Value << d.synthetic.classes;
  out << YAML::Key << "dims" << YAML::Value << d.synthetic.dims;
  out << YAML::Key << "per_class" << YAML::Value << d.synthetic.per_class;
  out << YAML::Key << "spread" << YAML::Value << d.synthetic.spread;
  out << YAML::Key << "test_per_class" << YAML::Value << d.synthetic_test_per_class;
  out << YAML::EndMap << YAML::EndMap;

  const auto& p = c.partition;
  out << YAML::Key << "partition" << YAML::Value << YAML::BeginMap;
  out << YAML::Key << "classes_per_client" << YAML::Value << p.classes_per_client;
  out << YAML::Key << "classes_per_cell" << YAML::Value << p.classes_per_cell;
  out << YAML::Key << "samples_per_client" << YAML::Value << p.samples_per_client;
  out << YAML::Key << "size_skew" << YAML::Value << p.size_skew;
  out << YAML::Key << "equal_shards" << YAML::Value << p.equal_shards;
  out << YAML::EndMap;

  out << YAML::Key << "model" << YAML::Value << YAML::BeginMap;
  out << YAML::Key << "kind" << YAML::Value << c.model.kind;
  out << YAML::Key << "hidden" << YAML::Value << c.model.hidden;
  out << YAML::Key << "activation" << YAML::Value << c.model.activation;
  out << YAML::EndMap;

  const auto& tr = c.training;
  out << YAML::Key << "training" << YAML::Value << YAML::BeginMap;
  out << YAML::Key << "epochs" << YAML::Value << tr.epochs;
  out << YAML::Key << "batch_size" << YAML::Value << tr.batch_size;
  out << YAML::Key << "iteration_mode" << YAML::Value << tr.iteration_mode;
  out << YAML::Key << "schedule" << YAML::Value << YAML::BeginMap;
  out << YAML::Key << "kind" << YAML::Value
      << (tr.schedule.kind == LrSchedule::Kind::Exponential ? "exponential" : "theoretical");
  out << YAML::Key << "initial" << YAML::Value << tr.schedule.initial;
  out << YAML::Key << "decay" << YAML::Value << tr.schedule.decay;
  out << YAML::EndMap << YAML::EndMap;

  const auto& ch = c.channel.params;
  out << YAML::Key << "channel" << YAML::Value << YAML::BeginMap;
  out << YAML::Key << "bandwidth_hz" << YAML::Value << ch.bandwidth_hz;
  out << YAML::Key << "client_power_w" << YAML::Value << ch.client_power_w;
  out << YAML::Key << "es_power_w" << YAML::Value << ch.es_power_w;
  out << YAML::Key << "noise_dbm_per_hz" << YAML::Value << c.channel.noise_dbm_per_hz;
  out << YAML::Key << "pathloss_intercept_db" << YAML::Value << ch.pathloss_intercept_db;
  out << YAML::Key << "pathloss_slope_db" << YAML::Value << ch.pathloss_slope_db;
  out << YAML::Key << "rayleigh_variance" << YAML::Value << ch.rayleigh_variance;
  out << YAML::Key << "fading_floor" << YAML::Value << ch.fading_floor;
  out << YAML::Key << "model_bits" << YAML::Value << c.channel.model_bits;
  out << YAML::Key << "cloud_ratio" << YAML::Value << ch.cloud_ratio;
  out << YAML::Key << "epoch_time_min_s" << YAML::Value << ch.epoch_time_min_s;
  out << YAML::Key << "epoch_time_max_s" << YAML::Value << ch.epoch_time_max_s;
  out << YAML::Key << "log_base" << YAML::Value << YAML::DoubleQuoted << (ch.natural_log ? "e" : "2");
  out << YAML::Key << "resample_fading" << YAML::Value << ch.resample_fading;
  out << YAML::Key << "resample_compute" << YAML::Value << ch.resample_compute;
  out << YAML::Key << "relay_legs" << YAML::Value << (ch.distinct_relay_legs ? "distinct" : "shared");
  out << YAML::EndMap;

  out << YAML::Key << "seeds" << YAML::Value << YAML::BeginMap;
  out << YAML::Key << "base" << YAML::Value << c.seeds.base;
  auto seed = [&](const char* k, const std::optional<std::uint64_t>& v) {
    if (v) out << YAML::Key << k << YAML::Value << *v;
  };
  seed("topology", c.seeds.topology);
  seed("data", c.seeds.data);
  seed("training", c.seeds.training);
  seed("channel", c.seeds.channel);
  out << YAML::EndMap;
  out << YAML::EndMap;
  return std::string(out.c_str()) + "\n";
}

}  // namespace fedoc
