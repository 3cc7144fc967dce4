#include <cstdio>
#include <iostream>

#include <CLI11.hpp>

#include "fedoc/analysis.hpp"
#include "fedoc/experiment.hpp"

using namespace fedoc;

namespace {

struct Common {
  std::string config;
  std::string algorithm;
  std::string kappa;
  std::optional<std::uint64_t> seed;
  std::string out;
  bool desk_scale = false;
  bool record_trajectories = false;
  bool verbose = false;
};

void add_common(CLI::App* sub, Common& c) {
  sub->add_option("--config", c.config, "YAML experiment config")->check(CLI::ExistingFile);
  sub->add_option("--algorithm", c.algorithm, "fedoc-fastest | fedoc-fixed | hfl | fedmes | fl-eocd");
  sub->add_option("--kappa", c.kappa, "cloud interval, integer or inf");
  sub->add_option("--seed", c.seed, "base seed");
  sub->add_option("--out", c.out, "output directory");
  sub->add_flag("--desk-scale", c.desk_scale, "cap dataset size and rounds");
  sub->add_flag("--record-trajectories", c.record_trajectories, "keep per-round models");
  sub->add_flag("-v,--verbose", c.verbose, "progress on stderr");
}

ExperimentConfig load(const Common& c) {
  ExperimentConfig cfg = c.config.empty() ? parse_config_text("{}") : parse_config(c.config);
  if (!c.algorithm.empty()) cfg.algorithm = parse_algorithm(c.algorithm);
  if (!c.kappa.empty()) cfg.kappa = parse_kappa(c.kappa, "--kappa");
  if (c.seed) cfg.seeds.base = *c.seed;
  if (!c.out.empty()) cfg.output_dir = c.out;
  if (c.record_trajectories) {
    cfg.record_trajectories = true;
    if (cfg.checkpoint_interval == 0) cfg.checkpoint_interval = cfg.eval_interval;
  }
  if (c.desk_scale) cfg = desk_scale(cfg);
  validate(cfg);
  return cfg;
}

std::string optional_time(const std::optional<double>& t) { return t ? fmt(*t) : "not reached"; }

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"FedOC federated learning simulator"};
  app.require_subcommand(1);

  Common run_opts, sweep_opts, cmp_opts;
  std::string manifest;
  auto* run = app.add_subcommand("run", "run one experiment");
  add_common(run, run_opts);
  run->add_option("--manifest", manifest, "re-run the config stored in a manifest")->check(CLI::ExistingFile);

  auto* sweep = app.add_subcommand("sweep-kappa", "time to target accuracy over the kappa grid");
  add_common(sweep, sweep_opts);

  auto* cmp = app.add_subcommand("compare", "all algorithms on shared seeds");
  add_common(cmp, cmp_opts);

  BoundSpec bound;
  std::string bound_out;
  bool bound_traj = false;
  auto* bc = app.add_subcommand("bound-check", "model divergence against its closed-form bound");
  bc->add_option("--seed", bound.seed, "seed");
  bc->add_option("--kappa", bound.kappa, "cloud interval");
  bc->add_option("--epochs", bound.epochs, "local steps per round");
  bc->add_option("--rounds", bound.rounds, "R");
  bc->add_option("--safety", bound.lipschitz_safety, "Lipschitz safety factor");
  bc->add_option("--out", bound_out, "write bound_report.json here");
  bc->add_flag("--record-trajectories", bound_traj, "also write the window trajectories");

  std::size_t prop_servers = 4;
  std::size_t prop_rounds = 0;
  std::uint64_t prop_seed = 1;
  std::string prop_algo = "fedoc-fastest";
  auto* prop = app.add_subcommand("propagation-check", "marker propagation along the chain");
  prop->add_option("--servers", prop_servers, "chain length L")->check(CLI::Range(1, 64));
  prop->add_option("--rounds", prop_rounds, "rounds to simulate (default L + 2)");
  prop->add_option("--seed", prop_seed, "topology seed");
  prop->add_option("--algorithm", prop_algo, "algorithm");

  std::string validate_path;
  auto* val = app.add_subcommand("validate", "parse a config and print it with defaults filled");
  val->add_option("--config", validate_path, "YAML config")->required();

  CLI11_PARSE(app, argc, argv);

  try {
    if (*run) {
      if (!manifest.empty()) {
        const std::string out = run_opts.out.empty() ? "runs/replay" : run_opts.out;
        const auto r = replay_manifest(manifest, out);
        std::cout << "replay " << (r.identical ? "identical" : "DIFFERENT") << " metrics " << r.actual_hash
                  << " expected " << r.expected_hash << "\n";
        return r.identical ? 0 : 2;
      }
      const auto cfg = load(run_opts);
      const auto res = run_experiment(cfg, cfg.output_dir, !run_opts.verbose);
      std::cout << to_string(cfg.algorithm) << " kappa=" << format_kappa(cfg.kappa) << " rounds=" << res.rounds_done
                << " simulated_time_s=" << fmt(res.simulated_time) << " final_accuracy=" << fmt(res.final_accuracy())
                << " time_to_target_s=" << optional_time(res.time_to_target) << "\n"
                << "wrote " << cfg.output_dir << "\n";
    } else if (*sweep) {
      auto cfg = load(sweep_opts);
      if (cfg.algorithm == Algorithm::FedOcFastest && sweep_opts.algorithm.empty()) cfg.algorithm = Algorithm::Hfl;
      const auto pts = sweep_kappa(cfg, cfg.output_dir, !sweep_opts.verbose);
      std::cout << sweep_csv(pts);
    } else if (*cmp) {
      auto cfg = load(cmp_opts);
      if (cmp_opts.seed) cfg.compare_seeds = {*cmp_opts.seed};
      const auto rep = compare_algorithms(cfg, cfg.output_dir, !cmp_opts.verbose);
      std::cout << rep.summary_csv;
    } else if (*bc) {
      const auto setup = make_bound_setup(bound);
      const auto rep = bound_check(setup, bound);
      const auto j = rep.to_json();
      if (!bound_out.empty()) {
        fs::create_directories(bound_out);
        write_text(fs::path(bound_out) / "bound_report.json", j.dump(2) + "\n");
        if (bound_traj) {
          const CellGradients cg(setup.data, setup.plan);
          const auto f = run_fedoc_population(setup.topo, setup.plan, cg, setup.init, bound.rounds, bound.kappa,
                                              bound.epochs, derive_seed(bound.seed, 5));
          nlohmann::json t;
          for (const auto& [p, models] : f.cell_models)
            for (std::size_t jj = 0; jj < models.size(); ++jj)
              t["cell_models"][std::to_string(p)].push_back(models[jj].w);
          t["sync_model"] = f.sync_model.w;
          t["cloud_final"] = f.cloud_final.w;
          write_text(fs::path(bound_out) / "trajectories.json", t.dump() + "\n");
        }
      }
      std::cout << "divergence " << fmt(rep.divergence) << "  rhs " << fmt(rep.lemma.rhs) << "  closed "
                << fmt(rep.lemma.eps_intra_closed + rep.lemma.eps_inter_closed) << "  "
                << (rep.passed ? "PASS" : "FAIL") << "\n";
      return rep.passed ? 0 : 2;
    } else if (*prop) {
      TopologySpec ts;
      ts.num_servers = prop_servers;
      ts.num_clients = 12 * prop_servers;
      ts.overlap_sizes.assign(prop_servers - 1, 4);
      const auto topo = build_topology(ts, prop_seed);
      const auto rep = marker_propagation_check(topo, prop_rounds ? prop_rounds : prop_servers + 2, prop_seed,
                                                parse_algorithm(prop_algo));
      std::cout << "L=" << prop_servers << " completion_round="
                << (rep.completion_round ? std::to_string(*rep.completion_round) : "never") << " expected "
                << prop_servers - 1 << " " << (rep.passed ? "PASS" : "FAIL") << "\n";
      return rep.passed ? 0 : 2;
    } else if (*val) {
      std::cout << serialize_config(parse_config(validate_path));
    }
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const InvariantViolation& e) {
    std::cerr << "invariant violated: " << e.what() << "\n";
    return 2;
  }
  return 0;
}
