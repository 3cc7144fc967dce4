#include <gtest/gtest.h>

#include <cmath>

#include "fedoc/protocol.hpp"
#include "helpers.hpp"

using namespace fedoc;
using fedoc::testing::hand_topology;

namespace {

std::vector<std::size_t> homes(const Topology& t) {
  std::vector<std::size_t> h(t.num_clients());
  const auto roles = t.roles();
  for (std::size_t k = 0; k < h.size(); ++k)
    h[k] = roles[k].kind == RoleKind::RelayOverlap ? t.relay_attachment(roles[k].index) : roles[k].index;
  return h;
}

EngineConfig config(Algorithm a, double kappa = kInf, bool timing = true) {
  EngineConfig c;
  c.algorithm = a;
  c.kappa = kappa;
  c.timing = timing;
  return c;
}

// Chain with one local client per cell and a single relay in every overlap.
Topology three_cell_minimal() { return hand_topology({{0}, {1}, {2}}, {{3}, {4}}, {{3}, {4}}); }

// Deterministic scalar "training" that depends on the client and the round.
const Trainer<double> kScalarTrainer = [](const double& w, std::size_t k, std::size_t r) {
  return 0.5 * w + static_cast<double>((k * 7 + r * 3) % 11);
};

}  // namespace

TEST(Aggregation, WeightedMeanHandExample) {
  const auto t = hand_topology({{0, 1}}, {}, {});
  Engine<double> eng(t, {1.0, 3.0}, {0, 0}, config(Algorithm::FedOcFastest), 1);
  eng.initialize(0.0);
  eng.step([](const double&, std::size_t k, std::size_t) { return k == 0 ? 0.0 : 4.0; });
  EXPECT_DOUBLE_EQ(eng.edge_models()[0], 3.0);
}

TEST(Aggregation, SinglePositiveTermIsExactCopy) {
  const double x = 0.1 + 0.2;
  EXPECT_EQ(weighted_average<double>({{0.0, nullptr}, {7.3, &x}}), x);
  EXPECT_THROW(weighted_average<double>({{0.0, &x}}), InvariantViolation);
  EXPECT_THROW(weighted_average<double>({{-1.0, &x}, {1.0, &x}}), InvariantViolation);
}

TEST(Aggregation, IdenticalModelsAreFixedPoints) {
  const auto t = build_topology(TopologySpec{}, 2);
  for (auto a : kAllAlgorithms) {
    Engine<double> eng(t, std::vector<double>(t.num_clients(), 3.0), homes(t), config(a, 2), 2);
    eng.initialize(0.75);
    for (int r = 0; r < 3; ++r) eng.step([](const double&, std::size_t, std::size_t) { return 0.75; });
    for (double v : eng.edge_models()) EXPECT_EQ(v, 0.75) << to_string(a);
  }
}

TEST(FedOc, MiddleCellMixesAllThreeCells) {
  const auto t = three_cell_minimal();
  const auto h = homes(t);
  Engine<Composition> eng(t, std::vector<double>(5, 1.0), h, config(Algorithm::FedOcFixed, kInf, false), 1);
  eng.initialize(Composition{});
  eng.step([&](const Composition&, std::size_t k, std::size_t) { return Composition{{h[k], 1.0}}; });
  const auto& mid = eng.edge_models()[1];
  ASSERT_EQ(mid.size(), 3u);
  for (std::size_t c = 0; c < 3; ++c) EXPECT_GT(mid.at(c), 0.0);
  check_convex(mid, 1e-12, "ES 1");
}

TEST(FedOc, ConvexMassAndScalarBoundsEveryRound) {
  const auto t = build_topology(TopologySpec{}, 3);
  for (auto a : kAllAlgorithms) {
    Engine<Composition> eng(t, std::vector<double>(t.num_clients(), 1.0), homes(t), config(a, 3), 3);
    eng.initialize(Composition{{1000, 1.0}});
    for (int r = 0; r < 6; ++r) {
      const auto tr = eng.step([](const Composition&, std::size_t k, std::size_t) { return Composition{{k, 1.0}}; });
      for (const auto& m : eng.edge_models()) check_convex(m, 1e-12, to_string(a));
      (void)tr;
    }
    Engine<double> s(t, std::vector<double>(t.num_clients(), 2.0), homes(t), config(a, 3), 3);
    s.initialize(0.0);
    for (int r = 0; r < 6; ++r) {
      s.step([](const double&, std::size_t k, std::size_t r) { return std::sin(static_cast<double>(k + r)); });
      for (double v : s.edge_models()) {
        EXPECT_GE(v, -1.0);
        EXPECT_LE(v, 1.0);
      }
    }
  }
}

TEST(FedOc, EdgeModelMatchesFlatClientRewrite) {
  Rng rng(17);
  for (int trial = 0; trial < 10; ++trial) {
    TopologySpec spec;
    spec.overlap_sizes = {1 + rng.below(4), 1 + rng.below(4)};
    const auto t = build_topology(spec, rng.next());
    std::vector<double> n(t.num_clients());
    for (auto& v : n) v = 1.0 + static_cast<double>(rng.below(50));
    Engine<Composition> eng(t, n, homes(t), config(Algorithm::FedOcFastest), rng.next());
    eng.initialize(Composition{});
    const auto tr = eng.step([](const Composition&, std::size_t k, std::size_t) { return Composition{{k, 1.0}}; });
    // Uploaders S_l from the selection, relays held back.
    const auto roles = t.roles();
    std::vector<std::vector<std::size_t>> S(3);
    for (std::size_t k = 0; k < t.num_clients(); ++k)
      if (roles[k].kind != RoleKind::RelayOverlap) S[static_cast<std::size_t>(tr.selection[k])].push_back(k);
    for (std::size_t l = 0; l < 3; ++l) {
      std::map<std::size_t, double> expect;
      double total = 0.0;
      auto add = [&](std::size_t k) {
        expect[k] += n[k];
        total += n[k];
      };
      for (auto k : S[l]) add(k);
      if (l > 0) {
        for (auto k : S[l - 1]) add(k);
        add(*t.relay(l - 1));
      }
      if (l < 2) {
        for (auto k : S[l + 1]) add(k);
        add(*t.relay(l));
      }
      const auto& got = eng.edge_models()[l];
      ASSERT_EQ(got.size(), expect.size());
      for (const auto& [k, v] : expect) EXPECT_NEAR(got.at(k), v / total, 1e-12);
    }
  }
}

TEST(FedOc, NoOverlapEqualsHfl) {
  const auto t = hand_topology({{0, 1}, {2, 3}, {4}}, {{}, {}}, {{}, {}});
  std::vector<double> n{1, 2, 3, 4, 5};
  std::vector<std::size_t> h{0, 0, 1, 1, 2};
  for (double kappa : {2.0, kInf}) {
    Engine<double> a(t, n, h, config(Algorithm::FedOcFastest, kappa), 4);
    Engine<double> b(t, n, h, config(Algorithm::Hfl, kappa), 4);
    a.initialize(1.0);
    b.initialize(1.0);
    for (int r = 0; r < 5; ++r) {
      a.step(kScalarTrainer);
      b.step(kScalarTrainer);
      EXPECT_EQ(a.edge_models(), b.edge_models());
    }
  }
}

TEST(FedOc, SingleCellIsFedAvg) {
  const auto t = hand_topology({{0, 1, 2, 3}}, {}, {});
  std::vector<double> n{3, 1, 4, 1.5};
  Engine<double> eng(t, n, {0, 0, 0, 0}, config(Algorithm::FedOcFastest), 5);
  eng.initialize(2.0);
  double w = 2.0;
  for (std::size_t r = 0; r < 6; ++r) {
    eng.step(kScalarTrainer);
    double acc = n[0] * kScalarTrainer(w, 0, r), total = n[0];
    for (std::size_t k = 1; k < 4; ++k) {
      acc += n[k] * kScalarTrainer(w, k, r);
      total += n[k];
    }
    w = acc / total;
    EXPECT_EQ(eng.edge_models()[0], w);
  }
}

TEST(Selection, OverlapClientsPickOneCoveringServer) {
  const auto t = build_topology(TopologySpec{}, 6);
  const auto roles = t.roles();
  for (auto a : kAllAlgorithms) {
    Engine<double> eng(t, std::vector<double>(t.num_clients(), 1.0), homes(t), config(a, 4), 6);
    eng.initialize(0.0);
    for (int r = 0; r < 8; ++r) {
      const auto tr = eng.step(kScalarTrainer);
      for (std::size_t k = 0; k < t.num_clients(); ++k) {
        const int s = tr.selection[k];
        if (roles[k].kind == RoleKind::Local) {
          EXPECT_EQ(s, static_cast<int>(roles[k].index));
        } else if (multi_upload(a)) {
          EXPECT_EQ(s, kSelectAll);
        } else {
          EXPECT_TRUE(s == static_cast<int>(roles[k].index) || s == static_cast<int>(roles[k].index + 1));
        }
        if (a == Algorithm::FedOcFixed || a == Algorithm::Hfl)
          if (roles[k].kind != RoleKind::Local) EXPECT_EQ(s, static_cast<int>(homes(t)[k]));
      }
    }
  }
}

TEST(Clock, ReadyTimesStrictlyIncrease) {
  const auto t = build_topology(TopologySpec{}, 7);
  for (auto a : kAllAlgorithms) {
    Engine<double> eng(t, std::vector<double>(t.num_clients(), 1.0), homes(t), config(a, 3), 7);
    eng.initialize(0.0);
    std::vector<double> prev(3, 0.0);
    double clock = 0.0;
    for (int r = 0; r < 9; ++r) {
      const auto tr = eng.step(kScalarTrainer);
      for (std::size_t l = 0; l < 3; ++l) EXPECT_GT(tr.ready[l], prev[l]);
      EXPECT_GE(tr.cumulative_time, clock);
      if (tr.cloud) {
        EXPECT_GT(tr.t_cloud, 0.0);
        EXPECT_EQ(tr.ready[0], tr.ready[2]);
      }
      prev = tr.ready;
      clock = tr.cumulative_time;
    }
  }
}

TEST(Clock, FastestSelectionFollowsEarliestArrival) {
  const auto t = build_topology(TopologySpec{}, 8);
  Engine<double> eng(t, std::vector<double>(t.num_clients(), 1.0), homes(t), config(Algorithm::FedOcFastest), 8);
  eng.initialize(0.0);
  eng.step(kScalarTrainer);
  const auto ready = eng.ready_times();
  const auto tr = eng.step(kScalarTrainer);
  // Round-2 arrivals: ready + broadcast latency of each cell.
  const auto& p = eng.config().channel;
  const auto g = sample_gains(t, p, derive_seed(8, 0));
  const auto roles = t.roles();
  for (std::size_t k = 0; k < t.num_clients(); ++k) {
    if (roles[k].kind != RoleKind::NormalOverlap) continue;
    const std::size_t a = roles[k].index, b = a + 1;
    const double ta = ready[a] + broadcast_latency(cell_min_gain(t, g, a), p);
    const double tb = ready[b] + broadcast_latency(cell_min_gain(t, g, b), p);
    EXPECT_EQ(tr.selection[k], static_cast<int>(tb < ta ? b : a));
  }
}

TEST(FedMes, OverlapClientStartsFromAverageOfEqualModels) {
  const auto t = three_cell_minimal();
  Engine<double> eng(t, {1, 1, 1, 2, 3}, homes(t), config(Algorithm::FedMes, kInf, false), 1);
  eng.initialize(0.625);
  std::vector<double> seen(5, -1.0);
  eng.step([&](const double& w, std::size_t k, std::size_t) {
    seen[k] = w;
    return w;
  });
  for (double v : seen) EXPECT_EQ(v, 0.625);
}

TEST(FlEocd, EmptyCacheRoundMatchesFedMes) {
  const auto t = build_topology(TopologySpec{}, 9);
  Engine<double> a(t, std::vector<double>(t.num_clients(), 1.0), homes(t), config(Algorithm::FlEocd), 9);
  Engine<double> b(t, std::vector<double>(t.num_clients(), 1.0), homes(t), config(Algorithm::FedMes), 9);
  a.initialize(1.0);
  b.initialize(1.0);
  a.step(kScalarTrainer);
  b.step(kScalarTrainer);
  EXPECT_EQ(a.edge_models(), b.edge_models());
  a.step(kScalarTrainer);
  b.step(kScalarTrainer);
  EXPECT_NE(a.edge_models(), b.edge_models());
}

TEST(Cloud, KappaOneSynchronisesAndInfinityDoesNot) {
  const auto t = build_topology(TopologySpec{}, 10);
  const auto h = homes(t);
  const Trainer<double> by_cell = [&](const double& w, std::size_t k, std::size_t) {
    return w + static_cast<double>(h[k]);
  };
  Engine<double> sync(t, std::vector<double>(t.num_clients(), 1.0), h, config(Algorithm::Hfl, 1), 10);
  Engine<double> never(t, std::vector<double>(t.num_clients(), 1.0), h, config(Algorithm::Hfl, kInf), 10);
  sync.initialize(0.0);
  never.initialize(0.0);
  for (int r = 0; r < 4; ++r) {
    EXPECT_TRUE(sync.step(by_cell).cloud);
    EXPECT_FALSE(never.step(by_cell).cloud);
    EXPECT_EQ(sync.edge_models()[0], sync.edge_models()[1]);
    EXPECT_EQ(sync.edge_models()[1], sync.edge_models()[2]);
    EXPECT_NE(never.edge_models()[0], never.edge_models()[2]);
  }
}

TEST(Cloud, PhaseShiftsTheSchedule) {
  const auto t = build_topology(TopologySpec{}, 1);
  auto c = config(Algorithm::Hfl, 4);
  c.cloud_phase = 1;
  Engine<double> eng(t, std::vector<double>(t.num_clients(), 1.0), homes(t), c, 1);
  std::vector<bool> got;
  for (std::size_t r = 0; r < 8; ++r) got.push_back(eng.is_cloud_round(r));
  EXPECT_EQ(got, (std::vector<bool>{false, false, true, false, false, false, true, false}));
}

TEST(Propagation, ChainCompletesAfterLMinusOneRounds) {
  for (std::size_t L = 1; L <= 4; ++L) {
    TopologySpec s;
    s.num_servers = L;
    s.num_clients = 12 * L;
    s.overlap_sizes.assign(L - 1, 4);
    const auto rep = marker_propagation_check(build_topology(s, L), L + 2, L);
    ASSERT_TRUE(rep.completion_round.has_value());
    EXPECT_EQ(*rep.completion_round, L - 1);
    EXPECT_TRUE(rep.passed);
    if (L == 3) {
      EXPECT_EQ(rep.history[1][0], (TagSet{0, 1}));
      EXPECT_EQ(rep.history[2][0], (TagSet{0, 1, 2}));
    }
  }
}

TEST(Propagation, HflNeverMixesWithoutCloud) {
  const auto rep = marker_propagation_check(build_topology(TopologySpec{}, 1), 5, 1, Algorithm::Hfl);
  EXPECT_FALSE(rep.completion_round.has_value());
  EXPECT_FALSE(rep.passed);
}
