#include <gtest/gtest.h>

#include <cmath>

#include "fedoc/learner.hpp"
#include "fedoc/partition.hpp"
#include "helpers.hpp"

using namespace fedoc;

namespace {

void write_fixture(const std::filesystem::path& dir, std::size_t n, std::uint32_t label_magic = kIdxLabelsMagic) {
  std::vector<unsigned char> pixels(n * 784), labels(n);
  for (std::size_t i = 0; i < pixels.size(); ++i) pixels[i] = static_cast<unsigned char>((i * 37) % 256);
  for (std::size_t i = 0; i < n; ++i) labels[i] = static_cast<unsigned char>(i % 10);
  write_idx_images((dir / "img").string(), pixels, n, 28, 28);
  write_idx_labels((dir / "lab").string(), labels);
  if (label_magic != kIdxLabelsMagic) {
    // Overwrite the magic with the images one.
    std::fstream f((dir / "lab").string(), std::ios::in | std::ios::out | std::ios::binary);
    const unsigned char m[4] = {0, 0, 8, 3};
    f.write(reinterpret_cast<const char*>(m), 4);
  }
}

}  // namespace

TEST(Idx, WriteReadRoundTrip) {
  const auto dir = fedoc::testing::temp_dir("idx_rt");
  write_fixture(dir, 10);
  const auto ds = load_mnist_idx((dir / "img").string(), (dir / "lab").string());
  EXPECT_EQ(ds.size(), 10u);
  EXPECT_EQ(ds.dims, 784u);
  EXPECT_EQ(ds.num_classes, 10u);
  for (std::size_t i = 0; i < 10; ++i) EXPECT_EQ(ds.labels[i], static_cast<int>(i));
  for (std::size_t i = 0; i < ds.features.size(); ++i)
    ASSERT_DOUBLE_EQ(ds.features[i], static_cast<double>((i * 37) % 256) / 255.0);
}

TEST(Idx, BadMagicIsRejected) {
  const auto dir = fedoc::testing::temp_dir("idx_magic");
  write_fixture(dir, 10, kIdxImagesMagic);
  try {
    load_mnist_idx((dir / "img").string(), (dir / "lab").string());
    FAIL() << "expected an error";
  } catch (const Error& e) {
    EXPECT_NE(std::string(e.what()).find("magic"), std::string::npos);
  }
}

TEST(Idx, TruncatedAndMismatchedFilesAreRejected) {
  const auto dir = fedoc::testing::temp_dir("idx_trunc");
  write_fixture(dir, 10);
  std::filesystem::resize_file(dir / "img", 16 + 784 * 5);
  EXPECT_THROW(load_mnist_idx((dir / "img").string(), (dir / "lab").string()), Error);
  write_fixture(dir, 10);
  write_idx_labels((dir / "lab").string(), std::vector<unsigned char>(7, 1));
  EXPECT_THROW(load_mnist_idx((dir / "img").string(), (dir / "lab").string()), Error);
}

TEST(Idx, BundledMnistSubsetLoads) {
  const auto split = load_mnist_dir(std::string(FEDOC_SOURCE_DIR) + "/data/mnist");
  EXPECT_EQ(split.train.dims, 784u);
  EXPECT_EQ(split.train.num_classes, 10u);
  EXPECT_GE(split.train.size(), 6000u);
  EXPECT_GT(split.test.size(), 0u);
  split.train.validate();
}

TEST(Synthetic, CountsAndDeterminism) {
  const auto a = make_synthetic({10, 20, 100, 0.5}, 4);
  EXPECT_EQ(a.size(), 1000u);
  const auto b = make_synthetic({10, 20, 100, 0.5}, 4);
  EXPECT_EQ(a.features, b.features);
  EXPECT_EQ(a.labels, b.labels);
}

TEST(Synthetic, SeparableBlobsAreLearnedCentrally) {
  const auto all = make_synthetic({2, 2, 150, 0.1}, 8);
  std::vector<std::size_t> even, odd;
  for (std::size_t i = 0; i < all.size(); ++i) (i % 4 < 2 ? even : odd).push_back(i);  // classes interleave
  const auto train = subset(all, even, "train");
  ModelParams m = init_model({ModelKind::Logistic, 2, 0, 2}, 1);
  for (int s = 0; s < 300; ++s) {
    const auto g = loss_and_grad(m, train).grad;
    for (std::size_t i = 0; i < m.w.size(); ++i) m.w[i] -= 1.0 * g[i];
  }
  EXPECT_GT(evaluate(m, subset(all, odd, "held")).accuracy, 0.99);
}

TEST(Subset, StratifiedKeepsClassProportions) {
  const auto ds = make_synthetic({4, 3, 50, 0.3}, 1);
  const auto s = stratified_subset(ds, 100, 2);
  EXPECT_EQ(s.size(), 100u);
  for (const auto& idx : s.indices_by_class()) EXPECT_EQ(idx.size(), 25u);
}

// ---------------------------------------------------------------------------

namespace {

struct PlanFixture {
  Dataset ds = make_synthetic({10, 5, 120, 0.5}, 3);
  Topology topo = build_topology(TopologySpec{}, 3);
};

}  // namespace

TEST(Partition, ClientAndCellClassBudgets) {
  PlanFixture f;
  const auto plan = partition_noniid(f.ds, f.topo, {2, 5}, 9);
  for (const auto& h : plan.client_histograms)
    EXPECT_EQ(std::count_if(h.begin(), h.end(), [](double v) { return v > 0; }), 2);
  for (const auto& h : plan.cell_histograms)
    EXPECT_LE(std::count_if(h.begin(), h.end(), [](double v) { return v > 0; }), 5);
  for (std::size_t k = 0; k < plan.num_clients(); ++k)
    for (auto c : plan.client_classes[k]) {
      const auto& allow = plan.cell_classes[plan.client_cell[k]];
      EXPECT_NE(std::find(allow.begin(), allow.end(), c), allow.end());
    }
  const auto sizes = plan.sample_counts();
  for (double n : sizes) EXPECT_EQ(n, sizes.front());
}

TEST(Partition, CellHistogramIsWeightedMeanOfMembers) {
  PlanFixture f;
  const auto plan = partition_noniid(f.ds, f.topo, {2, 5}, 4);
  for (std::size_t j = 0; j < plan.num_cells(); ++j) {
    // Recount from raw indices.
    std::vector<double> counts(10, 0.0), mean(10, 0.0);
    double total = 0.0;
    for (auto k : plan.cell_members[j]) {
      for (auto i : plan.client_indices[k]) counts[static_cast<std::size_t>(f.ds.labels[i])] += 1.0;
      total += static_cast<double>(plan.client_indices[k].size());
    }
    for (auto k : plan.cell_members[j]) {
      std::vector<double> own(10, 0.0);
      for (auto i : plan.client_indices[k]) own[static_cast<std::size_t>(f.ds.labels[i])] += 1.0;
      for (std::size_t c = 0; c < 10; ++c) mean[c] += own[c] / total;
    }
    for (std::size_t c = 0; c < 10; ++c) {
      EXPECT_LT(std::abs(counts[c] / total - plan.cell_histograms[j][c]), 1e-12);
      EXPECT_LT(std::abs(mean[c] - plan.cell_histograms[j][c]), 1e-12);
    }
  }
}

TEST(Partition, IidControlHasZeroHeterogeneity) {
  PlanFixture f;
  const auto iid = partition_noniid(f.ds, f.topo, {10, 10}, 1);
  for (double h : heterogeneity(iid)) EXPECT_LT(h, 1e-12);
  for (std::size_t k = 0; k < iid.num_clients(); ++k)
    EXPECT_LT(histogram_gap(iid.client_histograms[k], iid.global_histogram), 1e-12);
  const auto non = partition_noniid(f.ds, f.topo, {2, 5}, 1);
  double total = 0.0;
  for (double h : heterogeneity(non)) total += h;
  EXPECT_GT(total, 0.0);
}

TEST(PartitionProperty, DisjointHistogramsSumToOne) {
  PlanFixture f;
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    PartitionSpec spec{1 + seed % 3, 5, 0, seed % 4 != 0, (seed % 2) ? 0.3 : 0.0};
    const auto plan = partition_noniid(f.ds, f.topo, spec, seed);
    std::vector<int> used(f.ds.size(), 0);
    std::size_t total = 0;
    for (const auto& idx : plan.client_indices) {
      EXPECT_FALSE(idx.empty());
      for (auto i : idx) ++used[i];
      total += idx.size();
    }
    EXPECT_LE(total, f.ds.size());
    for (int u : used) EXPECT_LE(u, 1);
    for (const auto& h : plan.client_histograms) {
      double s = 0.0;
      for (double v : h) s += v;
      EXPECT_NEAR(s, 1.0, 1e-12);
    }
  }
}

TEST(Partition, InfeasibleAndInvalidSpecs) {
  PlanFixture f;
  EXPECT_THROW(partition_noniid(f.ds, f.topo, {6, 5}, 1), Error);
  EXPECT_THROW(partition_noniid(f.ds, f.topo, {2, 11}, 1), Error);
  EXPECT_THROW(partition_noniid(f.ds, f.topo, {2, 5, 10000}, 1), Error);
}

TEST(Partition, UnequalShardsUseEveryClassPool) {
  PlanFixture f;
  PartitionSpec spec{2, 5};
  spec.equal_shards = false;
  const auto plan = partition_noniid(f.ds, f.topo, spec, 2);
  std::size_t total = 0;
  for (const auto& idx : plan.client_indices) total += idx.size();
  const auto eq = partition_noniid(f.ds, f.topo, {2, 5}, 2);
  std::size_t eq_total = 0;
  for (const auto& idx : eq.client_indices) eq_total += idx.size();
  EXPECT_GE(total, eq_total);
  EXPECT_GT(total, f.ds.size() * 9 / 10);
}
