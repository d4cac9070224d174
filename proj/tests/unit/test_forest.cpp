#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <vector>

#include "forestfuse/forest.hpp"
#include "forestfuse/stats.hpp"
#include "support/synth.hpp"

using namespace forestfuse;

namespace {

ForestConfig small(Mode mode, std::size_t trees = 25, std::uint64_t seed = 5) {
  ForestConfig c;
  c.mode = mode;
  c.n_trees = trees;
  c.seed = seed;
  return c;
}

Dataset regression_data(std::size_t n, std::uint64_t seed) {
  Rng rng(seed);
  std::vector<double> x(n * 3), y(n);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t f = 0; f < 3; ++f) x[i * 3 + f] = rng.normal();
    y[i] = std::sin(2 * x[i * 3]) + 0.5 * x[i * 3 + 1] + 0.1 * rng.normal();
  }
  return Dataset::dense(n, 3, x, {}, make_regression_target(y));
}

std::size_t subtree_size(const Tree& t, std::size_t node) {
  const Node& n = t.nodes[node];
  if (n.is_leaf()) return t.leaf_sizes[static_cast<std::size_t>(n.leaf)];
  return subtree_size(t, static_cast<std::size_t>(n.left)) + subtree_size(t, static_cast<std::size_t>(n.right));
}

std::size_t depth(const Tree& t, std::size_t node = 0) {
  const Node& n = t.nodes[node];
  if (n.is_leaf()) return 0;
  return 1 + std::max(depth(t, static_cast<std::size_t>(n.left)), depth(t, static_cast<std::size_t>(n.right)));
}

ErrorKind kind_of(auto&& fn) {
  try {
    fn();
  } catch (const Error& e) {
    return e.kind();
  }
  ADD_FAILURE() << "no error raised";
  return ErrorKind::io;
}

}  // namespace

TEST(Forest, IdenticalAcrossThreadCounts) {
  const auto ds = synth::blobs(300, 6, 3, 1.0, 9);
  for (auto strategy : {SplitStrategy::presort, SplitStrategy::histogram}) {
    auto cfg = small(Mode::classification);
    cfg.split_strategy = strategy;
    const auto a = train(ds, cfg, 1);
    const auto b = train(ds, cfg, 4);
    EXPECT_TRUE(a == b);
  }
  const auto u1 = train(ds.with_target(std::nullopt), small(Mode::unsupervised), 1);
  const auto u3 = train(ds.with_target(std::nullopt), small(Mode::unsupervised), 3);
  EXPECT_TRUE(u1 == u3);
  auto other = small(Mode::classification);
  other.seed = 6;
  EXPECT_FALSE(train(ds, other, 1).trees == train(ds, small(Mode::classification), 1).trees);
}

TEST(Forest, TrainingBookkeepingIsConsistent) {
  const auto ds = synth::blobs(200, 5, 2, 1.5, 3);
  const auto f = train(ds, small(Mode::classification, 15), 1);
  ASSERT_EQ(f.n_trees(), 15u);
  for (std::size_t t = 0; t < f.n_trees(); ++t) {
    const auto& tree = f.trees[t];
    EXPECT_EQ(std::accumulate(f.inbag[t].begin(), f.inbag[t].end(), 0u), 200u);
    std::vector<double> votes(tree.leaf_values.size(), 0.0);
    std::vector<std::uint32_t> sizes(tree.n_leaves(), 0);
    for (std::size_t r = 0; r < ds.n_rows(); ++r) {
      const auto leaf = tree.leaf_of_row(ds, r);
      ASSERT_EQ(f.leaf(r, t), leaf);
      sizes[leaf] += f.inbag[t][r];
      votes[leaf * tree.width + static_cast<std::size_t>(ds.target()->label(r))] += f.inbag[t][r];
    }
    EXPECT_EQ(sizes, tree.leaf_sizes);
    EXPECT_EQ(votes, tree.leaf_values);
  }
}

TEST(Forest, OobErrorMatchesIndependentRecount) {
  const auto ds = synth::blobs(150, 4, 3, 0.8, 21);
  const auto f = train(ds, small(Mode::classification, 30), 1);
  std::size_t wrong = 0, scored = 0;
  for (std::size_t r = 0; r < ds.n_rows(); ++r) {
    std::vector<double> p(3, 0.0);
    bool any = false;
    for (std::size_t t = 0; t < f.n_trees(); ++t) {
      if (f.inbag[t][r] != 0) continue;
      any = true;
      const auto v = f.trees[t].leaf_value(f.trees[t].leaf_of(ds.row(r)));
      const double total = v[0] + v[1] + v[2];
      for (int c = 0; c < 3; ++c) p[c] += v[c] / total;
    }
    if (!any) continue;
    ++scored;
    const int pred = static_cast<int>(std::max_element(p.begin(), p.end()) - p.begin());
    wrong += pred != ds.target()->label(r);
  }
  EXPECT_DOUBLE_EQ(f.oob_error, static_cast<double>(wrong) / scored);
  const auto res = oob_error(f, ds);
  EXPECT_EQ(res.n_scored, scored);
  EXPECT_EQ(res.error, f.oob_error);
}

TEST(Forest, RegressionOobIsMseOfOobMeans) {
  const auto ds = regression_data(200, 4);
  const auto f = train(ds, small(Mode::regression, 30), 1);
  double sse = 0.0;
  std::size_t scored = 0;
  for (std::size_t r = 0; r < ds.n_rows(); ++r) {
    double s = 0.0;
    std::size_t k = 0;
    for (std::size_t t = 0; t < f.n_trees(); ++t)
      if (f.is_oob(r, t)) {
        s += f.trees[t].leaf_value(f.leaf(r, t))[0];
        ++k;
      }
    if (k == 0) continue;
    const double d = s / k - ds.target()->values[r];
    sse += d * d;
    ++scored;
  }
  EXPECT_NEAR(f.oob_error, sse / scored, 1e-12);
  double var = 0.0, mean = 0.0;
  for (double y : ds.target()->values) mean += y / 200.0;
  for (double y : ds.target()->values) var += (y - mean) * (y - mean) / 200.0;
  EXPECT_LT(f.oob_error, 0.6 * var);
}

TEST(Forest, PredictionsAreDistributionsAndSeparateBlobs) {
  const auto train_ds = synth::blobs(400, 4, 2, 3.0, 1);
  const auto test_ds = synth::blobs(200, 4, 2, 3.0, 2);
  const auto f = train(train_ds, small(Mode::classification, 40), 1);
  const auto pred = predict(f, test_ds, 2);
  std::size_t correct = 0;
  for (std::size_t r = 0; r < test_ds.n_rows(); ++r) {
    const auto p = pred.proba(r);
    EXPECT_NEAR(p[0] + p[1], 1.0, 1e-12);
    const auto direct = predict_proba(f, test_ds.row(r));
    EXPECT_EQ(direct[0], p[0]);
    correct += static_cast<int>(pred.values[r]) == test_ds.target()->label(r);
  }
  EXPECT_GT(correct, 190u);
  EXPECT_EQ(kind_of([&] { predict(f, test_ds.with_missing({{0, 0}})); }), ErrorKind::precondition);
  EXPECT_EQ(kind_of([&] { predict_proba(f, std::vector<double>{1.0}); }), ErrorKind::argument);
}

TEST(Forest, UnsupervisedStacksSyntheticRows) {
  const auto ds = synth::dependent_pair(150, 4, 0.1, 8);
  const auto f = train(ds, small(Mode::unsupervised, 30), 1);
  EXPECT_EQ(f.n_train, 300u);
  EXPECT_EQ(f.synthetic_offset, 150u);
  EXPECT_EQ(f.n_classes, 2);
  EXPECT_LT(f.oob_error, 0.5);
  const auto pred = predict(f, ds);
  EXPECT_NEAR(pred.p_synthetic(0) + pred.proba(0)[0], 1.0, 1e-12);
}

TEST(Forest, SyntheticPreservesMarginalsAndBreaksDependence) {
  const auto ds = synth::dependent_pair(500, 3, 0.05, 2);
  const auto syn = generate_synthetic(ds, 77);
  for (std::size_t f = 0; f < 3; ++f) {
    auto a = ds.column(f), b = syn.column(f);
    std::sort(a.begin(), a.end());
    std::sort(b.begin(), b.end());
    EXPECT_EQ(a, b);
  }
  EXPECT_GT(std::fabs(stats::pearson(ds.column(0), ds.column(1))), 0.95);
  EXPECT_LT(std::fabs(stats::pearson(syn.column(0), syn.column(1))), 0.15);
  EXPECT_EQ(kind_of([&] { generate_synthetic(ds.with_missing({{1, 1}}), 1); }), ErrorKind::precondition);
}

TEST(Forest, SparseAndDenseStorageGrowTheSameTrees) {
  Rng rng(12);
  const std::size_t n = 120, m = 5;
  std::vector<double> dense(n * m, 0.0);
  std::vector<int> y(n);
  CsrMatrix csr;
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t f = 0; f < m; ++f)
      if (rng.uniform() < 0.5) {
        dense[i * m + f] = std::round(rng.normal() * 4) + 10;
        csr.columns.push_back(static_cast<std::uint32_t>(f));
        csr.values.push_back(dense[i * m + f]);
      }
    csr.offsets.push_back(csr.columns.size());
    y[i] = dense[i * m] > 9 ? 1 : 0;
  }
  const auto d = Dataset::dense(n, m, dense, {}, make_class_target(y));
  const auto s = Dataset::csr(n, m, csr, {}, make_class_target(y));
  for (auto strategy : {SplitStrategy::presort, SplitStrategy::histogram}) {
    auto cfg = small(Mode::classification, 10);
    cfg.split_strategy = strategy;
    EXPECT_TRUE(train(d, cfg, 1) == train(s, cfg, 1));
  }
}

TEST(Forest, MinNodeSizeAndMaxDepthLimitGrowth) {
  const auto ds = synth::blobs(300, 4, 3, 0.5, 4);
  auto cfg = small(Mode::classification, 10);
  cfg.min_node_size = 20;
  cfg.max_depth = 3;
  const auto f = train(ds, cfg, 1);
  for (const auto& tree : f.trees) {
    EXPECT_LE(depth(tree), 3u);
    for (std::size_t i = 0; i < tree.nodes.size(); ++i) {
      if (tree.nodes[i].is_leaf()) continue;
      EXPECT_GT(subtree_size(tree, i), 20u);
    }
  }
  // Default classification trees grow until leaves are pure.
  const auto full = train(ds, small(Mode::classification, 5), 1);
  for (const auto& tree : full.trees)
    for (std::size_t l = 0; l < tree.n_leaves(); ++l) {
      const auto v = tree.leaf_value(l);
      EXPECT_EQ(std::count_if(v.begin(), v.end(), [](double c) { return c > 0; }), 1);
    }
}

TEST(Forest, ConfigErrors) {
  const auto ds = synth::blobs(30, 3, 2, 1.0, 1);
  auto cfg = small(Mode::classification);
  cfg.n_trees = 0;
  EXPECT_EQ(kind_of([&] { train(ds, cfg); }), ErrorKind::config);
  cfg = small(Mode::classification);
  cfg.mtry = 4;
  EXPECT_EQ(kind_of([&] { train(ds, cfg); }), ErrorKind::config);
  cfg = small(Mode::classification);
  cfg.split_strategy = SplitStrategy::histogram;
  cfg.n_bins = 1;
  EXPECT_EQ(kind_of([&] { train(ds, cfg); }), ErrorKind::config);
  EXPECT_EQ(kind_of([&] { train(ds.with_target(std::nullopt), small(Mode::classification)); }), ErrorKind::config);
  EXPECT_EQ(kind_of([&] { train(regression_data(30, 1), small(Mode::classification)); }), ErrorKind::config);
  EXPECT_EQ(kind_of([&] { train(ds.with_missing({{0, 0}}), small(Mode::classification)); }), ErrorKind::precondition);
  const auto resolved = small(Mode::regression).resolved(9);
  EXPECT_EQ(resolved.mtry, 3u);
  EXPECT_EQ(resolved.min_node_size, 5u);
  EXPECT_EQ(small(Mode::classification).resolved(9).mtry, 3u);
  EXPECT_EQ(small(Mode::classification).resolved(2).mtry, 1u);
}

TEST(Forest, RegressionLeafValuesAreConvexCombinations) {
  const auto ds = regression_data(80, 6);
  auto cfg = small(Mode::regression, 10);
  cfg.min_node_size = 1;
  const auto f = train(ds, cfg, 1);
  const auto& y = ds.target()->values;
  for (std::size_t t = 0; t < f.n_trees(); ++t)
    for (std::size_t r = 0; r < ds.n_rows(); ++r) {
      if (f.inbag[t][r] == 0) continue;
      double lo = INFINITY, hi = -INFINITY;
      for (std::size_t j = 0; j < ds.n_rows(); ++j)
        if (f.inbag[t][j] > 0 && f.leaf(j, t) == f.leaf(r, t)) {
          lo = std::min(lo, y[j]);
          hi = std::max(hi, y[j]);
        }
      const double v = f.trees[t].leaf_value(f.leaf(r, t))[0];
      EXPECT_GE(v, lo - 1e-12);
      EXPECT_LE(v, hi + 1e-12);
    }
}
