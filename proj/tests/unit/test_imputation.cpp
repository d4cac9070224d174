#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <vector>

#include "forestfuse/imputation.hpp"
#include "forestfuse/proximity.hpp"
#include "support/synth.hpp"
#include "support/toy.hpp"

using namespace forestfuse;

namespace {

FeatureSchema cont_cat_schema() {
  return FeatureSchema({FeatureSpec{"x", FeatureKind::continuous, {}},
                        FeatureSpec{"c", FeatureKind::categorical, {"a", "b", "c"}}});
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

ImputationConfig quick(ImputeMethod method, std::size_t trees = 30) {
  ImputationConfig cfg;
  cfg.method = method;
  cfg.forest_config.n_trees = trees;
  cfg.forest_config.seed = 4;
  cfg.threads = 1;
  return cfg;
}

struct Reimputed {
  std::vector<double> values;
  std::vector<std::uint8_t> fallback;
};

Reimputed run_pass(detail::Reimpute fn, const Forest& f, const Dataset& original) {
  const auto cells = original.missing_cells();
  const auto current = initial_impute(original);
  Reimputed out;
  out.fallback.assign(cells.size(), 0);
  out.values = fn(f, build_leaf_index(f), original, current, cells, out.fallback, 1);
  return out;
}

}  // namespace

TEST(InitialImpute, MedianAndLowestModalCode) {
  const auto ds = Dataset::dense(5, 2, {1, 2, 0, 0, 3, 2, 10, 0, 4, 1}, cont_cat_schema(), std::nullopt,
                                 {{1, 0}, {4, 1}});
  const auto filled = initial_impute(ds);
  EXPECT_EQ(filled.n_missing(), 0u);
  // Observed x = {1, 3, 10, 4}: median 3.5. Observed c = {2, 0, 2, 0}: tie between 0 and 2.
  EXPECT_EQ(filled.value(1, 0), 3.5);
  EXPECT_EQ(filled.value(4, 1), 0.0);
  EXPECT_EQ(filled.value(0, 0), 1.0);
}

TEST(InitialImpute, ColumnWithoutObservationsIsAnError) {
  const auto ds = Dataset::dense(2, 2, {1, 0, 2, 0}, {}, std::nullopt, {{0, 1}, {1, 1}});
  EXPECT_EQ(kind_of([&] { initial_impute(ds); }), ErrorKind::imputation);
  EXPECT_EQ(kind_of([&] { impute(ds, quick(ImputeMethod::breiman_cutler)); }), ErrorKind::imputation);
}

TEST(BreimanCutler, ProximityWeightedMeanOfObservedDonors) {
  // f0 = {1, 0, 2, 9}; f1 = {NA, 2, 4, NA}. Tree A splits f0 at 1.5, tree B at 0.5.
  const auto original = Dataset::dense(4, 2, {1, 0, 0, 2, 2, 4, 9, 0}, {}, make_class_target({0, 0, 1, 1}),
                                       {{0, 1}, {3, 1}});
  const auto current = initial_impute(original);
  const auto f = toy::assemble(current, {toy::stump(0, 1.5, {1, 1}, {1, 1}), toy::stump(0, 0.5, {1, 1}, {1, 1})},
                               {{1, 1, 1, 1}, {1, 1, 1, 1}});
  const auto res = run_pass(&detail::reimpute_breiman_cutler, f, original);
  // Row 0: prox 0.5 to row 1 (value 2) and 0.5 to row 2 (value 4); row 3 is itself missing.
  EXPECT_EQ(res.values[0], 3.0);
  // Row 3: only row 2 is an observed co-member.
  EXPECT_EQ(res.values[1], 4.0);
  EXPECT_EQ(res.fallback, (std::vector<std::uint8_t>{0, 0}));
}

TEST(BreimanCutler, WeightedModeAndFallback) {
  // Categorical f1 = {NA, b, a, a, NA}; row 4 sits alone in every tree.
  const auto original = Dataset::dense(5, 2, {0, 0, 0, 1, 1, 0, 1, 0, 9, 2}, cont_cat_schema(),
                                       make_class_target({0, 0, 1, 1, 1}), {{0, 1}, {4, 1}});
  const auto current = initial_impute(original);
  const auto f = toy::assemble(
      current, {toy::two_level(0, 0.5, 0, 5, {{1, 1}, {1, 1}, {1, 1}}), toy::two_level(0, 5, 0, 10, {{1, 1}, {1, 1}, {1, 1}})},
      {{1, 1, 1, 1, 1}, {1, 1, 1, 1, 1}});
  const auto res = run_pass(&detail::reimpute_breiman_cutler, f, original);
  // Row 0: weight 1 for code b (row 1), 0.5 + 0.5 for code a (rows 2, 3): tie goes to the lower code, a.
  EXPECT_EQ(res.values[0], 0.0);
  // Row 4 shares a leaf with no observed row: keeps its current fill and is flagged.
  EXPECT_EQ(res.values[1], current.value(4, 1));
  EXPECT_EQ(res.fallback, (std::vector<std::uint8_t>{0, 1}));
}

TEST(Young, AveragesPerTreeLeafMeans) {
  // x = f1 with row 0 missing; f0 drives tree A, f2 drives tree B.
  const auto original = Dataset::dense(4, 3, {0, 0, 0, 0, 2, 1, 0, 4, 1, 1, 5, 0},
                                       {}, make_class_target({0, 0, 1, 1}), {{0, 1}});
  const auto current = initial_impute(original);
  auto trees = std::vector<Tree>{toy::stump(0, 0.5, {1, 1}, {1, 1}), toy::stump(2, 0.5, {1, 1}, {1, 1})};
  // Tree A: row 0 with rows 1, 2 (values 2, 4) -> 3. Tree B: row 0 with row 3 (value 5) -> 5.
  const auto f = toy::assemble(current, trees, {{0, 1, 1, 1}, {0, 1, 1, 1}});
  EXPECT_EQ(run_pass(&detail::reimpute_young, f, original).values[0], 4.0);
  // In-bag trees contribute nothing: with row 0 in-bag in tree B only tree A counts.
  const auto g = toy::assemble(current, trees, {{0, 1, 1, 1}, {1, 1, 1, 1}});
  EXPECT_EQ(run_pass(&detail::reimpute_young, g, original).values[0], 3.0);
  // No OOB tree at all: falls back to the current value.
  const auto h = toy::assemble(current, trees, {{1, 1, 1, 1}, {1, 1, 1, 1}});
  const auto res = run_pass(&detail::reimpute_young, h, original);
  EXPECT_EQ(res.values[0], current.value(0, 1));
  EXPECT_EQ(res.fallback[0], 1);
}

TEST(Young, CategoricalMajorityOfTreeModes) {
  // c = {NA, b, b, a, a, a}. Each OOB tree votes with the mode of row 0's leaf-mates.
  const auto original = Dataset::dense(6, 3,
                                       {0, 0, 0,  //
                                        0, 1, 0,  //
                                        0, 1, 1,  //
                                        1, 0, 0,  //
                                        1, 0, 0,  //
                                        1, 0, 0},
                                       FeatureSchema({FeatureSpec{"p", FeatureKind::continuous, {}},
                                                      FeatureSpec{"c", FeatureKind::categorical, {"a", "b"}},
                                                      FeatureSpec{"q", FeatureKind::continuous, {}}}),
                                       make_class_target({0, 0, 0, 1, 1, 1}), {{0, 1}});
  const auto current = initial_impute(original);
  const auto f = toy::assemble(current,
                               {toy::stump(0, 0.5, {1, 1}, {1, 1}), toy::stump(2, 0.5, {1, 1}, {1, 1}),
                                toy::root_leaf({1, 1})},
                               {{0, 1, 1, 1, 1, 1}, {0, 1, 1, 1, 1, 1}, {0, 1, 1, 1, 1, 1}});
  // Tree A: rows 1, 2 -> b. Tree B: rows 1, 3, 4, 5 -> a. Root leaf: rows 1..5 -> a (3 vs 2).
  EXPECT_EQ(run_pass(&detail::reimpute_young, f, original).values[0], 0.0);
  const auto g = toy::assemble(current,
                               {toy::stump(0, 0.5, {1, 1}, {1, 1}), toy::stump(0, 0.5, {1, 1}, {1, 1}),
                                toy::root_leaf({1, 1})},
                               {{0, 1, 1, 1, 1, 1}, {0, 1, 1, 1, 1, 1}, {0, 1, 1, 1, 1, 1}});
  // Two trees vote b from rows 1, 2 alone and the root leaf votes a.
  EXPECT_EQ(run_pass(&detail::reimpute_young, g, original).values[0], 1.0);
}

TEST(Impute, ObservedCellsUntouchedAndValuesInRangeProperty) {
  for (std::uint64_t seed = 1; seed <= 4; ++seed) {
    Rng rng(seed);
    const std::size_t n = 60, m = 4;
    auto x = synth::latent_rows(n, m, 0.3, rng);
    std::vector<FeatureSpec> specs;
    for (std::size_t f = 0; f < 3; ++f) specs.push_back({"x" + std::to_string(f), FeatureKind::continuous, {}});
    specs.push_back({"c", FeatureKind::categorical, {"lo", "mid", "hi"}});
    for (std::size_t i = 0; i < n; ++i) x[i * m + 3] = x[i * m] < -0.5 ? 0 : (x[i * m] < 0.5 ? 1 : 2);
    const auto original = Dataset::dense(n, m, x, FeatureSchema(specs), std::nullopt, synth::mcar(n, m, 0.15, seed));
    for (auto method : {ImputeMethod::breiman_cutler, ImputeMethod::young}) {
      const auto res = impute(original, quick(method, 20));
      ASSERT_EQ(res.data.n_missing(), 0u);
      ASSERT_GE(res.trace.size(), 1u);
      EXPECT_LE(res.trace.size(), 6u);
      for (std::size_t f = 0; f < m; ++f) {
        double lo = INFINITY, hi = -INFINITY;
        for (std::size_t i = 0; i < n; ++i)
          if (!original.is_missing(i, f)) {
            lo = std::min(lo, original.value(i, f));
            hi = std::max(hi, original.value(i, f));
          }
        for (std::size_t i = 0; i < n; ++i) {
          if (!original.is_missing(i, f)) {
            ASSERT_EQ(res.data.value(i, f), original.value(i, f));
          } else {
            ASSERT_GE(res.data.value(i, f), lo);
            ASSERT_LE(res.data.value(i, f), hi);
            if (f == 3) {
              ASSERT_EQ(res.data.value(i, f), std::round(res.data.value(i, f)));
            }
          }
        }
      }
    }
  }
}

TEST(Impute, CompleteInputIsReturnedUnchanged) {
  const auto ds = synth::latent(30, 3, 0.2, 1);
  const auto res = impute(ds, quick(ImputeMethod::breiman_cutler));
  EXPECT_EQ(fingerprint(res.data), fingerprint(ds));
  ASSERT_EQ(res.trace.size(), 1u);
  EXPECT_EQ(res.trace[0].iter, 1u);
  EXPECT_EQ(res.trace[0].max_rel_change, 0.0);
  EXPECT_TRUE(res.converged);
}

TEST(Impute, DeterministicAcrossThreads) {
  const auto ds = synth::latent(50, 3, 0.2, 2).with_missing(synth::mcar(50, 3, 0.1, 7));
  auto a = quick(ImputeMethod::breiman_cutler, 15);
  auto b = a;
  b.threads = 4;
  const auto ra = impute(ds, a), rb = impute(ds, b);
  EXPECT_EQ(ra.data.dense_values(), rb.data.dense_values());
  EXPECT_EQ(ra.trace.size(), rb.trace.size());
}

TEST(Impute, TraceStopsAtIterationCapOrTolerance) {
  const auto ds = synth::latent(50, 3, 0.2, 3).with_missing(synth::mcar(50, 3, 0.1, 8));
  auto cfg = quick(ImputeMethod::young, 15);
  cfg.max_iters = 2;
  const auto capped = impute(ds, cfg);
  EXPECT_EQ(capped.trace.size(), 2u);
  EXPECT_EQ(capped.trace[1].iter, 2u);
  cfg.max_iters = 6;
  cfg.tol = 1e9;
  const auto loose = impute(ds, cfg);
  EXPECT_EQ(loose.trace.size(), 1u);
  EXPECT_TRUE(loose.converged);
  cfg.max_iters = 0;
  EXPECT_THROW(impute(ds, cfg), Error);
}

TEST(Impute, BeatsMedianFillOnDependentColumns) {
  const auto truth = synth::latent(150, 4, 0.1, 5);
  const auto cells = synth::mcar(150, 4, 0.2, 5);
  const auto masked = truth.with_missing(cells);
  const auto median_fill = initial_impute(masked);
  const auto bc = impute(masked, quick(ImputeMethod::breiman_cutler, 50));
  auto rmse = [&](const Dataset& d) {
    double s = 0.0;
    for (const auto& c : cells) s += std::pow(d.value(c.row, c.feature) - truth.value(c.row, c.feature), 2);
    return std::sqrt(s / cells.size());
  };
  EXPECT_LT(rmse(bc.data), 0.7 * rmse(median_fill));
}

TEST(Validator, RanksFaithfulCandidatesFirstAndKeepsTieOrder) {
  const auto reference = synth::dependent_pair(200, 3, 0.05, 4);
  const auto shuffled = synth::column_shuffled(reference, 9);
  ForestConfig cfg;
  cfg.n_trees = 50;
  cfg.seed = 2;
  const auto report = validate_imputations(
      reference, {{"shuffled", shuffled}, {"same_a", reference}, {"same_b", reference}}, cfg, 1);
  ASSERT_EQ(report.candidates.size(), 3u);
  EXPECT_EQ(report.ranking, (std::vector<std::size_t>{1, 2, 0}));
  EXPECT_EQ(report.candidates[1].rank, 1u);
  EXPECT_EQ(report.candidates[2].rank, 2u);
  EXPECT_EQ(report.candidates[0].rank, 3u);
  EXPECT_EQ(report.candidates[1].mean_p_synthetic, report.candidates[2].mean_p_synthetic);
  EXPECT_GT(report.candidates[0].mean_p_synthetic, report.candidates[1].mean_p_synthetic);
  EXPECT_EQ(report.reference_fingerprint, fingerprint(reference));
}

TEST(Validator, Errors) {
  const auto reference = synth::iid(20, 3, 1);
  EXPECT_EQ(kind_of([&] { validate_imputations(reference.with_missing({{0, 0}}), {}); }), ErrorKind::precondition);
  EXPECT_EQ(kind_of([&] { validate_imputations(reference, {{"small", synth::iid(19, 3, 1)}}); }), ErrorKind::argument);
  const auto renamed = Dataset::dense(20, 3, reference.dense_values(), FeatureSchema::all_continuous({"a", "b", "c"}));
  EXPECT_EQ(kind_of([&] { validate_imputations(reference, {{"renamed", renamed}}); }), ErrorKind::argument);
}

TEST(BreimanCutler, WeightedModeIsArgmaxWithLowCodeTies) {
  EXPECT_EQ(detail::weighted_mode(std::vector<double>{0.9, 0.3}), 0.0);
  EXPECT_EQ(detail::weighted_mode(std::vector<double>{0.3, 0.9}), 1.0);
  EXPECT_EQ(detail::weighted_mode(std::vector<double>{0.5, 0.5}), 0.0);
}
