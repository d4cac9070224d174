#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <map>
#include <numeric>
#include <ostream>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "forestfuse/dataset.hpp"
#include "forestfuse/error.hpp"
#include "forestfuse/forest.hpp"
#include "forestfuse/parallel.hpp"
#include "forestfuse/proximity.hpp"
#include "forestfuse/stats.hpp"

namespace forestfuse {

enum class ImputeMethod { breiman_cutler, young };

struct ImputationConfig {
  ImputeMethod method = ImputeMethod::breiman_cutler;
  std::size_t max_iters = 6;
  double tol = 1e-3;
  ForestConfig forest_config = [] {
    ForestConfig c;
    c.mode = Mode::unsupervised;
    return c;
  }();
  unsigned threads = 0;
};

struct IterationTrace {
  std::size_t iter = 0;
  double max_rel_change = 0.0;
  std::size_t n_categorical_changes = 0;
};

struct ImputationResult {
  Dataset data;  // complete; observed cells identical to the input
  std::vector<IterationTrace> trace;
  bool converged = false;
  std::vector<Cell> fallback_cells;  // cells with no usable donors in the final iteration
};

namespace detail {

struct ColumnSummary {
  std::vector<double> observed;
  double fill = 0.0;   // median (continuous) or mode (categorical)
  double scale = 1.0;  // IQR, else range, else 1: denominator of the change metric
};

inline ColumnSummary summarize_column(const Dataset& ds, std::size_t f) {
  ColumnSummary s;
  for (std::size_t r = 0; r < ds.n_rows(); ++r)
    if (!ds.is_missing(r, f)) s.observed.push_back(ds.value(r, f));
  if (s.observed.empty())
    throw Error(ErrorKind::imputation, "feature '" + ds.schema()[f].name + "' has no observed values");
  if (ds.schema().is_categorical(f)) {
    std::vector<std::size_t> counts(ds.schema()[f].categories.size(), 0);
    for (double v : s.observed) ++counts[static_cast<std::size_t>(v)];
    s.fill = static_cast<double>(std::max_element(counts.begin(), counts.end()) - counts.begin());
  } else {
    s.fill = stats::median(s.observed);
    const double iqr = stats::quantile(s.observed, 0.75) - stats::quantile(s.observed, 0.25);
    const auto [lo, hi] = std::minmax_element(s.observed.begin(), s.observed.end());
    s.scale = iqr > 0.0 ? iqr : (*hi > *lo ? *hi - *lo : 1.0);
  }
  return s;
}

// Cells grouped by row, in the dataset's sorted missing-mask order.
inline std::map<std::size_t, std::vector<std::size_t>> missing_by_row(const std::vector<Cell>& cells) {
  std::map<std::size_t, std::vector<std::size_t>> rows;
  for (std::size_t c = 0; c < cells.size(); ++c) rows[cells[c].row].push_back(c);
  return rows;
}

inline ForestConfig inner_forest_config(const Dataset& ds, const ImputationConfig& cfg) {
  ForestConfig fc = cfg.forest_config;
  if (fc.mode != Mode::unsupervised && !ds.has_target())
    throw Error(ErrorKind::config, "supervised imputation forests need a target; use unsupervised mode");
  return fc;
}

inline void check_config(const ImputationConfig& cfg) {
  if (cfg.max_iters < 1) throw Error(ErrorKind::config, "max_iters must be >= 1");
  if (!(cfg.tol > 0.0)) throw Error(ErrorKind::config, "tol must be > 0");
}

// Argmax of per-code weights; ties to the lowest code.
inline double weighted_mode(std::span<const double> weights) {
  return static_cast<double>(std::max_element(weights.begin(), weights.end()) - weights.begin());
}

}  // namespace detail

// Column median (continuous) or mode (categorical, ties to the lowest code)
// over observed values. The result carries no missing mask; the caller keeps
// the original dataset to know which cells were filled.
inline Dataset initial_impute(const Dataset& ds) {
  if (ds.n_missing() == 0) return ds;
  const auto cells = ds.missing_cells();
  std::map<std::size_t, double> fill;
  for (const auto& c : cells)
    if (!fill.count(c.feature)) fill[c.feature] = detail::summarize_column(ds, c.feature).fill;
  std::vector<double> values;
  values.reserve(cells.size());
  for (const auto& c : cells) values.push_back(fill[c.feature]);
  return ds.with_values(cells, values);
}

namespace detail {

// One re-imputation pass: returns new values for `cells` given the forest
// trained on the current completed data.
using Reimpute = std::vector<double> (*)(const Forest&, const LeafIndex&, const Dataset& original,
                                         const Dataset& current, const std::vector<Cell>& cells,
                                         std::vector<std::uint8_t>& fallback, unsigned threads);

// Proximity-weighted mean / mode over donors whose value is observed in the
// original data. Proximities come from the leaf index (same values as the
// pair_mode=all matrix) so no n x n matrix is needed.
inline std::vector<double> reimpute_breiman_cutler(const Forest& forest, const LeafIndex& index, const Dataset& original,
                                                   const Dataset& current, const std::vector<Cell>& cells,
                                                   std::vector<std::uint8_t>& fallback, unsigned threads) {
  const auto by_row = missing_by_row(cells);
  std::vector<std::pair<std::size_t, std::vector<std::size_t>>> work(by_row.begin(), by_row.end());
  std::vector<double> out(cells.size());
  const std::size_t n = original.n_rows();
  parallel_for(work.size(), threads, [&](std::size_t w) {
    const auto& [i, cell_ids] = work[w];
    std::vector<std::uint32_t> counts(n, 0);
    std::vector<std::uint32_t> touched;
    for (std::size_t t = 0; t < forest.n_trees(); ++t)
      for (auto j : index.postings(t, forest.leaf(i, t)))
        if (counts[j]++ == 0) touched.push_back(j);
    std::sort(touched.begin(), touched.end());
    const auto n_trees = static_cast<double>(forest.n_trees());
    for (auto c : cell_ids) {
      const std::size_t k = cells[c].feature;
      const bool categorical = original.schema().is_categorical(k);
      std::vector<double> code_weight(categorical ? original.schema()[k].categories.size() : 0, 0.0);
      double wsum = 0.0, vsum = 0.0;
      for (auto j : touched) {
        if (j == i || original.is_missing(j, k)) continue;
        const double p = static_cast<double>(counts[j]) / n_trees;
        const double x = original.value(j, k);
        wsum += p;
        if (categorical)
          code_weight[static_cast<std::size_t>(x)] += p;
        else
          vsum += p * x;
      }
      if (wsum > 0.0) {
        out[c] = categorical ? weighted_mode(code_weight) : vsum / wsum;
      } else {
        out[c] = current.value(i, k);
        fallback[c] = 1;
      }
    }
  });
  return out;
}

// Per OOB tree: mean (continuous) or mode (categorical) of observed values of
// the other rows in i's leaf; aggregated by averaging (continuous) or a
// majority vote of per-tree modes (categorical).
inline std::vector<double> reimpute_young(const Forest& forest, const LeafIndex& index, const Dataset& original,
                                          const Dataset& current, const std::vector<Cell>& cells,
                                          std::vector<std::uint8_t>& fallback, unsigned threads) {
  std::vector<double> out(cells.size());
  parallel_for(cells.size(), threads, [&](std::size_t c) {
    const std::size_t i = cells[c].row;
    const std::size_t k = cells[c].feature;
    const bool categorical = original.schema().is_categorical(k);
    const std::size_t n_codes = categorical ? original.schema()[k].categories.size() : 0;
    std::vector<double> votes(n_codes, 0.0);
    std::vector<double> per_tree_counts(n_codes, 0.0);
    double estimate_sum = 0.0;
    std::size_t n_estimates = 0;
    for (std::size_t t = 0; t < forest.n_trees(); ++t) {
      if (!forest.is_oob(i, t)) continue;
      double sum = 0.0;
      std::size_t donors = 0;
      std::fill(per_tree_counts.begin(), per_tree_counts.end(), 0.0);
      for (auto j : index.postings(t, forest.leaf(i, t))) {
        if (j == i || original.is_missing(j, k)) continue;
        const double x = original.value(j, k);
        ++donors;
        if (categorical)
          per_tree_counts[static_cast<std::size_t>(x)] += 1.0;
        else
          sum += x;
      }
      if (donors == 0) continue;
      ++n_estimates;
      if (categorical)
        votes[static_cast<std::size_t>(weighted_mode(per_tree_counts))] += 1.0;
      else
        estimate_sum += sum / static_cast<double>(donors);
    }
    if (n_estimates == 0) {
      out[c] = current.value(i, k);
      fallback[c] = 1;
    } else {
      out[c] = categorical ? weighted_mode(votes) : estimate_sum / static_cast<double>(n_estimates);
    }
  });
  return out;
}

inline ImputationResult run_imputation(const Dataset& ds, const ImputationConfig& cfg, Reimpute reimpute) {
  check_config(cfg);
  ImputationResult result;
  if (ds.n_missing() == 0) {
    result.data = ds;
    result.trace.push_back({1, 0.0, 0});
    result.converged = true;
    return result;
  }
  const ForestConfig base = inner_forest_config(ds, cfg);
  const auto cells = ds.missing_cells();
  std::map<std::size_t, double> scale;
  for (const auto& c : cells)
    if (!scale.count(c.feature)) scale[c.feature] = summarize_column(ds, c.feature).scale;

  Dataset current = initial_impute(ds);
  std::vector<double> values(cells.size());
  for (std::size_t c = 0; c < cells.size(); ++c) values[c] = current.value(cells[c].row, cells[c].feature);

  // Every iteration reuses one inner seed: bootstrap draws and candidate
  // features then stay fixed, so only the imputed values move the forest.
  ForestConfig fc = base;
  fc.seed = derive_key(base.seed, stream::imputation);
  std::vector<std::uint8_t> fallback(cells.size(), 0);
  for (std::size_t iter = 1; iter <= cfg.max_iters; ++iter) {
    const Forest forest = train(current, fc, cfg.threads);
    const LeafIndex index = build_leaf_index(forest, cfg.threads);
    std::fill(fallback.begin(), fallback.end(), 0);
    const auto updated = reimpute(forest, index, ds, current, cells, fallback, cfg.threads);

    IterationTrace tr;
    tr.iter = iter;
    for (std::size_t c = 0; c < cells.size(); ++c) {
      const std::size_t k = cells[c].feature;
      if (ds.schema().is_categorical(k)) {
        if (updated[c] != values[c]) ++tr.n_categorical_changes;
      } else {
        tr.max_rel_change = std::max(tr.max_rel_change, std::fabs(updated[c] - values[c]) / scale[k]);
      }
    }
    values = updated;
    current = current.with_values(cells, values);
    result.trace.push_back(tr);
    if (tr.max_rel_change < cfg.tol && tr.n_categorical_changes == 0) {
      result.converged = true;
      break;
    }
  }
  for (std::size_t c = 0; c < cells.size(); ++c)
    if (fallback[c]) result.fallback_cells.push_back(cells[c]);
  result.data = std::move(current);
  return result;
}

}  // namespace detail

// Iterative proximity-weighted imputation: median/mode start, then train,
// compute proximities, re-impute every originally missing cell, repeat until
// the change metric drops below tol or max_iters is reached.
inline ImputationResult impute_breiman_cutler(const Dataset& ds, const ImputationConfig& cfg = {}) {
  return detail::run_imputation(ds, cfg, &detail::reimpute_breiman_cutler);
}

// Iterative imputation from out-of-bag leaf co-members only.
inline ImputationResult impute_young(const Dataset& ds, const ImputationConfig& cfg = {}) {
  return detail::run_imputation(ds, cfg, &detail::reimpute_young);
}

inline ImputationResult impute(const Dataset& ds, const ImputationConfig& cfg = {}) {
  return cfg.method == ImputeMethod::young ? impute_young(ds, cfg) : impute_breiman_cutler(ds, cfg);
}

// ---------------------------------------------------------------------------
// Ground-truth-free validation
// ---------------------------------------------------------------------------

struct NamedDataset {
  std::string name;
  Dataset data;
};

struct CandidateScore {
  std::string name;
  double mean_p_synthetic = 0.0;
  std::size_t rank = 0;  // 1 = most "real"
};

struct ValidationReport {
  std::vector<CandidateScore> candidates;  // input order
  std::vector<std::size_t> ranking;        // candidate indices, ascending mean P(synthetic)
  double reference_oob = 0.0;
  std::uint64_t reference_fingerprint = 0;
};

// One unsupervised forest trained on the complete reference scores every
// candidate; imputations that distort the dependency structure look more
// synthetic. Ties in mean P(synthetic) keep input order.
inline ValidationReport validate_imputations(const Dataset& reference, const std::vector<NamedDataset>& candidates,
                                             ForestConfig forest_config = {}, unsigned threads = 0) {
  if (reference.n_missing() > 0) throw Error(ErrorKind::precondition, "reference data must be complete");
  for (const auto& c : candidates) {
    if (c.data.n_rows() != reference.n_rows() || c.data.n_features() != reference.n_features())
      throw Error(ErrorKind::argument, "candidate '" + c.name + "' shape differs from the reference");
    if (!(c.data.schema() == reference.schema()))
      throw Error(ErrorKind::argument, "candidate '" + c.name + "' schema differs from the reference");
  }
  forest_config.mode = Mode::unsupervised;
  const Forest forest = train(reference.with_target(std::nullopt), forest_config, threads);

  ValidationReport report;
  report.reference_oob = forest.oob_error;
  report.reference_fingerprint = forest.data_fingerprint;
  report.candidates.resize(candidates.size());
  parallel_for(candidates.size(), threads, [&](std::size_t c) {
    const auto pred = predict(forest, candidates[c].data, 1);
    double s = 0.0;
    for (std::size_t r = 0; r < pred.n_rows; ++r) s += pred.p_synthetic(r);
    report.candidates[c].name = candidates[c].name;
    report.candidates[c].mean_p_synthetic = pred.n_rows ? s / static_cast<double>(pred.n_rows) : 0.0;
  });
  report.ranking.resize(candidates.size());
  std::iota(report.ranking.begin(), report.ranking.end(), std::size_t{0});
  std::stable_sort(report.ranking.begin(), report.ranking.end(), [&](std::size_t a, std::size_t b) {
    return report.candidates[a].mean_p_synthetic < report.candidates[b].mean_p_synthetic;
  });
  for (std::size_t r = 0; r < report.ranking.size(); ++r) report.candidates[report.ranking[r]].rank = r + 1;
  return report;
}

}  // namespace forestfuse
