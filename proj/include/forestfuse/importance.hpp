#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <ostream>
#include <span>
#include <string>
#include <vector>

#include "forestfuse/dataset.hpp"
#include "forestfuse/error.hpp"
#include "forestfuse/forest.hpp"
#include "forestfuse/parallel.hpp"
#include "forestfuse/rng.hpp"

namespace forestfuse {

// How replacement values for a permuted feature are chosen.
//   random:     `repetitions` uniform donor rows per (sample, tree, feature)
//   exhaustive: every training row once, each weighted 1/n (the expectation
//               the random scheme estimates)
enum class DonorScheme { random, exhaustive };

struct ImportanceOptions {
  std::size_t repetitions = 1;
  DonorScheme donors = DonorScheme::random;
  std::optional<std::uint64_t> seed;  // defaults to the forest seed
  unsigned threads = 0;
};

enum class VariableImportanceMethod { permutation, split_gain };

// Dense row-major n x m matrix.
struct ImportanceMatrix {
  std::size_t n_rows = 0;
  std::size_t n_features = 0;
  std::vector<double> values;

  double operator()(std::size_t i, std::size_t k) const { return values[i * n_features + k]; }
  std::span<const double> row(std::size_t i) const {
    return std::span<const double>(values).subspan(i * n_features, n_features);
  }
};

struct LocalImportance {
  ImportanceMatrix proximity;  // Pi: share of counted trees where permuting k moves i to another leaf
  ImportanceMatrix variable;   // share of counted trees where permuting k breaks i's prediction
  std::vector<std::uint32_t> n_effective;  // |counted trees| per sample; 0 => zero row, flagged
};

struct ImportanceReport {
  std::vector<double> overall_var;
  std::vector<double> overall_prox;
  ImportanceMatrix local_var;
  ImportanceMatrix local_prox;
  std::vector<std::uint32_t> n_effective;

  std::vector<std::size_t> flagged_rows() const {
    std::vector<std::size_t> rows;
    for (std::size_t i = 0; i < n_effective.size(); ++i)
      if (n_effective[i] == 0) rows.push_back(i);
    return rows;
  }
};

namespace detail {

inline std::uint64_t importance_seed(const Forest& forest, const ImportanceOptions& opts) {
  return opts.seed.value_or(forest.config.seed);
}

inline void check_repetitions(const ImportanceOptions& opts) {
  if (opts.donors == DonorScheme::random && opts.repetitions == 0)
    throw Error(ErrorKind::config, "importance repetitions must be >= 1");
}

// Draws per (sample, tree, feature): the repetition count, or every row.
inline std::size_t donors_per_feature(const ImportanceOptions& opts, std::size_t n_donors) {
  return opts.donors == DonorScheme::exhaustive ? n_donors : opts.repetitions;
}

template <class Visit>
void for_each_donor(const ImportanceOptions& opts, std::size_t n_donors, Rng& rng, Visit&& visit) {
  if (opts.donors == DonorScheme::exhaustive) {
    for (std::size_t j = 0; j < n_donors; ++j) visit(j);
    return;
  }
  for (std::size_t rep = 0; rep < opts.repetitions; ++rep) visit(rng.uniform_index(n_donors));
}

}  // namespace detail

// Local proximity importance and local variable importance for every real
// training row. Both use the same trees (OOB and correctly predicted for
// classification/unsupervised; all OOB trees for regression) and the same
// donor draws; they differ only in the signal: leaf change vs prediction
// breaking. Donors are uniform over the feature's training values.
inline LocalImportance local_importance(const Forest& forest, const Dataset& ds, const ImportanceOptions& opts = {}) {
  require_training_data(forest, ds);
  detail::check_repetitions(opts);
  const std::size_t n = ds.n_rows();
  const std::size_t m = ds.n_features();
  const std::uint64_t seed = detail::importance_seed(forest, opts);
  const bool classifier = forest.is_classifier();
  // Real rows are class 0 in unsupervised mode.
  std::vector<double> labels(n, 0.0);
  if (forest.config.mode != Mode::unsupervised) labels = ds.target()->values;

  LocalImportance out;
  out.proximity = {n, m, std::vector<double>(n * m, 0.0)};
  out.variable = {n, m, std::vector<double>(n * m, 0.0)};
  out.n_effective.assign(n, 0);

  parallel_for(n, opts.threads, [&](std::size_t i) {
    std::vector<double> x = ds.row(i);
    auto prox_row = std::span<double>(out.proximity.values).subspan(i * m, m);
    auto var_row = std::span<double>(out.variable.values).subspan(i * m, m);
    const double y = labels[i];
    std::uint32_t counted = 0;
    for (std::size_t t = 0; t < forest.n_trees(); ++t) {
      if (!forest.is_oob(i, t)) continue;
      const Tree& tree = forest.trees[t];
      const std::uint32_t leaf0 = forest.leaf(i, t);
      double base_err = 0.0;
      if (classifier) {
        if (tree.leaf_class(leaf0) != static_cast<int>(y)) continue;
      } else {
        const double d = tree.leaf_value(leaf0)[0] - y;
        base_err = d * d;
      }
      ++counted;
      Rng rng(derive_key(seed, {stream::donor, i, t}));
      for (std::size_t k = 0; k < m; ++k) {
        const double original = x[k];
        detail::for_each_donor(opts, n, rng, [&](std::size_t donor) {
          x[k] = ds.value(donor, k);
          const std::uint32_t leaf = tree.leaf_of(std::span<const double>(x));
          if (leaf == leaf0) return;
          prox_row[k] += 1.0;
          bool broken;
          if (classifier) {
            broken = tree.leaf_class(leaf) != static_cast<int>(y);
          } else {
            const double d = tree.leaf_value(leaf)[0] - y;
            broken = d * d > base_err;
          }
          if (broken) var_row[k] += 1.0;
        });
        x[k] = original;
      }
    }
    out.n_effective[i] = counted;
    if (counted > 0) {
      const double draws = static_cast<double>(detail::donors_per_feature(opts, n) * counted);
      for (std::size_t k = 0; k < m; ++k) {
        prox_row[k] /= draws;
        var_row[k] /= draws;
      }
    }
  });
  return out;
}

inline ImportanceMatrix local_proximity_importance(const Forest& forest, const Dataset& ds,
                                                   const ImportanceOptions& opts = {}) {
  return local_importance(forest, ds, opts).proximity;
}

inline ImportanceMatrix local_variable_importance(const Forest& forest, const Dataset& ds,
                                                  const ImportanceOptions& opts = {}) {
  return local_importance(forest, ds, opts).variable;
}

// Column sums of Pi (unnormalized: scale grows with the sample count).
inline std::vector<double> overall_proximity_importance(const ImportanceMatrix& pi) {
  std::vector<double> overall(pi.n_features, 0.0);
  for (std::size_t i = 0; i < pi.n_rows; ++i)
    for (std::size_t k = 0; k < pi.n_features; ++k) overall[k] += pi(i, k);
  return overall;
}

inline std::vector<double> overall_proximity_importance(const Forest& forest, const Dataset& ds,
                                                        const ImportanceOptions& opts = {}) {
  return overall_proximity_importance(local_proximity_importance(forest, ds, opts));
}

// Total weighted criterion decrease per feature across all splits, normalized
// to sum to 1 (all zeros if the forest has no splits).
inline std::vector<double> split_gain_importance(const Forest& forest) {
  std::vector<double> gain(forest.n_features, 0.0);
  for (const auto& tree : forest.trees)
    for (const auto& node : tree.nodes)
      if (!node.is_leaf()) gain[static_cast<std::size_t>(node.feature)] += node.gain;
  double total = 0.0;
  for (double g : gain) total += g;
  if (total > 0.0)
    for (double& g : gain) g /= total;
  return gain;
}

// Mean over trees of the OOB accuracy decrease (classification/unsupervised)
// or MSE increase (regression) when feature k is permuted among the tree's
// OOB rows. Unsupervised forests are scored on real + synthetic rows.
inline std::vector<double> permutation_importance(const Forest& forest, const Dataset& ds,
                                                  const ImportanceOptions& opts = {}) {
  require_training_data(forest, ds);
  const TrainingView view(ds, forest.config);
  const Dataset& data = view.data();
  const auto& labels = view.labels();
  const std::size_t m = forest.n_features;
  const std::uint64_t seed = detail::importance_seed(forest, opts);
  const bool classifier = forest.is_classifier();

  std::vector<std::vector<double>> per_tree(forest.n_trees());
  parallel_for(forest.n_trees(), opts.threads, [&](std::size_t t) {
    const Tree& tree = forest.trees[t];
    std::vector<std::uint32_t> oob;
    for (std::size_t r = 0; r < forest.n_train; ++r)
      if (forest.is_oob(r, t)) oob.push_back(static_cast<std::uint32_t>(r));
    if (oob.empty()) return;
    auto loss_of = [&](std::uint32_t leaf, double y) {
      if (classifier) return tree.leaf_class(leaf) != static_cast<int>(y) ? 1.0 : 0.0;
      const double d = tree.leaf_value(leaf)[0] - y;
      return d * d;
    };
    double base = 0.0;
    for (auto r : oob) base += loss_of(forest.leaf(r, t), labels[r]);
    auto& scores = per_tree[t];
    scores.assign(m, 0.0);
    std::vector<std::uint32_t> perm(oob.size());
    std::vector<double> x(m);
    for (std::size_t k = 0; k < m; ++k) {
      std::copy(oob.begin(), oob.end(), perm.begin());
      Rng rng(derive_key(seed, {stream::permutation, t, k}));
      rng.shuffle(std::span<std::uint32_t>(perm));
      double permuted = 0.0;
      for (std::size_t p = 0; p < oob.size(); ++p) {
        data.fill_row(oob[p], x);
        x[k] = data.value(perm[p], k);
        permuted += loss_of(tree.leaf_of(std::span<const double>(x)), labels[oob[p]]);
      }
      scores[k] = (permuted - base) / static_cast<double>(oob.size());
    }
  });

  std::vector<double> overall(m, 0.0);
  std::size_t used = 0;
  for (const auto& scores : per_tree) {
    if (scores.empty()) continue;
    ++used;
    for (std::size_t k = 0; k < m; ++k) overall[k] += scores[k];
  }
  if (used > 0)
    for (double& v : overall) v /= static_cast<double>(used);
  return overall;
}

inline std::vector<double> overall_variable_importance(const Forest& forest, const Dataset& ds,
                                                       VariableImportanceMethod method,
                                                       const ImportanceOptions& opts = {}) {
  switch (method) {
    case VariableImportanceMethod::permutation: return permutation_importance(forest, ds, opts);
    case VariableImportanceMethod::split_gain: return split_gain_importance(forest);
  }
  throw Error(ErrorKind::config, "unknown variable importance method");
}

inline VariableImportanceMethod parse_importance_method(const std::string& name) {
  if (name == "permutation") return VariableImportanceMethod::permutation;
  if (name == "split_gain" || name == "split-gain") return VariableImportanceMethod::split_gain;
  throw Error(ErrorKind::config, "unknown variable importance method '" + name + "'");
}

inline ImportanceReport compute_importance(const Forest& forest, const Dataset& ds,
                                           VariableImportanceMethod method = VariableImportanceMethod::permutation,
                                           const ImportanceOptions& opts = {}) {
  auto local = local_importance(forest, ds, opts);
  ImportanceReport report;
  report.overall_var = overall_variable_importance(forest, ds, method, opts);
  report.overall_prox = overall_proximity_importance(local.proximity);
  report.local_var = std::move(local.variable);
  report.local_prox = std::move(local.proximity);
  report.n_effective = std::move(local.n_effective);
  return report;
}

// Pi for a point outside the training set: every tree counts, donors are
// uniform over the real training rows of ds.
inline std::vector<double> query_proximity_importance(const Forest& forest, const Dataset& ds,
                                                      std::span<const double> query,
                                                      const ImportanceOptions& opts = {}) {
  detail::check_query(forest, query.size());
  if (ds.n_rows() != forest.n_real_rows() || ds.n_features() != forest.n_features)
    throw Error(ErrorKind::provenance, "donor dataset does not match the forest's training data");
  detail::check_repetitions(opts);
  const std::size_t m = forest.n_features;
  const std::size_t n = ds.n_rows();
  const std::uint64_t seed = detail::importance_seed(forest, opts);
  std::vector<double> pi(m, 0.0);
  std::vector<double> x(query.begin(), query.end());
  for (std::size_t t = 0; t < forest.n_trees(); ++t) {
    const Tree& tree = forest.trees[t];
    const std::uint32_t leaf0 = tree.leaf_of(query);
    Rng rng(derive_key(seed, {stream::donor, ~std::uint64_t{0}, t}));
    for (std::size_t k = 0; k < m; ++k) {
      detail::for_each_donor(opts, n, rng, [&](std::size_t donor) {
        x[k] = ds.value(donor, k);
        if (tree.leaf_of(std::span<const double>(x)) != leaf0) pi[k] += 1.0;
      });
      x[k] = query[k];
    }
  }
  const double draws = static_cast<double>(detail::donors_per_feature(opts, n) * forest.n_trees());
  for (double& v : pi) v /= draws;
  return pi;
}

// ---------------------------------------------------------------------------
// CSV
// ---------------------------------------------------------------------------

inline void write_overall_csv(const FeatureSchema& schema, std::span<const double> scores, std::ostream& out) {
  out << "feature,score\n";
  for (std::size_t k = 0; k < scores.size(); ++k) out << schema[k].name << ',' << detail::format_double(scores[k]) << '\n';
}

// Wide matrix with a leading row_id column; only_row restricts output to one row.
inline void write_local_csv(const FeatureSchema& schema, const ImportanceMatrix& mat, std::ostream& out,
                            std::optional<std::size_t> only_row = std::nullopt) {
  out << "row_id";
  for (std::size_t k = 0; k < mat.n_features; ++k) out << ',' << schema[k].name;
  out << '\n';
  for (std::size_t i = 0; i < mat.n_rows; ++i) {
    if (only_row && i != *only_row) continue;
    out << i;
    for (std::size_t k = 0; k < mat.n_features; ++k) out << ',' << detail::format_double(mat(i, k));
    out << '\n';
  }
}

}  // namespace forestfuse
