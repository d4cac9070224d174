#pragma once

#include <algorithm>
#include <cstddef>
#include <cstdint>
#include <ostream>
#include <span>
#include <string>
#include <vector>

#include "forestfuse/dataset.hpp"
#include "forestfuse/error.hpp"
#include "forestfuse/forest.hpp"
#include "forestfuse/importance.hpp"
#include "forestfuse/parallel.hpp"

namespace forestfuse {

// Proximities and the leaf index cover the real training rows only; the
// synthetic half of an unsupervised forest is never a neighbor.

struct ProximityMatrix {
  std::size_t n = 0;
  PairMode pair_mode = PairMode::all;
  std::vector<double> values;  // row-major n x n

  double operator()(std::size_t i, std::size_t j) const { return values[i * n + j]; }
  std::span<const double> row(std::size_t i) const { return std::span<const double>(values).subspan(i * n, n); }
};

inline constexpr std::size_t kDefaultMatrixCap = 20000;

// Inverted index (tree, leaf) -> sorted row ids, stored per tree as CSR-style
// offsets into one row array, so memory is O(n_rows * n_trees).
class LeafIndex {
 public:
  LeafIndex() = default;
  LeafIndex(std::size_t n_rows, std::vector<std::vector<std::uint32_t>> offsets,
            std::vector<std::vector<std::uint32_t>> rows)
      : n_rows_(n_rows), offsets_(std::move(offsets)), rows_(std::move(rows)) {}

  std::size_t n_trees() const noexcept { return offsets_.size(); }
  std::size_t n_rows() const noexcept { return n_rows_; }
  std::size_t n_leaves(std::size_t tree) const { return offsets_.at(tree).size() - 1; }

  std::span<const std::uint32_t> postings(std::size_t tree, std::size_t leaf) const {
    const auto& off = offsets_.at(tree);
    return std::span<const std::uint32_t>(rows_[tree]).subspan(off.at(leaf), off.at(leaf + 1) - off[leaf]);
  }

  const std::vector<std::vector<std::uint32_t>>& offsets() const noexcept { return offsets_; }
  const std::vector<std::vector<std::uint32_t>>& rows() const noexcept { return rows_; }

  bool operator==(const LeafIndex&) const = default;

 private:
  std::size_t n_rows_ = 0;
  std::vector<std::vector<std::uint32_t>> offsets_;
  std::vector<std::vector<std::uint32_t>> rows_;
};

inline LeafIndex build_leaf_index(const Forest& forest, unsigned threads = 0) {
  const std::size_t n = forest.n_real_rows();
  const std::size_t n_trees = forest.n_trees();
  std::vector<std::vector<std::uint32_t>> offsets(n_trees), rows(n_trees);
  parallel_for(n_trees, threads, [&](std::size_t t) {
    auto& off = offsets[t];
    off.assign(forest.trees[t].n_leaves() + 1, 0);
    for (std::size_t r = 0; r < n; ++r) ++off[forest.leaf(r, t) + 1];
    for (std::size_t l = 1; l < off.size(); ++l) off[l] += off[l - 1];
    std::vector<std::uint32_t> cursor(off.begin(), off.end() - 1);
    auto& out = rows[t];
    out.resize(n);
    // Ascending row order within each posting list falls out of the scan.
    for (std::size_t r = 0; r < n; ++r) out[cursor[forest.leaf(r, t)]++] = static_cast<std::uint32_t>(r);
  });
  return LeafIndex(n, std::move(offsets), std::move(rows));
}

// prox(i, j) = co-occurrence count / n_trees (pair_mode all), or restricted to
// trees where both rows are out-of-bag (pair_mode oob; 0 when no such tree).
inline ProximityMatrix compute_proximity(const Forest& forest, const Dataset& ds, PairMode pair_mode = PairMode::all,
                                         std::size_t max_rows = kDefaultMatrixCap, unsigned threads = 0) {
  const std::size_t n = forest.n_real_rows();
  if (ds.n_rows() != n || ds.n_features() != forest.n_features)
    throw Error(ErrorKind::provenance, "dataset shape does not match the forest's training data");
  if (n > max_rows)
    throw Error(ErrorKind::capacity, std::to_string(n) + " rows exceed the proximity matrix cap of " +
                                         std::to_string(max_rows) + "; use the leaf index (top_k_similar) instead");
  ProximityMatrix prox;
  prox.n = n;
  prox.pair_mode = pair_mode;
  prox.values.assign(n * n, 0.0);
  const std::size_t n_trees = forest.n_trees();

  if (pair_mode == PairMode::all) {
    const LeafIndex index = build_leaf_index(forest, threads);
    parallel_for(n, threads, [&](std::size_t i) {
      std::vector<std::uint32_t> counts(n, 0);
      for (std::size_t t = 0; t < n_trees; ++t)
        for (auto j : index.postings(t, forest.leaf(i, t))) ++counts[j];
      auto row = std::span<double>(prox.values).subspan(i * n, n);
      for (std::size_t j = 0; j < n; ++j) row[j] = static_cast<double>(counts[j]) / static_cast<double>(n_trees);
    });
    return prox;
  }

  std::vector<std::vector<std::uint32_t>> oob_rows(n_trees);
  for (std::size_t t = 0; t < n_trees; ++t)
    for (std::size_t r = 0; r < n; ++r)
      if (forest.is_oob(r, t)) oob_rows[t].push_back(static_cast<std::uint32_t>(r));
  parallel_for(n, threads, [&](std::size_t i) {
    std::vector<std::uint32_t> same(n, 0), both(n, 0);
    for (std::size_t t = 0; t < n_trees; ++t) {
      if (!forest.is_oob(i, t)) continue;
      const auto leaf = forest.leaf(i, t);
      for (auto j : oob_rows[t]) {
        ++both[j];
        if (forest.leaf(j, t) == leaf) ++same[j];
      }
    }
    auto row = std::span<double>(prox.values).subspan(i * n, n);
    for (std::size_t j = 0; j < n; ++j)
      row[j] = both[j] > 0 ? static_cast<double>(same[j]) / static_cast<double>(both[j]) : 0.0;
  });
  return prox;
}

struct Neighbor {
  std::size_t row_id = 0;
  double score = 0.0;  // co-occurrence count / n_trees
  std::uint32_t count = 0;

  bool operator==(const Neighbor&) const = default;
};

namespace detail {

// Highest count first, ties to the lower row id; rows never co-located fill
// the tail in ascending id order when k asks for more.
inline std::vector<Neighbor> rank_counts(std::vector<std::uint32_t>& counts, std::vector<std::uint32_t>& touched,
                                         std::size_t k, std::size_t n_trees) {
  const std::size_t n = counts.size();
  k = std::min(k, n);
  auto better = [&](std::uint32_t a, std::uint32_t b) { return counts[a] != counts[b] ? counts[a] > counts[b] : a < b; };
  const std::size_t head = std::min(k, touched.size());
  std::partial_sort(touched.begin(), touched.begin() + static_cast<std::ptrdiff_t>(head), touched.end(), better);
  std::vector<Neighbor> out;
  out.reserve(k);
  for (std::size_t p = 0; p < head; ++p) {
    const auto r = touched[p];
    out.push_back({r, static_cast<double>(counts[r]) / static_cast<double>(n_trees), counts[r]});
  }
  for (std::size_t r = 0; r < n && out.size() < k; ++r)
    if (counts[r] == 0) out.push_back({r, 0.0, 0});
  return out;
}

}  // namespace detail

// Traverse each tree once and count co-located training rows via the posting
// lists: O(n_trees * average leaf size) plus the final ranking. A query that
// is itself a training row is eligible to appear.
inline std::vector<Neighbor> top_k_similar(const LeafIndex& index, const Forest& forest, std::span<const double> query,
                                           std::size_t k) {
  detail::check_query(forest, query.size());
  if (k == 0) throw Error(ErrorKind::argument, "k must be >= 1");
  if (index.n_trees() != forest.n_trees() || index.n_rows() != forest.n_real_rows())
    throw Error(ErrorKind::argument, "leaf index does not belong to this forest");
  std::vector<std::uint32_t> counts(index.n_rows(), 0);
  std::vector<std::uint32_t> touched;
  for (std::size_t t = 0; t < forest.n_trees(); ++t) {
    for (auto r : index.postings(t, forest.trees[t].leaf_of(query))) {
      if (counts[r]++ == 0) touched.push_back(r);
    }
  }
  return detail::rank_counts(counts, touched, k, forest.n_trees());
}

struct ExplainedNeighbors {
  std::vector<Neighbor> neighbors;
  std::vector<double> importance;  // Pi for the query, one entry per feature
};

// Neighbors plus the query's local proximity importance. The query is treated
// as out-of-sample, so every tree counts; donors come from ds (the forest's
// training rows) under a fixed seed.
inline ExplainedNeighbors top_k_similar_explained(const LeafIndex& index, const Forest& forest, const Dataset& ds,
                                                  std::span<const double> query, std::size_t k,
                                                  const ImportanceOptions& opts = {}) {
  ExplainedNeighbors out;
  out.neighbors = top_k_similar(index, forest, query, k);
  out.importance = query_proximity_importance(forest, ds, query, opts);
  return out;
}

inline void write_neighbors_csv(std::span<const Neighbor> neighbors, std::ostream& out) {
  out << "rank,row_id,score\n";
  for (std::size_t r = 0; r < neighbors.size(); ++r)
    out << (r + 1) << ',' << neighbors[r].row_id << ',' << detail::format_double(neighbors[r].score) << '\n';
}

}  // namespace forestfuse
