#pragma once

#include <algorithm>
#include <cstddef>
#include <map>
#include <optional>
#include <ostream>
#include <span>
#include <vector>

#include "forestfuse/dataset.hpp"
#include "forestfuse/error.hpp"
#include "forestfuse/proximity.hpp"
#include "forestfuse/stats.hpp"

namespace forestfuse {

struct Prototype {
  int class_id = 0;
  std::size_t rank = 1;  // 1-based within the class
  std::size_t center_row = 0;
  std::vector<double> median, q25, q75;  // per feature, over center + support
  std::vector<std::size_t> support;      // counted same-class neighbors (<= k), ascending
};

// Class prototypes. For each class, repeatedly pick the eligible row whose k
// nearest neighbors (descending proximity, ties to lower row id, positive
// proximity only, consumed rows excluded) contain the most rows of its class;
// summarize center + those neighbors by per-feature quartiles, then retire
// them all before looking for the next prototype.
inline std::vector<Prototype> find_prototypes(const ProximityMatrix& prox, const Dataset& ds, std::span<const int> classes,
                                              std::size_t k, std::size_t n_protos) {
  if (k == 0) throw Error(ErrorKind::argument, "k must be >= 1");
  if (ds.n_rows() != prox.n || classes.size() != prox.n)
    throw Error(ErrorKind::argument, "dataset, classes and proximity matrix disagree on the row count");
  const std::size_t n = prox.n;
  const std::size_t m = ds.n_features();

  std::map<int, std::vector<std::size_t>> members;
  for (std::size_t i = 0; i < n; ++i) members[classes[i]].push_back(i);

  std::vector<Prototype> out;
  for (const auto& [c, rows] : members) {
    std::vector<bool> consumed(n, false);
    for (std::size_t rank = 1; rank <= n_protos; ++rank) {
      std::optional<std::size_t> best_row;
      std::vector<std::size_t> best_support;
      for (auto i : rows) {
        if (consumed[i]) continue;
        std::vector<std::size_t> candidates;
        for (std::size_t j = 0; j < n; ++j)
          if (j != i && !consumed[j] && prox(i, j) > 0.0) candidates.push_back(j);
        const std::size_t take = std::min(k, candidates.size());
        std::partial_sort(candidates.begin(), candidates.begin() + static_cast<std::ptrdiff_t>(take), candidates.end(),
                          [&](std::size_t a, std::size_t b) { return prox(i, a) != prox(i, b) ? prox(i, a) > prox(i, b) : a < b; });
        std::vector<std::size_t> support;
        for (std::size_t p = 0; p < take; ++p)
          if (classes[candidates[p]] == c) support.push_back(candidates[p]);
        if (!best_row || support.size() > best_support.size()) {
          best_row = i;
          best_support = std::move(support);
        }
      }
      if (!best_row) break;

      Prototype proto;
      proto.class_id = c;
      proto.rank = rank;
      proto.center_row = *best_row;
      std::sort(best_support.begin(), best_support.end());
      proto.support = best_support;
      std::vector<std::size_t> used = best_support;
      used.push_back(*best_row);
      proto.median.resize(m);
      proto.q25.resize(m);
      proto.q75.resize(m);
      std::vector<double> col;
      for (std::size_t f = 0; f < m; ++f) {
        col.clear();
        for (auto r : used)
          if (!ds.is_missing(r, f)) col.push_back(ds.value(r, f));
        proto.q25[f] = stats::quantile(col, 0.25);
        proto.median[f] = stats::quantile(col, 0.5);
        proto.q75[f] = stats::quantile(col, 0.75);
      }
      for (auto r : used) consumed[r] = true;
      out.push_back(std::move(proto));
    }
  }
  return out;
}

inline void write_prototypes_csv(const FeatureSchema& schema, std::span<const Prototype> protos, std::ostream& out) {
  out << "class,rank,feature,q25,median,q75\n";
  for (const auto& p : protos)
    for (std::size_t f = 0; f < p.median.size(); ++f)
      out << p.class_id << ',' << p.rank << ',' << schema[f].name << ',' << detail::format_double(p.q25[f]) << ','
          << detail::format_double(p.median[f]) << ',' << detail::format_double(p.q75[f]) << '\n';
}

}  // namespace forestfuse
