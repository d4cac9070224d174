#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <limits>
#include <map>
#include <optional>
#include <ostream>
#include <span>
#include <string>
#include <vector>

#include "forestfuse/dataset.hpp"
#include "forestfuse/error.hpp"
#include "forestfuse/forest.hpp"
#include "forestfuse/parallel.hpp"
#include "forestfuse/proximity.hpp"
#include "forestfuse/stats.hpp"

namespace forestfuse {

enum class OutlierMode : std::uint8_t { exact, greedy };

namespace outlier_flag {
inline constexpr std::uint8_t isolated = 1;    // zero within-class proximity mass, raw = +inf
inline constexpr std::uint8_t degenerate = 2;  // class MAD is 0 (or undefined); scores set to 0
}  // namespace outlier_flag

struct ClassOutlierStats {
  int class_id = 0;
  std::size_t size = 0;
  double median = 0.0;
  double mad = 0.0;
  bool degenerate = false;
};

struct OutlierReport {
  std::vector<double> raw;
  std::vector<double> score;
  std::vector<int> class_of;
  std::vector<std::uint8_t> flags;
  std::vector<ClassOutlierStats> classes;  // ascending class id
  OutlierMode mode = OutlierMode::exact;
  std::optional<std::size_t> greedy_m;
};

namespace detail {

inline std::map<int, std::vector<std::size_t>> group_by_class(std::span<const int> classes) {
  std::map<int, std::vector<std::size_t>> members;
  for (std::size_t i = 0; i < classes.size(); ++i) {
    if (classes[i] < 0) throw Error(ErrorKind::class_error, "class ids must be non-negative");
    members[classes[i]].push_back(i);
  }
  for (const auto& [c, rows] : members)
    if (rows.size() < 2)
      throw Error(ErrorKind::class_error, "class " + std::to_string(c) + " has a single member; outlier scores need N_j >= 2");
  return members;
}

// raw_n = N_j / sum_sq; then (raw - median_j) / MAD_j within each class.
inline void finish_report(OutlierReport& report, std::span<const double> sum_sq,
                          const std::map<int, std::vector<std::size_t>>& members) {
  const std::size_t n = sum_sq.size();
  report.raw.assign(n, 0.0);
  report.score.assign(n, 0.0);
  report.flags.assign(n, 0);
  for (const auto& [c, rows] : members) {
    const auto n_j = static_cast<double>(rows.size());
    std::vector<double> raws;
    raws.reserve(rows.size());
    for (auto i : rows) {
      if (sum_sq[i] > 0.0) {
        report.raw[i] = n_j / sum_sq[i];
      } else {
        report.raw[i] = std::numeric_limits<double>::infinity();
        report.flags[i] |= outlier_flag::isolated;
      }
      raws.push_back(report.raw[i]);
    }
    ClassOutlierStats st;
    st.class_id = c;
    st.size = rows.size();
    st.median = stats::median(raws);
    st.mad = std::isfinite(st.median) ? stats::mad(raws, st.median) : std::nan("");
    st.degenerate = !(st.mad > 0.0 && std::isfinite(st.mad));
    for (auto i : rows) {
      if (st.degenerate) {
        report.score[i] = 0.0;
        report.flags[i] |= outlier_flag::degenerate;
      } else {
        report.score[i] = (report.raw[i] - st.median) / st.mad;
      }
    }
    report.classes.push_back(st);
  }
}

}  // namespace detail

// Breiman-Cutler outlier measure from a full proximity matrix.
inline OutlierReport outlier_exact(const ProximityMatrix& prox, std::span<const int> classes) {
  if (classes.size() != prox.n) throw Error(ErrorKind::argument, "class vector length does not match the proximity matrix");
  const auto members = detail::group_by_class(classes);
  std::vector<double> sum_sq(prox.n, 0.0);
  for (std::size_t i = 0; i < prox.n; ++i) {
    double s = 0.0;
    for (auto j : members.at(classes[i])) {
      if (j == i) continue;
      const double p = prox(i, j);
      s += p * p;
    }
    sum_sq[i] = s;
  }
  OutlierReport report;
  report.mode = OutlierMode::exact;
  report.class_of.assign(classes.begin(), classes.end());
  detail::finish_report(report, sum_sq, members);
  return report;
}

// Approximation from the leaf index without an n x n matrix: for each sample
// only the m_cap same-class rows with the highest co-occurrence counts enter
// the squared-proximity sum. With m_cap >= N_j - 1 this equals outlier_exact
// bit for bit (sums run in ascending row order in both).
inline OutlierReport outlier_greedy(const LeafIndex& index, const Forest& forest, std::span<const int> classes,
                                    std::size_t m_cap = 256, unsigned threads = 0) {
  if (m_cap < 1) throw Error(ErrorKind::argument, "m_cap must be >= 1");
  const std::size_t n = index.n_rows();
  if (classes.size() != n) throw Error(ErrorKind::argument, "class vector length does not match the leaf index");
  if (index.n_trees() != forest.n_trees() || n != forest.n_real_rows())
    throw Error(ErrorKind::argument, "leaf index does not belong to this forest");
  const auto members = detail::group_by_class(classes);
  const auto n_trees = static_cast<double>(forest.n_trees());

  std::vector<double> sum_sq(n, 0.0);
  parallel_for(n, threads, [&](std::size_t i) {
    thread_local std::vector<std::uint32_t> counts;
    thread_local std::vector<std::uint32_t> touched;
    counts.assign(n, 0);
    touched.clear();
    for (std::size_t t = 0; t < forest.n_trees(); ++t) {
      for (auto j : index.postings(t, forest.leaf(i, t))) {
        if (j == i || classes[j] != classes[i]) continue;
        if (counts[j]++ == 0) touched.push_back(j);
      }
    }
    if (touched.size() > m_cap) {
      std::nth_element(touched.begin(), touched.begin() + static_cast<std::ptrdiff_t>(m_cap), touched.end(),
                       [&](std::uint32_t a, std::uint32_t b) { return counts[a] != counts[b] ? counts[a] > counts[b] : a < b; });
      touched.resize(m_cap);
    }
    std::sort(touched.begin(), touched.end());
    double s = 0.0;
    for (auto j : touched) {
      const double p = static_cast<double>(counts[j]) / n_trees;
      s += p * p;
    }
    sum_sq[i] = s;
  });

  OutlierReport report;
  report.mode = OutlierMode::greedy;
  report.greedy_m = m_cap;
  report.class_of.assign(classes.begin(), classes.end());
  detail::finish_report(report, sum_sq, members);
  return report;
}

// Class labels for classification forests; a single class otherwise (all
// regression rows, or the real rows of an unsupervised forest).
inline std::vector<int> outlier_classes(const Forest& forest, const Dataset& ds) {
  std::vector<int> classes(ds.n_rows(), 0);
  if (forest.config.mode == Mode::classification && ds.has_target())
    for (std::size_t i = 0; i < ds.n_rows(); ++i) classes[i] = ds.target()->label(i);
  return classes;
}

inline void write_outliers_csv(const OutlierReport& report, std::ostream& out) {
  out << "row_id,class,raw,score,flags\n";
  for (std::size_t i = 0; i < report.raw.size(); ++i) {
    std::string flags;
    if (report.flags[i] & outlier_flag::isolated) flags = "isolated";
    if (report.flags[i] & outlier_flag::degenerate) flags += flags.empty() ? "degenerate" : "|degenerate";
    out << i << ',' << report.class_of[i] << ',' << detail::format_double(report.raw[i]) << ','
        << detail::format_double(report.score[i]) << ',' << flags << '\n';
  }
}

}  // namespace forestfuse
