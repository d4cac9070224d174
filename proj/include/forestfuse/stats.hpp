#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <numeric>
#include <span>
#include <vector>

namespace forestfuse::stats {

// Plain median: mean of the two middle order statistics for even sizes.
// Returns NaN for an empty input.
inline double median(std::span<const double> values) {
  if (values.empty()) return std::nan("");
  std::vector<double> v(values.begin(), values.end());
  const std::size_t mid = v.size() / 2;
  std::nth_element(v.begin(), v.begin() + static_cast<std::ptrdiff_t>(mid), v.end());
  const double upper = v[mid];
  if (v.size() % 2 == 1) return upper;
  const double lower = *std::max_element(v.begin(), v.begin() + static_cast<std::ptrdiff_t>(mid));
  if (std::isinf(lower) && std::isinf(upper) && lower == upper) return upper;
  return 0.5 * (lower + upper);
}

// Empirical quantile with linear interpolation between the order statistics
// at position q * (n - 1).
inline double quantile(std::span<const double> values, double q) {
  if (values.empty()) return std::nan("");
  std::vector<double> v(values.begin(), values.end());
  std::sort(v.begin(), v.end());
  q = std::clamp(q, 0.0, 1.0);
  const double pos = q * static_cast<double>(v.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const auto hi = static_cast<std::size_t>(std::ceil(pos));
  if (lo == hi || v[lo] == v[hi]) return v[lo];
  return v[lo] + (v[hi] - v[lo]) * (pos - static_cast<double>(lo));
}

// Unscaled median absolute deviation around a given center.
inline double mad(std::span<const double> values, double center) {
  std::vector<double> dev;
  dev.reserve(values.size());
  for (double x : values) dev.push_back(x == center ? 0.0 : std::fabs(x - center));
  return median(dev);
}

// Mid-ranks (1-based), ties share the average rank.
inline std::vector<double> ranks(std::span<const double> values) {
  std::vector<std::size_t> order(values.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return values[a] < values[b]; });
  std::vector<double> r(values.size());
  std::size_t i = 0;
  while (i < order.size()) {
    std::size_t j = i;
    while (j + 1 < order.size() && values[order[j + 1]] == values[order[i]]) ++j;
    const double avg = 0.5 * static_cast<double>(i + j) + 1.0;
    for (std::size_t k = i; k <= j; ++k) r[order[k]] = avg;
    i = j + 1;
  }
  return r;
}

inline double pearson(std::span<const double> x, std::span<const double> y) {
  const std::size_t n = std::min(x.size(), y.size());
  if (n < 2) return std::nan("");
  double mx = 0.0, my = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    mx += x[i];
    my += y[i];
  }
  mx /= static_cast<double>(n);
  my /= static_cast<double>(n);
  double sxy = 0.0, sxx = 0.0, syy = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    sxy += (x[i] - mx) * (y[i] - my);
    sxx += (x[i] - mx) * (x[i] - mx);
    syy += (y[i] - my) * (y[i] - my);
  }
  if (sxx == 0.0 || syy == 0.0) return std::nan("");
  return sxy / std::sqrt(sxx * syy);
}

inline double spearman(std::span<const double> x, std::span<const double> y) {
  const auto rx = ranks(x);
  const auto ry = ranks(y);
  return pearson(rx, ry);
}

// Area under the ROC curve for scores where larger means "positive"; ties
// between a positive and a negative count one half (Mann-Whitney).
inline double auc(std::span<const double> negatives, std::span<const double> positives) {
  if (negatives.empty() || positives.empty()) return std::nan("");
  std::vector<double> all(negatives.begin(), negatives.end());
  all.insert(all.end(), positives.begin(), positives.end());
  const auto r = ranks(all);
  double pos_rank_sum = 0.0;
  for (std::size_t i = negatives.size(); i < all.size(); ++i) pos_rank_sum += r[i];
  const auto np = static_cast<double>(positives.size());
  const auto nn = static_cast<double>(negatives.size());
  return (pos_rank_sum - np * (np + 1.0) / 2.0) / (np * nn);
}

inline double mean(std::span<const double> values) {
  if (values.empty()) return std::nan("");
  double s = 0.0;
  for (double x : values) s += x;
  return s / static_cast<double>(values.size());
}

}  // namespace forestfuse::stats
