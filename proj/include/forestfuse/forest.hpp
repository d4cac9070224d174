#pragma once

#include <algorithm>
#include <cmath>
#include <concepts>
#include <cstddef>
#include <cstdint>
#include <limits>
#include <numeric>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "forestfuse/dataset.hpp"
#include "forestfuse/error.hpp"
#include "forestfuse/parallel.hpp"
#include "forestfuse/rng.hpp"

namespace forestfuse {

enum class Mode : std::uint8_t { classification = 0, regression = 1, unsupervised = 2 };
enum class SplitStrategy : std::uint8_t { presort = 0, histogram = 1 };
enum class PairMode : std::uint8_t { all = 0, oob = 1 };

inline const char* to_string(Mode m) {
  switch (m) {
    case Mode::classification: return "classification";
    case Mode::regression: return "regression";
    case Mode::unsupervised: return "unsupervised";
  }
  return "?";
}

struct ForestConfig {
  Mode mode = Mode::classification;
  std::size_t n_trees = 100;
  std::size_t mtry = 0;           // 0: floor(sqrt(m)) classification/unsupervised, floor(m/3) regression
  std::size_t min_node_size = 0;  // 0: 1 classification/unsupervised, 5 regression
  std::optional<std::size_t> max_depth;
  SplitStrategy split_strategy = SplitStrategy::presort;
  std::size_t n_bins = 256;
  std::uint64_t seed = 0;
  PairMode proximity_pairs = PairMode::all;

  bool operator==(const ForestConfig&) const = default;

  // Fills defaults for a dataset with n_features columns and validates.
  ForestConfig resolved(std::size_t n_features) const {
    ForestConfig c = *this;
    if (c.mtry == 0) {
      c.mtry = c.mode == Mode::regression ? n_features / 3
                                          : static_cast<std::size_t>(std::floor(std::sqrt(static_cast<double>(n_features))));
      c.mtry = std::max<std::size_t>(c.mtry, 1);
    }
    if (c.min_node_size == 0) c.min_node_size = c.mode == Mode::regression ? 5 : 1;
    if (c.n_trees < 1) throw Error(ErrorKind::config, "n_trees must be >= 1");
    if (n_features == 0) throw Error(ErrorKind::config, "dataset has no features");
    if (c.mtry > n_features)
      throw Error(ErrorKind::config, "mtry " + std::to_string(c.mtry) + " exceeds n_features " + std::to_string(n_features));
    if (c.n_bins < 2) throw Error(ErrorKind::config, "n_bins must be >= 2");
    return c;
  }
};

// ---------------------------------------------------------------------------
// Trees
// ---------------------------------------------------------------------------

struct Node {
  std::int32_t feature = -1;  // -1 marks a leaf
  double threshold = 0.0;     // go left iff value <= threshold
  std::int32_t left = -1;
  std::int32_t right = -1;
  std::int32_t leaf = -1;
  double gain = 0.0;  // criterion decrease weighted by node size

  bool is_leaf() const noexcept { return feature < 0; }
  bool operator==(const Node&) const = default;
};

class Tree {
 public:
  std::vector<Node> nodes;
  std::size_t width = 1;                  // n_classes for votes, 1 for means
  std::vector<double> leaf_values;        // n_leaves * width: in-bag class counts or mean target
  std::vector<std::uint32_t> leaf_sizes;  // in-bag samples (with multiplicity) per leaf

  bool operator==(const Tree&) const = default;

  std::size_t n_leaves() const noexcept { return leaf_sizes.size(); }

  std::span<const double> leaf_value(std::size_t leaf) const {
    return std::span<const double>(leaf_values).subspan(leaf * width, width);
  }

  template <class ValueAt>
    requires std::invocable<ValueAt&, std::size_t>
  std::uint32_t leaf_of(ValueAt&& value_at) const {
    std::size_t i = 0;
    while (!nodes[i].is_leaf()) {
      const Node& n = nodes[i];
      i = static_cast<std::size_t>(value_at(static_cast<std::size_t>(n.feature)) <= n.threshold ? n.left : n.right);
    }
    return static_cast<std::uint32_t>(nodes[i].leaf);
  }

  std::uint32_t leaf_of(std::span<const double> x) const {
    return leaf_of([&](std::size_t f) { return x[f]; });
  }

  std::uint32_t leaf_of_row(const Dataset& ds, std::size_t row) const {
    return leaf_of([&](std::size_t f) { return ds.value(row, f); });
  }

  // Argmax of the leaf's in-bag votes, ties to the lower class id.
  int leaf_class(std::size_t leaf) const {
    const auto v = leaf_value(leaf);
    return static_cast<int>(std::max_element(v.begin(), v.end()) - v.begin());
  }
};

struct Forest {
  ForestConfig config;  // resolved
  std::vector<Tree> trees;
  std::size_t n_features = 0;
  std::size_t n_train = 0;           // rows seen by the trees (2n in unsupervised mode)
  std::size_t synthetic_offset = 0;  // first synthetic row; equals n_train for supervised modes
  int n_classes = 0;                 // 0 for regression
  std::vector<std::vector<std::uint32_t>> inbag;  // [tree][row] bootstrap multiplicity
  std::vector<std::uint32_t> leaf_of_train;       // row-major [n_train x n_trees]
  double oob_error = 0.0;
  std::size_t oob_skipped = 0;
  std::uint64_t data_fingerprint = 0;  // fingerprint of the real training rows
  FeatureSchema schema;

  bool operator==(const Forest&) const = default;

  std::size_t n_trees() const noexcept { return trees.size(); }
  std::size_t n_real_rows() const noexcept { return synthetic_offset; }
  bool is_classifier() const noexcept { return config.mode != Mode::regression; }

  std::uint32_t leaf(std::size_t row, std::size_t tree) const noexcept {
    return leaf_of_train[row * trees.size() + tree];
  }
  bool is_oob(std::size_t row, std::size_t tree) const noexcept { return inbag[tree][row] == 0; }
};

inline void require_training_data(const Forest& forest, const Dataset& ds) {
  if (ds.n_rows() != forest.n_real_rows() || ds.n_features() != forest.n_features || fingerprint(ds) != forest.data_fingerprint)
    throw Error(ErrorKind::provenance, "dataset does not match the data the forest was trained on");
}

// ---------------------------------------------------------------------------
// Synthetic class
// ---------------------------------------------------------------------------

// Each column independently Fisher-Yates shuffled: marginals preserved,
// cross-column dependence destroyed. Same storage kind and schema as ds.
inline Dataset generate_synthetic(const Dataset& ds, std::uint64_t seed) {
  if (ds.n_rows() == 0 || ds.n_features() == 0) throw Error(ErrorKind::argument, "cannot synthesize from an empty dataset");
  if (ds.n_missing() > 0) throw Error(ErrorKind::precondition, "synthetic generation requires complete data");
  const std::size_t n = ds.n_rows();
  const std::size_t m = ds.n_features();
  if (!ds.is_sparse()) {
    std::vector<double> values(n * m);
    for (std::size_t f = 0; f < m; ++f) {
      auto col = ds.column(f);
      Rng rng(derive_key(seed, {stream::synthetic, f}));
      rng.shuffle(std::span<double>(col));
      for (std::size_t r = 0; r < n; ++r) values[r * m + f] = col[r];
    }
    return Dataset::dense(n, m, std::move(values), ds.schema());
  }
  std::vector<std::vector<std::pair<std::uint32_t, double>>> rows(n);
  for (std::size_t f = 0; f < m; ++f) {
    auto col = ds.column(f);
    Rng rng(derive_key(seed, {stream::synthetic, f}));
    rng.shuffle(std::span<double>(col));
    for (std::size_t r = 0; r < n; ++r)
      if (col[r] != 0.0) rows[r].emplace_back(static_cast<std::uint32_t>(f), col[r]);
  }
  CsrMatrix mat;
  for (const auto& row : rows) {
    for (const auto& [c, v] : row) {
      mat.columns.push_back(c);
      mat.values.push_back(v);
    }
    mat.offsets.push_back(mat.columns.size());
  }
  return Dataset::csr(n, m, std::move(mat), ds.schema());
}

// The rows and labels the trees actually see: the dataset itself for
// supervised modes, or real rows (class 0) stacked on a synthetic copy
// (class 1) for unsupervised mode.
class TrainingView {
 public:
  TrainingView(const Dataset& ds, const ForestConfig& config) : ref_(&ds) {
    if (config.mode == Mode::unsupervised) {
      owned_ = concat_rows(ds, generate_synthetic(ds, derive_key(config.seed, stream::synthetic)));
      labels_.assign(2 * ds.n_rows(), 0.0);
      std::fill(labels_.begin() + static_cast<std::ptrdiff_t>(ds.n_rows()), labels_.end(), 1.0);
      n_classes_ = 2;
      return;
    }
    if (!ds.has_target()) throw Error(ErrorKind::config, std::string(to_string(config.mode)) + " mode requires a target");
    const auto& t = *ds.target();
    if (config.mode == Mode::classification) {
      if (t.kind != TargetKind::classes)
        throw Error(ErrorKind::config, "classification mode requires a class target (non-negative integer labels)");
      n_classes_ = t.n_classes;
    }
    labels_ = t.values;
  }

  TrainingView(const TrainingView&) = delete;
  TrainingView& operator=(const TrainingView&) = delete;

  const Dataset& data() const noexcept { return owned_ ? *owned_ : *ref_; }
  const std::vector<double>& labels() const noexcept { return labels_; }
  int n_classes() const noexcept { return n_classes_; }

 private:
  const Dataset* ref_;
  std::optional<Dataset> owned_;
  std::vector<double> labels_;
  int n_classes_ = 0;
};

// ---------------------------------------------------------------------------
// Split finding
// ---------------------------------------------------------------------------

struct SplitTask {
  bool classification = true;
  int n_classes = 2;
};

struct SplitResult {
  double threshold = 0.0;
  double gain = 0.0;  // impurity(parent) - weighted impurity(children), per sample

  bool operator==(const SplitResult&) const = default;
};

namespace detail {

// Incremental left/right statistics for Gini (classification) or variance
// (regression). gain() is the per-sample impurity decrease of the current
// left/right partition.
class SplitScanner {
 public:
  explicit SplitScanner(const SplitTask& task) : task_(task) {
    if (task_.classification) {
      left_.assign(static_cast<std::size_t>(task_.n_classes), 0.0);
      right_.assign(static_cast<std::size_t>(task_.n_classes), 0.0);
    }
  }

  template <class TargetAt>
  void reset(std::size_t n, TargetAt&& target_at) {
    n_ = static_cast<double>(n);
    n_left_ = 0.0;
    if (task_.classification) {
      std::fill(left_.begin(), left_.end(), 0.0);
      std::fill(right_.begin(), right_.end(), 0.0);
      for (std::size_t i = 0; i < n; ++i) right_[static_cast<std::size_t>(target_at(i))] += 1.0;
      sq_left_ = 0.0;
      sq_right_ = 0.0;
      for (double c : right_) sq_right_ += c * c;
      parent_score_ = sq_right_ / n_;
      parent_impurity_ = 1.0 - parent_score_ / n_;
    } else {
      sum_left_ = 0.0;
      sum_right_ = 0.0;
      double sq = 0.0;
      for (std::size_t i = 0; i < n; ++i) {
        const double y = target_at(i);
        sum_right_ += y;
        sq += y * y;
      }
      total_sum_ = sum_right_;
      parent_score_ = sum_right_ * sum_right_ / n_;
      parent_impurity_ = std::max(0.0, (sq - parent_score_) / n_);
    }
  }

  void move_left(double y, double weight = 1.0) {
    n_left_ += weight;
    if (task_.classification) {
      const auto c = static_cast<std::size_t>(y);
      sq_left_ += weight * (2.0 * left_[c] + weight);
      left_[c] += weight;
      sq_right_ -= weight * (2.0 * right_[c] - weight);
      right_[c] -= weight;
    } else {
      sum_left_ += weight * y;
      sum_right_ = total_sum_ - sum_left_;
    }
  }

  double n_left() const noexcept { return n_left_; }
  double n_right() const noexcept { return n_ - n_left_; }
  double parent_impurity() const noexcept { return parent_impurity_; }

  double gain() const noexcept {
    const double nl = n_left_;
    const double nr = n_ - n_left_;
    if (nl <= 0.0 || nr <= 0.0) return 0.0;
    double score;
    if (task_.classification)
      score = sq_left_ / nl + sq_right_ / nr;
    else
      score = sum_left_ * sum_left_ / nl + sum_right_ * sum_right_ / nr;
    return (score - parent_score_) / n_;
  }

  // Splits must remove a non-negligible share of the parent impurity.
  bool improves(double gain) const noexcept { return parent_impurity_ > 0.0 && gain > 1e-12 * parent_impurity_; }

 private:
  SplitTask task_;
  std::vector<double> left_, right_;
  double n_ = 0.0, n_left_ = 0.0;
  double sq_left_ = 0.0, sq_right_ = 0.0;
  double sum_left_ = 0.0, sum_right_ = 0.0, total_sum_ = 0.0;
  double parent_score_ = 0.0, parent_impurity_ = 0.0;
};

inline double midpoint(double lo, double hi) {
  const double mid = lo + (hi - lo) / 2.0;
  return (mid >= hi || mid < lo) ? lo : mid;
}

// Exact scan over n samples already ordered by value: every midpoint between
// consecutive distinct values is evaluated; the first best (lowest
// threshold) wins.
template <class ValueAt, class TargetAt>
std::optional<SplitResult> split_sorted(std::size_t n, ValueAt&& value_at, TargetAt&& target_at, SplitScanner& scanner) {
  if (n < 2 || value_at(0) == value_at(n - 1)) return std::nullopt;
  scanner.reset(n, target_at);
  std::optional<SplitResult> best;
  for (std::size_t i = 0; i + 1 < n; ++i) {
    scanner.move_left(target_at(i));
    const double v = value_at(i);
    const double next = value_at(i + 1);
    if (v == next) continue;
    const double g = scanner.gain();
    if (scanner.improves(g) && (!best || g > best->gain)) best = SplitResult{midpoint(v, next), g};
  }
  return best;
}

// Equal-width bins over [min, max] of the node's values; only the n_bins - 1
// interior bin edges are candidate thresholds. A value v lands in the bin
// equal to the number of edges strictly below it, so "v <= edge_b" holds
// exactly when bin(v) < b.
class HistogramSplitter {
 public:
  HistogramSplitter(const SplitTask& task, std::size_t n_bins) : task_(task), n_bins_(n_bins), scanner_(task) {}

  template <class ValueAt, class TargetAt>
  std::optional<SplitResult> operator()(std::size_t n, ValueAt&& value_at, TargetAt&& target_at) {
    if (n < 2) return std::nullopt;
    double lo = value_at(0), hi = lo;
    for (std::size_t i = 1; i < n; ++i) {
      const double v = value_at(i);
      lo = std::min(lo, v);
      hi = std::max(hi, v);
    }
    if (!(lo < hi)) return std::nullopt;
    const double width = (hi - lo) / static_cast<double>(n_bins_);
    edges_.resize(n_bins_ - 1);
    for (std::size_t b = 1; b < n_bins_; ++b) edges_[b - 1] = lo + static_cast<double>(b) * width;

    const std::size_t w = task_.classification ? static_cast<std::size_t>(task_.n_classes) : 1;
    counts_.assign(n_bins_, 0.0);
    stats_.assign(n_bins_ * w, 0.0);
    for (std::size_t i = 0; i < n; ++i) {
      const std::size_t b = bin_of(value_at(i), lo, width);
      counts_[b] += 1.0;
      if (task_.classification)
        stats_[b * w + static_cast<std::size_t>(target_at(i))] += 1.0;
      else
        stats_[b] += target_at(i);
    }

    scanner_.reset(n, target_at);
    std::optional<SplitResult> best;
    for (std::size_t b = 0; b + 1 < n_bins_; ++b) {
      if (counts_[b] == 0.0) continue;
      if (task_.classification) {
        for (std::size_t c = 0; c < w; ++c)
          if (stats_[b * w + c] > 0.0) scanner_.move_left(static_cast<double>(c), stats_[b * w + c]);
      } else {
        scanner_.move_left(stats_[b] / counts_[b], counts_[b]);
      }
      if (scanner_.n_right() <= 0.0) break;
      const double g = scanner_.gain();
      if (scanner_.improves(g) && (!best || g > best->gain)) best = SplitResult{edges_[b], g};
    }
    return best;
  }

 private:
  std::size_t bin_of(double v, double lo, double width) const {
    auto b = static_cast<std::ptrdiff_t>(std::ceil((v - lo) / width)) - 1;
    b = std::clamp<std::ptrdiff_t>(b, 0, static_cast<std::ptrdiff_t>(n_bins_) - 1);
    // Snap to the exact edge comparison.
    while (b > 0 && v <= edges_[static_cast<std::size_t>(b) - 1]) --b;
    while (static_cast<std::size_t>(b) + 1 < n_bins_ && v > edges_[static_cast<std::size_t>(b)]) ++b;
    return static_cast<std::size_t>(b);
  }

  SplitTask task_;
  std::size_t n_bins_;
  SplitScanner scanner_;
  std::vector<double> edges_, counts_, stats_;
};

}  // namespace detail

// Best threshold for one feature over a node's samples. presort: exact scan of
// all midpoints; histogram: equal-width bin edges over the node's range.
// Returns nullopt when no threshold decreases impurity.
inline std::optional<SplitResult> best_split(std::span<const double> values, std::span<const double> targets,
                                             const SplitTask& task, SplitStrategy strategy, std::size_t n_bins = 256) {
  if (values.size() != targets.size()) throw Error(ErrorKind::argument, "values/targets length mismatch");
  if (strategy == SplitStrategy::histogram) {
    if (n_bins < 2) throw Error(ErrorKind::config, "n_bins must be >= 2");
    detail::HistogramSplitter splitter(task, n_bins);
    return splitter(values.size(), [&](std::size_t i) { return values[i]; }, [&](std::size_t i) { return targets[i]; });
  }
  std::vector<std::size_t> order(values.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return values[a] < values[b]; });
  detail::SplitScanner scanner(task);
  return detail::split_sorted(
      order.size(), [&](std::size_t i) { return values[order[i]]; }, [&](std::size_t i) { return targets[order[i]]; },
      scanner);
}

// ---------------------------------------------------------------------------
// Tree growth
// ---------------------------------------------------------------------------

namespace detail {

struct SortedEntry {
  double value;
  std::uint32_t row;
};

// Per-forest presort: for every feature, the training rows ordered by value
// (ties by row id) together with the values themselves.
struct PresortIndex {
  std::vector<std::vector<SortedEntry>> by_feature;

  static PresortIndex build(const Dataset& data) {
    PresortIndex idx;
    idx.by_feature.resize(data.n_features());
    for (std::size_t f = 0; f < data.n_features(); ++f) {
      auto& entries = idx.by_feature[f];
      entries.resize(data.n_rows());
      for (std::size_t r = 0; r < data.n_rows(); ++r) entries[r] = {data.value(r, f), static_cast<std::uint32_t>(r)};
      std::stable_sort(entries.begin(), entries.end(),
                       [](const SortedEntry& a, const SortedEntry& b) { return a.value < b.value; });
    }
    return idx;
  }
};

class TreeGrower {
 public:
  TreeGrower(const Dataset& data, const std::vector<double>& labels, int n_classes, const ForestConfig& config,
             const PresortIndex* presort)
      : data_(data),
        labels_(labels),
        config_(config),
        task_{config.mode != Mode::regression, std::max(n_classes, 1)},
        presort_(presort),
        scanner_(task_),
        histogram_(task_, config.n_bins) {}

  // Grows tree `tree_id` and returns it with its bootstrap multiplicities.
  std::pair<Tree, std::vector<std::uint32_t>> grow(std::size_t tree_id) {
    const std::size_t n = data_.n_rows();
    const std::uint64_t tree_key = derive_key(config_.seed, {stream::tree, tree_id});
    Rng rng(tree_key);
    std::vector<std::uint32_t> counts(n, 0);
    for (std::size_t i = 0; i < n; ++i) ++counts[rng.uniform_index(n)];

    samples_.clear();
    samples_.reserve(n);
    for (std::size_t r = 0; r < n; ++r)
      for (std::uint32_t c = 0; c < counts[r]; ++c) samples_.push_back(static_cast<std::uint32_t>(r));

    const bool use_presort = config_.split_strategy == SplitStrategy::presort;
    if (use_presort) {
      sorted_.resize(data_.n_features());
      for (std::size_t f = 0; f < data_.n_features(); ++f) {
        auto& dst = sorted_[f];
        dst.clear();
        dst.reserve(n);
        for (const auto& e : presort_->by_feature[f])
          for (std::uint32_t c = 0; c < counts[e.row]; ++c) dst.push_back(e);
      }
      scratch_.resize(n);
    }
    side_.assign(n, 0);

    Tree tree;
    tree.width = task_.classification ? static_cast<std::size_t>(task_.n_classes) : 1;
    struct Work {
      std::size_t node, begin, end, depth;
      std::uint64_t key;
    };
    std::vector<Work> stack;
    tree.nodes.emplace_back();
    stack.push_back({0, 0, n, 0, derive_key(tree_key, 1)});

    std::vector<std::size_t> features(data_.n_features());
    while (!stack.empty()) {
      const Work w = stack.back();
      stack.pop_back();
      const std::size_t size = w.end - w.begin;

      std::optional<std::pair<std::size_t, SplitResult>> best;
      const bool depth_ok = !config_.max_depth || w.depth < *config_.max_depth;
      if (size > config_.min_node_size && depth_ok && !is_pure(w.begin, w.end)) {
        std::iota(features.begin(), features.end(), std::size_t{0});
        Rng node_rng(w.key);
        for (std::size_t i = 0; i < config_.mtry; ++i)
          std::swap(features[i], features[i + node_rng.uniform_index(features.size() - i)]);
        std::sort(features.begin(), features.begin() + static_cast<std::ptrdiff_t>(config_.mtry));
        for (std::size_t i = 0; i < config_.mtry; ++i) {
          const std::size_t f = features[i];
          const auto split = evaluate(f, w.begin, w.end);
          if (split && (!best || split->gain > best->second.gain)) best = std::make_pair(f, *split);
        }
      }

      if (!best) {
        make_leaf(tree, w.node, w.begin, w.end);
        continue;
      }

      const std::size_t f = best->first;
      const double threshold = best->second.threshold;
      std::size_t n_left = 0;
      for (std::size_t i = w.begin; i < w.end; ++i) {
        const std::uint32_t r = samples_[i];
        side_[r] = data_.value(r, f) <= threshold ? 1 : 0;
      }
      n_left = partition(samples_, w.begin, w.end);
      if (use_presort)
        for (auto& entries : sorted_) partition_entries(entries, w.begin, w.end);

      const auto left_id = static_cast<std::int32_t>(tree.nodes.size());
      tree.nodes.emplace_back();
      const auto right_id = static_cast<std::int32_t>(tree.nodes.size());
      tree.nodes.emplace_back();
      Node& node = tree.nodes[w.node];
      node.feature = static_cast<std::int32_t>(f);
      node.threshold = threshold;
      node.left = left_id;
      node.right = right_id;
      node.gain = best->second.gain * static_cast<double>(size);
      const std::size_t mid = w.begin + n_left;
      stack.push_back({static_cast<std::size_t>(right_id), mid, w.end, w.depth + 1, derive_key(w.key, 3)});
      stack.push_back({static_cast<std::size_t>(left_id), w.begin, mid, w.depth + 1, derive_key(w.key, 2)});
    }
    return {std::move(tree), std::move(counts)};
  }

 private:
  bool is_pure(std::size_t begin, std::size_t end) const {
    const double y0 = labels_[samples_[begin]];
    for (std::size_t i = begin + 1; i < end; ++i)
      if (labels_[samples_[i]] != y0) return false;
    return true;
  }

  std::optional<SplitResult> evaluate(std::size_t f, std::size_t begin, std::size_t end) {
    const std::size_t size = end - begin;
    if (config_.split_strategy == SplitStrategy::presort) {
      const auto& entries = sorted_[f];
      return split_sorted(
          size, [&](std::size_t i) { return entries[begin + i].value; },
          [&](std::size_t i) { return labels_[entries[begin + i].row]; }, scanner_);
    }
    // Histogram path: gather the node's column by row lookup (CSR or dense).
    column_.resize(size);
    for (std::size_t i = 0; i < size; ++i) column_[i] = data_.value(samples_[begin + i], f);
    if (data_.schema().is_categorical(f)) {
      order_.resize(size);
      std::iota(order_.begin(), order_.end(), std::size_t{0});
      std::stable_sort(order_.begin(), order_.end(), [&](std::size_t a, std::size_t b) { return column_[a] < column_[b]; });
      return split_sorted(
          size, [&](std::size_t i) { return column_[order_[i]]; },
          [&](std::size_t i) { return labels_[samples_[begin + order_[i]]]; }, scanner_);
    }
    return histogram_(size, [&](std::size_t i) { return column_[i]; },
                      [&](std::size_t i) { return labels_[samples_[begin + i]]; });
  }

  std::size_t partition(std::vector<std::uint32_t>& v, std::size_t begin, std::size_t end) {
    std::size_t out = begin;
    std::size_t spill = 0;
    spill_.resize(end - begin);
    for (std::size_t i = begin; i < end; ++i) {
      if (side_[v[i]])
        v[out++] = v[i];
      else
        spill_[spill++] = v[i];
    }
    std::copy_n(spill_.begin(), spill, v.begin() + static_cast<std::ptrdiff_t>(out));
    return out - begin;
  }

  void partition_entries(std::vector<SortedEntry>& v, std::size_t begin, std::size_t end) {
    std::size_t out = begin;
    std::size_t spill = 0;
    for (std::size_t i = begin; i < end; ++i) {
      if (side_[v[i].row])
        v[out++] = v[i];
      else
        scratch_[spill++] = v[i];
    }
    std::copy_n(scratch_.begin(), spill, v.begin() + static_cast<std::ptrdiff_t>(out));
  }

  void make_leaf(Tree& tree, std::size_t node, std::size_t begin, std::size_t end) {
    const auto leaf = static_cast<std::int32_t>(tree.leaf_sizes.size());
    tree.nodes[node].leaf = leaf;
    tree.leaf_sizes.push_back(static_cast<std::uint32_t>(end - begin));
    if (task_.classification) {
      const std::size_t off = tree.leaf_values.size();
      tree.leaf_values.resize(off + tree.width, 0.0);
      for (std::size_t i = begin; i < end; ++i) tree.leaf_values[off + static_cast<std::size_t>(labels_[samples_[i]])] += 1.0;
    } else {
      double sum = 0.0;
      for (std::size_t i = begin; i < end; ++i) sum += labels_[samples_[i]];
      tree.leaf_values.push_back(end > begin ? sum / static_cast<double>(end - begin) : 0.0);
    }
  }

  const Dataset& data_;
  const std::vector<double>& labels_;
  const ForestConfig& config_;
  SplitTask task_;
  const PresortIndex* presort_;
  SplitScanner scanner_;
  HistogramSplitter histogram_;
  std::vector<std::uint32_t> samples_, spill_;
  std::vector<std::vector<SortedEntry>> sorted_;
  std::vector<SortedEntry> scratch_;
  std::vector<std::uint8_t> side_;
  std::vector<double> column_;
  std::vector<std::size_t> order_;
};

}  // namespace detail

// ---------------------------------------------------------------------------
// Prediction
// ---------------------------------------------------------------------------

// Averaged per-tree leaf vote fractions (classification / unsupervised).
template <class ValueAt>
void accumulate_proba(const Forest& forest, ValueAt&& value_at, std::span<double> out) {
  std::fill(out.begin(), out.end(), 0.0);
  for (const auto& tree : forest.trees) {
    const auto votes = tree.leaf_value(tree.leaf_of(value_at));
    double total = 0.0;
    for (double v : votes) total += v;
    if (total > 0.0)
      for (std::size_t c = 0; c < votes.size(); ++c) out[c] += votes[c] / total;
  }
  for (double& p : out) p /= static_cast<double>(forest.trees.size());
}

inline int argmax_class(std::span<const double> proba) {
  return static_cast<int>(std::max_element(proba.begin(), proba.end()) - proba.begin());
}

namespace detail {
inline void check_query(const Forest& forest, std::size_t n_features) {
  if (n_features != forest.n_features)
    throw Error(ErrorKind::argument, "query has " + std::to_string(n_features) + " features, forest expects " +
                                         std::to_string(forest.n_features));
}
}  // namespace detail

inline std::vector<double> predict_proba(const Forest& forest, std::span<const double> x) {
  detail::check_query(forest, x.size());
  if (!forest.is_classifier()) throw Error(ErrorKind::argument, "class probabilities need a classification forest");
  std::vector<double> p(static_cast<std::size_t>(forest.n_classes));
  accumulate_proba(forest, [&](std::size_t f) { return x[f]; }, p);
  return p;
}

inline double predict_value(const Forest& forest, std::span<const double> x) {
  detail::check_query(forest, x.size());
  if (forest.is_classifier()) return argmax_class(predict_proba(forest, x));
  double sum = 0.0;
  for (const auto& tree : forest.trees) sum += tree.leaf_value(tree.leaf_of(x))[0];
  return sum / static_cast<double>(forest.trees.size());
}

struct Predictions {
  std::size_t n_rows = 0;
  int n_classes = 0;                 // 0 for regression
  std::vector<double> probabilities;  // n_rows * n_classes
  std::vector<double> values;         // predicted class id or regression mean

  std::span<const double> proba(std::size_t row) const {
    return std::span<const double>(probabilities).subspan(row * static_cast<std::size_t>(n_classes),
                                                          static_cast<std::size_t>(n_classes));
  }
  // Unsupervised mode: probability of the synthetic class.
  double p_synthetic(std::size_t row) const { return proba(row)[1]; }
};

inline Predictions predict(const Forest& forest, const Dataset& query, unsigned threads = 0) {
  detail::check_query(forest, query.n_features());
  if (query.n_missing() > 0) throw Error(ErrorKind::precondition, "query rows must be complete");
  Predictions out;
  out.n_rows = query.n_rows();
  out.n_classes = forest.is_classifier() ? forest.n_classes : 0;
  out.values.resize(query.n_rows());
  const auto k = static_cast<std::size_t>(out.n_classes);
  out.probabilities.resize(query.n_rows() * k);
  parallel_for(query.n_rows(), threads, [&](std::size_t r) {
    auto value_at = [&](std::size_t f) { return query.value(r, f); };
    if (k > 0) {
      auto p = std::span<double>(out.probabilities).subspan(r * k, k);
      accumulate_proba(forest, value_at, p);
      out.values[r] = argmax_class(p);
    } else {
      double sum = 0.0;
      for (const auto& tree : forest.trees) sum += tree.leaf_value(tree.leaf_of(value_at))[0];
      out.values[r] = sum / static_cast<double>(forest.trees.size());
    }
  });
  return out;
}

inline std::uint32_t leaf_of(const Forest& forest, std::size_t tree_id, std::span<const double> query) {
  detail::check_query(forest, query.size());
  if (tree_id >= forest.trees.size()) throw Error(ErrorKind::index, "tree id out of range");
  return forest.trees[tree_id].leaf_of(query);
}

// ---------------------------------------------------------------------------
// OOB error
// ---------------------------------------------------------------------------

struct OobResult {
  double error = 0.0;  // misclassification fraction or MSE over scored rows; NaN if none scored
  std::size_t n_scored = 0;
  std::size_t skipped = 0;  // rows that were in-bag in every tree
};

namespace detail {
inline OobResult oob_error_on(const Forest& forest, const std::vector<double>& labels) {
  OobResult res;
  const std::size_t k = forest.is_classifier() ? static_cast<std::size_t>(forest.n_classes) : 0;
  std::vector<double> acc(std::max<std::size_t>(k, 1));
  double loss = 0.0;
  for (std::size_t r = 0; r < forest.n_train; ++r) {
    std::fill(acc.begin(), acc.end(), 0.0);
    std::size_t n_oob = 0;
    for (std::size_t t = 0; t < forest.trees.size(); ++t) {
      if (!forest.is_oob(r, t)) continue;
      ++n_oob;
      const auto& tree = forest.trees[t];
      const auto v = tree.leaf_value(forest.leaf(r, t));
      if (k > 0) {
        double total = 0.0;
        for (double x : v) total += x;
        if (total > 0.0)
          for (std::size_t c = 0; c < k; ++c) acc[c] += v[c] / total;
      } else {
        acc[0] += v[0];
      }
    }
    if (n_oob == 0) {
      ++res.skipped;
      continue;
    }
    ++res.n_scored;
    if (k > 0) {
      loss += argmax_class(acc) != static_cast<int>(labels[r]) ? 1.0 : 0.0;
    } else {
      const double d = acc[0] / static_cast<double>(n_oob) - labels[r];
      loss += d * d;
    }
  }
  res.error = res.n_scored > 0 ? loss / static_cast<double>(res.n_scored) : std::nan("");
  return res;
}
}  // namespace detail

// Each training row is predicted only by trees in which it was out-of-bag.
// In unsupervised mode the synthetic rows are scored too.
inline OobResult oob_error(const Forest& forest, const Dataset& ds) {
  if (ds.n_rows() != forest.n_real_rows() || ds.n_features() != forest.n_features)
    throw Error(ErrorKind::provenance, "dataset shape does not match the forest's training data");
  const TrainingView view(ds, forest.config);
  return detail::oob_error_on(forest, view.labels());
}

// ---------------------------------------------------------------------------
// Training
// ---------------------------------------------------------------------------

inline Forest train(const Dataset& ds, const ForestConfig& config, unsigned threads = 0) {
  if (ds.n_missing() > 0)
    throw Error(ErrorKind::precondition, "training data has " + std::to_string(ds.n_missing()) +
                                             " missing cells; impute first");
  if (ds.n_rows() == 0) throw Error(ErrorKind::argument, "training data is empty");
  const ForestConfig cfg = config.resolved(ds.n_features());
  const TrainingView view(ds, cfg);
  const Dataset& data = view.data();

  std::optional<detail::PresortIndex> presort;
  if (cfg.split_strategy == SplitStrategy::presort) presort = detail::PresortIndex::build(data);

  Forest forest;
  forest.config = cfg;
  forest.n_features = ds.n_features();
  forest.n_train = data.n_rows();
  forest.synthetic_offset = ds.n_rows();
  forest.n_classes = view.n_classes();
  forest.schema = ds.schema();
  forest.data_fingerprint = fingerprint(ds);
  forest.trees.resize(cfg.n_trees);
  forest.inbag.resize(cfg.n_trees);

  std::vector<std::vector<std::uint32_t>> leaves(cfg.n_trees);
  parallel_for(cfg.n_trees, threads, [&](std::size_t t) {
    detail::TreeGrower grower(data, view.labels(), view.n_classes(), cfg, presort ? &*presort : nullptr);
    auto [tree, counts] = grower.grow(t);
    auto& col = leaves[t];
    col.resize(data.n_rows());
    for (std::size_t r = 0; r < data.n_rows(); ++r) col[r] = tree.leaf_of_row(data, r);
    forest.trees[t] = std::move(tree);
    forest.inbag[t] = std::move(counts);
  });

  forest.leaf_of_train.resize(data.n_rows() * cfg.n_trees);
  for (std::size_t t = 0; t < cfg.n_trees; ++t)
    for (std::size_t r = 0; r < data.n_rows(); ++r) forest.leaf_of_train[r * cfg.n_trees + t] = leaves[t][r];

  const auto oob = detail::oob_error_on(forest, view.labels());
  forest.oob_error = oob.error;
  forest.oob_skipped = oob.skipped;
  return forest;
}

}  // namespace forestfuse
