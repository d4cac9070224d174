#pragma once

#include <algorithm>
#include <bit>
#include <charconv>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <fstream>
#include <istream>
#include <limits>
#include <optional>
#include <ostream>
#include <span>
#include <sstream>
#include <string>
#include <string_view>
#include <unordered_map>
#include <unordered_set>
#include <utility>
#include <vector>

#include "forestfuse/error.hpp"

namespace forestfuse {

enum class FeatureKind { continuous, categorical };

struct FeatureSpec {
  std::string name;
  FeatureKind kind = FeatureKind::continuous;
  std::vector<std::string> categories;  // categorical only; code c <-> categories[c]

  bool operator==(const FeatureSpec&) const = default;
};

class FeatureSchema {
 public:
  FeatureSchema() = default;

  explicit FeatureSchema(std::vector<FeatureSpec> features) : features_(std::move(features)) {
    std::unordered_set<std::string> seen;
    for (const auto& f : features_) {
      if (f.name.empty()) throw Error(ErrorKind::schema, "feature names must be non-empty");
      if (!seen.insert(f.name).second) throw Error(ErrorKind::schema, "duplicate feature name '" + f.name + "'");
      if (f.kind == FeatureKind::categorical && f.categories.empty())
        throw Error(ErrorKind::schema, "categorical feature '" + f.name + "' lists no categories");
      if (f.kind == FeatureKind::continuous && !f.categories.empty())
        throw Error(ErrorKind::schema, "continuous feature '" + f.name + "' cannot list categories");
    }
  }

  static FeatureSchema all_continuous(const std::vector<std::string>& names) {
    std::vector<FeatureSpec> specs;
    specs.reserve(names.size());
    for (const auto& n : names) specs.push_back({n, FeatureKind::continuous, {}});
    return FeatureSchema(std::move(specs));
  }

  static FeatureSchema all_continuous(std::size_t n_features) {
    std::vector<std::string> names;
    for (std::size_t j = 0; j < n_features; ++j) names.push_back("f" + std::to_string(j));
    return all_continuous(names);
  }

  std::size_t size() const noexcept { return features_.size(); }
  const FeatureSpec& operator[](std::size_t j) const { return features_.at(j); }
  const std::vector<FeatureSpec>& features() const noexcept { return features_; }

  bool is_categorical(std::size_t j) const { return features_.at(j).kind == FeatureKind::categorical; }

  std::optional<std::size_t> find(std::string_view name) const {
    for (std::size_t j = 0; j < features_.size(); ++j)
      if (features_[j].name == name) return j;
    return std::nullopt;
  }

  std::optional<int> category_code(std::size_t j, std::string_view label) const {
    const auto& cats = features_.at(j).categories;
    for (std::size_t c = 0; c < cats.size(); ++c)
      if (cats[c] == label) return static_cast<int>(c);
    return std::nullopt;
  }

  bool operator==(const FeatureSchema&) const = default;

 private:
  std::vector<FeatureSpec> features_;
};

enum class TargetKind { classes, continuous };

struct Target {
  TargetKind kind = TargetKind::continuous;
  std::vector<double> values;       // class codes 0..K-1 stored as doubles for classes
  int n_classes = 0;                // classes only
  std::vector<std::string> labels;  // optional display labels for class codes

  std::size_t size() const noexcept { return values.size(); }
  int label(std::size_t row) const { return static_cast<int>(values[row]); }

  bool operator==(const Target&) const = default;
};

// Numeric targets become class targets when every value is a non-negative
// integer; otherwise they stay continuous.
inline Target make_numeric_target(std::vector<double> values) {
  Target t;
  bool integral = !values.empty();
  double max_value = 0.0;
  for (double v : values) {
    if (!(v >= 0.0) || v != std::floor(v) || v > 1e6) {
      integral = false;
      break;
    }
    max_value = std::max(max_value, v);
  }
  t.kind = integral ? TargetKind::classes : TargetKind::continuous;
  t.n_classes = integral ? static_cast<int>(max_value) + 1 : 0;
  t.values = std::move(values);
  return t;
}

inline Target make_class_target(std::vector<int> labels, int n_classes = 0) {
  Target t;
  t.kind = TargetKind::classes;
  int k = n_classes;
  for (int l : labels) {
    if (l < 0) throw Error(ErrorKind::argument, "class labels must be non-negative");
    k = std::max(k, l + 1);
  }
  t.n_classes = k;
  t.values.assign(labels.begin(), labels.end());
  return t;
}

inline Target make_regression_target(std::vector<double> values) {
  Target t;
  t.kind = TargetKind::continuous;
  t.values = std::move(values);
  return t;
}

struct CsrMatrix {
  std::vector<std::size_t> offsets{0};  // n_rows + 1 entries
  std::vector<std::uint32_t> columns;
  std::vector<double> values;

  bool operator==(const CsrMatrix&) const = default;
};

struct Cell {
  std::size_t row = 0;
  std::size_t feature = 0;

  bool operator==(const Cell&) const = default;
};

// Tabular data in dense row-major or CSR storage. Absent CSR entries are real
// zeros; missingness is tracked only through the explicit mask. Immutable
// once built: all "modifiers" return a new Dataset.
class Dataset {
 public:
  Dataset() = default;

  static Dataset dense(std::size_t n_rows, std::size_t n_features, std::vector<double> values,
                       FeatureSchema schema = {}, std::optional<Target> target = std::nullopt,
                       std::vector<Cell> missing = {}) {
    if (values.size() != n_rows * n_features)
      throw Error(ErrorKind::argument, "dense value count does not match n_rows * n_features");
    Dataset ds;
    ds.n_rows_ = n_rows;
    ds.n_features_ = n_features;
    ds.sparse_ = false;
    ds.dense_ = std::move(values);
    ds.finish(std::move(schema), std::move(target), std::move(missing));
    return ds;
  }

  static Dataset csr(std::size_t n_rows, std::size_t n_features, CsrMatrix matrix, FeatureSchema schema = {},
                     std::optional<Target> target = std::nullopt, std::vector<Cell> missing = {}) {
    if (matrix.offsets.size() != n_rows + 1 || matrix.offsets.front() != 0 ||
        matrix.offsets.back() != matrix.columns.size() || matrix.columns.size() != matrix.values.size())
      throw Error(ErrorKind::format, "CSR arrays are inconsistent with the row count");
    for (std::size_t r = 0; r < n_rows; ++r) {
      if (matrix.offsets[r + 1] < matrix.offsets[r]) throw Error(ErrorKind::format, "CSR offsets must be non-decreasing");
      for (std::size_t p = matrix.offsets[r]; p < matrix.offsets[r + 1]; ++p) {
        if (matrix.columns[p] >= n_features)
          throw Error(ErrorKind::format, "CSR column id out of range in row " + std::to_string(r));
        if (p > matrix.offsets[r] && matrix.columns[p] <= matrix.columns[p - 1])
          throw Error(ErrorKind::format, "CSR column ids must be strictly increasing in row " + std::to_string(r));
      }
    }
    Dataset ds;
    ds.n_rows_ = n_rows;
    ds.n_features_ = n_features;
    ds.sparse_ = true;
    ds.csr_ = std::move(matrix);
    ds.finish(std::move(schema), std::move(target), std::move(missing));
    return ds;
  }

  std::size_t n_rows() const noexcept { return n_rows_; }
  std::size_t n_features() const noexcept { return n_features_; }
  bool is_sparse() const noexcept { return sparse_; }
  const FeatureSchema& schema() const noexcept { return schema_; }
  const std::optional<Target>& target() const noexcept { return target_; }
  bool has_target() const noexcept { return target_.has_value(); }

  const std::vector<double>& dense_values() const noexcept { return dense_; }
  const CsrMatrix& csr_matrix() const noexcept { return csr_; }

  // Stored value, ignoring the missing mask. No bounds checks.
  double value(std::size_t row, std::size_t feature) const noexcept {
    if (!sparse_) return dense_[row * n_features_ + feature];
    const auto begin = csr_.columns.begin() + static_cast<std::ptrdiff_t>(csr_.offsets[row]);
    const auto end = csr_.columns.begin() + static_cast<std::ptrdiff_t>(csr_.offsets[row + 1]);
    const auto it = std::lower_bound(begin, end, static_cast<std::uint32_t>(feature));
    if (it == end || *it != feature) return 0.0;
    return csr_.values[static_cast<std::size_t>(it - csr_.columns.begin())];
  }

  // Checked read: nullopt iff the cell is in the missing mask.
  std::optional<double> get(std::size_t row, std::size_t feature) const {
    if (row >= n_rows_ || feature >= n_features_)
      throw Error(ErrorKind::index, "cell (" + std::to_string(row) + ", " + std::to_string(feature) + ") out of bounds");
    if (is_missing(row, feature)) return std::nullopt;
    return value(row, feature);
  }

  bool is_missing(std::size_t row, std::size_t feature) const noexcept {
    return !missing_.empty() && std::binary_search(missing_.begin(), missing_.end(), cell_id(row, feature));
  }

  std::size_t n_missing() const noexcept { return missing_.size(); }

  std::vector<Cell> missing_cells() const {
    std::vector<Cell> cells;
    cells.reserve(missing_.size());
    for (auto id : missing_) cells.push_back({id / n_features_, id % n_features_});
    return cells;
  }

  void fill_row(std::size_t row, std::span<double> out) const noexcept {
    if (!sparse_) {
      std::copy_n(dense_.begin() + static_cast<std::ptrdiff_t>(row * n_features_), n_features_, out.begin());
      return;
    }
    std::fill(out.begin(), out.end(), 0.0);
    for (std::size_t p = csr_.offsets[row]; p < csr_.offsets[row + 1]; ++p) out[csr_.columns[p]] = csr_.values[p];
  }

  std::vector<double> row(std::size_t r) const {
    std::vector<double> out(n_features_);
    fill_row(r, out);
    return out;
  }

  std::vector<double> column(std::size_t feature) const {
    std::vector<double> out(n_rows_);
    for (std::size_t r = 0; r < n_rows_; ++r) out[r] = value(r, feature);
    return out;
  }

  Dataset with_target(std::optional<Target> target) const {
    Dataset copy = *this;
    if (target && target->size() != n_rows_) throw Error(ErrorKind::argument, "target length does not match n_rows");
    copy.target_ = std::move(target);
    copy.validate_target();
    return copy;
  }

  Dataset with_missing(std::vector<Cell> missing) const {
    Dataset copy = *this;
    copy.set_missing(std::move(missing));
    return copy;
  }

  // Overwrites the given cells and clears them from the missing mask.
  Dataset with_values(std::span<const Cell> cells, std::span<const double> values) const {
    if (cells.size() != values.size()) throw Error(ErrorKind::argument, "cell/value count mismatch");
    Dataset copy = *this;
    std::vector<std::uint64_t> cleared;
    cleared.reserve(cells.size());
    for (const auto& c : cells) {
      if (c.row >= n_rows_ || c.feature >= n_features_) throw Error(ErrorKind::index, "cell out of bounds");
      cleared.push_back(cell_id(c.row, c.feature));
    }
    if (!sparse_) {
      for (std::size_t i = 0; i < cells.size(); ++i) copy.dense_[cells[i].row * n_features_ + cells[i].feature] = values[i];
    } else {
      std::unordered_map<std::uint64_t, double> updates;
      for (std::size_t i = 0; i < cells.size(); ++i) updates[cleared[i]] = values[i];
      CsrMatrix m;
      std::vector<double> row_buf(n_features_);
      for (std::size_t r = 0; r < n_rows_; ++r) {
        fill_row(r, row_buf);
        for (std::size_t f = 0; f < n_features_; ++f) {
          double v = row_buf[f];
          if (auto it = updates.find(cell_id(r, f)); it != updates.end()) v = it->second;
          const bool keep = v != 0.0 || std::isnan(v) || is_missing(r, f);
          if (keep) {
            m.columns.push_back(static_cast<std::uint32_t>(f));
            m.values.push_back(v);
          }
        }
        m.offsets.push_back(m.columns.size());
      }
      copy.csr_ = std::move(m);
    }
    std::sort(cleared.begin(), cleared.end());
    std::vector<std::uint64_t> remaining;
    std::set_difference(missing_.begin(), missing_.end(), cleared.begin(), cleared.end(), std::back_inserter(remaining));
    copy.missing_ = std::move(remaining);
    copy.validate_categorical();
    return copy;
  }

  // Equivalent dense copy (absent CSR entries become explicit zeros).
  Dataset to_dense() const {
    if (!sparse_) return *this;
    std::vector<double> values(n_rows_ * n_features_, 0.0);
    for (std::size_t r = 0; r < n_rows_; ++r) fill_row(r, std::span<double>(values).subspan(r * n_features_, n_features_));
    return dense(n_rows_, n_features_, std::move(values), schema_, target_, missing_cells());
  }

 private:
  std::uint64_t cell_id(std::size_t row, std::size_t feature) const noexcept {
    return static_cast<std::uint64_t>(row) * n_features_ + feature;
  }

  void finish(FeatureSchema schema, std::optional<Target> target, std::vector<Cell> missing) {
    if (schema.size() == 0 && n_features_ > 0) schema = FeatureSchema::all_continuous(n_features_);
    if (schema.size() != n_features_) throw Error(ErrorKind::schema, "schema size does not match n_features");
    schema_ = std::move(schema);
    if (target && target->size() != n_rows_) throw Error(ErrorKind::argument, "target length does not match n_rows");
    target_ = std::move(target);
    set_missing(std::move(missing));
    validate_target();
    validate_categorical();
  }

  void set_missing(std::vector<Cell> missing) {
    missing_.clear();
    missing_.reserve(missing.size());
    for (const auto& c : missing) {
      if (c.row >= n_rows_ || c.feature >= n_features_)
        throw Error(ErrorKind::index, "missing cell (" + std::to_string(c.row) + ", " + std::to_string(c.feature) +
                                          ") out of bounds");
      missing_.push_back(cell_id(c.row, c.feature));
    }
    std::sort(missing_.begin(), missing_.end());
    missing_.erase(std::unique(missing_.begin(), missing_.end()), missing_.end());
  }

  void validate_target() const {
    if (!target_ || target_->kind != TargetKind::classes) return;
    for (double v : target_->values) {
      if (!(v >= 0.0) || v != std::floor(v) || v >= target_->n_classes)
        throw Error(ErrorKind::argument, "class label outside 0..K-1");
    }
  }

  void validate_categorical() const {
    for (std::size_t f = 0; f < n_features_; ++f) {
      if (!schema_.is_categorical(f)) continue;
      const auto n_cats = static_cast<double>(schema_[f].categories.size());
      for (std::size_t r = 0; r < n_rows_; ++r) {
        if (is_missing(r, f)) continue;
        const double v = value(r, f);
        if (!(v >= 0.0) || v != std::floor(v) || v >= n_cats)
          throw Error(ErrorKind::schema, "categorical value out of range at row " + std::to_string(r) + ", feature '" +
                                             schema_[f].name + "'");
      }
    }
  }

  std::size_t n_rows_ = 0;
  std::size_t n_features_ = 0;
  bool sparse_ = false;
  std::vector<double> dense_;
  CsrMatrix csr_;
  std::vector<std::uint64_t> missing_;  // sorted cell ids row * n_features + feature
  FeatureSchema schema_;
  std::optional<Target> target_;
};

// Stacks two datasets with identical schema and storage kind. Targets and
// missing masks are dropped; callers attach what they need.
inline Dataset concat_rows(const Dataset& a, const Dataset& b) {
  if (a.n_features() != b.n_features()) throw Error(ErrorKind::argument, "feature count mismatch");
  const std::size_t n = a.n_rows() + b.n_rows();
  if (!a.is_sparse() && !b.is_sparse()) {
    std::vector<double> values = a.dense_values();
    values.insert(values.end(), b.dense_values().begin(), b.dense_values().end());
    return Dataset::dense(n, a.n_features(), std::move(values), a.schema());
  }
  CsrMatrix m;
  std::vector<double> row(a.n_features());
  for (const Dataset* part : {&a, &b}) {
    for (std::size_t r = 0; r < part->n_rows(); ++r) {
      part->fill_row(r, row);
      for (std::size_t f = 0; f < row.size(); ++f) {
        if (row[f] != 0.0) {
          m.columns.push_back(static_cast<std::uint32_t>(f));
          m.values.push_back(row[f]);
        }
      }
      m.offsets.push_back(m.columns.size());
    }
  }
  return Dataset::csr(n, a.n_features(), std::move(m), a.schema());
}

// ---------------------------------------------------------------------------
// Text formats
// ---------------------------------------------------------------------------

namespace detail {

inline std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t' || s.front() == '\r')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
  return s;
}

// Comma-separated fields with optional double-quote quoting ("" escapes a quote).
inline std::vector<std::string> split_csv_line(std::string_view line) {
  std::vector<std::string> fields;
  std::string current;
  bool quoted = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    const char c = line[i];
    if (quoted) {
      if (c == '"') {
        if (i + 1 < line.size() && line[i + 1] == '"') {
          current.push_back('"');
          ++i;
        } else {
          quoted = false;
        }
      } else {
        current.push_back(c);
      }
    } else if (c == '"') {
      quoted = true;
    } else if (c == ',') {
      fields.emplace_back(trim(current));
      current.clear();
    } else {
      current.push_back(c);
    }
  }
  fields.emplace_back(trim(current));
  return fields;
}

inline std::optional<double> parse_double(std::string_view s) {
  s = trim(s);
  if (s.empty()) return std::nullopt;
  if (s.front() == '+') s.remove_prefix(1);
  double v = 0.0;
  const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || ptr != s.data() + s.size()) return std::nullopt;
  return v;
}

inline std::string format_double(double v) {
  char buf[64];
  const auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, ptr);
}

inline std::ifstream open_input(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorKind::io, "cannot open '" + path + "'");
  return in;
}

}  // namespace detail

// Schema sidecar: one `name,kind[,cat1|cat2|...]` entry per line. Blank lines
// and lines starting with '#' are ignored.
inline FeatureSchema parse_schema(std::istream& in) {
  std::vector<FeatureSpec> specs;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const auto t = detail::trim(line);
    if (t.empty() || t.front() == '#') continue;
    const auto fields = detail::split_csv_line(t);
    if (fields.size() < 2 || fields.size() > 3)
      throw Error(ErrorKind::schema, "line " + std::to_string(line_no) + ": expected name,kind[,categories]");
    FeatureSpec spec;
    spec.name = fields[0];
    if (fields[1] == "continuous") {
      spec.kind = FeatureKind::continuous;
    } else if (fields[1] == "categorical") {
      spec.kind = FeatureKind::categorical;
    } else {
      throw Error(ErrorKind::schema, "line " + std::to_string(line_no) + ": unknown kind '" + fields[1] + "'");
    }
    if (fields.size() == 3) {
      std::string_view rest = fields[2];
      while (!rest.empty()) {
        const auto bar = rest.find('|');
        spec.categories.emplace_back(detail::trim(rest.substr(0, bar)));
        if (bar == std::string_view::npos) break;
        rest.remove_prefix(bar + 1);
      }
    }
    specs.push_back(std::move(spec));
  }
  return FeatureSchema(std::move(specs));
}

inline FeatureSchema load_schema(const std::string& path) {
  auto in = detail::open_input(path);
  return parse_schema(in);
}

inline void write_schema(const FeatureSchema& schema, std::ostream& out) {
  for (const auto& f : schema.features()) {
    out << f.name << ',' << (f.kind == FeatureKind::categorical ? "categorical" : "continuous");
    if (!f.categories.empty()) {
      out << ',';
      for (std::size_t c = 0; c < f.categories.size(); ++c) out << (c ? "|" : "") << f.categories[c];
    }
    out << '\n';
  }
}

struct CsvOptions {
  std::optional<std::string> target_column;
  std::string missing_token = "NA";
};

// Dense CSV with a header row. The header must list the schema's features in
// order, with the target column (if any) allowed at any position. A schema
// entry named like the target column describes the target instead of a
// feature: categorical -> class labels, continuous -> regression values.
inline Dataset parse_dense_csv(std::istream& in, const FeatureSchema& schema, const CsvOptions& options = {}) {
  std::string line;
  if (!std::getline(in, line)) throw Error(ErrorKind::format, "empty CSV input (header row required)");
  const auto header = detail::split_csv_line(line);

  std::optional<std::size_t> target_col;
  std::optional<FeatureSpec> target_spec;
  std::vector<FeatureSpec> feature_specs = schema.features();
  if (options.target_column) {
    for (std::size_t c = 0; c < header.size(); ++c)
      if (header[c] == *options.target_column) target_col = c;
    if (!target_col) throw Error(ErrorKind::schema, "target column '" + *options.target_column + "' not in header");
    auto it = std::find_if(feature_specs.begin(), feature_specs.end(),
                           [&](const FeatureSpec& f) { return f.name == *options.target_column; });
    if (it != feature_specs.end()) {
      target_spec = *it;
      feature_specs.erase(it);
    }
  }
  const FeatureSchema features(feature_specs);
  const std::size_t m = features.size();
  if (header.size() != m + (target_col ? 1 : 0))
    throw Error(ErrorKind::schema, "header has " + std::to_string(header.size()) + " columns, schema expects " +
                                       std::to_string(m + (target_col ? 1 : 0)));
  std::vector<std::size_t> feature_of_col(header.size(), m);
  {
    std::size_t f = 0;
    for (std::size_t c = 0; c < header.size(); ++c) {
      if (target_col && c == *target_col) continue;
      if (header[c] != features[f].name)
        throw Error(ErrorKind::schema, "header column '" + header[c] + "' does not match schema feature '" +
                                           features[f].name + "'");
      feature_of_col[c] = f++;
    }
  }

  std::vector<double> values;
  std::vector<Cell> missing;
  std::vector<double> target_values;
  std::size_t row = 0;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (detail::trim(line).empty()) continue;
    const auto fields = detail::split_csv_line(line);
    if (fields.size() != header.size())
      throw Error(ErrorKind::format, "line " + std::to_string(line_no) + ": expected " + std::to_string(header.size()) +
                                         " fields, got " + std::to_string(fields.size()));
    for (std::size_t c = 0; c < fields.size(); ++c) {
      const auto& cell = fields[c];
      if (target_col && c == *target_col) {
        if (cell == options.missing_token)
          throw Error(ErrorKind::parse, "line " + std::to_string(line_no) + ": missing target value");
        if (target_spec && target_spec->kind == FeatureKind::categorical) {
          auto code = std::find(target_spec->categories.begin(), target_spec->categories.end(), cell);
          if (code == target_spec->categories.end())
            throw Error(ErrorKind::schema, "row " + std::to_string(row) + ", column '" + header[c] +
                                               "': unknown category '" + cell + "'");
          target_values.push_back(static_cast<double>(code - target_spec->categories.begin()));
        } else {
          const auto v = detail::parse_double(cell);
          if (!v)
            throw Error(ErrorKind::parse, "row " + std::to_string(row) + ", column '" + header[c] +
                                              "': non-numeric target '" + cell + "'");
          target_values.push_back(*v);
        }
        continue;
      }
      const std::size_t f = feature_of_col[c];
      if (cell == options.missing_token) {
        missing.push_back({row, f});
        values.push_back(std::nan(""));
        continue;
      }
      if (features.is_categorical(f)) {
        const auto code = features.category_code(f, cell);
        if (!code)
          throw Error(ErrorKind::schema, "row " + std::to_string(row) + ", column '" + header[c] +
                                             "': unknown category '" + cell + "'");
        values.push_back(static_cast<double>(*code));
      } else {
        const auto v = detail::parse_double(cell);
        if (!v)
          throw Error(ErrorKind::parse, "row " + std::to_string(row) + ", column '" + header[c] +
                                            "': non-numeric value '" + cell + "'");
        values.push_back(*v);
      }
    }
    ++row;
  }

  std::optional<Target> target;
  if (target_col) {
    if (target_spec && target_spec->kind == FeatureKind::categorical) {
      Target t;
      t.kind = TargetKind::classes;
      t.n_classes = static_cast<int>(target_spec->categories.size());
      t.labels = target_spec->categories;
      t.values = std::move(target_values);
      target = std::move(t);
    } else if (target_spec) {
      target = make_regression_target(std::move(target_values));
    } else {
      target = make_numeric_target(std::move(target_values));
    }
  }
  return Dataset::dense(row, m, std::move(values), features, std::move(target), std::move(missing));
}

inline Dataset load_dense_csv(const std::string& path, const FeatureSchema& schema, const CsvOptions& options = {}) {
  auto in = detail::open_input(path);
  return parse_dense_csv(in, schema, options);
}

// Reads only the header row; used to build an all-continuous schema when no
// sidecar schema is supplied.
inline std::vector<std::string> read_csv_header(const std::string& path) {
  auto in = detail::open_input(path);
  std::string line;
  if (!std::getline(in, line)) throw Error(ErrorKind::format, "empty CSV file '" + path + "'");
  return detail::split_csv_line(line);
}

// SVMLight / libsvm: `<target> <col>:<value> ...` per line, 1-based columns.
inline Dataset parse_sparse_svmlight(std::istream& in, std::size_t n_features, FeatureSchema schema = {}) {
  CsrMatrix m;
  std::vector<double> targets;
  std::string line;
  std::size_t line_no = 0;
  std::size_t rows = 0;
  while (std::getline(in, line)) {
    ++line_no;
    std::string_view rest = detail::trim(line);
    if (const auto hash = rest.find('#'); hash != std::string_view::npos) rest = detail::trim(rest.substr(0, hash));
    if (rest.empty()) continue;
    std::istringstream tokens{std::string(rest)};
    std::string tok;
    tokens >> tok;
    const auto label = detail::parse_double(tok);
    if (!label) throw Error(ErrorKind::parse, "line " + std::to_string(line_no) + ": bad target '" + tok + "'");
    targets.push_back(*label);
    std::size_t prev = 0;
    while (tokens >> tok) {
      const auto colon = tok.find(':');
      if (colon == std::string::npos)
        throw Error(ErrorKind::format, "line " + std::to_string(line_no) + ": expected col:value, got '" + tok + "'");
      std::size_t col = 0;
      const auto [p, ec] = std::from_chars(tok.data(), tok.data() + colon, col);
      if (ec != std::errc() || p != tok.data() + colon)
        throw Error(ErrorKind::format, "line " + std::to_string(line_no) + ": bad column index '" + tok + "'");
      if (col == 0 || col > n_features)
        throw Error(ErrorKind::format, "line " + std::to_string(line_no) + ": column " + std::to_string(col) +
                                           " outside 1.." + std::to_string(n_features));
      if (col <= prev)
        throw Error(ErrorKind::format, "line " + std::to_string(line_no) + ": columns must be strictly increasing");
      prev = col;
      const auto v = detail::parse_double(std::string_view(tok).substr(colon + 1));
      if (!v) throw Error(ErrorKind::parse, "line " + std::to_string(line_no) + ": bad value in '" + tok + "'");
      m.columns.push_back(static_cast<std::uint32_t>(col - 1));
      m.values.push_back(*v);
    }
    m.offsets.push_back(m.columns.size());
    ++rows;
  }
  if (schema.size() == 0) schema = FeatureSchema::all_continuous(n_features);
  for (std::size_t f = 0; f < schema.size(); ++f)
    if (schema.is_categorical(f)) throw Error(ErrorKind::schema, "SVMLight features must be continuous");
  return Dataset::csr(rows, n_features, std::move(m), std::move(schema), make_numeric_target(std::move(targets)));
}

inline Dataset load_sparse_svmlight(const std::string& path, std::size_t n_features, FeatureSchema schema = {}) {
  auto in = detail::open_input(path);
  return parse_sparse_svmlight(in, n_features, std::move(schema));
}

// Sidecar missing mask for sparse inputs: `row,feature` per line, both 0-based.
inline std::vector<Cell> parse_missing_mask(std::istream& in) {
  std::vector<Cell> cells;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const auto t = detail::trim(line);
    if (t.empty() || t.front() == '#') continue;
    const auto fields = detail::split_csv_line(t);
    const auto r = fields.size() == 2 ? detail::parse_double(fields[0]) : std::nullopt;
    const auto f = fields.size() == 2 ? detail::parse_double(fields[1]) : std::nullopt;
    if (!r || !f || *r < 0 || *f < 0)
      throw Error(ErrorKind::format, "mask line " + std::to_string(line_no) + ": expected row,feature");
    cells.push_back({static_cast<std::size_t>(*r), static_cast<std::size_t>(*f)});
  }
  return cells;
}

inline std::vector<Cell> load_missing_mask(const std::string& path) {
  auto in = detail::open_input(path);
  return parse_missing_mask(in);
}

// Canonical dense CSV: shortest round-trip float formatting, category labels
// for categorical cells, missing_token for masked cells.
inline void write_dense_csv(const Dataset& ds, std::ostream& out, const std::string& missing_token = "NA",
                            const std::string& target_name = "target") {
  const auto& schema = ds.schema();
  for (std::size_t f = 0; f < ds.n_features(); ++f) out << (f ? "," : "") << schema[f].name;
  if (ds.has_target()) out << (ds.n_features() ? "," : "") << target_name;
  out << '\n';
  for (std::size_t r = 0; r < ds.n_rows(); ++r) {
    for (std::size_t f = 0; f < ds.n_features(); ++f) {
      if (f) out << ',';
      if (ds.is_missing(r, f)) {
        out << missing_token;
      } else if (schema.is_categorical(f)) {
        out << schema[f].categories.at(static_cast<std::size_t>(ds.value(r, f)));
      } else {
        out << detail::format_double(ds.value(r, f));
      }
    }
    if (ds.has_target()) {
      const auto& t = *ds.target();
      out << (ds.n_features() ? "," : "");
      if (t.kind == TargetKind::classes && !t.labels.empty())
        out << t.labels.at(static_cast<std::size_t>(t.values[r]));
      else
        out << detail::format_double(t.values[r]);
    }
    out << '\n';
  }
}

// 64-bit FNV-1a over shape, cell values, missing mask and target.
inline std::uint64_t fingerprint(const Dataset& ds) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  auto feed = [&](std::uint64_t word) {
    for (int b = 0; b < 8; ++b) {
      h ^= (word >> (8 * b)) & 0xffU;
      h *= 0x100000001b3ULL;
    }
  };
  auto feed_double = [&](double v) {
    if (v == 0.0) v = 0.0;  // fold -0.0
    feed(std::bit_cast<std::uint64_t>(v));
  };
  feed(ds.n_rows());
  feed(ds.n_features());
  for (std::size_t r = 0; r < ds.n_rows(); ++r)
    for (std::size_t f = 0; f < ds.n_features(); ++f) {
      if (ds.is_missing(r, f))
        feed(0x6d697373696e67ULL);
      else
        feed_double(ds.value(r, f));
    }
  if (ds.has_target()) {
    feed(static_cast<std::uint64_t>(ds.target()->kind));
    for (double v : ds.target()->values) feed_double(v);
  }
  return h;
}

}  // namespace forestfuse
