#include <gtest/gtest.h>

#include <algorithm>
#include <sstream>
#include <string>

#include "forestfuse/dataset.hpp"
#include "forestfuse/rng.hpp"

using namespace forestfuse;

namespace {

ErrorKind kind_of(auto&& fn) {
  try {
    fn();
  } catch (const Error& e) {
    return e.kind();
  }
  ADD_FAILURE() << "no error raised";
  return ErrorKind::io;
}

FeatureSchema mixed_schema() {
  std::istringstream s("a,continuous\ncolor,categorical,red|green|blue\n# note\n\nb,continuous\n");
  return parse_schema(s);
}

std::size_t count_token(const std::string& text, const std::string& token) {
  std::size_t n = 0;
  std::istringstream in(text);
  std::string line;
  std::getline(in, line);
  while (std::getline(in, line)) {
    std::istringstream fields(line);
    std::string f;
    while (std::getline(fields, f, ','))
      if (f == token) ++n;
  }
  return n;
}

}  // namespace

TEST(Schema, ParsesKindsAndCategories) {
  const auto s = mixed_schema();
  ASSERT_EQ(s.size(), 3u);
  EXPECT_TRUE(s.is_categorical(1));
  EXPECT_EQ(s[1].categories, (std::vector<std::string>{"red", "green", "blue"}));
  EXPECT_EQ(s.category_code(1, "blue"), 2);
  EXPECT_FALSE(s.category_code(1, "pink"));
  std::istringstream bad("x,weird\n");
  EXPECT_EQ(kind_of([&] { parse_schema(bad); }), ErrorKind::schema);
}

TEST(DenseCsv, MissingTokensMatchMask) {
  const std::string text = "a,color,b\n1,red,NA\nNA,NA,2.5\n3,blue,4\nNA,green,NA\n";
  std::istringstream in(text);
  const auto ds = parse_dense_csv(in, mixed_schema());
  EXPECT_EQ(ds.n_rows(), 4u);
  EXPECT_EQ(ds.n_missing(), count_token(text, "NA"));
  EXPECT_TRUE(ds.is_missing(0, 2));
  EXPECT_FALSE(ds.get(1, 1).has_value());
  EXPECT_EQ(ds.get(2, 1), 2.0);
  EXPECT_EQ(ds.get(0, 0), 1.0);
}

TEST(DenseCsv, TargetColumnAnywhere) {
  std::istringstream schema("y,categorical,no|yes\nx,continuous\n");
  std::istringstream in("y,x\nyes,1\nno,2\nyes,3\n");
  CsvOptions opts;
  opts.target_column = "y";
  const auto ds = parse_dense_csv(in, parse_schema(schema), opts);
  ASSERT_TRUE(ds.has_target());
  EXPECT_EQ(ds.n_features(), 1u);
  EXPECT_EQ(ds.target()->n_classes, 2);
  EXPECT_EQ(ds.target()->values, (std::vector<double>{1, 0, 1}));
  EXPECT_EQ(ds.target()->labels[1], "yes");
}

TEST(DenseCsv, ErrorKinds) {
  const auto s = mixed_schema();
  auto parse = [&](const std::string& text) {
    std::istringstream in(text);
    return parse_dense_csv(in, s);
  };
  EXPECT_EQ(kind_of([&] { parse("a,color,b\n1,pink,2\n"); }), ErrorKind::schema);
  EXPECT_EQ(kind_of([&] { parse("a,color,b\nx,red,2\n"); }), ErrorKind::parse);
  EXPECT_EQ(kind_of([&] { parse("a,color,b\n1,red\n"); }), ErrorKind::format);
  EXPECT_EQ(kind_of([&] { parse("a,b,color\n1,2,red\n"); }), ErrorKind::schema);
  EXPECT_EQ(kind_of([&] { parse(""); }), ErrorKind::format);
  EXPECT_EQ(kind_of([&] { load_dense_csv("/nonexistent/file.csv", s); }), ErrorKind::io);
}

TEST(DenseCsv, WriteParseRoundTripProperty) {
  for (std::uint64_t seed = 1; seed <= 25; ++seed) {
    Rng rng(seed);
    const std::size_t n = 1 + rng.uniform_index(30);
    std::vector<double> v(n * 3);
    std::vector<Cell> missing;
    for (std::size_t i = 0; i < n; ++i) {
      v[i * 3] = rng.normal() * 1e3;
      v[i * 3 + 1] = static_cast<double>(rng.uniform_index(3));
      v[i * 3 + 2] = rng.uniform() / 3.0;
      for (std::size_t f = 0; f < 3; ++f)
        if (rng.uniform() < 0.15) missing.push_back({i, f});
    }
    const auto ds = Dataset::dense(n, 3, v, mixed_schema(), std::nullopt, missing);
    std::ostringstream out;
    write_dense_csv(ds, out);
    std::istringstream in(out.str());
    const auto back = parse_dense_csv(in, mixed_schema());
    EXPECT_EQ(fingerprint(back), fingerprint(ds)) << out.str();
    EXPECT_EQ(back.missing_cells().size(), missing.size());
  }
}

TEST(Svmlight, NonzeroCountMatchesColonCount) {
  const std::string text = "1 1:0.5 3:2\n0 2:-1\n# comment\n1\n0 1:1 2:2 3:3 # trailing\n";
  std::istringstream in(text);
  const auto ds = parse_sparse_svmlight(in, 3);
  const auto colons = std::count(text.begin(), text.end(), ':');
  EXPECT_EQ(ds.n_rows(), 4u);
  EXPECT_TRUE(ds.is_sparse());
  EXPECT_EQ(static_cast<long>(ds.csr_matrix().values.size()), colons);
  EXPECT_EQ(ds.value(0, 1), 0.0);
  EXPECT_EQ(ds.value(0, 2), 2.0);
  EXPECT_EQ(ds.target()->values, (std::vector<double>{1, 0, 1, 0}));
}

TEST(Svmlight, ErrorKinds) {
  auto parse = [](const std::string& text) {
    std::istringstream in(text);
    return parse_sparse_svmlight(in, 3);
  };
  EXPECT_EQ(kind_of([&] { parse("1 0:1\n"); }), ErrorKind::format);
  EXPECT_EQ(kind_of([&] { parse("1 4:1\n"); }), ErrorKind::format);
  EXPECT_EQ(kind_of([&] { parse("1 2:1 1:1\n"); }), ErrorKind::format);
  EXPECT_EQ(kind_of([&] { parse("1 2-1\n"); }), ErrorKind::format);
  EXPECT_EQ(kind_of([&] { parse("1 2:abc\n"); }), ErrorKind::parse);
  EXPECT_EQ(kind_of([&] { parse("x 2:1\n"); }), ErrorKind::parse);
}

TEST(Sparse, CsrMatchesDenseView) {
  for (std::uint64_t seed = 1; seed <= 10; ++seed) {
    Rng rng(seed);
    const std::size_t n = 20, m = 6;
    CsrMatrix csr;
    std::vector<double> dense(n * m, 0.0);
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t f = 0; f < m; ++f)
        if (rng.uniform() < 0.3) {
          const double v = rng.normal();
          csr.columns.push_back(static_cast<std::uint32_t>(f));
          csr.values.push_back(v);
          dense[i * m + f] = v;
        }
      csr.offsets.push_back(csr.columns.size());
    }
    const auto s = Dataset::csr(n, m, csr);
    const auto d = Dataset::dense(n, m, dense);
    EXPECT_EQ(fingerprint(s), fingerprint(d));
    EXPECT_EQ(s.to_dense().dense_values(), dense);
    for (std::size_t i = 0; i < n; ++i) EXPECT_EQ(s.row(i), d.row(i));
  }
}

TEST(Sparse, MalformedCsrIsFormatError) {
  CsrMatrix bad;
  bad.offsets = {0, 1};
  bad.columns = {5};
  bad.values = {1.0};
  EXPECT_EQ(kind_of([&] { Dataset::csr(1, 3, bad); }), ErrorKind::format);
}

TEST(Mask, ParsesZeroBasedCellsAndMarksSparseCells) {
  std::istringstream mask("# row,feature\n0,2\n1,0\n");
  const auto cells = parse_missing_mask(mask);
  ASSERT_EQ(cells.size(), 2u);
  std::istringstream in("1 1:5 3:7\n0 2:1\n");
  const auto ds = parse_sparse_svmlight(in, 3).with_missing(cells);
  EXPECT_TRUE(ds.is_missing(0, 2));
  EXPECT_TRUE(ds.is_missing(1, 0));
  EXPECT_FALSE(ds.is_missing(1, 1));
  EXPECT_FALSE(ds.get(0, 2).has_value());
  // Unstored sparse cells outside the mask are zeros, not missing.
  EXPECT_EQ(ds.get(0, 1), 0.0);
  std::istringstream bad("0;1\n");
  EXPECT_EQ(kind_of([&] { parse_missing_mask(bad); }), ErrorKind::format);
}

TEST(Dataset, AccessorsAndModifiers) {
  const auto ds = Dataset::dense(2, 2, {1, 2, 3, 4});
  EXPECT_EQ(ds.column(1), (std::vector<double>{2, 4}));
  EXPECT_EQ(kind_of([&] { ds.get(2, 0); }), ErrorKind::index);
  EXPECT_EQ(kind_of([&] { Dataset::dense(2, 2, {1, 2, 3}); }), ErrorKind::argument);
  const auto masked = ds.with_missing({{1, 1}});
  EXPECT_EQ(masked.n_missing(), 1u);
  const std::vector<Cell> cells{{1, 1}};
  const std::vector<double> vals{9.0};
  const auto filled = masked.with_values(cells, vals);
  EXPECT_EQ(filled.n_missing(), 0u);
  EXPECT_EQ(filled.value(1, 1), 9.0);
  EXPECT_NE(fingerprint(ds), fingerprint(masked));
  EXPECT_NE(fingerprint(ds), fingerprint(filled));
}

TEST(DenseCsv, TwoByTwoReadback) {
  std::istringstream in("a,b\n1.0,2.0\n3.0,NA\n");
  const auto ds = parse_dense_csv(in, FeatureSchema::all_continuous({"a", "b"}));
  EXPECT_EQ(ds.n_rows(), 2u);
  const auto cells = ds.missing_cells();
  ASSERT_EQ(cells.size(), 1u);
  EXPECT_EQ(cells[0].row, 1u);
  EXPECT_EQ(cells[0].feature, 1u);
  EXPECT_EQ(ds.value(1, 0), 3.0);
}
