#pragma once

#include <algorithm>
#include <array>
#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <iterator>
#include <optional>
#include <sstream>
#include <string>
#include <type_traits>
#include <vector>

#include "forestfuse/dataset.hpp"
#include "forestfuse/error.hpp"
#include "forestfuse/forest.hpp"
#include "forestfuse/proximity.hpp"

namespace forestfuse {

inline constexpr std::uint32_t kModelFormatVersion = 1;
inline constexpr std::array<char, 8> kModelMagic = {'F', 'F', 'O', 'R', 'E', 'S', 'T', '\x1a'};

struct TrainingFingerprint {
  std::uint64_t n_rows = 0;
  std::uint64_t n_features = 0;
  std::uint64_t seed = 0;
  std::uint64_t content_hash = 0;

  bool operator==(const TrainingFingerprint&) const = default;
};

struct ModelArtifact {
  std::uint32_t format_version = kModelFormatVersion;
  Forest forest;
  std::optional<LeafIndex> index;
  std::string target_name;                // empty when trained without a target
  std::vector<std::string> class_labels;  // display labels for class codes, may be empty

  bool operator==(const ModelArtifact&) const = default;

  TrainingFingerprint fingerprint() const {
    return {forest.n_real_rows(), forest.n_features, forest.config.seed, forest.data_fingerprint};
  }
};

namespace detail {

enum class Section : std::uint32_t {
  config = 1,
  schema = 2,
  trees = 3,
  inbag = 4,
  leaf_of_train = 5,
  summary = 6,
  target = 7,
  index = 8,
};

class ByteWriter {
 public:
  template <class T>
  void put(T v) {
    static_assert(std::is_arithmetic_v<T>);
    std::array<unsigned char, sizeof(T)> raw;
    std::memcpy(raw.data(), &v, sizeof(T));
    if constexpr (std::endian::native == std::endian::big) std::reverse(raw.begin(), raw.end());
    bytes_.insert(bytes_.end(), raw.begin(), raw.end());
  }
  void put_u64(std::uint64_t v) { put(v); }
  void put_string(const std::string& s) {
    put_u64(s.size());
    bytes_.insert(bytes_.end(), s.begin(), s.end());
  }
  template <class T>
  void put_vector(const std::vector<T>& v) {
    put_u64(v.size());
    for (const auto& x : v) put(x);
  }
  void append(const std::vector<unsigned char>& other) { bytes_.insert(bytes_.end(), other.begin(), other.end()); }
  const std::vector<unsigned char>& bytes() const noexcept { return bytes_; }

 private:
  std::vector<unsigned char> bytes_;
};

class ByteReader {
 public:
  ByteReader(const unsigned char* data, std::size_t size) : data_(data), size_(size) {}

  template <class T>
  T get() {
    need(sizeof(T));
    std::array<unsigned char, sizeof(T)> raw;
    std::memcpy(raw.data(), data_ + pos_, sizeof(T));
    if constexpr (std::endian::native == std::endian::big) std::reverse(raw.begin(), raw.end());
    pos_ += sizeof(T);
    T v;
    std::memcpy(&v, raw.data(), sizeof(T));
    return v;
  }
  std::uint64_t get_u64() { return get<std::uint64_t>(); }
  std::size_t get_count(std::size_t element_size) {
    const auto n = get_u64();
    if (element_size > 0 && n > (size_ - pos_) / element_size) throw Error(ErrorKind::format, "model file is truncated");
    return static_cast<std::size_t>(n);
  }
  std::string get_string() {
    const auto n = get_count(1);
    std::string s(reinterpret_cast<const char*>(data_ + pos_), n);
    pos_ += n;
    return s;
  }
  template <class T>
  std::vector<T> get_vector() {
    std::vector<T> v(get_count(sizeof(T)));
    for (auto& x : v) x = get<T>();
    return v;
  }
  bool done() const noexcept { return pos_ == size_; }
  std::size_t position() const noexcept { return pos_; }
  void skip(std::size_t n) {
    need(n);
    pos_ += n;
  }

 private:
  void need(std::size_t n) const {
    if (size_ - pos_ < n) throw Error(ErrorKind::format, "model file is truncated");
  }
  const unsigned char* data_;
  std::size_t size_;
  std::size_t pos_ = 0;
};

inline void write_section(ByteWriter& out, Section tag, const ByteWriter& payload) {
  out.put(static_cast<std::uint32_t>(tag));
  out.put_u64(payload.bytes().size());
  out.append(payload.bytes());
}

inline ByteWriter encode_config(const ForestConfig& c) {
  ByteWriter w;
  w.put(static_cast<std::uint8_t>(c.mode));
  w.put_u64(c.n_trees);
  w.put_u64(c.mtry);
  w.put_u64(c.min_node_size);
  w.put(static_cast<std::uint8_t>(c.max_depth.has_value()));
  w.put_u64(c.max_depth.value_or(0));
  w.put(static_cast<std::uint8_t>(c.split_strategy));
  w.put_u64(c.n_bins);
  w.put_u64(c.seed);
  w.put(static_cast<std::uint8_t>(c.proximity_pairs));
  return w;
}

inline ForestConfig decode_config(ByteReader& r) {
  ForestConfig c;
  const auto mode = r.get<std::uint8_t>();
  if (mode > 2) throw Error(ErrorKind::format, "unknown forest mode in model file");
  c.mode = static_cast<Mode>(mode);
  c.n_trees = r.get_u64();
  c.mtry = r.get_u64();
  c.min_node_size = r.get_u64();
  const bool has_depth = r.get<std::uint8_t>() != 0;
  const auto depth = r.get_u64();
  if (has_depth) c.max_depth = depth;
  c.split_strategy = static_cast<SplitStrategy>(r.get<std::uint8_t>());
  c.n_bins = r.get_u64();
  c.seed = r.get_u64();
  c.proximity_pairs = static_cast<PairMode>(r.get<std::uint8_t>());
  return c;
}

inline ByteWriter encode_schema(const FeatureSchema& schema) {
  ByteWriter w;
  w.put_u64(schema.size());
  for (const auto& f : schema.features()) {
    w.put_string(f.name);
    w.put(static_cast<std::uint8_t>(f.kind));
    w.put_u64(f.categories.size());
    for (const auto& c : f.categories) w.put_string(c);
  }
  return w;
}

inline FeatureSchema decode_schema(ByteReader& r) {
  std::vector<FeatureSpec> specs(r.get_count(9));
  for (auto& f : specs) {
    f.name = r.get_string();
    f.kind = r.get<std::uint8_t>() ? FeatureKind::categorical : FeatureKind::continuous;
    f.categories.resize(r.get_count(8));
    for (auto& c : f.categories) c = r.get_string();
  }
  return FeatureSchema(std::move(specs));
}

inline ByteWriter encode_trees(const std::vector<Tree>& trees) {
  ByteWriter w;
  w.put_u64(trees.size());
  for (const auto& t : trees) {
    w.put_u64(t.width);
    w.put_u64(t.nodes.size());
    for (const auto& n : t.nodes) {
      w.put(n.feature);
      w.put(n.threshold);
      w.put(n.left);
      w.put(n.right);
      w.put(n.leaf);
      w.put(n.gain);
    }
    w.put_vector(t.leaf_values);
    w.put_vector(t.leaf_sizes);
  }
  return w;
}

inline std::vector<Tree> decode_trees(ByteReader& r, std::size_t n_features) {
  std::vector<Tree> trees(r.get_count(24));
  for (auto& t : trees) {
    t.width = r.get_u64();
    t.nodes.resize(r.get_count(36));
    for (auto& n : t.nodes) {
      n.feature = r.get<std::int32_t>();
      n.threshold = r.get<double>();
      n.left = r.get<std::int32_t>();
      n.right = r.get<std::int32_t>();
      n.leaf = r.get<std::int32_t>();
      n.gain = r.get<double>();
    }
    t.leaf_values = r.get_vector<double>();
    t.leaf_sizes = r.get_vector<std::uint32_t>();
    // Structural checks so a corrupt file cannot send traversal out of bounds.
    const auto n_nodes = static_cast<std::int32_t>(t.nodes.size());
    if (t.nodes.empty() || t.width == 0 || t.leaf_values.size() != t.leaf_sizes.size() * t.width)
      throw Error(ErrorKind::format, "malformed tree in model file");
    for (std::int32_t i = 0; i < n_nodes; ++i) {
      const auto& n = t.nodes[static_cast<std::size_t>(i)];
      if (n.is_leaf()) {
        if (n.leaf < 0 || static_cast<std::size_t>(n.leaf) >= t.leaf_sizes.size())
          throw Error(ErrorKind::format, "malformed leaf in model file");
      } else if (static_cast<std::size_t>(n.feature) >= n_features || n.left <= i || n.right <= i || n.left >= n_nodes ||
                 n.right >= n_nodes) {
        throw Error(ErrorKind::format, "malformed split node in model file");
      }
    }
  }
  return trees;
}

}  // namespace detail

inline std::vector<unsigned char> serialize(const ModelArtifact& model) {
  using detail::Section;
  const Forest& f = model.forest;
  detail::ByteWriter out;
  for (char c : kModelMagic) out.put(static_cast<std::uint8_t>(c));
  out.put(model.format_version);
  out.put(static_cast<std::uint32_t>(model.index ? 8 : 7));

  detail::write_section(out, Section::config, detail::encode_config(f.config));
  detail::write_section(out, Section::schema, detail::encode_schema(f.schema));
  detail::write_section(out, Section::trees, detail::encode_trees(f.trees));
  {
    detail::ByteWriter w;
    w.put_u64(f.inbag.size());
    for (const auto& v : f.inbag) w.put_vector(v);
    detail::write_section(out, Section::inbag, w);
  }
  {
    detail::ByteWriter w;
    w.put_vector(f.leaf_of_train);
    detail::write_section(out, Section::leaf_of_train, w);
  }
  {
    detail::ByteWriter w;
    w.put_u64(f.n_features);
    w.put_u64(f.n_train);
    w.put_u64(f.synthetic_offset);
    w.put(static_cast<std::int32_t>(f.n_classes));
    w.put(f.oob_error);
    w.put_u64(f.oob_skipped);
    w.put_u64(f.data_fingerprint);
    detail::write_section(out, Section::summary, w);
  }
  {
    detail::ByteWriter w;
    w.put_string(model.target_name);
    w.put_u64(model.class_labels.size());
    for (const auto& l : model.class_labels) w.put_string(l);
    detail::write_section(out, Section::target, w);
  }
  if (model.index) {
    detail::ByteWriter w;
    w.put_u64(model.index->n_rows());
    w.put_u64(model.index->n_trees());
    for (std::size_t t = 0; t < model.index->n_trees(); ++t) {
      w.put_vector(model.index->offsets()[t]);
      w.put_vector(model.index->rows()[t]);
    }
    detail::write_section(out, Section::index, w);
  }
  return out.bytes();
}

inline ModelArtifact deserialize(const std::vector<unsigned char>& bytes) {
  using detail::Section;
  detail::ByteReader r(bytes.data(), bytes.size());
  for (char c : kModelMagic)
    if (bytes.size() < kModelMagic.size() || r.get<std::uint8_t>() != static_cast<std::uint8_t>(c))
      throw Error(ErrorKind::format, "not a forestfuse model file");
  ModelArtifact model;
  model.format_version = r.get<std::uint32_t>();
  if (model.format_version != kModelFormatVersion)
    throw Error(ErrorKind::version, "model format version " + std::to_string(model.format_version) +
                                        " is not supported (expected " + std::to_string(kModelFormatVersion) + ")");
  const auto n_sections = r.get<std::uint32_t>();
  Forest& f = model.forest;
  std::uint32_t seen = 0;
  for (std::uint32_t s = 0; s < n_sections; ++s) {
    const auto tag = r.get<std::uint32_t>();
    const auto length = r.get_u64();
    const std::size_t start = r.position();
    if (length > bytes.size() - start) throw Error(ErrorKind::format, "model file is truncated");
    detail::ByteReader sec(bytes.data() + start, static_cast<std::size_t>(length));
    if (tag >= 32 || (seen & (1u << tag))) throw Error(ErrorKind::format, "unexpected section in model file");
    seen |= 1u << tag;
    switch (static_cast<Section>(tag)) {
      case Section::config: f.config = detail::decode_config(sec); break;
      case Section::schema: f.schema = detail::decode_schema(sec); break;
      case Section::trees: f.trees = detail::decode_trees(sec, f.schema.size()); break;
      case Section::inbag: {
        f.inbag.resize(sec.get_count(8));
        for (auto& v : f.inbag) v = sec.get_vector<std::uint32_t>();
        break;
      }
      case Section::leaf_of_train: f.leaf_of_train = sec.get_vector<std::uint32_t>(); break;
      case Section::summary:
        f.n_features = sec.get_u64();
        f.n_train = sec.get_u64();
        f.synthetic_offset = sec.get_u64();
        f.n_classes = sec.get<std::int32_t>();
        f.oob_error = sec.get<double>();
        f.oob_skipped = sec.get_u64();
        f.data_fingerprint = sec.get_u64();
        break;
      case Section::target: {
        model.target_name = sec.get_string();
        model.class_labels.resize(sec.get_count(8));
        for (auto& l : model.class_labels) l = sec.get_string();
        break;
      }
      case Section::index: {
        const auto n_rows = sec.get_u64();
        std::vector<std::vector<std::uint32_t>> offsets(sec.get_count(16)), rows(offsets.size());
        for (std::size_t t = 0; t < offsets.size(); ++t) {
          offsets[t] = sec.get_vector<std::uint32_t>();
          rows[t] = sec.get_vector<std::uint32_t>();
        }
        model.index = LeafIndex(static_cast<std::size_t>(n_rows), std::move(offsets), std::move(rows));
        break;
      }
      default: throw Error(ErrorKind::format, "unknown section " + std::to_string(tag) + " in model file");
    }
    if (!sec.done()) throw Error(ErrorKind::format, "section " + std::to_string(tag) + " has trailing bytes");
    r.skip(static_cast<std::size_t>(length));
  }
  if (!r.done()) throw Error(ErrorKind::format, "trailing bytes after the last model section");
  // Sections 1-7 are mandatory; the index is optional.
  if ((seen & 0xfe) != 0xfe) throw Error(ErrorKind::format, "model file is missing required sections");

  // Cross-section consistency.
  const std::size_t n_trees = f.trees.size();
  if (f.n_features != f.schema.size() || n_trees != f.config.n_trees || f.inbag.size() != n_trees ||
      f.leaf_of_train.size() != f.n_train * n_trees || f.synthetic_offset > f.n_train)
    throw Error(ErrorKind::format, "model sections disagree on sizes");
  for (const auto& v : f.inbag)
    if (v.size() != f.n_train) throw Error(ErrorKind::format, "model sections disagree on sizes");
  for (std::size_t i = 0; i < f.leaf_of_train.size(); ++i)
    if (f.leaf_of_train[i] >= f.trees[i % n_trees].n_leaves()) throw Error(ErrorKind::format, "leaf id out of range");
  if (model.index) {
    const auto& idx = *model.index;
    if (idx.n_rows() != f.n_real_rows() || idx.n_trees() != n_trees) throw Error(ErrorKind::format, "leaf index shape mismatch");
    for (std::size_t t = 0; t < n_trees; ++t) {
      const auto& off = idx.offsets()[t];
      if (off.size() != f.trees[t].n_leaves() + 1 || off.front() != 0 || off.back() != idx.rows()[t].size())
        throw Error(ErrorKind::format, "leaf index offsets are malformed");
      for (std::size_t l = 1; l < off.size(); ++l)
        if (off[l] < off[l - 1]) throw Error(ErrorKind::format, "leaf index offsets are malformed");
      for (auto row : idx.rows()[t])
        if (row >= idx.n_rows()) throw Error(ErrorKind::format, "leaf index row out of range");
    }
  }
  return model;
}

inline void save_model(const ModelArtifact& model, const std::string& path) {
  const auto bytes = serialize(model);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(ErrorKind::io, "cannot write model file '" + path + "'");
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw Error(ErrorKind::io, "failed writing model file '" + path + "'");
}

inline ModelArtifact load_model(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorKind::io, "cannot open model file '" + path + "'");
  std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return deserialize(bytes);
}

// Short provenance tag printed on every report: training shape, seed and
// content hash.
inline std::string fingerprint_string(const TrainingFingerprint& fp) {
  std::ostringstream os;
  os << "rows=" << fp.n_rows << ";features=" << fp.n_features << ";seed=" << fp.seed << ";data=" << std::hex;
  os.width(16);
  os.fill('0');
  os << fp.content_hash;
  return os.str();
}

}  // namespace forestfuse
