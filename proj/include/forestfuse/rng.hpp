#pragma once

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <initializer_list>
#include <span>
#include <utility>

namespace forestfuse {

// SplitMix64 finalizer. Used both as the generator step and to derive
// independent stream keys from (seed, id, ...) tuples.
constexpr std::uint64_t mix64(std::uint64_t z) noexcept {
  z += 0x9e3779b97f4a7c15ULL;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

constexpr std::uint64_t derive_key(std::uint64_t key, std::uint64_t id) noexcept {
  return mix64(key ^ mix64(id + 0x632be59bd9b4e019ULL));
}

inline std::uint64_t derive_key(std::uint64_t key, std::initializer_list<std::uint64_t> ids) noexcept {
  for (auto id : ids) key = derive_key(key, id);
  return key;
}

// Stream purposes, so that e.g. the bootstrap of tree 3 never shares a
// stream with the donor draws for sample 3.
namespace stream {
inline constexpr std::uint64_t tree = 0x7472656515ULL;
inline constexpr std::uint64_t synthetic = 0x73796e7468ULL;
inline constexpr std::uint64_t donor = 0x646f6e6f72ULL;
inline constexpr std::uint64_t permutation = 0x7065726dULL;
inline constexpr std::uint64_t imputation = 0x696d7075ULL;
}  // namespace stream

// Counter-based generator: state is a single 64-bit counter, so a stream is
// fully determined by its key and any number of streams can be split off
// without coordination between workers.
class Rng {
 public:
  explicit constexpr Rng(std::uint64_t key) noexcept : state_(key) {}

  constexpr std::uint64_t next() noexcept {
    state_ += 0x9e3779b97f4a7c15ULL;
    std::uint64_t z = state_;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
  }

  // Uniform in [0, n), unbiased (Lemire's multiply-shift with rejection).
  std::uint64_t uniform_index(std::uint64_t n) noexcept {
    if (n <= 1) return 0;
    unsigned __int128 m = static_cast<unsigned __int128>(next()) * n;
    auto low = static_cast<std::uint64_t>(m);
    if (low < n) {
      const std::uint64_t threshold = (0 - n) % n;
      while (low < threshold) {
        m = static_cast<unsigned __int128>(next()) * n;
        low = static_cast<std::uint64_t>(m);
      }
    }
    return static_cast<std::uint64_t>(m >> 64);
  }

  // Uniform in [0, 1) with 53 bits of precision.
  double uniform() noexcept { return static_cast<double>(next() >> 11) * 0x1.0p-53; }

  // Marsaglia polar method; only used to build synthetic data.
  double normal() noexcept {
    for (;;) {
      const double u = 2.0 * uniform() - 1.0;
      const double v = 2.0 * uniform() - 1.0;
      const double s = u * u + v * v;
      if (s > 0.0 && s < 1.0) return u * std::sqrt(-2.0 * std::log(s) / s);
    }
  }

  template <class T>
  void shuffle(std::span<T> values) noexcept {
    for (std::size_t i = values.size(); i > 1; --i) {
      const std::size_t j = uniform_index(i);
      std::swap(values[i - 1], values[j]);
    }
  }

 private:
  std::uint64_t state_;
};

}  // namespace forestfuse
