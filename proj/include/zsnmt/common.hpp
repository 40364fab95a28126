#pragma once

#include <cmath>
#include <cstdint>
#include <cstring>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace zsnmt {

// Thrown on tensor shape contract violations; message carries both shapes.
struct shape_error : std::runtime_error {
  explicit shape_error(const std::string& msg) : std::runtime_error(msg) {}
};

// Thrown on invalid numeric arguments (bad axis, non-distribution input, ...).
struct value_error : std::runtime_error {
  explicit value_error(const std::string& msg) : std::runtime_error(msg) {}
};

// Thrown on experiment configuration problems (unknown key, bad domain, ...).
struct config_error : std::runtime_error {
  explicit config_error(const std::string& msg) : std::runtime_error(msg) {}
};

inline std::string shape_str(const std::vector<size_t>& shape) {
  std::ostringstream os;
  os << "[";
  for (size_t i = 0; i < shape.size(); ++i) {
    if (i) os << "x";
    os << shape[i];
  }
  os << "]";
  return os.str();
}

// ---------------------------------------------------------------------------
// Deterministic RNG. Everything stochastic in the project (corpus generation,
// parameter init, dropout, batch sampling) goes through this stream so that
// runs are reproducible bit-for-bit across platforms; std::shuffle and
// std::uniform_*_distribution are implementation-defined and must not be used.
// ---------------------------------------------------------------------------

inline uint64_t splitmix64(uint64_t& state) {
  state += 0x9E3779B97F4A7C15ULL;
  uint64_t z = state;
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

class RngStream {
 public:
  explicit RngStream(uint64_t seed) : state_(seed) {}

  uint64_t next_u64() { return splitmix64(state_); }

  // [0, 1)
  double next_double() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * next_double(); }

  // [0, n); modulo bias is negligible for the small n used here
  int next_int(int n) { return static_cast<int>(next_u64() % static_cast<uint64_t>(n)); }

  bool bernoulli(double p) { return next_double() < p; }

  double next_gaussian() {
    double u1 = next_double();
    double u2 = next_double();
    if (u1 < 1e-300) u1 = 1e-300;
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586 * u2);
  }

  // In-place Fisher-Yates over [0, n)
  template <typename T>
  void shuffle(std::vector<T>& v) {
    for (size_t i = v.size(); i > 1; --i) {
      size_t j = static_cast<size_t>(next_u64() % i);
      std::swap(v[i - 1], v[j]);
    }
  }

 private:
  uint64_t state_;
};

// ---------------------------------------------------------------------------
// FNV-1a hashing: config digests and seed derivation.
// ---------------------------------------------------------------------------

inline uint64_t fnv1a64(const void* data, size_t n, uint64_t h = 0xCBF29CE484222325ULL) {
  const unsigned char* p = static_cast<const unsigned char*>(data);
  for (size_t i = 0; i < n; ++i) {
    h ^= p[i];
    h *= 0x100000001B3ULL;
  }
  return h;
}

inline uint64_t fnv1a64(const std::string& s, uint64_t h = 0xCBF29CE484222325ULL) {
  return fnv1a64(s.data(), s.size(), h);
}

namespace detail {
inline void hash_one(uint64_t& h, uint64_t v) { h = fnv1a64(&v, sizeof(v), h); }
inline void hash_one(uint64_t& h, int v) { hash_one(h, static_cast<uint64_t>(static_cast<int64_t>(v))); }
inline void hash_one(uint64_t& h, const std::string& s) { h = fnv1a64(s, h); }
inline void hash_one(uint64_t& h, const char* s) { h = fnv1a64(std::string(s), h); }
}  // namespace detail

// derive_seed(seed, "corpus", pair_idx, ...) -> independent deterministic stream seed
template <typename... Args>
uint64_t derive_seed(uint64_t root, Args&&... args) {
  uint64_t h = 0xCBF29CE484222325ULL;
  detail::hash_one(h, root);
  (detail::hash_one(h, std::forward<Args>(args)), ...);
  // One extra mix so sequential roots do not produce correlated streams.
  uint64_t s = h;
  return splitmix64(s);
}

inline std::string hex64(uint64_t v) {
  static const char* digits = "0123456789abcdef";
  std::string out(16, '0');
  for (int i = 15; i >= 0; --i) {
    out[static_cast<size_t>(i)] = digits[v & 0xF];
    v >>= 4;
  }
  return out;
}

}  // namespace zsnmt
