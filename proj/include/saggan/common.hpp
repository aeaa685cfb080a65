// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cmath>
#include <cstdarg>
#include <cstdint>
#include <cstdio>
#include <random>
#include <sstream>
#include <stdexcept>
#include <string>

#if defined(__linux__)
#include <malloc.h>
#endif

namespace saggan {

// Bad user input / violated precondition. The CLI maps this to exit code 1,
// anything else that escapes to exit code 2.
class ValidationError : public std::runtime_error {
 public:
  explicit ValidationError(const std::string& msg) : std::runtime_error(msg) {}
};

inline std::string strfmt(const char* fmt, ...) {
  va_list args;
  va_start(args, fmt);
  char buf[1024];
  std::vsnprintf(buf, sizeof(buf), fmt, args);
  va_end(args);
  return std::string(buf);
}

#define SAGGAN_CHECK(cond, ...)                                \
  do {                                                         \
    if (!(cond)) throw ::saggan::ValidationError(::saggan::strfmt(__VA_ARGS__)); \
  } while (0)

// Convolution lowering allocates multi-megabyte scratch buffers every call.
// glibc serves those via mmap by default and returns them to the kernel on
// free, so a training step spends real time in page faults; raising the
// dynamic thresholds keeps the buffers on the heap for reuse. No-op where
// mallopt or these knobs are unavailable.
inline void tune_allocator_for_large_buffers() {
#if defined(__linux__) && defined(M_MMAP_THRESHOLD) && defined(M_TRIM_THRESHOLD)
  mallopt(M_MMAP_THRESHOLD, 1 << 30);
  mallopt(M_TRIM_THRESHOLD, 256 << 20);
#endif
}

// FNV-1a over raw bytes; used for config hashes and seed derivation.
inline uint64_t fnv1a64(const void* bytes, size_t n, uint64_t h = 0xcbf29ce484222325ull) {
  const auto* p = static_cast<const unsigned char*>(bytes);
  for (size_t i = 0; i < n; ++i) {
    h ^= p[i];
    h *= 0x100000001b3ull;
  }
  return h;
}

inline uint64_t fnv1a64(const std::string& s) { return fnv1a64(s.data(), s.size()); }

inline std::string hex64(uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(v));
  return std::string(buf);
}

inline uint64_t splitmix64(uint64_t x) {
  x += 0x9e3779b97f4a7c15ull;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
  return x ^ (x >> 31);
}

// Stable sub-stream seed for a named stage of a run.
inline uint64_t derive_seed(uint64_t seed, const std::string& tag) {
  return splitmix64(seed ^ fnv1a64(tag));
}

// Deterministic RNG. All distribution mappings are written out here rather
// than taken from <random> distributions, whose sequences differ between
// standard library implementations; mt19937_64 itself is pinned by the
// standard.
class Rng {
 public:
  explicit Rng(uint64_t seed = 0) : eng_(seed) {}

  uint64_t next_u64() { return eng_(); }

  // [0, 1)
  double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // inclusive bounds
  int64_t uniform_int(int64_t lo, int64_t hi) {
    uint64_t span = static_cast<uint64_t>(hi - lo) + 1;
    return lo + static_cast<int64_t>(next_u64() % span);
  }

  // Box-Muller; consumes exactly two draws per call, keeps no spare state
  // so serialization is just the engine state.
  double normal(double mu = 0.0, double sigma = 1.0) {
    double u1 = uniform();
    double u2 = uniform();
    if (u1 < 1e-300) u1 = 1e-300;
    double z = std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * M_PI * u2);
    return mu + sigma * z;
  }

  template <typename V>
  void shuffle(V& v) {  // Fisher-Yates
    for (int64_t i = static_cast<int64_t>(v.size()) - 1; i > 0; --i) {
      int64_t j = uniform_int(0, i);
      std::swap(v[i], v[j]);
    }
  }

  std::string state() const {
    std::ostringstream os;
    os << eng_;
    return os.str();
  }

  void set_state(const std::string& s) {
    std::istringstream is(s);
    is >> eng_;
    if (!is) throw ValidationError("invalid RNG state string");
  }

 private:
  std::mt19937_64 eng_;
};

}  // namespace saggan
