#pragma once

#include <cmath>
#include <cstdint>
#include <random>

#include "lgdiff/core/tensor.hpp"

namespace lgdiff {

inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

inline std::uint64_t hash_combine(std::uint64_t a, std::uint64_t b) {
  return splitmix64(a ^ (splitmix64(b) + 0x9e3779b97f4a7c15ULL + (a << 6) + (a >> 2)));
}

inline std::uint64_t hash_string(const std::string& s, std::uint64_t seed = 0) {
  std::uint64_t h = 1469598103934665603ULL ^ seed;
  for (unsigned char c : s) {
    h ^= c;
    h *= 1099511628211ULL;
  }
  return splitmix64(h);
}

// Deterministic generator: draws do not depend on libstdc++ distribution
// internals, so sequences are stable across platforms.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : gen_(seed) {}

  std::uint64_t next_u64() { return gen_(); }

  // Uniform in [0,1) with 53 random bits.
  double uniform() { return static_cast<double>(gen_() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // Box-Muller; second value cached.
  double normal() {
    if (has_cached_) {
      has_cached_ = false;
      return cached_;
    }
    double u1 = 0.0;
    do {
      u1 = uniform();
    } while (u1 <= 0.0);
    const double u2 = uniform();
    const double r = std::sqrt(-2.0 * std::log(u1));
    const double a = 6.283185307179586476925286766559 * u2;
    cached_ = r * std::sin(a);
    has_cached_ = true;
    return r * std::cos(a);
  }

  Index uniform_index(Index n) { return static_cast<Index>(gen_() % static_cast<std::uint64_t>(n)); }

  Rng fork(std::uint64_t stream) const {
    return Rng(hash_combine(base_seed_snapshot(), stream));
  }

  template <typename S>
  Tensor<S> normal_tensor(Shape shape, double stddev = 1.0) {
    Tensor<S> t(std::move(shape));
    for (Index i = 0; i < t.numel(); ++i) t[i] = static_cast<S>(normal() * stddev);
    return t;
  }

  template <typename S>
  Tensor<S> uniform_tensor(Shape shape, double lo = 0.0, double hi = 1.0) {
    Tensor<S> t(std::move(shape));
    for (Index i = 0; i < t.numel(); ++i) t[i] = static_cast<S>(uniform(lo, hi));
    return t;
  }

 private:
  std::uint64_t base_seed_snapshot() const {
    std::mt19937_64 copy = gen_;
    return copy();
  }

  std::mt19937_64 gen_;
  bool has_cached_ = false;
  double cached_ = 0.0;
};

}  // namespace lgdiff
