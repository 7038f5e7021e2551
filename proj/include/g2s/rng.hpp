#pragma once

#include <cmath>
#include <cstdint>
#include <string_view>
#include <type_traits>
#include <utility>

namespace g2s {

// splitmix64 finalizer; every random stream in the project is derived from a
// single master seed through this mixer so runs are reproducible end to end.
inline uint64_t mix64(uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

inline uint64_t seed_combine(uint64_t seed, uint64_t v) {
  return mix64(seed ^ (v * 0xff51afd7ed558ccdULL + 0x2545f4914f6cdd1dULL));
}

inline uint64_t seed_combine(uint64_t seed, std::string_view tag) {
  uint64_t h = 0xcbf29ce484222325ULL;  // FNV-1a over the tag bytes
  for (unsigned char c : tag) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return seed_combine(seed, h);
}

// Named sub-seed derivation: sub_seed(master, "dropout", step, i) etc.
// Components may be integers or strings in any order.
template <typename V, typename... Rest>
uint64_t sub_seed(uint64_t seed, V&& v, Rest&&... rest) {
  uint64_t s;
  if constexpr (std::is_convertible_v<V, std::string_view>)
    s = seed_combine(seed, std::string_view(v));
  else
    s = seed_combine(seed, uint64_t(v));
  if constexpr (sizeof...(rest) == 0)
    return s;
  else
    return sub_seed(s, std::forward<Rest>(rest)...);
}

// Counter-based generator: the state advances by a fixed stride and each
// output is the mixed counter, so a stream can be replayed from its seed
// regardless of how previous values were consumed.
class Rng {
 public:
  explicit Rng(uint64_t seed) : state_(seed) {}

  uint64_t next_u64() {
    state_ += 0x9e3779b97f4a7c15ULL;
    return mix64(state_);
  }

  // uniform in [0, 1)
  double next_double() { return double(next_u64() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * next_double(); }

  // Box-Muller; consumes exactly two draws per value
  double normal(double mean = 0.0, double stddev = 1.0) {
    double u1 = next_double();
    double u2 = next_double();
    if (u1 < 1e-300) u1 = 1e-300;
    double r = std::sqrt(-2.0 * std::log(u1));
    return mean + stddev * r * std::cos(2.0 * M_PI * u2);
  }

  // uniform integer in [0, n)
  uint64_t next_below(uint64_t n) { return n ? next_u64() % n : 0; }

  bool bernoulli(double p) { return next_double() < p; }

 private:
  uint64_t state_;
};

}  // namespace g2s
