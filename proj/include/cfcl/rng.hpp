#pragma once

#include <cmath>
#include <cstdint>
#include <initializer_list>
#include <random>
#include <string_view>

namespace cfcl {

using Engine = std::mt19937_64;

namespace detail {

constexpr std::uint64_t splitmix64(std::uint64_t x) noexcept {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

constexpr std::uint64_t tag_hash(std::string_view tag) noexcept {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (char c : tag) {
    h ^= static_cast<unsigned char>(c);
    h *= 0x100000001b3ULL;
  }
  return h;
}

}  // namespace detail

// Seed derivation used everywhere a stage, record or worker needs its own
// stream: seed = mix(master, tag, i0, i1, ...). The result depends only on the
// arguments, never on evaluation order or worker count.
constexpr std::uint64_t derive_seed(std::uint64_t master, std::string_view tag,
                                    std::initializer_list<std::uint64_t> indices = {}) noexcept {
  std::uint64_t h = detail::splitmix64(master ^ detail::tag_hash(tag));
  for (std::uint64_t i : indices) h = detail::splitmix64(h ^ detail::splitmix64(i + 0x632be59bd9b4e019ULL));
  return h;
}

inline Engine make_engine(std::uint64_t master, std::string_view tag,
                          std::initializer_list<std::uint64_t> indices = {}) {
  return Engine(derive_seed(master, tag, indices));
}

// Uniform double in [0, 1) from 53 random bits; avoids the implementation
// latitude of std::uniform_real_distribution so streams stay comparable.
inline double uniform01(Engine& eng) {
  return static_cast<double>(eng() >> 11) * 0x1.0p-53;
}

inline double uniform(Engine& eng, double lo, double hi) { return lo + (hi - lo) * uniform01(eng); }

// Unbiased integer in [0, n) by rejection.
inline std::uint64_t uniform_index(Engine& eng, std::uint64_t n) {
  const std::uint64_t limit = Engine::max() - Engine::max() % n;
  std::uint64_t x;
  do {
    x = eng();
  } while (x >= limit);
  return x % n;
}

// Box-Muller; one draw per call keeps streams position-independent.
inline double standard_normal(Engine& eng) {
  double u1 = uniform01(eng);
  while (u1 <= 0.0) u1 = uniform01(eng);
  const double u2 = uniform01(eng);
  constexpr double two_pi = 6.283185307179586476925286766559;
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(two_pi * u2);
}

}  // namespace cfcl
