#ifndef QTM_RANDOM_HPP
#define QTM_RANDOM_HPP

#include <cstdint>
#include <cstring>
#include <random>
#include <string_view>

namespace qtm {

using Rng = std::mt19937_64;

// splitmix64 finalizer
constexpr std::uint64_t mix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

constexpr std::uint64_t hash_combine(std::uint64_t seed, std::uint64_t value) {
  return mix64(seed ^ mix64(value));
}

constexpr std::uint64_t fnv1a(std::string_view text) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char ch : text) {
    h ^= ch;
    h *= 0x100000001b3ULL;
  }
  return h;
}

inline std::uint64_t hash_double(double x) {
  std::uint64_t bits = 0;
  std::memcpy(&bits, &x, sizeof bits);
  return bits;
}

/// Seed for a named sub-task, e.g. derive_seed(master, "field").
inline std::uint64_t derive_seed(std::uint64_t master, std::string_view role) {
  return hash_combine(master, fnv1a(role));
}

/// Generator for the `index`-th independent draw of a stream. Every random
/// quantity is keyed by a global index so results do not depend on how work
/// is split between threads.
inline Rng indexed_rng(std::uint64_t stream_seed, std::uint64_t index) {
  return Rng(hash_combine(stream_seed, index));
}

} // namespace qtm

#endif // QTM_RANDOM_HPP
