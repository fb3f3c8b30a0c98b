#include "creid/common.hpp"

#include <cmath>
#include <numbers>

#include <fmt/format.h>

namespace creid {

uint64_t splitmix64(uint64_t& state) {
  uint64_t z = (state += 0x9e3779b97f4a7c15ull);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
  return z ^ (z >> 31);
}

uint64_t fnv1a(const void* data, size_t len, uint64_t seed) {
  const auto* p = static_cast<const unsigned char*>(data);
  uint64_t h = seed;
  for (size_t i = 0; i < len; ++i) {
    h ^= p[i];
    h *= 0x100000001b3ull;
  }
  return h;
}

uint64_t derive_seed(uint64_t master, std::string_view label, uint64_t index) {
  uint64_t h = fnv1a(label.data(), label.size());
  h ^= master + 0x9e3779b97f4a7c15ull + (h << 6) + (h >> 2);
  h ^= index * 0xff51afd7ed558ccdull;
  // A couple of splitmix rounds to decorrelate nearby labels/indices.
  splitmix64(h);
  splitmix64(h);
  return h ? h : 0x2545f4914f6cdd1dull;
}

int64_t Rng::uniform_int(int64_t lo, int64_t hi) {
  if (lo > hi) throw Error(fmt::format("Rng::uniform_int: empty range [{}, {}]", lo, hi));
  const uint64_t span = static_cast<uint64_t>(hi - lo) + 1;
  if (span == 0) return static_cast<int64_t>(next_u64());  // full 64-bit range
  const uint64_t limit = UINT64_MAX - UINT64_MAX % span;
  uint64_t x;
  do {
    x = next_u64();
  } while (x >= limit);
  return lo + static_cast<int64_t>(x % span);
}

double Rng::normal() {
  if (has_cached_) {
    has_cached_ = false;
    return cached_;
  }
  // Box-Muller; u1 bounded away from zero.
  double u1 = uniform();
  while (u1 <= 1e-300) u1 = uniform();
  const double u2 = uniform();
  const double r = std::sqrt(-2.0 * std::log(u1));
  const double theta = 2.0 * std::numbers::pi * u2;
  cached_ = r * std::sin(theta);
  has_cached_ = true;
  return r * std::cos(theta);
}

std::vector<int> Rng::sample_without_replacement(int n, int k) {
  if (k > n) throw Error(fmt::format("sample_without_replacement: k={} > n={}", k, n));
  std::vector<int> pool(static_cast<size_t>(n));
  for (int i = 0; i < n; ++i) pool[static_cast<size_t>(i)] = i;
  std::vector<int> out;
  out.reserve(static_cast<size_t>(k));
  for (int i = 0; i < k; ++i) {
    const auto j = static_cast<size_t>(uniform_int(i, n - 1));
    std::swap(pool[static_cast<size_t>(i)], pool[j]);
    out.push_back(pool[static_cast<size_t>(i)]);
  }
  return out;
}

std::string to_hex(uint64_t v) { return fmt::format("{:016x}", v); }

}  // namespace creid
