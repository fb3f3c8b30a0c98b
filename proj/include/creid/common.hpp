#pragma once

#include <Eigen/Core>

#include <cstdint>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace creid {

using Mat = Eigen::MatrixXd;
using Vec = Eigen::VectorXd;

struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Raised by dataset ingestion (bad filename, empty directory, role mismatch).
struct IngestionError : Error {
  using Error::Error;
};

// Raised by config parsing/validation (unknown key, bad value, schema violation).
struct ConfigError : Error {
  using Error::Error;
};

// Raised when a batch violates an operation precondition (e.g. an anchor
// without a positive/negative in a triplet batch).
struct SamplerError : Error {
  using Error::Error;
};

uint64_t splitmix64(uint64_t& state);

// 64-bit FNV-1a over a label, mixed with a master seed. Used to derive
// independent, reproducible RNG streams per component.
uint64_t derive_seed(uint64_t master, std::string_view label, uint64_t index = 0);

// Deterministic RNG with hand-rolled distributions so that identical seeds
// yield identical streams regardless of the standard library in use.
class Rng {
 public:
  explicit Rng(uint64_t seed) : state_(seed ? seed : 0x9e3779b97f4a7c15ull) {}
  Rng(uint64_t master, std::string_view label, uint64_t index = 0)
      : Rng(derive_seed(master, label, index)) {}

  uint64_t next_u64() { return splitmix64(state_); }

  // Uniform in [0, 1).
  double uniform() {
    return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
  }

  // Uniform integer in [lo, hi], inclusive. Rejection sampling.
  int64_t uniform_int(int64_t lo, int64_t hi);

  // Standard normal via Box-Muller (one cached value).
  double normal();
  double normal(double mean, double sd) { return mean + sd * normal(); }

  template <typename T>
  void shuffle(std::vector<T>& v) {
    for (size_t i = v.size(); i > 1; --i) {
      const auto j = static_cast<size_t>(uniform_int(0, static_cast<int64_t>(i) - 1));
      std::swap(v[i - 1], v[j]);
    }
  }

  // k distinct values from [0, n), in draw order.
  std::vector<int> sample_without_replacement(int n, int k);

 private:
  uint64_t state_;
  bool has_cached_ = false;
  double cached_ = 0.0;
};

// FNV-1a over raw bytes; used for config fingerprints and trajectory hashes.
uint64_t fnv1a(const void* data, size_t len, uint64_t seed = 0xcbf29ce484222325ull);

std::string to_hex(uint64_t v);

}  // namespace creid
