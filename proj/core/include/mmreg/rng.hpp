#pragma once

#include <cstdint>
#include <random>
#include <string_view>
#include <vector>

namespace mmreg {

// Deterministic random stream. Distributions are generated from raw
// mt19937_64 output rather than <random> distribution objects, whose result
// sequences are implementation-defined; the sample streams here are part of
// the reproducibility contract (same seed -> same bytes on any platform).
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : gen_(seed) {}

  std::uint64_t next_u64() { return gen_(); }

  // Uniform on [0, 1) with 53-bit resolution.
  double uniform01() { return static_cast<double>(gen_() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform01(); }

  // Uniform integer in [0, n). n must be > 0.
  std::uint64_t uniform_index(std::uint64_t n);

  // Standard normal via Box-Muller (pairs cached).
  double normal();
  double normal(double mean, double stddev) { return mean + stddev * normal(); }

  template <typename T>
  void shuffle(std::vector<T>& v) {
    for (std::size_t i = v.size(); i > 1; --i) {
      std::size_t j = static_cast<std::size_t>(uniform_index(i));
      std::swap(v[i - 1], v[j]);
    }
  }

 private:
  std::mt19937_64 gen_;
  bool has_spare_ = false;
  double spare_ = 0.0;
};

// Stable 64-bit string hash (FNV-1a); std::hash is implementation-defined.
std::uint64_t stable_hash(std::string_view s);

// Mixes seed material into a well-dispersed substream seed (splitmix64 step
// per component). Used to derive per-source / per-sample RNG substreams.
std::uint64_t mix_seed(std::uint64_t a, std::uint64_t b = 0x9e3779b97f4a7c15ULL,
                       std::uint64_t c = 0, std::uint64_t d = 0);

}  // namespace mmreg
