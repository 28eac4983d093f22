#pragma once

#include <cstdint>
#include <random>
#include <vector>

namespace fedtm {

// Deterministic random stream. The engine (mt19937_64) has standardized
// output, and every distribution below is implemented by hand, so a given
// seed produces the same draws on every platform and standard library.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  std::uint64_t next_u64() { return engine_(); }

  // [0, 1)
  double uniform01() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform01(); }

  // [0, n)
  int uniform_int(int n);

  // Box-Muller; draws come in pairs, the second is cached.
  double normal();

  // Marsaglia-Tsang squeeze method, any shape > 0, unit scale.
  double gamma(double shape);

  // Symmetric Dirichlet over n components.
  std::vector<double> dirichlet(double concentration, int n);

  // Fisher-Yates permutation of 0..n-1.
  std::vector<int> shuffled_indices(int n);

 private:
  std::mt19937_64 engine_;
  double cached_normal_ = 0.0;
  bool has_cached_ = false;
};

// Collapses a seed plus stream tags into one engine seed (splitmix64 steps).
std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t a, std::uint64_t b);

}  // namespace fedtm
