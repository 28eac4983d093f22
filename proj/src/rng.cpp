#include "fedtm/rng.hpp"

#include <cmath>

namespace fedtm {

namespace {

std::uint64_t splitmix64(std::uint64_t& state) {
  state += 0x9e3779b97f4a7c15ULL;
  std::uint64_t z = state;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

}  // namespace

int Rng::uniform_int(int n) {
  // Rejection sampling over the top bits, no modulo bias.
  const std::uint64_t bound = static_cast<std::uint64_t>(n);
  const std::uint64_t limit = UINT64_MAX - UINT64_MAX % bound;
  std::uint64_t x;
  do {
    x = engine_();
  } while (x >= limit);
  return static_cast<int>(x % bound);
}

double Rng::normal() {
  if (has_cached_) {
    has_cached_ = false;
    return cached_normal_;
  }
  // u1 in (0,1] so the log is finite.
  double u1 = 1.0 - uniform01();
  double u2 = uniform01();
  double r = std::sqrt(-2.0 * std::log(u1));
  double a = 6.283185307179586476925286766559 * u2;
  cached_normal_ = r * std::sin(a);
  has_cached_ = true;
  return r * std::cos(a);
}

double Rng::gamma(double shape) {
  if (shape < 1.0) {
    double u = 1.0 - uniform01();  // (0,1]
    return gamma(shape + 1.0) * std::pow(u, 1.0 / shape);
  }
  const double d = shape - 1.0 / 3.0;
  const double c = 1.0 / std::sqrt(9.0 * d);
  for (;;) {
    double x = normal();
    double t = 1.0 + c * x;
    if (t <= 0.0) continue;
    double v = t * t * t;
    double u = 1.0 - uniform01();
    double x2 = x * x;
    if (u < 1.0 - 0.0331 * x2 * x2) return d * v;
    if (std::log(u) < 0.5 * x2 + d * (1.0 - v + std::log(v))) return d * v;
  }
}

std::vector<double> Rng::dirichlet(double concentration, int n) {
  std::vector<double> out(static_cast<std::size_t>(n));
  double sum = 0.0;
  for (auto& g : out) {
    g = gamma(concentration);
    sum += g;
  }
  if (sum <= 0.0) {
    // All gammas underflowed (tiny concentration); fall back to a point mass.
    out.assign(out.size(), 0.0);
    out[static_cast<std::size_t>(uniform_int(n))] = 1.0;
    return out;
  }
  for (auto& g : out) g /= sum;
  return out;
}

std::vector<int> Rng::shuffled_indices(int n) {
  std::vector<int> idx(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) idx[static_cast<std::size_t>(i)] = i;
  for (int i = n - 1; i > 0; --i) {
    int j = uniform_int(i + 1);
    std::swap(idx[static_cast<std::size_t>(i)], idx[static_cast<std::size_t>(j)]);
  }
  return idx;
}

std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t a, std::uint64_t b) {
  std::uint64_t state = seed;
  std::uint64_t h = splitmix64(state);
  state ^= a * 0x9e3779b97f4a7c15ULL + h;
  h = splitmix64(state);
  state ^= b * 0xc2b2ae3d27d4eb4fULL + h;
  return splitmix64(state);
}

}  // namespace fedtm
