#include "sg/random.hpp"

#include <cmath>
#include <numbers>
#include <numeric>
#include <stdexcept>
#include <string>

namespace sg {

std::uint64_t mix64(std::uint64_t x) {
  // splitmix64 finalizer
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

std::uint64_t fnv1a64(std::string_view text) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char ch : text) {
    h ^= ch;
    h *= 0x100000001b3ULL;
  }
  return h;
}

RandomStream::RandomStream(std::uint64_t seed) : seed_(seed), engine_(mix64(seed)) {}

RandomStream RandomStream::split(std::string_view tag) const {
  return RandomStream(mix64(seed_ ^ mix64(fnv1a64(tag))));
}

RandomStream RandomStream::split(std::uint64_t index) const {
  return RandomStream(mix64(seed_ + 0x632be59bd9b4e019ULL * (index + 1)));
}

double RandomStream::uniform() {
  return static_cast<double>(engine_() >> 11) * 0x1.0p-53;
}

std::size_t RandomStream::uniform_index(std::size_t n) {
  if (n == 0) throw std::invalid_argument("uniform_index: empty range");
  const std::uint64_t bound = n;
  const std::uint64_t limit = UINT64_MAX - UINT64_MAX % bound;
  std::uint64_t draw = engine_();
  while (draw >= limit) draw = engine_();
  return static_cast<std::size_t>(draw % bound);
}

double RandomStream::normal() {
  // Box-Muller without caching the second variate.
  const double u1 = 1.0 - uniform();  // (0, 1]
  const double u2 = uniform();
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
}

double RandomStream::gamma(double shape) {
  if (!(shape > 0.0)) throw std::invalid_argument("gamma: shape must be positive");
  if (shape < 1.0) {
    // Boost: Gamma(a) = Gamma(a + 1) * U^(1/a)
    const double u = 1.0 - uniform();
    return gamma(shape + 1.0) * std::pow(u, 1.0 / shape);
  }
  const double d = shape - 1.0 / 3.0;
  const double c = 1.0 / std::sqrt(9.0 * d);
  while (true) {
    double x = 0.0;
    double v = 0.0;
    do {
      x = normal();
      v = 1.0 + c * x;
    } while (v <= 0.0);
    v = v * v * v;
    const double u = 1.0 - uniform();
    if (u < 1.0 - 0.0331 * x * x * x * x) return d * v;
    if (std::log(u) < 0.5 * x * x + d * (1.0 - v + std::log(v))) return d * v;
  }
}

std::vector<std::size_t> RandomStream::permutation(std::size_t n) {
  std::vector<std::size_t> perm(n);
  std::iota(perm.begin(), perm.end(), std::size_t{0});
  for (std::size_t i = n; i > 1; --i) {
    std::swap(perm[i - 1], perm[uniform_index(i)]);
  }
  return perm;
}

double sample_beta(double a, double b, RandomStream& rng) {
  if (!(a > 0.0) || !(b > 0.0)) {
    throw std::invalid_argument("sample_beta: parameters must be positive, got " +
                                std::to_string(a) + ", " + std::to_string(b));
  }
  const double x = rng.gamma(a);
  const double y = rng.gamma(b);
  return x / (x + y);
}

double sample_beta(double alpha, RandomStream& rng) { return sample_beta(alpha, alpha, rng); }

Tensor sample_bernoulli_grid(double p, std::size_t hs, std::size_t ws, RandomStream& rng) {
  if (!(p >= 0.0 && p <= 1.0)) {
    throw std::invalid_argument("sample_bernoulli_grid: p must lie in [0, 1], got " +
                                std::to_string(p));
  }
  Tensor grid({hs, ws});
  for (float& cell : grid.values()) cell = rng.bernoulli(p) ? 1.0f : 0.0f;
  return grid;
}

}  // namespace sg
