#pragma once

#include <cstddef>
#include <cstdint>
#include <random>
#include <string_view>
#include <vector>

#include "sg/tensor.hpp"

namespace sg {

/// Seedable source of every random draw in the library.
///
/// Identical seed and identical call sequence give identical outputs. A
/// stream is single-owner; hand independent work a `split()` child instead
/// of sharing one stream. Children depend only on (seed, tag), never on how
/// many draws the parent has made.
class RandomStream {
 public:
  explicit RandomStream(std::uint64_t seed);

  std::uint64_t seed() const { return seed_; }
  RandomStream split(std::string_view tag) const;
  RandomStream split(std::uint64_t index) const;

  std::uint64_t next_u64() { return engine_(); }
  /// Uniform in [0, 1) with 53 bits of resolution.
  double uniform();
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
  /// Uniform integer in [0, n). Requires n > 0.
  std::size_t uniform_index(std::size_t n);
  bool bernoulli(double p) { return uniform() < p; }
  double normal();
  /// Gamma(shape, 1) via Marsaglia-Tsang.
  double gamma(double shape);

  std::vector<std::size_t> permutation(std::size_t n);

 private:
  std::uint64_t seed_;
  std::mt19937_64 engine_;
};

std::uint64_t mix64(std::uint64_t x);
std::uint64_t fnv1a64(std::string_view text);

/// One draw from the symmetric Beta(alpha, alpha).
double sample_beta(double alpha, RandomStream& rng);
double sample_beta(double a, double b, RandomStream& rng);

/// hs x ws grid of i.i.d. Bernoulli(p) cells (values 0 or 1).
Tensor sample_bernoulli_grid(double p, std::size_t hs, std::size_t ws,
                             RandomStream& rng);

}  // namespace sg
