#pragma once

#include <filesystem>
#include <string>

#include "sg/random.hpp"
#include "sg/saliency.hpp"
#include "sg/tensor.hpp"

namespace testing {

inline sg::Tensor random_tensor(sg::Shape shape, sg::RandomStream& rng, double lo = 0.0,
                                double hi = 1.0) {
  sg::Tensor t(std::move(shape));
  for (float& v : t.values()) v = static_cast<float>(rng.uniform(lo, hi));
  return t;
}

inline sg::Tensor random_binary(std::size_t rows, std::size_t cols, sg::RandomStream& rng,
                                double p = 0.5) {
  sg::Tensor t({rows, cols});
  for (float& v : t.values()) v = rng.bernoulli(p) ? 1.0f : 0.0f;
  return t;
}

inline sg::SaliencyMap random_map(std::size_t rows, std::size_t cols, sg::RandomStream& rng) {
  return sg::SaliencyMap(random_tensor({rows, cols}, rng, 0.05, 3.0));
}

// Fresh scratch directory under the system temp dir.
inline std::filesystem::path scratch_dir(const std::string& name) {
  const auto dir = std::filesystem::temp_directory_path() / ("sg_test_" + name);
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

}  // namespace testing
