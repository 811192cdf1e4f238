#include <doctest.h>

#include <cmath>

#include "helpers.hpp"
#include "sg/saliency.hpp"

using namespace sg;
using testing::random_map;
using testing::random_tensor;

namespace {

// Softmax reference in long double without max subtraction (inputs are small).
std::vector<long double> softmax_oracle(const Tensor& s, long double t) {
  std::vector<long double> e(s.size());
  long double z = 0.0L;
  for (std::size_t k = 0; k < s.size(); ++k) z += e[k] = std::exp(static_cast<long double>(s[k]) / t);
  for (auto& v : e) v /= z;
  return e;
}

}  // namespace

TEST_CASE("saliency map validation") {
  CHECK_THROWS(SaliencyMap(Tensor::matrix(1, 2, {1, -1})));
  CHECK_THROWS(SaliencyMap(Tensor::matrix(1, 2, {1, NAN})));
  CHECK_THROWS(SaliencyMap(Tensor({4}, 1.0f)));
  CHECK_NOTHROW(SaliencyMap(Tensor::zeros({2, 2})));
}

TEST_CASE("forward saliency") {
  CHECK(forward_saliency(Tensor({1, 1, 1}, {-2})).grid() == Tensor::matrix(1, 1, {2}));
  CHECK(forward_saliency(Tensor({2, 1, 1}, {1, -1})).grid() == Tensor::matrix(1, 1, {2}));
  RandomStream rng(1);
  const Tensor a = random_tensor({3, 4, 4}, rng, -1, 1);
  const SaliencyMap s = forward_saliency(a);
  for (std::size_t r = 0; r < 4; ++r) {
    for (std::size_t c = 0; c < 4; ++c) {
      const float expected = std::abs(a.at(0, r, c)) + std::abs(a.at(1, r, c)) + std::abs(a.at(2, r, c));
      CHECK(s.grid().at(r, c) == doctest::Approx(expected).epsilon(1e-6));
    }
  }
  CHECK(sum(forward_saliency(Tensor::zeros({3, 2, 2})).grid()) == 0.0);
}

TEST_CASE("cam saliency") {
  RandomStream rng(2);
  const Tensor a = random_tensor({4, 3, 5}, rng, -1, 1);
  const std::vector<float> zero(4, 0.0f);
  CHECK(cam_saliency(a, zero).grid() == Tensor::zeros({3, 5}));

  const Tensor pos = random_tensor({1, 3, 3}, rng, 0, 2);
  const std::vector<float> one{1.0f};
  CHECK(cam_saliency(pos, one).grid() == pos.reshaped({3, 3}));

  const std::vector<float> w{0.5f, -1.0f, 2.0f, 0.25f};
  const SaliencyMap s = cam_saliency(a, w);
  for (std::size_t r = 0; r < 3; ++r) {
    for (std::size_t c = 0; c < 5; ++c) {
      double acc = 0.0;
      for (std::size_t ch = 0; ch < 4; ++ch) acc += w[ch] * a.at(ch, r, c);
      CHECK(s.grid().at(r, c) == doctest::Approx(std::max(0.0, acc)).epsilon(1e-5));
    }
  }
  const std::vector<float> short_w{1.0f, 2.0f};
  CHECK_THROWS_AS(cam_saliency(a, short_w), std::invalid_argument);
}

TEST_CASE("softmax normalization examples") {
  const NormalizedSaliency u = normalize(SaliencyMap(Tensor({3, 3}, 2.5f)), 0.2);
  for (float v : u.grid.values()) CHECK(v == doctest::Approx(1.0 / 9.0));

  const SaliencyMap s(Tensor::matrix(2, 2, {1, 2, 3, 4}));
  const NormalizedSaliency n = normalize(s, 1.0);
  const double expected[4] = {0.0320586032800849884, 0.0871443187420325675, 0.2368828180899101323,
                              0.6439142598879723118};
  for (int k = 0; k < 4; ++k) CHECK(std::abs(n.grid[k] - expected[k]) < 1e-4);
  const auto oracle = softmax_oracle(s.grid(), 1.0L);
  for (int k = 0; k < 4; ++k) CHECK(std::abs(n.grid[k] - static_cast<double>(oracle[k])) < 1e-7);

  const NormalizedSaliency cold = normalize(s, 0.01);
  CHECK(cold.grid[3] == doctest::Approx(1.0));
  CHECK(cold.grid[0] + cold.grid[1] + cold.grid[2] < 1e-6);

  CHECK_THROWS_AS(normalize(s, 0.0), std::invalid_argument);
  CHECK_THROWS_AS(normalize(s, -1.0), std::invalid_argument);
}

TEST_CASE("softmax sums to one, shift invariance, scale equals temperature") {
  RandomStream rng(7);
  for (int trial = 0; trial < 30; ++trial) {
    const SaliencyMap s = random_map(4 + trial % 5, 3 + trial % 4, rng);
    for (double t : {0.01, 0.1, 1.0, 10.0, 100.0}) {
      CHECK(sum(normalize(s, t).grid) == doctest::Approx(1.0).epsilon(1e-6));
    }
    // Shifts that are exactly representable keep every difference exact.
    Tensor dyadic = s.grid();
    for (float& v : dyadic.values()) v = std::round(v * 64.0f) / 64.0f;
    const SaliencyMap base(dyadic);
    const SaliencyMap shifted(add(dyadic, Tensor(dyadic.shape(), 4.0f)));
    CHECK(normalize(shifted, 0.2).grid == normalize(base, 0.2).grid);

    for (float c : {0.5f, 2.0f, 3.0f}) {
      const NormalizedSaliency a = normalize(SaliencyMap(scale(s.grid(), c)), 0.3);
      const NormalizedSaliency b = normalize(s, 0.3 / c);
      CHECK(max_abs_difference(a.grid, b.grid) < 1e-6);
    }
  }
}

TEST_CASE("thresholding") {
  const NormalizedSaliency uniform = normalize(SaliencyMap(Tensor({4, 4}, 1.0f)), 0.2);
  CHECK(threshold(uniform).grid == Tensor::zeros({4, 4}));

  const NormalizedSaliency n = normalize(SaliencyMap(Tensor::matrix(2, 2, {1, 2, 3, 4})), 1.0);
  CHECK(threshold(n).grid == Tensor::matrix(2, 2, {0, 0, 0, 1}));

  Tensor dominant({4, 4}, 0.1f);
  dominant.at(2, 1) = 5.0f;
  Tensor expected = Tensor::zeros({4, 4});
  expected.at(2, 1) = 1.0f;
  CHECK(threshold(normalize(SaliencyMap(dominant), 0.2)).grid == expected);

  CHECK(threshold_with_sigma(n, 0.0).grid == Tensor::ones({2, 2}));
  CHECK(threshold_with_sigma(n, 1.0).grid == Tensor::zeros({2, 2}));
  CHECK(threshold_with_sigma(n, 0.25).grid == threshold(n).grid);
  CHECK_THROWS_AS(threshold_with_sigma(n, -0.1), std::invalid_argument);

  // Underflowed softmax entries are still taken at sigma = 0.
  const NormalizedSaliency cold = normalize(SaliencyMap(Tensor::matrix(1, 2, {0, 100})), 0.01);
  CHECK(cold.grid[0] == 0.0f);
  CHECK(threshold_with_sigma(cold, 0.0).grid == Tensor::ones({1, 2}));
}

TEST_CASE("threshold preserves order") {
  RandomStream rng(13);
  for (int trial = 0; trial < 50; ++trial) {
    const NormalizedSaliency n = normalize(random_map(5, 5, rng), 0.2);
    const Tensor b = threshold(n).grid;
    for (std::size_t i = 0; i < 25; ++i) {
      for (std::size_t j = 0; j < 25; ++j) {
        if (n.grid[i] >= n.grid[j] && b[j] == 1.0f) CHECK(b[i] == 1.0f);
      }
    }
  }
}

TEST_CASE("resample") {
  RandomStream rng(17);
  const SaliencyMap s = random_map(8, 8, rng);
  CHECK(resample(s, 8, 8).grid() == s.grid());
  CHECK(resample(SaliencyMap(Tensor({8, 8}, 0.7f)), 4, 4).grid() == Tensor({4, 4}, 0.7f));
  CHECK(resample(s, 4, 4).grid() == avg_pool_to(s.grid(), 4, 4));
  const SaliencyMap up = resample(SaliencyMap(Tensor::matrix(2, 2, {1, 2, 3, 4})), 4, 4);
  CHECK(up.grid() == block_upsample(Tensor::matrix(2, 2, {1, 2, 3, 4}), 4, 4));
  CHECK(mean(up.grid()) == doctest::Approx(2.5));
  CHECK_THROWS(resample(s, 0, 4));
}

TEST_CASE("oracle saliency from masks") {
  Tensor mask = Tensor::zeros({8, 8});
  for (std::size_t r = 0; r < 4; ++r) {
    for (std::size_t c = 0; c < 4; ++c) mask.at(r, c) = 1.0f;
  }
  const SaliencyMap sharp = oracle_saliency(mask, 2, 2, false);
  CHECK(sharp.grid() == Tensor::matrix(2, 2, {1, 0, 0, 0}));
  const SaliencyMap blurred = oracle_saliency(mask, 2, 2, true);
  CHECK(blurred.grid().at(0, 0) < 1.0f);
  CHECK(blurred.grid().at(0, 1) > 0.0f);
  CHECK(blurred.grid().at(1, 1) > 0.0f);
  CHECK(blurred.grid().at(1, 1) < blurred.grid().at(0, 1));
}

TEST_CASE("count above mean is non-decreasing in temperature") {
  RandomStream rng(31);
  for (int trial = 0; trial < 40; ++trial) {
    const SaliencyMap s = random_map(8, 8, rng);
    std::size_t previous = 0;
    for (double t = 1e-3; t < 1e3; t *= 1.5) {
      const std::size_t c = count_above_mean(s, t);
      CHECK(c >= previous);
      previous = c;
    }
  }
}

TEST_CASE("external saliency round trip") {
  const auto dir = testing::scratch_dir("external");
  RandomStream rng(3);
  std::vector<SaliencyMap> maps{random_map(4, 4, rng), random_map(4, 4, rng)};
  save_external_saliency((dir / "maps.sgt").string(), maps);
  const auto back = load_external_saliency((dir / "maps.sgt").string());
  REQUIRE(back.size() == 2);
  CHECK(back[1].grid() == maps[1].grid());
  CHECK_THROWS(load_external_saliency((dir / "missing.sgt").string()));
}

TEST_CASE("saliency kind names") {
  for (auto k : {SaliencyKind::forward, SaliencyKind::cam, SaliencyKind::external, SaliencyKind::oracle}) {
    CHECK(parse_saliency_kind(to_string(k)) == k);
  }
  CHECK_THROWS(parse_saliency_kind("gradcam"));
}
