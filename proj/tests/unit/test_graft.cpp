#include <doctest.h>

#include <algorithm>
#include <cmath>

#include "helpers.hpp"
#include "sg/graft.hpp"

using namespace sg;
using testing::random_binary;
using testing::random_map;
using testing::random_tensor;

TEST_CASE("grid scale and sigma parsing") {
  CHECK(parse_grid_scale("8x4") == GridScale{8, 4});
  CHECK(to_string(GridScale{4, 4}) == "4x4");
  for (const char* bad : {"8", "x8", "8x", "0x4", "4x4x", "ax4"}) CHECK_THROWS(parse_grid_scale(bad));
  CHECK(parse_sigma_mode("mean") == SigmaMode::mean());
  CHECK(parse_sigma_mode("0.01") == SigmaMode::fixed(0.01));
  CHECK(parse_sigma_mode("0.5*mean") == SigmaMode::scaled(0.5));
  CHECK(parse_sigma_mode("0.5*mean").resolve(16) == doctest::Approx(1.0 / 32.0));
  for (const char* bad : {"-1", "mean*2", "abc", "0.5*max"}) CHECK_THROWS(parse_sigma_mode(bad));
}

TEST_CASE("graft config validation") {
  GraftConfig c;
  CHECK_NOTHROW(c.validate());
  CHECK(c.alpha == 2.0);
  CHECK(c.temperature == 0.2);
  CHECK(c.warmup_epochs == 5);
  CHECK(c.scales == std::vector<GridScale>{{4, 4}, {8, 8}});
  GraftConfig bad = c;
  bad.alpha = 0;
  CHECK_THROWS(bad.validate());
  bad = c;
  bad.temperature = -1;
  CHECK_THROWS(bad.validate());
  bad = c;
  bad.scales.clear();
  CHECK_THROWS(bad.validate());
}

TEST_CASE("mix mask") {
  const MixMask m(Tensor::matrix(2, 2, {1, 0, 0, 1}), 4, 6);
  CHECK(m.pixel_mask() == block_upsample(m.region_grid(), 4, 6));
  CHECK(m.selected_regions() == 2);
  CHECK(m.scale() == GridScale{2, 2});
  CHECK_THROWS(MixMask(Tensor::matrix(1, 2, {0.5f, 1}), 4, 4));
}

TEST_CASE("sample_mask") {
  RandomStream rng(1);
  const BinarySaliency none{Tensor::zeros({4, 4})};
  for (double p : {0.0, 0.5, 1.0}) CHECK(sample_mask(none, p, rng, 32, 32).region_grid() == none.grid);

  const BinarySaliency some{random_binary(8, 8, rng)};
  CHECK(sample_mask(some, 1.0, rng, 32, 32).region_grid() == some.grid);
  for (int trial = 0; trial < 50; ++trial) {
    const MixMask m = sample_mask(some, rng.uniform(), rng, 32, 32);
    CHECK(m.selected_regions() <= static_cast<std::size_t>(sum(some.grid)));
    CHECK(sum(hadamard(m.region_grid(), one_minus(some.grid))) == 0.0);
  }

  Tensor ones32 = Tensor::zeros({8, 8});
  for (std::size_t k = 0; k < 32; ++k) ones32[2 * k] = 1.0f;
  const BinarySaliency s32{ones32};
  double total = 0.0;
  constexpr int draws = 10000;
  for (int d = 0; d < draws; ++d) total += static_cast<double>(sample_mask(s32, 0.5, rng, 8, 8).selected_regions());
  CHECK(std::abs(total / draws - 16.0) < 0.6);
}

TEST_CASE("graft selects pixels per mask") {
  RandomStream rng(2);
  const Tensor xi = random_tensor({3, 16, 16}, rng);
  const Tensor xj = random_tensor({3, 16, 16}, rng);
  CHECK(graft(xi, xj, MixMask(Tensor::ones({4, 4}), 16, 16)) == xi);
  CHECK(graft(xi, xj, MixMask(Tensor::zeros({4, 4}), 16, 16)) == xj);

  for (int trial = 0; trial < 20; ++trial) {
    const MixMask m(random_binary(4, 4, rng), 16, 16);
    const Tensor out = graft(xi, xj, m);
    for (std::size_t c = 0; c < 3; ++c) {
      for (std::size_t r = 0; r < 16; ++r) {
        for (std::size_t q = 0; q < 16; ++q) {
          const bool from_source = m.region_grid().at(r / 4, q / 4) == 1.0f;
          CHECK(out.at(c, r, q) == (from_source ? xi.at(c, r, q) : xj.at(c, r, q)));
        }
      }
    }
    CHECK(graft(xi, xi, m) == xi);
    CHECK(add(graft(xi, xj, m), graft(xj, xi, m)) == add(xi, xj));
    for (float v : out.values()) CHECK((v >= 0.0f && v <= 1.0f));
  }
  CHECK_THROWS(graft(xi, random_tensor({3, 8, 8}, rng), MixMask(Tensor::ones({4, 4}), 16, 16)));
  CHECK_THROWS(graft(xi, xj, MixMask(Tensor::ones({4, 4}), 8, 8)));
}

TEST_CASE("deterministic top-k") {
  const SaliencyMap s(Tensor::matrix(2, 2, {1, 2, 3, 4}));
  CHECK(deterministic_topk_mask(s, 1, 2, 2).region_grid() == Tensor::matrix(2, 2, {0, 0, 0, 1}));
  CHECK(deterministic_topk_mask(s, 2, 2, 2).region_grid() == Tensor::matrix(2, 2, {0, 0, 1, 1}));
  CHECK(deterministic_topk_mask(s, 4, 2, 2).region_grid() == Tensor::ones({2, 2}));
  CHECK_THROWS(deterministic_topk_mask(s, 0, 2, 2));
  CHECK_THROWS(deterministic_topk_mask(s, 5, 2, 2));

  const SaliencyMap ties(Tensor({2, 3}, 1.0f));
  CHECK(deterministic_topk_mask(ties, 2, 2, 3).region_grid() == Tensor::matrix(2, 3, {1, 1, 0, 0, 0, 0}));

  RandomStream rng(5);
  const SaliencyMap r = random_map(8, 8, rng);
  const MixMask a = deterministic_topk_mask(r, 6, 32, 32);
  CHECK(a.region_grid() == deterministic_topk_mask(r, 6, 32, 32).region_grid());
  // Sort oracle: the selected cells are the six largest values.
  std::vector<float> sorted(r.grid().values().begin(), r.grid().values().end());
  std::sort(sorted.rbegin(), sorted.rend());
  for (std::size_t k = 0; k < 64; ++k) CHECK((a.region_grid()[k] == 1.0f) == (r.grid()[k] >= sorted[5]));
}

TEST_CASE("temperature calibration") {
  // Exactly two of four cells above the mean at every temperature.
  const SaliencyMap two(Tensor::matrix(2, 2, {0, 0, 1, 1}));
  std::vector<SaliencyMap> maps(5, two);
  const TemperatureCalibration fixed = calibrate_temperature(maps, 2.0, 1.0);
  CHECK(fixed.expected_regions == doctest::Approx(2.0));

  Tensor dom({4, 4}, 0.2f);
  dom.at(1, 2) = 3.0f;
  std::vector<SaliencyMap> dominant(3, SaliencyMap(dom));
  const TemperatureCalibration one = calibrate_temperature(dominant, 1.0, 1.0);
  CHECK(count_above_mean(dominant[0], one.temperature) == 1);

  RandomStream rng(9);
  std::vector<SaliencyMap> random;
  for (int i = 0; i < 50; ++i) random.push_back(random_map(8, 8, rng));
  for (double k : {2.0, 4.0, 6.0, 10.0}) {
    const TemperatureCalibration c = calibrate_temperature(random, k, 0.5);
    CHECK(std::abs(expected_selected_regions(random, c.temperature, 0.5) - k) <= 0.25);
    CHECK(c.expected_regions == doctest::Approx(expected_selected_regions(random, c.temperature, 0.5)));
  }
  CHECK_THROWS(calibrate_temperature({}, 2.0, 0.5));
  CHECK_THROWS(calibrate_temperature(random, 0.0, 0.5));
  CHECK_THROWS(calibrate_temperature(random, 64.0, 0.5));
  CHECK_THROWS(calibrate_temperature(random, 2.0, 0.0));
  // Half the cells can never be strictly above the mean here.
  const auto unreachable = [&] { calibrate_temperature(maps, 3.0, 1.0); };
  CHECK_THROWS_WITH(unreachable(), doctest::Contains("achievable"));
}

TEST_CASE("mixup") {
  RandomStream rng(3);
  const Tensor a = random_tensor({3, 4, 4}, rng);
  const Tensor b = random_tensor({3, 4, 4}, rng);
  CHECK(mixup(a, b, 1.0) == a);
  CHECK(mixup(a, b, 0.0) == b);
  CHECK(mixup(Tensor({3, 2, 2}, 2.0f), Tensor({3, 2, 2}, 4.0f), 0.5) == Tensor({3, 2, 2}, 3.0f));
  CHECK_THROWS(mixup(a, b, 1.5));
  CHECK_THROWS(mixup(a, b, -0.1));
}

TEST_CASE("cutmix geometry") {
  RandomStream rng(4);
  const Tensor a = random_tensor({3, 32, 32}, rng);
  const Tensor b = random_tensor({3, 32, 32}, rng);
  const CutMixResult none = cutmix(a, b, 0.0, rng);
  CHECK(none.image == b);
  CHECK(none.area_fraction == 0.0);
  const CutMixResult full = cutmix(a, b, 1.0, rng);
  CHECK(full.image == a);
  CHECK(full.area_fraction == 1.0);

  const CutMixResult quarter = cutmix_at(a, b, 0.25, 16, 16);
  CHECK(quarter.box.bottom - quarter.box.top == 16);
  CHECK(quarter.box.right - quarter.box.left == 16);
  CHECK(quarter.area_fraction == 0.25);
  for (std::size_t r = 0; r < 32; ++r) {
    for (std::size_t c = 0; c < 32; ++c) {
      const bool inside = r >= 8 && r < 24 && c >= 8 && c < 24;
      CHECK(quarter.image.at(1, r, c) == (inside ? a.at(1, r, c) : b.at(1, r, c)));
    }
  }
  const CutMixResult corner = cutmix_at(a, b, 0.25, 0, 0);
  CHECK(corner.area_fraction == doctest::Approx(64.0 / 1024.0));

  for (int trial = 0; trial < 200; ++trial) {
    const double lambda = rng.uniform();
    const CutMixResult r = cutmix(a, b, lambda, rng);
    CHECK(r.area_fraction >= 0.0);
    CHECK(r.area_fraction <= lambda + 1e-12);
  }
  CHECK_THROWS(cutmix(a, b, 1.2, rng));
}

TEST_CASE("occlusion") {
  RandomStream rng(6);
  const Tensor x = random_tensor({3, 16, 16}, rng, 0.1, 1.0);
  const SaliencyMap s = random_map(4, 4, rng);
  CHECK(occlude_topk(x, s, 0.0) == x);
  CHECK(occlude_topk(x, s, 1.0) == Tensor::zeros({3, 16, 16}));
  const Tensor q = occlude_topk(x, s, 0.25);
  const auto order = saliency_ranking(s);
  for (std::size_t rank = 0; rank < 16; ++rank) {
    const std::size_t cell = order[rank];
    const std::size_t r = (cell / 4) * 4;
    const std::size_t c = (cell % 4) * 4;
    CHECK((q.at(0, r, c) == 0.0f) == (rank < 4));
  }
  std::size_t zeroed = 0;
  for (float v : q.values()) zeroed += v == 0.0f;
  CHECK(zeroed == 4 * 16 * 3);
  CHECK_THROWS(occlude_topk(x, s, 1.5));
}
