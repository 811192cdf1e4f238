#include <doctest.h>

#include <cmath>
#include <fstream>
#include <set>

#include "helpers.hpp"
#include "sg/data.hpp"

using namespace sg;

namespace {

void write_bytes(const std::string& path, const std::vector<unsigned char>& bytes) {
  std::ofstream out(path, std::ios::binary);
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
}

}  // namespace

TEST_CASE("shapes generator") {
  RandomStream rng(7);
  const Dataset ds = generate_shapes(10, 3, 32, rng);
  CHECK(ds.size() == 30);
  CHECK(ds.class_counts() == std::vector<std::size_t>(10, 3));
  CHECK(ds.has_masks());
  for (const auto& item : ds.items) {
    CHECK(item.pixels.shape() == Shape{3, 32, 32});
    for (float v : item.pixels.values()) CHECK((v >= 0.0f && v <= 1.0f));
    CHECK(sum(*item.mask) > 0.0);
    for (float v : item.mask->values()) CHECK((v == 0.0f || v == 1.0f));
  }
  RandomStream again(7);
  const Dataset ds2 = generate_shapes(10, 3, 32, again);
  for (std::size_t i = 0; i < ds.size(); ++i) {
    CHECK(ds.items[i].pixels == ds2.items[i].pixels);
    CHECK(*ds.items[i].mask == *ds2.items[i].mask);
  }
  RandomStream r0(1);
  CHECK(generate_shapes(4, 0, 32, r0).empty());
  CHECK_THROWS(generate_shapes(11, 1, 32, r0));
  CHECK_THROWS(generate_shapes(0, 1, 32, r0));
  CHECK_THROWS(generate_shapes(2, 1, 30, r0));
  CHECK(shape_class_name(0) == "disk");
}

TEST_CASE("cifar binary fixture") {
  const auto dir = testing::scratch_dir("cifar");
  std::vector<unsigned char> bytes(2 * 3073, 0);
  bytes[0] = 3;
  bytes[1] = 255;            // first pixel, red channel
  bytes[3072] = 128;         // last pixel of record 0
  bytes[3073] = 9;
  bytes[3074] = 17;
  bytes[2 * 3073 - 1] = 200;
  write_bytes((dir / "c10.bin").string(), bytes);
  const Dataset ds = load_cifar_binary((dir / "c10.bin").string());
  REQUIRE(ds.size() == 2);
  CHECK(ds.num_classes == 10);
  CHECK(ds.items[0].label == 3);
  CHECK(ds.items[1].label == 9);
  CHECK(ds.items[0].pixels[0] == 1.0f);
  CHECK(ds.items[0].pixels[3071] == doctest::Approx(128.0 / 255.0));
  CHECK(ds.items[1].pixels[0] == doctest::Approx(17.0 / 255.0));
  CHECK(ds.items[1].pixels[3071] == doctest::Approx(200.0 / 255.0));
  CHECK_FALSE(ds.items[0].mask.has_value());

  std::vector<unsigned char> c100(3074, 0);
  c100[0] = 2;   // coarse
  c100[1] = 77;  // fine
  write_bytes((dir / "c100.bin").string(), c100);
  const Dataset fine = load_cifar_binary((dir / "c100.bin").string());
  CHECK(fine.num_classes == 100);
  CHECK(fine.items[0].label == 77);

  write_bytes((dir / "empty.bin").string(), {});
  CHECK(load_cifar_binary((dir / "empty.bin").string()).empty());

  bytes.resize(3073 + 100);
  write_bytes((dir / "trunc.bin").string(), bytes);
  CHECK_THROWS_WITH(load_cifar_binary((dir / "trunc.bin").string()), doctest::Contains("offset 3073"));
  CHECK_THROWS(load_cifar_binary((dir / "c10.bin").string(), 3000));
  CHECK_THROWS(load_cifar_binary((dir / "nope.bin").string()));

  std::vector<unsigned char> bad_label(3073, 0);
  bad_label[0] = 12;
  write_bytes((dir / "label.bin").string(), bad_label);
  CHECK_THROWS(load_cifar_binary((dir / "label.bin").string()));
}

TEST_CASE("per-class subsampling") {
  RandomStream gen(3);
  const Dataset ds = generate_shapes(4, 20, 16, gen);
  RandomStream rng(1);
  const Dataset same = subsample_per_class(ds, 1.0, rng);
  CHECK(same.size() == ds.size());
  for (std::size_t i = 0; i < ds.size(); ++i) CHECK(same.items[i].pixels == ds.items[i].pixels);

  const Dataset tenth = subsample_per_class(ds, 0.1, rng);
  CHECK(tenth.class_counts() == std::vector<std::size_t>(4, 2));
  const Dataset odd = subsample_per_class(ds, 0.33, rng);
  CHECK(odd.class_counts() == std::vector<std::size_t>(4, 7));
  CHECK_THROWS(subsample_per_class(ds, 0.0, rng));
  CHECK_THROWS(subsample_per_class(ds, 1.5, rng));

  // 500 per class at 10% keeps 50 per class.
  Dataset big;
  big.num_classes = 2;
  for (std::size_t i = 0; i < 1000; ++i) big.items.push_back({Tensor({3, 4, 4}), i % 2, std::nullopt});
  CHECK(subsample_per_class(big, 0.1, rng).class_counts() == std::vector<std::size_t>{50, 50});
  const auto idx = subsample_indices(big, 0.2, rng);
  CHECK(std::is_sorted(idx.begin(), idx.end()));
  CHECK(std::set<std::size_t>(idx.begin(), idx.end()).size() == 200);
}

TEST_CASE("batches and pairing") {
  RandomStream gen(4);
  const Dataset ds = generate_shapes(3, 7, 16, gen);
  RandomStream rng(9);
  const auto one = batches(ds, ds.size(), rng);
  REQUIRE(one.size() == 1);
  CHECK(one[0].indices.size() == ds.size());

  RandomStream a(5);
  RandomStream b(5);
  const auto ba = batches(ds, 4, a);
  const auto bb = batches(ds, 4, b);
  CHECK(ba.size() == 6);
  CHECK(ba.back().indices.size() == 1);
  std::multiset<std::size_t> seen;
  for (std::size_t k = 0; k < ba.size(); ++k) {
    CHECK(ba[k].indices == bb[k].indices);
    CHECK(ba[k].pairing.partner == bb[k].pairing.partner);
    seen.insert(ba[k].indices.begin(), ba[k].indices.end());
    auto p = ba[k].pairing.partner;
    std::sort(p.begin(), p.end());
    for (std::size_t i = 0; i < p.size(); ++i) CHECK(p[i] == i);
  }
  CHECK(seen.size() == ds.size());
  CHECK(std::set<std::size_t>(seen.begin(), seen.end()).size() == ds.size());
  CHECK_THROWS(batches(ds, 1, rng));
}

TEST_CASE("oracle lambda from masks") {
  // Source object fills the left half, destination object the top half.
  Tensor src = Tensor::zeros({8, 8});
  Tensor dst = Tensor::zeros({8, 8});
  for (std::size_t r = 0; r < 8; ++r) {
    for (std::size_t c = 0; c < 8; ++c) {
      if (c < 4) src.at(r, c) = 1.0f;
      if (r < 4) dst.at(r, c) = 1.0f;
    }
  }
  // Paste the top-left quadrant: half of the source object (as a norm, sqrt(1/2)),
  // and the destination keeps its top-right quadrant (sqrt(1/2)).
  const MixMask m(Tensor::matrix(2, 2, {1, 0, 0, 0}), 8, 8);
  CHECK(oracle_lambda(src, dst, m) == doctest::Approx(0.5));
  const MixMask left(Tensor::matrix(2, 2, {1, 0, 1, 0}), 8, 8);
  // Source fully kept (1); destination keeps one of two cells (sqrt(1/2)).
  CHECK(oracle_lambda(src, dst, left) == doctest::Approx(1.0 / (1.0 + std::sqrt(0.5))));
  CHECK(oracle_lambda(src, dst, MixMask(Tensor::ones({2, 2}), 8, 8)) == 1.0);
  CHECK(oracle_lambda(src, dst, MixMask(Tensor::zeros({2, 2}), 8, 8)) == 0.0);
}

TEST_CASE("bundle round trip") {
  const auto dir = testing::scratch_dir("bundle");
  RandomStream gen(5);
  const Dataset ds = generate_shapes(3, 2, 16, gen);
  export_bundle(ds, dir.string());
  const Dataset back = import_bundle(dir.string());
  REQUIRE(back.size() == ds.size());
  CHECK(back.num_classes == 3);
  for (std::size_t i = 0; i < ds.size(); ++i) {
    CHECK(back.items[i].label == ds.items[i].label);
    CHECK(back.items[i].pixels == ds.items[i].pixels);
    CHECK(*back.items[i].mask == *ds.items[i].mask);
  }
  const auto empty_dir = testing::scratch_dir("bundle_empty");
  RandomStream g0(1);
  export_bundle(generate_shapes(3, 0, 16, g0), empty_dir.string());
  CHECK(import_bundle(empty_dir.string()).empty());
  CHECK_THROWS(import_bundle((dir / "missing").string()));
}
