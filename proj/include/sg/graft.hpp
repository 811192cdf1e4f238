#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "sg/random.hpp"
#include "sg/saliency.hpp"
#include "sg/tensor.hpp"

namespace sg {

struct GridScale {
  std::size_t rows = 0;
  std::size_t cols = 0;
  bool operator==(const GridScale&) const = default;
};

std::string to_string(const GridScale& scale);
GridScale parse_grid_scale(const std::string& text);  // "8x8"

/// Binary region grid plus its pixel-level expansion.
class MixMask {
 public:
  MixMask() = default;
  MixMask(Tensor region_grid, std::size_t height, std::size_t width);

  const Tensor& region_grid() const { return region_grid_; }
  const Tensor& pixel_mask() const { return pixel_mask_; }
  GridScale scale() const { return {region_grid_.dim(0), region_grid_.dim(1)}; }
  std::size_t selected_regions() const;

 private:
  Tensor region_grid_;
  Tensor pixel_mask_;
};

/// Threshold used to binarize the normalized saliency map.
struct SigmaMode {
  enum class Kind { mean, fixed, mean_scaled };
  Kind kind = Kind::mean;
  double value = 1.0;  // absolute sigma (fixed) or multiple of sigma_mean

  static SigmaMode mean() { return {}; }
  static SigmaMode fixed(double sigma) { return {Kind::fixed, sigma}; }
  static SigmaMode scaled(double factor) { return {Kind::mean_scaled, factor}; }
  double resolve(std::size_t cells) const;
  std::string describe() const;
  bool operator==(const SigmaMode&) const = default;
};

SigmaMode parse_sigma_mode(const std::string& text);  // "mean", "0.01", "0.5*mean"

struct GraftConfig {
  double alpha = 2.0;
  double temperature = 0.2;
  std::vector<GridScale> scales{{4, 4}, {8, 8}};
  int warmup_epochs = 5;
  SigmaMode sigma;

  void validate() const;
};

/// Salient-region selection for one source image: softmax at the configured
/// temperature followed by thresholding.
BinarySaliency select_salient(const SaliencyMap& map, double temperature, const SigmaMode& sigma);

/// M = P (.) S'' with P ~ Bern(p_b) i.i.d. per region, expanded to H x W.
MixMask sample_mask(const BinarySaliency& selected, double p_b, RandomStream& rng,
                    std::size_t height, std::size_t width);

/// M (.) x_i + (1 - M) (.) x_j, the mask shared across channels.
Tensor graft(const Tensor& source, const Tensor& destination, const MixMask& mask);

/// The k most salient regions, ties broken by row-major order.
MixMask deterministic_topk_mask(const SaliencyMap& map, std::size_t k, std::size_t height,
                                std::size_t width);

/// Region indices sorted by decreasing saliency (stable in row-major order).
std::vector<std::size_t> saliency_ranking(const SaliencyMap& map);

struct TemperatureCalibration {
  double temperature = 0.0;
  double expected_regions = 0.0;  // p_mean * mean selected count at `temperature`
  int iterations = 0;
};

/// Find T with p_mean * mean_maps(#cells above the softmax mean) within 0.25
/// of `k`, by bisection over log T in [1e-3, 1e3].
TemperatureCalibration calibrate_temperature(std::span<const SaliencyMap> maps, double k,
                                             double p_mean);
double expected_selected_regions(std::span<const SaliencyMap> maps, double temperature,
                                 double p_mean);

Tensor mixup(const Tensor& source, const Tensor& destination, double lambda);

struct Rect {
  std::size_t top = 0, left = 0, bottom = 0, right = 0;  // half-open
  std::size_t area() const { return (bottom - top) * (right - left); }
};

struct CutMixResult {
  Tensor image;
  double area_fraction = 0.0;
  Rect box;
};

/// Paste a sqrt(lambda)H x sqrt(lambda)W rectangle of the source centred
/// at a uniform random pixel, clipped at the borders.
CutMixResult cutmix(const Tensor& source, const Tensor& destination, double lambda,
                    RandomStream& rng);
CutMixResult cutmix_at(const Tensor& source, const Tensor& destination, double lambda,
                       std::size_t center_row, std::size_t center_col);

/// Zero the pixel blocks of the ceil(fraction * cells) most salient regions.
Tensor occlude_topk(const Tensor& image, const SaliencyMap& map, double fraction);

}  // namespace sg
