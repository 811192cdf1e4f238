#include "sg/graft.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>
#include <stdexcept>

namespace sg {

std::string to_string(const GridScale& scale) {
  return std::to_string(scale.rows) + "x" + std::to_string(scale.cols);
}

GridScale parse_grid_scale(const std::string& text) {
  const auto x = text.find('x');
  try {
    if (x == std::string::npos) throw std::invalid_argument("missing 'x'");
    std::size_t used = 0;
    const auto rows = std::stoul(text.substr(0, x), &used);
    if (used != x) throw std::invalid_argument("bad rows");
    const auto cols = std::stoul(text.substr(x + 1), &used);
    if (used != text.size() - x - 1) throw std::invalid_argument("bad cols");
    if (rows == 0 || cols == 0) throw std::invalid_argument("empty grid");
    return {rows, cols};
  } catch (const std::exception&) {
    throw std::invalid_argument("bad grid scale '" + text + "' (expected e.g. 8x8)");
  }
}

MixMask::MixMask(Tensor region_grid, std::size_t height, std::size_t width)
    : region_grid_(std::move(region_grid)),
      pixel_mask_(block_upsample(region_grid_, height, width)) {
  for (float v : region_grid_.values()) {
    if (v != 0.0f && v != 1.0f) throw std::invalid_argument("mix mask must be binary");
  }
}

std::size_t MixMask::selected_regions() const {
  return static_cast<std::size_t>(sum(region_grid_));
}

double SigmaMode::resolve(std::size_t cells) const {
  const double mean_level = 1.0 / static_cast<double>(cells);
  switch (kind) {
    case Kind::mean: return mean_level;
    case Kind::fixed: return value;
    case Kind::mean_scaled: return value * mean_level;
  }
  return mean_level;
}

std::string SigmaMode::describe() const {
  std::ostringstream os;
  switch (kind) {
    case Kind::mean: os << "mean"; break;
    case Kind::fixed: os << value; break;
    case Kind::mean_scaled: os << value << "*mean"; break;
  }
  return os.str();
}

SigmaMode parse_sigma_mode(const std::string& text) {
  if (text == "mean") return SigmaMode::mean();
  try {
    std::size_t used = 0;
    const double v = std::stod(text, &used);
    const std::string rest = text.substr(used);
    if (v < 0.0) throw std::invalid_argument("negative");
    if (rest.empty()) return SigmaMode::fixed(v);
    if (rest == "*mean") return SigmaMode::scaled(v);
  } catch (const std::exception&) {
  }
  throw std::invalid_argument("bad sigma '" + text + "' (expected mean, <value> or <factor>*mean)");
}

void GraftConfig::validate() const {
  if (!(alpha > 0.0)) throw std::invalid_argument("graft: alpha must be positive");
  if (!(temperature > 0.0)) throw std::invalid_argument("graft: temperature must be positive");
  if (scales.empty()) throw std::invalid_argument("graft: at least one saliency scale required");
  for (const auto& s : scales) {
    if (s.rows == 0 || s.cols == 0) throw std::invalid_argument("graft: empty saliency scale");
  }
  if (warmup_epochs < 0) throw std::invalid_argument("graft: warmup must be non-negative");
  if (!(sigma.value >= 0.0)) throw std::invalid_argument("graft: sigma must be non-negative");
}

BinarySaliency select_salient(const SaliencyMap& map, double temperature,
                              const SigmaMode& sigma) {
  const NormalizedSaliency normalized = normalize(map, temperature);
  if (sigma.kind == SigmaMode::Kind::mean) return threshold(normalized);
  return threshold_with_sigma(normalized, sigma.resolve(map.cells()));
}

MixMask sample_mask(const BinarySaliency& selected, double p_b, RandomStream& rng,
                    std::size_t height, std::size_t width) {
  const Tensor p = sample_bernoulli_grid(p_b, selected.grid.dim(0), selected.grid.dim(1), rng);
  return MixMask(hadamard(p, selected.grid), height, width);
}

Tensor graft(const Tensor& source, const Tensor& destination, const MixMask& mask) {
  if (source.shape() != destination.shape() || source.rank() != 3) {
    throw std::invalid_argument("graft: images must share a C x H x W shape");
  }
  const Tensor& pixels = mask.pixel_mask();
  if (pixels.dim(0) != source.dim(1) || pixels.dim(1) != source.dim(2)) {
    throw std::invalid_argument("graft: mask " + shape_string(pixels.shape()) +
                                " does not match image " + shape_string(source.shape()));
  }
  const std::size_t plane = pixels.size();
  Tensor out(source.shape());
  for (std::size_t c = 0; c < source.dim(0); ++c) {
    for (std::size_t k = 0; k < plane; ++k) {
      const std::size_t idx = c * plane + k;
      out[idx] = pixels[k] != 0.0f ? source[idx] : destination[idx];
    }
  }
  return out;
}

std::vector<std::size_t> saliency_ranking(const SaliencyMap& map) {
  std::vector<std::size_t> order(map.cells());
  std::iota(order.begin(), order.end(), std::size_t{0});
  const Tensor& s = map.grid();
  std::stable_sort(order.begin(), order.end(),
                   [&s](std::size_t a, std::size_t b) { return s[a] > s[b]; });
  return order;
}

MixMask deterministic_topk_mask(const SaliencyMap& map, std::size_t k, std::size_t height,
                                std::size_t width) {
  if (k < 1 || k > map.cells()) {
    throw std::invalid_argument("deterministic_topk_mask: k=" + std::to_string(k) +
                                " outside [1, " + std::to_string(map.cells()) + "]");
  }
  const auto order = saliency_ranking(map);
  Tensor grid(map.grid().shape());
  for (std::size_t r = 0; r < k; ++r) grid[order[r]] = 1.0f;
  return MixMask(std::move(grid), height, width);
}

double expected_selected_regions(std::span<const SaliencyMap> maps, double temperature,
                                 double p_mean) {
  double total = 0.0;
  for (const auto& m : maps) total += static_cast<double>(count_above_mean(m, temperature));
  return p_mean * total / static_cast<double>(maps.size());
}

TemperatureCalibration calibrate_temperature(std::span<const SaliencyMap> maps, double k,
                                             double p_mean) {
  constexpr double kTolerance = 0.25;
  constexpr int kIterations = 60;
  if (maps.empty()) throw std::invalid_argument("calibrate_temperature: no saliency maps");
  if (!(p_mean > 0.0 && p_mean <= 1.0)) {
    throw std::invalid_argument("calibrate_temperature: p_mean must lie in (0, 1]");
  }
  const double cells = static_cast<double>(maps.front().cells());
  if (!(k > 0.0 && k < cells)) {
    throw std::invalid_argument("calibrate_temperature: k must lie in (0, grid size)");
  }
  double lo = std::log(1e-3);
  double hi = std::log(1e3);
  const double f_lo = expected_selected_regions(maps, std::exp(lo), p_mean);
  const double f_hi = expected_selected_regions(maps, std::exp(hi), p_mean);
  if (f_lo > f_hi) {
    throw std::runtime_error("calibrate_temperature: selected count is not monotone in T");
  }
  if (k < f_lo - kTolerance || k > f_hi + kTolerance) {
    std::ostringstream os;
    os << "calibrate_temperature: target " << k << " unreachable; achievable range is ["
       << f_lo << ", " << f_hi << "] for T in [1e-3, 1e3]";
    throw std::runtime_error(os.str());
  }
  TemperatureCalibration best{std::exp(lo), f_lo, 0};
  if (std::abs(f_hi - k) < std::abs(f_lo - k)) best = {std::exp(hi), f_hi, 0};
  for (int it = 1; it <= kIterations; ++it) {
    const double mid = 0.5 * (lo + hi);
    const double f = expected_selected_regions(maps, std::exp(mid), p_mean);
    if (std::abs(f - k) < std::abs(best.expected_regions - k)) best = {std::exp(mid), f, it};
    if (f < k) {
      lo = mid;
    } else {
      hi = mid;
    }
  }
  if (std::abs(best.expected_regions - k) > kTolerance) {
    std::ostringstream os;
    os << "calibrate_temperature: closest achievable expectation " << best.expected_regions
       << " misses target " << k << " by more than " << kTolerance;
    throw std::runtime_error(os.str());
  }
  return best;
}

Tensor mixup(const Tensor& source, const Tensor& destination, double lambda) {
  if (!(lambda >= 0.0 && lambda <= 1.0)) {
    throw std::invalid_argument("mixup: lambda must lie in [0, 1]");
  }
  if (source.shape() != destination.shape()) throw std::invalid_argument("mixup: shape mismatch");
  if (lambda == 1.0) return source;
  if (lambda == 0.0) return destination;
  Tensor out(source.shape());
  const auto l = static_cast<float>(lambda);
  for (std::size_t k = 0; k < out.size(); ++k) {
    out[k] = l * source[k] + (1.0f - l) * destination[k];
  }
  return out;
}

namespace {

// Half-open span of `side` cells centred at `center`, clipped to [0, extent).
// A side covering the whole extent has no placement freedom.
std::pair<std::size_t, std::size_t> clipped_span(std::size_t center, std::size_t side,
                                                 std::size_t extent) {
  if (side >= extent) return {0, extent};
  const auto lo = static_cast<long>(center) - static_cast<long>(side / 2);
  const long hi = lo + static_cast<long>(side);
  return {static_cast<std::size_t>(std::clamp(lo, 0L, static_cast<long>(extent))),
          static_cast<std::size_t>(std::clamp(hi, 0L, static_cast<long>(extent)))};
}

}  // namespace

CutMixResult cutmix_at(const Tensor& source, const Tensor& destination, double lambda,
                       std::size_t center_row, std::size_t center_col) {
  if (!(lambda >= 0.0 && lambda <= 1.0)) {
    throw std::invalid_argument("cutmix: lambda must lie in [0, 1]");
  }
  if (source.shape() != destination.shape() || source.rank() != 3) {
    throw std::invalid_argument("cutmix: images must share a C x H x W shape");
  }
  const std::size_t h = source.dim(1);
  const std::size_t w = source.dim(2);
  const double ratio = std::sqrt(lambda);
  const auto side_h = static_cast<std::size_t>(std::floor(ratio * static_cast<double>(h) + 1e-9));
  const auto side_w = static_cast<std::size_t>(std::floor(ratio * static_cast<double>(w) + 1e-9));
  CutMixResult result{destination, 0.0, {}};
  if (side_h == 0 || side_w == 0) return result;
  const auto [top, bottom] = clipped_span(center_row, side_h, h);
  const auto [left, right] = clipped_span(center_col, side_w, w);
  result.box = {top, left, bottom, right};
  for (std::size_t c = 0; c < source.dim(0); ++c) {
    for (std::size_t r = top; r < bottom; ++r) {
      for (std::size_t q = left; q < right; ++q) result.image.at(c, r, q) = source.at(c, r, q);
    }
  }
  result.area_fraction = static_cast<double>(result.box.area()) / static_cast<double>(h * w);
  return result;
}

CutMixResult cutmix(const Tensor& source, const Tensor& destination, double lambda,
                    RandomStream& rng) {
  if (source.rank() != 3) throw std::invalid_argument("cutmix: expected C x H x W images");
  const std::size_t row = rng.uniform_index(source.dim(1));
  const std::size_t col = rng.uniform_index(source.dim(2));
  return cutmix_at(source, destination, lambda, row, col);
}

Tensor occlude_topk(const Tensor& image, const SaliencyMap& map, double fraction) {
  if (!(fraction >= 0.0 && fraction <= 1.0)) {
    throw std::invalid_argument("occlude_topk: fraction must lie in [0, 1]");
  }
  if (image.rank() != 3) throw std::invalid_argument("occlude_topk: expected C x H x W image");
  const auto count = static_cast<std::size_t>(
      std::ceil(fraction * static_cast<double>(map.cells()) - 1e-9));
  if (count == 0) return image;
  const MixMask keep_out = deterministic_topk_mask(map, count, image.dim(1), image.dim(2));
  const Tensor& pixels = keep_out.pixel_mask();
  Tensor out = image;
  const std::size_t plane = pixels.size();
  for (std::size_t c = 0; c < image.dim(0); ++c) {
    for (std::size_t k = 0; k < plane; ++k) {
      if (pixels[k] != 0.0f) out[c * plane + k] = 0.0f;
    }
  }
  return out;
}

}  // namespace sg
