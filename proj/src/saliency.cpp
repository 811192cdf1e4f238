#include "sg/saliency.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace sg {

SaliencyMap::SaliencyMap(Tensor grid) : grid_(std::move(grid)) {
  if (grid_.rank() != 2 || grid_.empty()) {
    throw std::invalid_argument("saliency map must be a non-empty 2D grid, got " +
                                shape_string(grid_.shape()));
  }
  for (float v : grid_.values()) {
    if (!std::isfinite(v) || v < 0.0f) {
      throw std::invalid_argument("saliency map entries must be finite and non-negative");
    }
  }
}

std::string to_string(SaliencyKind kind) {
  switch (kind) {
    case SaliencyKind::forward: return "forward";
    case SaliencyKind::cam: return "cam";
    case SaliencyKind::external: return "external";
    case SaliencyKind::oracle: return "oracle";
  }
  return "?";
}

SaliencyKind parse_saliency_kind(std::string_view name) {
  if (name == "forward") return SaliencyKind::forward;
  if (name == "cam") return SaliencyKind::cam;
  if (name == "external") return SaliencyKind::external;
  if (name == "oracle") return SaliencyKind::oracle;
  throw std::invalid_argument("unknown saliency kind '" + std::string(name) + "'");
}

SaliencyMap forward_saliency(const Tensor& features) {
  if (features.rank() != 3) {
    throw std::invalid_argument("forward_saliency: expected C x H x W features");
  }
  const std::size_t channels = features.dim(0);
  const std::size_t plane = features.dim(1) * features.dim(2);
  Tensor out({features.dim(1), features.dim(2)});
  for (std::size_t k = 0; k < plane; ++k) {
    double acc = 0.0;
    for (std::size_t c = 0; c < channels; ++c) acc += std::abs(features[c * plane + k]);
    out[k] = static_cast<float>(acc);
  }
  return SaliencyMap(std::move(out));
}

SaliencyMap cam_saliency(const Tensor& features, std::span<const float> class_weights) {
  if (features.rank() != 3) {
    throw std::invalid_argument("cam_saliency: expected C x H x W features");
  }
  const std::size_t channels = features.dim(0);
  if (class_weights.size() != channels) {
    throw std::invalid_argument("cam_saliency: " + std::to_string(class_weights.size()) +
                                " weights for " + std::to_string(channels) + " channels");
  }
  const std::size_t plane = features.dim(1) * features.dim(2);
  Tensor out({features.dim(1), features.dim(2)});
  for (std::size_t k = 0; k < plane; ++k) {
    double acc = 0.0;
    for (std::size_t c = 0; c < channels; ++c) {
      acc += static_cast<double>(class_weights[c]) * features[c * plane + k];
    }
    out[k] = static_cast<float>(std::max(acc, 0.0));
  }
  return SaliencyMap(std::move(out));
}

SaliencyMap oracle_saliency(const Tensor& mask, std::size_t hs, std::size_t ws, bool blur) {
  if (mask.rank() != 2) throw std::invalid_argument("oracle_saliency: mask must be 2D");
  if (!blur) return SaliencyMap(avg_pool_to(mask, hs, ws));
  const std::size_t h = mask.dim(0);
  const std::size_t w = mask.dim(1);
  Tensor blurred({h, w});
  for (std::size_t r = 0; r < h; ++r) {
    for (std::size_t c = 0; c < w; ++c) {
      double acc = 0.0;
      int n = 0;
      for (std::size_t rr = r == 0 ? 0 : r - 1; rr <= std::min(h - 1, r + 1); ++rr) {
        for (std::size_t cc = c == 0 ? 0 : c - 1; cc <= std::min(w - 1, c + 1); ++cc) {
          acc += mask.at(rr, cc);
          ++n;
        }
      }
      blurred.at(r, c) = static_cast<float>(acc / n);
    }
  }
  return SaliencyMap(avg_pool_to(blurred, hs, ws));
}

NormalizedSaliency normalize(const SaliencyMap& map, double temperature) {
  if (!(temperature > 0.0)) {
    throw std::invalid_argument("normalize: temperature must be positive");
  }
  const Tensor& s = map.grid();
  const double top = *std::max_element(s.values().begin(), s.values().end());
  std::vector<double> e(s.size());
  double z = 0.0;
  for (std::size_t k = 0; k < s.size(); ++k) {
    e[k] = std::exp((static_cast<double>(s[k]) - top) / temperature);
    z += e[k];
  }
  NormalizedSaliency out{Tensor(s.shape()), temperature};
  for (std::size_t k = 0; k < s.size(); ++k) out.grid[k] = static_cast<float>(e[k] / z);
  return out;
}

BinarySaliency threshold_with_sigma(const NormalizedSaliency& normalized, double sigma) {
  if (!(sigma >= 0.0)) {
    throw std::invalid_argument("threshold_with_sigma: sigma must be non-negative");
  }
  // Compare in float so that sigma = 1/n agrees with a float-stored uniform map.
  const auto cut = static_cast<float>(sigma);
  BinarySaliency out{Tensor(normalized.grid.shape())};
  for (std::size_t k = 0; k < out.grid.size(); ++k) {
    // sigma = 0 keeps cells whose softmax weight underflowed to zero as well.
    out.grid[k] = (sigma == 0.0 || normalized.grid[k] > cut) ? 1.0f : 0.0f;
  }
  return out;
}

BinarySaliency threshold(const NormalizedSaliency& normalized) {
  return threshold_with_sigma(normalized, 1.0 / static_cast<double>(normalized.grid.size()));
}

SaliencyMap resample(const SaliencyMap& map, std::size_t rows, std::size_t cols) {
  if (rows == 0 || cols == 0) throw std::invalid_argument("resample: empty target grid");
  if (rows == map.rows() && cols == map.cols()) return map;
  Tensor grid = map.grid();
  if (rows > map.rows() || cols > map.cols()) {
    grid = block_upsample(grid, std::max(rows, map.rows()), std::max(cols, map.cols()));
  }
  if (grid.dim(0) != rows || grid.dim(1) != cols) grid = avg_pool_to(grid, rows, cols);
  return SaliencyMap(std::move(grid));
}

std::size_t count_above_mean(const SaliencyMap& map, double temperature) {
  const BinarySaliency sel = threshold(normalize(map, temperature));
  return static_cast<std::size_t>(sum(sel.grid));
}

std::vector<SaliencyMap> load_external_saliency(const std::string& path) {
  const Tensor bundle = load_sgt(path);
  if (bundle.rank() != 3) {
    throw std::runtime_error(path + ": external saliency must be N x H x W, got " +
                             shape_string(bundle.shape()));
  }
  std::vector<SaliencyMap> maps;
  maps.reserve(bundle.dim(0));
  for (std::size_t i = 0; i < bundle.dim(0); ++i) maps.emplace_back(bundle.slice(i));
  return maps;
}

void save_external_saliency(const std::string& path, std::span<const SaliencyMap> maps) {
  if (maps.empty()) {
    save_sgt(path, Tensor({0, 0, 0}));
    return;
  }
  Tensor bundle({maps.size(), maps.front().rows(), maps.front().cols()});
  for (std::size_t i = 0; i < maps.size(); ++i) bundle.set_slice(i, maps[i].grid());
  save_sgt(path, bundle);
}

}  // namespace sg
