#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "sg/tensor.hpp"

namespace sg {

/// Region-grid saliency: a 2D map with finite, non-negative entries.
class SaliencyMap {
 public:
  explicit SaliencyMap(Tensor grid);

  const Tensor& grid() const { return grid_; }
  std::size_t rows() const { return grid_.dim(0); }
  std::size_t cols() const { return grid_.dim(1); }
  std::size_t cells() const { return grid_.size(); }

 private:
  Tensor grid_;
};

/// Temperature softmax of a saliency map; entries sum to one.
struct NormalizedSaliency {
  Tensor grid;
  double temperature = 1.0;
};

/// Thresholded saliency; entries are exactly 0 or 1.
struct BinarySaliency {
  Tensor grid;
};

enum class SaliencyKind { forward, cam, external, oracle };

std::string to_string(SaliencyKind kind);
SaliencyKind parse_saliency_kind(std::string_view name);

/// Channel-collapsed absolute feature map: out[h,w] = sum_c |A[c,h,w]|.
SaliencyMap forward_saliency(const Tensor& features);

/// Class activation map max(0, sum_c w_c A[c,h,w]) for the classifier
/// weights of one class.
SaliencyMap cam_saliency(const Tensor& features, std::span<const float> class_weights);

/// Ground-truth object mask (H x W, binary) pooled to an hs x ws grid,
/// optionally box-blurred with a 3x3 mean filter first.
SaliencyMap oracle_saliency(const Tensor& mask, std::size_t hs, std::size_t ws,
                            bool blur);

NormalizedSaliency normalize(const SaliencyMap& map, double temperature);

/// Select cells strictly above the mean normalized value 1/(rows*cols).
BinarySaliency threshold(const NormalizedSaliency& normalized);

/// Select cells strictly above `sigma`. sigma = 0 selects every cell.
BinarySaliency threshold_with_sigma(const NormalizedSaliency& normalized, double sigma);

/// Resample to a rows x cols grid: average pooling when shrinking, block
/// replication when growing.
SaliencyMap resample(const SaliencyMap& map, std::size_t rows, std::size_t cols);

/// Number of cells strictly above the mean after softmax at `temperature`.
std::size_t count_above_mean(const SaliencyMap& map, double temperature);

// External maps: a single SGT tensor of shape N x H x W.
std::vector<SaliencyMap> load_external_saliency(const std::string& path);
void save_external_saliency(const std::string& path, std::span<const SaliencyMap> maps);

}  // namespace sg
