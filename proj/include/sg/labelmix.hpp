#pragma once

#include <cstddef>
#include <vector>

#include "sg/graft.hpp"
#include "sg/saliency.hpp"
#include "sg/tensor.hpp"

namespace sg {

/// Probability vector over classes (non-negative, sums to one).
class SoftLabel {
 public:
  SoftLabel() = default;
  explicit SoftLabel(std::vector<float> probs);
  static SoftLabel one_hot(std::size_t label, std::size_t num_classes);

  const std::vector<float>& probs() const { return probs_; }
  std::size_t num_classes() const { return probs_.size(); }
  float operator[](std::size_t c) const { return probs_[c]; }
  bool operator==(const SoftLabel&) const = default;

 private:
  std::vector<float> probs_;
};

/// ||S (.) M||_2 / ||S||_2, or with `complement` ||S (.) (1 - M)||_2 / ||S||_2.
/// The mask lives on the saliency region grid.
double importance(const SaliencyMap& map, const Tensor& region_mask, bool complement);

/// Saliency-calibrated mixing ratio
///   I(S_i, M) / (I(S_i, M) + I(S_j, 1 - M)).
double calibrated_lambda(const SaliencyMap& source, const SaliencyMap& destination,
                         const MixMask& mask);
double calibrated_lambda(const SaliencyMap& source, const SaliencyMap& destination,
                         const Tensor& region_mask);

/// Fraction of regions taken from the source.
double area_lambda(const MixMask& mask);

SoftLabel mix_labels(const SoftLabel& source, const SoftLabel& destination, double lambda);

}  // namespace sg
