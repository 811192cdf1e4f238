#include "sg/labelmix.hpp"

#include <cmath>
#include <stdexcept>
#include <string>

namespace sg {

SoftLabel::SoftLabel(std::vector<float> probs) : probs_(std::move(probs)) {
  double total = 0.0;
  for (float p : probs_) {
    if (!(p >= 0.0f)) throw std::invalid_argument("soft label: negative probability");
    total += p;
  }
  if (probs_.empty() || std::abs(total - 1.0) > 1e-5) {
    throw std::invalid_argument("soft label: probabilities sum to " + std::to_string(total));
  }
}

SoftLabel SoftLabel::one_hot(std::size_t label, std::size_t num_classes) {
  if (label >= num_classes) {
    throw std::invalid_argument("one_hot: label " + std::to_string(label) + " >= " +
                                std::to_string(num_classes) + " classes");
  }
  std::vector<float> probs(num_classes, 0.0f);
  probs[label] = 1.0f;
  return SoftLabel(std::move(probs));
}

double importance(const SaliencyMap& map, const Tensor& region_mask, bool complement) {
  const Tensor& s = map.grid();
  if (s.shape() != region_mask.shape()) {
    throw std::invalid_argument("importance: saliency " + shape_string(s.shape()) +
                                " vs mask " + shape_string(region_mask.shape()));
  }
  double kept = 0.0;
  double total = 0.0;
  for (std::size_t k = 0; k < s.size(); ++k) {
    const double v2 = static_cast<double>(s[k]) * s[k];
    const double m = complement ? 1.0 - region_mask[k] : region_mask[k];
    total += v2;
    kept += v2 * m * m;
  }
  if (total == 0.0) throw std::domain_error("importance: saliency map is identically zero");
  return std::sqrt(kept) / std::sqrt(total);
}

double calibrated_lambda(const SaliencyMap& source, const SaliencyMap& destination,
                         const Tensor& region_mask) {
  const double kept_source = importance(source, region_mask, false);
  const double kept_destination = importance(destination, region_mask, true);
  const double denom = kept_source + kept_destination;
  if (denom == 0.0) {
    throw std::domain_error("calibrated_lambda: both importances are zero");
  }
  return kept_source / denom;
}

double calibrated_lambda(const SaliencyMap& source, const SaliencyMap& destination,
                         const MixMask& mask) {
  return calibrated_lambda(source, destination, mask.region_grid());
}

double area_lambda(const MixMask& mask) { return mean(mask.region_grid()); }

SoftLabel mix_labels(const SoftLabel& source, const SoftLabel& destination, double lambda) {
  if (!(lambda >= 0.0 && lambda <= 1.0)) {
    throw std::invalid_argument("mix_labels: lambda must lie in [0, 1], got " +
                                std::to_string(lambda));
  }
  if (source.num_classes() != destination.num_classes()) {
    throw std::invalid_argument("mix_labels: class count mismatch");
  }
  if (lambda == 1.0) return source;
  if (lambda == 0.0) return destination;
  std::vector<float> probs(source.num_classes());
  for (std::size_t c = 0; c < probs.size(); ++c) {
    probs[c] = static_cast<float>(lambda * source[c] + (1.0 - lambda) * destination[c]);
  }
  return SoftLabel(std::move(probs));
}

}  // namespace sg
