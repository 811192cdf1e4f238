#pragma once

#include <cstddef>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "sg/graft.hpp"
#include "sg/labelmix.hpp"
#include "sg/random.hpp"
#include "sg/tensor.hpp"

namespace sg {

struct LabeledImage {
  Tensor pixels;  // 3 x H x W in [0, 1]
  std::size_t label = 0;
  std::optional<Tensor> mask;  // H x W binary object support (synthetic data only)
};

struct Dataset {
  std::vector<LabeledImage> items;
  std::size_t num_classes = 0;

  std::size_t size() const { return items.size(); }
  bool empty() const { return items.empty(); }
  bool has_masks() const;
  std::vector<std::size_t> class_counts() const;
};

/// Random pairing inside one mini-batch: sample i is mixed with partner[i].
struct BatchPairing {
  std::vector<std::size_t> partner;
};

struct Batch {
  std::vector<std::size_t> indices;  // into the dataset
  BatchPairing pairing;
};

inline constexpr std::size_t kMaxShapeClasses = 10;
std::string shape_class_name(std::size_t cls);

/// Procedural shapes: textured noise background plus one class-defining
/// shape at a random position, scale and colour. The mask is the shape's
/// pixel support.
Dataset generate_shapes(std::size_t num_classes, std::size_t per_class, std::size_t size,
                        RandomStream& rng);

/// CIFAR binary records: label byte(s) followed by 3x32x32 pixel bytes.
/// record_bytes = 0 autodetects 3073 (CIFAR-10) or 3074 (CIFAR-100, fine
/// label taken) from the file length.
Dataset load_cifar_binary(const std::string& path, std::size_t record_bytes = 0);

/// Exactly ceil(fraction * n_c) items of every class c, uniformly without
/// replacement; original order is kept.
Dataset subsample_per_class(const Dataset& dataset, double fraction, RandomStream& rng);
/// The dataset indices `subsample_per_class` keeps, ascending.
std::vector<std::size_t> subsample_indices(const Dataset& dataset, double fraction, RandomStream& rng);
Dataset select(const Dataset& dataset, std::span<const std::size_t> indices);

/// One epoch of shuffled batches; the final partial batch is kept and every
/// batch gets a fresh pairing permutation.
std::vector<Batch> batches(const Dataset& dataset, std::size_t batch_size, RandomStream& rng);

Tensor gather_images(const Dataset& dataset, std::span<const std::size_t> indices);
std::vector<SoftLabel> one_hot_labels(const Dataset& dataset, std::span<const std::size_t> indices);

/// Reference mixing ratio from ground-truth masks: both masks are pooled
/// onto the mix mask's region grid and combined with the calibrated ratio.
double oracle_lambda(const Tensor& source_mask, const Tensor& destination_mask,
                     const MixMask& mask);

/// Bundle layout: images.sgt (N x 3 x H x W), masks.sgt (N x H x W, when
/// present) and labels.csv ("index,label").
void export_bundle(const Dataset& dataset, const std::string& directory);
Dataset import_bundle(const std::string& directory);

}  // namespace sg
