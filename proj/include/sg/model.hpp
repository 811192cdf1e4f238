#pragma once

#include <array>
#include <cstddef>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "sg/labelmix.hpp"
#include "sg/random.hpp"
#include "sg/tensor.hpp"

namespace sg {

enum class Param : std::size_t { conv1_w, conv1_b, conv2_w, conv2_b, conv3_w, conv3_b, fc_w, fc_b };
inline constexpr std::size_t kParamCount = 8;
std::string_view param_name(Param p);

/// One tensor per learnable parameter, in `Param` order. Also used for
/// gradients and momentum buffers.
struct ParameterSet {
  std::array<Tensor, kParamCount> tensors;

  Tensor& operator[](Param p) { return tensors[static_cast<std::size_t>(p)]; }
  const Tensor& operator[](Param p) const { return tensors[static_cast<std::size_t>(p)]; }
  ParameterSet zeros_like() const;
  /// this += factor * other
  void add_scaled(const ParameterSet& other, float factor);
  bool operator==(const ParameterSet&) const = default;
};

/// conv(3->16)+ReLU, maxpool2, conv(16->32)+ReLU, maxpool2, conv(32->64)+ReLU,
/// global average pool, linear(64->classes). 3x3 kernels, stride 1, pad 1.
/// Pixels in [0, 1] are mapped to [-1, 1] before the first convolution.
class TinyCnn {
 public:
  static constexpr std::size_t kInputChannels = 3;
  static constexpr std::array<std::size_t, 3> kWidths{16, 32, 64};
  static constexpr std::size_t kFeatureChannels = 64;

  /// Kaiming fan-in initialisation for the convolutions, a classifier at a
  /// tenth of that scale (linear gain), biases zero.
  TinyCnn(std::size_t num_classes, RandomStream& rng);
  static TinyCnn zeros(std::size_t num_classes);
  static TinyCnn from_parameters(ParameterSet params);

  std::size_t num_classes() const { return params_[Param::fc_b].size(); }
  ParameterSet& parameters() { return params_; }
  const ParameterSet& parameters() const { return params_; }
  /// Classifier row for one class (length kFeatureChannels), used by CAM.
  std::span<const float> class_weights(std::size_t cls) const;

  bool operator==(const TinyCnn&) const = default;

 private:
  TinyCnn() = default;
  ParameterSet params_;
};

struct ForwardResult {
  Tensor logits;    // N x classes
  Tensor features;  // N x 64 x H/4 x W/4, post-ReLU output of the last conv
};

/// Batch is N x 3 x H x W with H, W divisible by 4. Samples are processed
/// independently, so a row of logits does not depend on its batch mates.
ForwardResult forward(const TinyCnn& model, const Tensor& batch);

struct LossResult {
  double loss = 0.0;  // mean soft-target cross-entropy
  ParameterSet gradients;
  Tensor logits;
  Tensor features;
};

/// Mean over the batch of -sum_c y_c log softmax(z)_c with gradients for
/// every parameter.
LossResult loss_and_backward(const TinyCnn& model, const Tensor& batch,
                             std::span<const SoftLabel> targets);

std::vector<double> softmax(std::span<const float> logits);
double soft_cross_entropy(std::span<const float> logits, const SoftLabel& target);

struct OptimizerState {
  ParameterSet velocity;
  double lr = 0.05;
  double momentum = 0.9;
  double weight_decay = 5e-4;

  OptimizerState(const TinyCnn& model, double lr, double momentum, double weight_decay);
};

/// v <- m v + g + wd theta;  theta <- theta - lr v
void sgd_step(TinyCnn& model, const ParameterSet& gradients, OptimizerState& state);

/// Double-precision loop implementation of the same loss, independent of
/// the float/Eigen path. Used as the finite-difference oracle.
double reference_loss(const ParameterSet& params, const Tensor& batch,
                      std::span<const SoftLabel> targets);

struct GradCheckReport {
  struct Layer {
    std::string name;
    double max_relative_error = 0.0;
    std::size_t checked = 0;
    std::size_t step_reduced = 0;  // entries whose step straddled a kink
  };
  std::vector<Layer> layers;
  double tolerance = 0.0;
  bool passed = false;
};

struct GradCheckOptions {
  double step = 1e-3;
  /// Times the step is divided by 10 when theta +/- h flips a ReLU or a
  /// max-pool winner.
  int max_step_reductions = 3;
  /// Entries checked per tensor (0 = all). Larger tensors are sampled.
  std::size_t max_entries_per_tensor = 0;
  std::uint64_t sample_seed = 0;
};

/// Compare analytic gradients against central differences of
/// `reference_loss`. Relative error is |a - n| / max(|a|, |n|, floor) with
/// floor = 1e-3 * max |n| over the tensor, so entries far below the layer's
/// gradient scale are judged on absolute terms.
GradCheckReport finite_diff_check(const TinyCnn& model, const Tensor& batch,
                                  std::span<const SoftLabel> targets, double tolerance,
                                  const GradCheckOptions& options = {});
GradCheckReport finite_diff_check(const TinyCnn& model, const Tensor& batch,
                                  std::span<const SoftLabel> targets, double tolerance,
                                  const ParameterSet& analytic, const GradCheckOptions& options);

/// Checkpoint: concatenated SGT tensors at `path` plus a text manifest at
/// `path + ".manifest"` listing "name byte_offset" per parameter.
void save_checkpoint(const std::string& path, const TinyCnn& model);
TinyCnn load_checkpoint(const std::string& path);

}  // namespace sg
