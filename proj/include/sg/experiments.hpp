#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <set>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "sg/data.hpp"
#include "sg/graft.hpp"
#include "sg/labelmix.hpp"
#include "sg/model.hpp"
#include "sg/saliency.hpp"

namespace sg {

enum class Strategy { saliency_grafting, mixup, cutmix, topk_deterministic, vanilla };
enum class LabelMode { automatic, saliency, area };

std::string to_string(Strategy s);
std::string to_string(LabelMode m);
Strategy parse_strategy(const std::string& name);
LabelMode parse_label_mode(const std::string& name);

struct ExperimentConfig {
  Strategy strategy = Strategy::saliency_grafting;
  LabelMode label_mode = LabelMode::automatic;
  SaliencyKind saliency_kind = SaliencyKind::forward;
  GraftConfig graft;
  int k_augments = 1;
  int epochs = 30;
  std::size_t batch_size = 32;
  double lr = 0.1;
  double momentum = 0.9;
  double weight_decay = 5e-4;
  std::uint64_t seed = 0;
  double scarcity_fraction = 1.0;
  /// Regions pasted by the deterministic top-k strategy.
  std::size_t topk = 6;
  /// When > 0, the softmax temperature is recalibrated at the start of every
  /// augmenting epoch so that the expected number of grafted regions equals
  /// this value.
  double calibrate_k = 0.0;
  /// Beta(mix_alpha, mix_alpha) for the mixup / cutmix ratio.
  double mix_alpha = 1.0;
  std::optional<double> forced_p_b;
  bool oracle_blur = true;
  std::string external_saliency;  // SGT N x H x W aligned with the training set

  LabelMode resolved_label_mode() const;
  bool needs_saliency() const;
  void validate() const;
  /// Canonical one-line-per-field rendering; hashing it names run directories.
  std::string canonical() const;
  std::string hash() const;
};

struct AugmentDiagnostics {
  double mean_lambda = 0.0;
  double mean_mask_fraction = 0.0;
  double p_b = 0.0;
  GridScale scale;
};

struct AugmentedBatch {
  Tensor images;
  std::vector<SoftLabel> targets;
  std::vector<double> lambdas;
  std::vector<double> area_lambdas;
  std::vector<Tensor> pixel_masks;  // H x W per sample (1 = taken from the source)
  AugmentDiagnostics diagnostics;
};

/// Saliency of every batch item at its native resolution.
std::vector<SaliencyMap> batch_saliency(const ExperimentConfig& config, const TinyCnn& model,
                                        const Tensor& features, const Dataset& dataset,
                                        std::span<const std::size_t> indices,
                                        std::span<const SaliencyMap> external = {});

/// One augmented copy of a batch: x~_i = phi(x_i, x_partner(i)) and the
/// matching mixed labels. `saliency` holds one native-resolution map per
/// batch item (unused for saliency-free strategies).
AugmentedBatch augment_batch(const ExperimentConfig& config, const Tensor& images,
                             std::span<const SoftLabel> labels, const BatchPairing& pairing,
                             std::span<const SaliencyMap> saliency, RandomStream& rng);

struct MetricsRecord {
  int epoch = 0;
  std::string split;
  double top1 = 0.0;  // percent
  double top5 = 0.0;  // percent, NaN when undefined
  double loss = 0.0;
  double mean_lambda = 0.0;      // NaN when no augmentation ran
  double mean_mask_frac = 0.0;   // NaN when no augmentation ran
};

struct EvalResult {
  double top1 = 0.0;
  double top5 = 0.0;
  double loss = 0.0;
};

EvalResult evaluate(const TinyCnn& model, const Dataset& dataset, std::size_t batch_size = 250);

class TrainingDiverged : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct TrainResult {
  TinyCnn model;
  std::vector<MetricsRecord> history;
  std::optional<TemperatureCalibration> calibration;  // the last one
  std::size_t augmented_samples_per_step = 0;  // for the last full batch
  std::size_t train_size = 0;
};

/// Warmup epochs train on originals only; afterwards every step adds
/// k_augments independently augmented copies of the batch and minimises
///   0.5 * CE(originals) + 0.5 * mean_k CE(augmented).
TrainResult train(const ExperimentConfig& config, const Dataset& train_set,
                  const Dataset* test_set = nullptr);

void write_metrics_csv(std::span<const MetricsRecord> history, const std::string& path);
std::string metrics_csv(std::span<const MetricsRecord> history);

struct OcclusionTable {
  std::vector<double> fractions;
  std::vector<double> top1;  // percent
};

/// Remove the most salient regions (forward saliency of `model` at `grid`,
/// default: the native feature grid) and re-evaluate.
OcclusionTable occlusion_eval(const TinyCnn& model, const Dataset& dataset,
                              std::span<const double> fractions,
                              std::optional<GridScale> grid = std::nullopt);
std::string occlusion_csv(const OcclusionTable& table);

struct AblationCell {
  std::string group;
  std::string name;
  ExperimentConfig config;
  std::vector<double> errors;  // final test top-1 per seed
  double mean = 0.0;
  double stderr_ = 0.0;
  std::string flag;
};

struct AblationOptions {
  std::size_t seeds = 3;
  std::set<std::string> groups{"table8", "sigma", "temperature", "saliency"};
  std::size_t jobs = 1;
  GridScale table8_scale{8, 8};
};

struct AblationReport {
  std::vector<AblationCell> cells;
  std::vector<std::string> notes;
};

inline constexpr const char* kTable8Rows[3] = {
    "Deterministic + area labels", "Stochastic + area labels", "Stochastic + saliency labels"};

/// Build the ablation grid without running it.
std::vector<AblationCell> ablation_cells(const ExperimentConfig& base, const AblationOptions& options);
AblationReport ablation_suite(const ExperimentConfig& base, const Dataset& train_set,
                              const Dataset& test_set, const AblationOptions& options);
std::string ablation_csv(const AblationReport& report);
std::string table8_csv(const AblationReport& report);

struct FidelityRow {
  std::string provider;
  double saliency_error = 0.0;  // mean |lambda_saliency - lambda_oracle|
  double area_error = 0.0;      // mean |lambda_area - lambda_oracle|
  std::size_t pairs = 0;
};

struct FidelityReport {
  std::vector<FidelityRow> rows;
};

/// Compare saliency-calibrated and area labels against the mask oracle over
/// random grafted pairs. Providers: oracle, oracle_blurred, and forward when
/// a model is given.
FidelityReport label_fidelity_eval(const Dataset& dataset, std::size_t n_pairs,
                                   const GraftConfig& graft, RandomStream& rng,
                                   const TinyCnn* model = nullptr);
std::string fidelity_csv(const FidelityReport& report);

/// Mean and standard error of the mean.
std::pair<double, double> mean_stderr(std::span<const double> values);

}  // namespace sg
