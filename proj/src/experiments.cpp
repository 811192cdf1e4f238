#include "sg/experiments.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <iomanip>
#include <limits>
#include <map>
#include <mutex>
#include <numeric>
#include <sstream>
#include <thread>

namespace sg {

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

}  // namespace

std::string to_string(Strategy s) {
  switch (s) {
    case Strategy::saliency_grafting: return "saliency_grafting";
    case Strategy::mixup: return "mixup";
    case Strategy::cutmix: return "cutmix";
    case Strategy::topk_deterministic: return "topk_deterministic";
    case Strategy::vanilla: return "vanilla";
  }
  return "?";
}

std::string to_string(LabelMode m) {
  switch (m) {
    case LabelMode::automatic: return "auto";
    case LabelMode::saliency: return "saliency";
    case LabelMode::area: return "area";
  }
  return "?";
}

Strategy parse_strategy(const std::string& name) {
  for (Strategy s : {Strategy::saliency_grafting, Strategy::mixup, Strategy::cutmix,
                     Strategy::topk_deterministic, Strategy::vanilla}) {
    if (to_string(s) == name) return s;
  }
  throw std::invalid_argument("unknown strategy '" + name + "'");
}

LabelMode parse_label_mode(const std::string& name) {
  for (LabelMode m : {LabelMode::automatic, LabelMode::saliency, LabelMode::area}) {
    if (to_string(m) == name) return m;
  }
  throw std::invalid_argument("unknown label mode '" + name + "'");
}

LabelMode ExperimentConfig::resolved_label_mode() const {
  if (label_mode != LabelMode::automatic) return label_mode;
  return strategy == Strategy::saliency_grafting ? LabelMode::saliency : LabelMode::area;
}

bool ExperimentConfig::needs_saliency() const {
  return strategy == Strategy::saliency_grafting || strategy == Strategy::topk_deterministic;
}

void ExperimentConfig::validate() const {
  graft.validate();
  const LabelMode mode = resolved_label_mode();
  if (mode == LabelMode::saliency && strategy != Strategy::saliency_grafting &&
      strategy != Strategy::vanilla) {
    throw std::invalid_argument("label mode 'saliency' is only defined for saliency_grafting, not " +
                                to_string(strategy));
  }
  if (k_augments < 1) throw std::invalid_argument("k_augments must be at least 1");
  if (epochs < 0) throw std::invalid_argument("epochs must be non-negative");
  if (batch_size < 2) throw std::invalid_argument("batch_size must be at least 2");
  if (!(lr >= 0.0)) throw std::invalid_argument("lr must be non-negative");
  if (!(scarcity_fraction > 0.0 && scarcity_fraction <= 1.0)) {
    throw std::invalid_argument("scarcity fraction must lie in (0, 1]");
  }
  if (!(mix_alpha > 0.0)) throw std::invalid_argument("mix_alpha must be positive");
  if (forced_p_b && !(*forced_p_b >= 0.0 && *forced_p_b <= 1.0)) {
    throw std::invalid_argument("p_b must lie in [0, 1]");
  }
  if (strategy == Strategy::topk_deterministic) {
    for (const auto& s : graft.scales) {
      if (topk < 1 || topk > s.rows * s.cols) {
        throw std::invalid_argument("topk=" + std::to_string(topk) + " does not fit grid " +
                                    to_string(s));
      }
    }
  }
  if (calibrate_k < 0.0) throw std::invalid_argument("calibrate_k must be non-negative");
  if (saliency_kind == SaliencyKind::external && external_saliency.empty() && needs_saliency()) {
    throw std::invalid_argument("external saliency requires a maps file");
  }
}

std::string ExperimentConfig::canonical() const {
  std::ostringstream os;
  os << std::setprecision(17);
  os << "strategy=" << to_string(strategy) << '\n'
     << "label_mode=" << to_string(resolved_label_mode()) << '\n'
     << "saliency=" << to_string(saliency_kind) << '\n'
     << "alpha=" << graft.alpha << '\n'
     << "temperature=" << graft.temperature << '\n'
     << "sigma=" << graft.sigma.describe() << '\n'
     << "scales=";
  for (std::size_t i = 0; i < graft.scales.size(); ++i) {
    os << (i ? "," : "") << to_string(graft.scales[i]);
  }
  os << '\n'
     << "warmup=" << graft.warmup_epochs << '\n'
     << "k_augments=" << k_augments << '\n'
     << "epochs=" << epochs << '\n'
     << "batch_size=" << batch_size << '\n'
     << "lr=" << lr << '\n'
     << "momentum=" << momentum << '\n'
     << "weight_decay=" << weight_decay << '\n'
     << "seed=" << seed << '\n'
     << "scarcity=" << scarcity_fraction << '\n'
     << "topk=" << topk << '\n'
     << "calibrate_k=" << calibrate_k << '\n'
     << "mix_alpha=" << mix_alpha << '\n'
     << "p_b=" << (forced_p_b ? std::to_string(*forced_p_b) : "beta") << '\n'
     << "oracle_blur=" << oracle_blur << '\n'
     << "external=" << external_saliency << '\n';
  return os.str();
}

std::string ExperimentConfig::hash() const {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(fnv1a64(canonical())));
  return buf;
}

std::vector<SaliencyMap> batch_saliency(const ExperimentConfig& config, const TinyCnn& model,
                                        const Tensor& features, const Dataset& dataset,
                                        std::span<const std::size_t> indices,
                                        std::span<const SaliencyMap> external) {
  std::vector<SaliencyMap> maps;
  maps.reserve(indices.size());
  for (std::size_t b = 0; b < indices.size(); ++b) {
    const LabeledImage& item = dataset.items.at(indices[b]);
    switch (config.saliency_kind) {
      case SaliencyKind::forward:
        maps.push_back(forward_saliency(features.slice(b)));
        break;
      case SaliencyKind::cam:
        maps.push_back(cam_saliency(features.slice(b), model.class_weights(item.label)));
        break;
      case SaliencyKind::oracle: {
        if (!item.mask) throw std::invalid_argument("oracle saliency requires object masks");
        maps.push_back(oracle_saliency(*item.mask, item.mask->dim(0), item.mask->dim(1),
                                       config.oracle_blur));
        break;
      }
      case SaliencyKind::external:
        if (indices[b] >= external.size()) {
          throw std::invalid_argument("external saliency has no map for item " +
                                      std::to_string(indices[b]));
        }
        maps.push_back(external[indices[b]]);
        break;
    }
  }
  return maps;
}

AugmentedBatch augment_batch(const ExperimentConfig& config, const Tensor& images,
                             std::span<const SoftLabel> labels, const BatchPairing& pairing,
                             std::span<const SaliencyMap> saliency, RandomStream& rng) {
  const LabelMode mode = config.resolved_label_mode();
  if (mode == LabelMode::saliency && config.strategy != Strategy::saliency_grafting &&
      config.strategy != Strategy::vanilla) {
    throw std::invalid_argument("augment_batch: strategy " + to_string(config.strategy) +
                                " cannot use saliency labels");
  }
  const std::size_t n = images.dim(0);
  const std::size_t h = images.dim(2);
  const std::size_t w = images.dim(3);
  if (labels.size() != n || pairing.partner.size() != n) {
    throw std::invalid_argument("augment_batch: labels/pairing do not match the batch");
  }
  if (config.needs_saliency() && saliency.size() != n) {
    throw std::invalid_argument("augment_batch: one saliency map per sample required");
  }

  AugmentedBatch out{images, std::vector<SoftLabel>(labels.begin(), labels.end()), {}, {}, {}, {}};
  out.lambdas.assign(n, 1.0);
  out.area_lambdas.assign(n, 1.0);
  out.pixel_masks.assign(n, Tensor::ones({h, w}));
  if (config.strategy == Strategy::vanilla) {
    out.diagnostics = {1.0, 1.0, 1.0, {h, w}};
    return out;
  }

  const GridScale scale = config.graft.scales[rng.uniform_index(config.graft.scales.size())];
  double batch_ratio = 0.0;
  if (config.strategy == Strategy::saliency_grafting) {
    batch_ratio = config.forced_p_b ? *config.forced_p_b : sample_beta(config.graft.alpha, rng);
  } else if (config.strategy == Strategy::mixup || config.strategy == Strategy::cutmix) {
    batch_ratio = sample_beta(config.mix_alpha, rng);
  }
  out.diagnostics.p_b = batch_ratio;
  out.diagnostics.scale = scale;

  double lambda_total = 0.0;
  double area_total = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t j = pairing.partner[i];
    const Tensor source = images.slice(i);
    const Tensor destination = images.slice(j);
    Tensor mixed;
    double lambda = 0.0;
    double area = 0.0;
    switch (config.strategy) {
      case Strategy::saliency_grafting:
      case Strategy::topk_deterministic: {
        const SaliencyMap s_i = resample(saliency[i], scale.rows, scale.cols);
        MixMask mask;
        if (config.strategy == Strategy::saliency_grafting) {
          const BinarySaliency selected =
              select_salient(s_i, config.graft.temperature, config.graft.sigma);
          mask = sample_mask(selected, batch_ratio, rng, h, w);
        } else {
          mask = deterministic_topk_mask(s_i, config.topk, h, w);
        }
        mixed = graft(source, destination, mask);
        area = area_lambda(mask);
        lambda = area;
        if (mode == LabelMode::saliency) {
          const SaliencyMap s_j = resample(saliency[j], scale.rows, scale.cols);
          // An all-zero map (dead features, clamped CAM) carries no importance; fall back to area.
          if (sum(s_i.grid()) > 0.0 && sum(s_j.grid()) > 0.0) lambda = calibrated_lambda(s_i, s_j, mask);
        }
        out.pixel_masks[i] = mask.pixel_mask();
        break;
      }
      case Strategy::mixup:
        mixed = mixup(source, destination, batch_ratio);
        lambda = area = batch_ratio;
        out.pixel_masks[i] = Tensor({h, w}, static_cast<float>(batch_ratio));
        break;
      case Strategy::cutmix: {
        CutMixResult cut = cutmix(source, destination, batch_ratio, rng);
        mixed = std::move(cut.image);
        lambda = area = cut.area_fraction;
        Tensor pix({h, w});
        for (std::size_t r = cut.box.top; r < cut.box.bottom; ++r) {
          for (std::size_t c = cut.box.left; c < cut.box.right; ++c) pix.at(r, c) = 1.0f;
        }
        out.pixel_masks[i] = std::move(pix);
        break;
      }
      case Strategy::vanilla:
        break;
    }
    out.images.set_slice(i, mixed);
    out.targets[i] = mix_labels(labels[i], labels[j], lambda);
    out.lambdas[i] = lambda;
    out.area_lambdas[i] = area;
    lambda_total += lambda;
    area_total += area;
  }
  out.diagnostics.mean_lambda = n ? lambda_total / static_cast<double>(n) : 0.0;
  out.diagnostics.mean_mask_fraction = n ? area_total / static_cast<double>(n) : 0.0;
  return out;
}

namespace {

struct ErrorCounts {
  std::size_t top1_wrong = 0;
  std::size_t top5_wrong = 0;
  std::size_t total = 0;

  void add(const Tensor& logits, std::span<const std::size_t> labels) {
    const std::size_t classes = logits.dim(1);
    for (std::size_t i = 0; i < labels.size(); ++i) {
      const float target = logits.at(i, labels[i]);
      std::size_t above = 0;
      for (std::size_t c = 0; c < classes; ++c) {
        if (c == labels[i]) continue;
        // Ties go against the true class.
        if (logits.at(i, c) > target || (logits.at(i, c) == target && c < labels[i])) ++above;
      }
      if (above >= 1) ++top1_wrong;
      if (above >= 5) ++top5_wrong;
      ++total;
    }
  }
  double top1() const { return total ? 100.0 * static_cast<double>(top1_wrong) / static_cast<double>(total) : 0.0; }
  double top5() const { return total ? 100.0 * static_cast<double>(top5_wrong) / static_cast<double>(total) : 0.0; }
};

std::vector<std::size_t> labels_of(const Dataset& dataset, std::span<const std::size_t> indices) {
  std::vector<std::size_t> out;
  out.reserve(indices.size());
  for (std::size_t i : indices) out.push_back(dataset.items.at(i).label);
  return out;
}

double lr_at(const ExperimentConfig& config, int epoch) {
  double lr = config.lr;
  if (epoch >= config.epochs / 2) lr *= 0.1;
  if (epoch >= (3 * config.epochs) / 4) lr *= 0.1;
  return lr;
}

}  // namespace

EvalResult evaluate(const TinyCnn& model, const Dataset& dataset, std::size_t batch_size) {
  ErrorCounts counts;
  double loss = 0.0;
  for (std::size_t start = 0; start < dataset.size(); start += batch_size) {
    const std::size_t end = std::min(dataset.size(), start + batch_size);
    std::vector<std::size_t> idx(end - start);
    std::iota(idx.begin(), idx.end(), start);
    const ForwardResult fw = forward(model, gather_images(dataset, idx));
    const auto labels = labels_of(dataset, idx);
    counts.add(fw.logits, labels);
    for (std::size_t i = 0; i < idx.size(); ++i) {
      const std::span<const float> row(fw.logits.data() + i * model.num_classes(), model.num_classes());
      loss += soft_cross_entropy(row, SoftLabel::one_hot(labels[i], model.num_classes()));
    }
  }
  EvalResult out;
  out.top1 = counts.top1();
  out.top5 = model.num_classes() >= 10 ? counts.top5() : kNaN;
  out.loss = dataset.empty() ? 0.0 : loss / static_cast<double>(dataset.size());
  return out;
}

TrainResult train(const ExperimentConfig& config, const Dataset& train_set,
                  const Dataset* test_set) {
  config.validate();
  if (train_set.empty()) throw std::invalid_argument("train: empty training set");
  RandomStream root(config.seed);
  RandomStream scarcity_rng = root.split("scarcity");
  RandomStream init_rng = root.split("init");
  RandomStream order_rng = root.split("order");
  RandomStream augment_rng = root.split("augment");

  std::vector<SaliencyMap> external_all;
  if (config.saliency_kind == SaliencyKind::external && config.needs_saliency()) {
    external_all = load_external_saliency(config.external_saliency);
    if (external_all.size() != train_set.size()) {
      throw std::invalid_argument("external saliency has " + std::to_string(external_all.size()) +
                                  " maps for " + std::to_string(train_set.size()) + " images");
    }
  }
  std::vector<std::size_t> kept(train_set.size());
  std::iota(kept.begin(), kept.end(), std::size_t{0});
  if (config.scarcity_fraction < 1.0) kept = subsample_indices(train_set, config.scarcity_fraction, scarcity_rng);
  const Dataset data = config.scarcity_fraction < 1.0 ? select(train_set, kept) : train_set;
  std::vector<SaliencyMap> external;
  for (std::size_t i : (external_all.empty() ? std::vector<std::size_t>{} : kept)) {
    external.push_back(external_all[i]);
  }

  TrainResult result{TinyCnn(train_set.num_classes, init_rng), {}, std::nullopt, 0, data.size()};
  TinyCnn& model = result.model;
  OptimizerState opt(model, config.lr, config.momentum, config.weight_decay);
  ExperimentConfig active = config;
  const bool augments = config.strategy != Strategy::vanilla;
  const double k = static_cast<double>(config.k_augments);

  for (int epoch = 0; epoch < config.epochs; ++epoch) {
    opt.lr = lr_at(config, epoch);
    const bool augmenting = augments && epoch >= config.graft.warmup_epochs;

    // Saliency sharpens as training proceeds, so the temperature is refitted
    // every augmenting epoch to keep E[sum M] at the target.
    if (augmenting && config.calibrate_k > 0.0 && config.strategy == Strategy::saliency_grafting) {
      std::vector<std::size_t> probe(std::min<std::size_t>(100, data.size()));
      std::iota(probe.begin(), probe.end(), std::size_t{0});
      const ForwardResult fw = forward(model, gather_images(data, probe));
      const GridScale g = config.graft.scales.front();
      std::vector<SaliencyMap> maps;
      for (auto& m : batch_saliency(config, model, fw.features, data, probe, external)) {
        maps.push_back(resample(m, g.rows, g.cols));
      }
      const double p_mean = config.forced_p_b ? *config.forced_p_b : 0.5;
      result.calibration = calibrate_temperature(maps, config.calibrate_k, p_mean);
      active.graft.temperature = result.calibration->temperature;
    }

    ErrorCounts counts;
    double loss_sum = 0.0;
    double lambda_sum = 0.0;
    double mask_sum = 0.0;
    std::size_t augmented = 0;
    std::size_t step = 0;
    for (const Batch& batch : batches(data, config.batch_size, order_rng)) {
      const Tensor images = gather_images(data, batch.indices);
      const auto targets = one_hot_labels(data, batch.indices);
      LossResult original = loss_and_backward(model, images, targets);
      counts.add(original.logits, labels_of(data, batch.indices));

      ParameterSet grads;
      double loss = original.loss;
      if (!augmenting) {
        grads = std::move(original.gradients);
      } else {
        grads = original.gradients.zeros_like();
        grads.add_scaled(original.gradients, 0.5f);
        loss = 0.5 * original.loss;
        std::vector<SaliencyMap> maps;
        if (config.needs_saliency()) {
          maps = batch_saliency(config, model, original.features, data, batch.indices, external);
        }
        std::size_t per_step = 0;
        for (int a = 0; a < config.k_augments; ++a) {
          const AugmentedBatch aug = augment_batch(active, images, targets, batch.pairing, maps, augment_rng);
          const LossResult mixed = loss_and_backward(model, aug.images, aug.targets);
          grads.add_scaled(mixed.gradients, static_cast<float>(0.5 / k));
          loss += 0.5 / k * mixed.loss;
          for (std::size_t i = 0; i < aug.lambdas.size(); ++i) {
            lambda_sum += aug.lambdas[i];
            mask_sum += aug.area_lambdas[i];
          }
          augmented += aug.lambdas.size();
          per_step += aug.lambdas.size();
        }
        if (batch.indices.size() == config.batch_size) result.augmented_samples_per_step = per_step;
      }
      if (!std::isfinite(loss)) {
        std::ostringstream os;
        os << "training diverged at epoch " << epoch << " step " << step << " (loss " << loss
           << ", lr " << opt.lr << ")";
        throw TrainingDiverged(os.str());
      }
      loss_sum += loss * static_cast<double>(batch.indices.size());
      sgd_step(model, grads, opt);
      ++step;
    }

    MetricsRecord train_row{epoch, "train", counts.top1(),
                            train_set.num_classes >= 10 ? counts.top5() : kNaN,
                            loss_sum / static_cast<double>(data.size()),
                            augmented ? lambda_sum / static_cast<double>(augmented) : kNaN,
                            augmented ? mask_sum / static_cast<double>(augmented) : kNaN};
    result.history.push_back(train_row);
    if (test_set && !test_set->empty()) {
      const EvalResult ev = evaluate(model, *test_set);
      result.history.push_back({epoch, "test", ev.top1, ev.top5, ev.loss, kNaN, kNaN});
    }
  }
  return result;
}

std::string metrics_csv(std::span<const MetricsRecord> history) {
  auto field = [](double v) -> std::string {
    if (std::isnan(v)) return "";
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.6f", v);
    return buf;
  };
  std::ostringstream os;
  os << "epoch,split,top1,top5,loss,mean_lambda,mean_mask_frac\n";
  for (const auto& r : history) {
    os << r.epoch << ',' << r.split << ',' << field(r.top1) << ',' << field(r.top5) << ','
       << field(r.loss) << ',' << field(r.mean_lambda) << ',' << field(r.mean_mask_frac) << '\n';
  }
  return os.str();
}

void write_metrics_csv(std::span<const MetricsRecord> history, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot open " + path + " for writing");
  out << metrics_csv(history);
}

OcclusionTable occlusion_eval(const TinyCnn& model, const Dataset& dataset,
                              std::span<const double> fractions, std::optional<GridScale> grid) {
  OcclusionTable table{std::vector<double>(fractions.begin(), fractions.end()),
                       std::vector<double>(fractions.size(), 0.0)};
  std::vector<ErrorCounts> counts(fractions.size());
  constexpr std::size_t kChunk = 250;
  for (std::size_t start = 0; start < dataset.size(); start += kChunk) {
    const std::size_t end = std::min(dataset.size(), start + kChunk);
    std::vector<std::size_t> idx(end - start);
    std::iota(idx.begin(), idx.end(), start);
    const Tensor images = gather_images(dataset, idx);
    const auto labels = labels_of(dataset, idx);
    const ForwardResult clean = forward(model, images);
    std::vector<SaliencyMap> maps;
    for (std::size_t b = 0; b < idx.size(); ++b) {
      SaliencyMap s = forward_saliency(clean.features.slice(b));
      maps.push_back(grid ? resample(s, grid->rows, grid->cols) : std::move(s));
    }
    for (std::size_t f = 0; f < fractions.size(); ++f) {
      if (fractions[f] == 0.0) {
        counts[f].add(clean.logits, labels);
        continue;
      }
      Tensor occluded = images;
      for (std::size_t b = 0; b < idx.size(); ++b) {
        occluded.set_slice(b, occlude_topk(images.slice(b), maps[b], fractions[f]));
      }
      counts[f].add(forward(model, occluded).logits, labels);
    }
  }
  for (std::size_t f = 0; f < fractions.size(); ++f) table.top1[f] = counts[f].top1();
  return table;
}

std::string occlusion_csv(const OcclusionTable& table) {
  std::ostringstream os;
  os << std::fixed << std::setprecision(4);
  for (std::size_t f = 0; f < table.fractions.size(); ++f) {
    os << (f ? "," : "") << "k=" << table.fractions[f] * 100.0 << "%";
  }
  os << '\n';
  for (std::size_t f = 0; f < table.top1.size(); ++f) os << (f ? "," : "") << table.top1[f];
  os << '\n';
  return os.str();
}

std::pair<double, double> mean_stderr(std::span<const double> values) {
  if (values.empty()) return {kNaN, kNaN};
  const double n = static_cast<double>(values.size());
  const double m = std::accumulate(values.begin(), values.end(), 0.0) / n;
  if (values.size() < 2) return {m, 0.0};
  double ss = 0.0;
  for (double v : values) ss += (v - m) * (v - m);
  return {m, std::sqrt(ss / (n - 1.0)) / std::sqrt(n)};
}

std::vector<AblationCell> ablation_cells(const ExperimentConfig& base, const AblationOptions& options) {
  std::vector<AblationCell> cells;
  auto add = [&cells](std::string group, std::string name, ExperimentConfig cfg, std::string flag = {}) {
    cells.push_back({std::move(group), std::move(name), std::move(cfg), {}, 0.0, 0.0, std::move(flag)});
  };
  ExperimentConfig sg = base;
  sg.strategy = Strategy::saliency_grafting;
  sg.label_mode = LabelMode::saliency;
  sg.k_augments = base.k_augments;

  if (options.groups.count("table8")) {
    ExperimentConfig det = sg;
    det.strategy = Strategy::topk_deterministic;
    det.label_mode = LabelMode::area;
    det.graft.scales = {options.table8_scale};
    det.calibrate_k = 0.0;
    ExperimentConfig stoch_area = sg;
    stoch_area.label_mode = LabelMode::area;
    stoch_area.graft.scales = {options.table8_scale};
    stoch_area.calibrate_k = static_cast<double>(base.topk);
    ExperimentConfig stoch_sal = stoch_area;
    stoch_sal.label_mode = LabelMode::saliency;
    add("table8", kTable8Rows[0], det);
    add("table8", kTable8Rows[1], stoch_area);
    add("table8", kTable8Rows[2], stoch_sal);
  }
  if (options.groups.count("sigma")) {
    for (double factor : {0.0, 0.25, 0.5, 0.75, 1.0}) {
      ExperimentConfig cfg = sg;
      cfg.graft.sigma = factor == 1.0 ? SigmaMode::mean() : SigmaMode::scaled(factor);
      std::ostringstream name;
      name << "sigma=" << factor << "*mean";
      add("sigma", name.str(), cfg, factor == 0.0 ? "saliency-agnostic; compare with cutmix" : "");
    }
    ExperimentConfig cut = base;
    cut.strategy = Strategy::cutmix;
    cut.label_mode = LabelMode::area;
    add("sigma", "cutmix", cut, "saliency-agnostic; compare with sigma=0*mean");
  }
  if (options.groups.count("temperature")) {
    for (double t : {0.01, 0.05, 0.1, 0.2, 0.3}) {
      ExperimentConfig cfg = sg;
      cfg.graft.temperature = t;
      std::ostringstream name;
      name << "T=" << t;
      add("temperature", name.str(), cfg);
    }
  }
  if (options.groups.count("saliency")) {
    for (SaliencyKind kind : {SaliencyKind::forward, SaliencyKind::cam}) {
      ExperimentConfig cfg = sg;
      cfg.saliency_kind = kind;
      add("saliency", to_string(kind), cfg);
    }
  }
  return cells;
}

AblationReport ablation_suite(const ExperimentConfig& base, const Dataset& train_set,
                              const Dataset& test_set, const AblationOptions& options) {
  if (options.seeds == 0) throw std::invalid_argument("ablation: at least one seed required");
  AblationReport report;
  report.cells = ablation_cells(base, options);

  // Identical (config, seed) runs are shared between cells.
  std::map<std::string, double> results;
  std::vector<std::pair<std::string, ExperimentConfig>> tasks;
  for (const auto& cell : report.cells) {
    for (std::size_t s = 0; s < options.seeds; ++s) {
      ExperimentConfig cfg = cell.config;
      cfg.seed = base.seed + s;
      const std::string key = cfg.canonical();
      if (results.emplace(key, kNaN).second) tasks.emplace_back(key, cfg);
    }
  }
  std::atomic<std::size_t> next{0};
  std::mutex lock;
  std::exception_ptr failure;
  auto worker = [&] {
    while (true) {
      const std::size_t t = next.fetch_add(1);
      if (t >= tasks.size()) return;
      try {
        const TrainResult run = train(tasks[t].second, train_set, &test_set);
        const double err = run.history.empty() ? kNaN : run.history.back().top1;
        std::lock_guard guard(lock);
        results[tasks[t].first] = err;
      } catch (...) {
        std::lock_guard guard(lock);
        if (!failure) failure = std::current_exception();
      }
    }
  };
  const std::size_t jobs = std::max<std::size_t>(1, std::min(options.jobs, tasks.size()));
  if (jobs == 1) {
    worker();
  } else {
    std::vector<std::jthread> pool;
    for (std::size_t j = 0; j < jobs; ++j) pool.emplace_back(worker);
  }
  if (failure) std::rethrow_exception(failure);

  for (auto& cell : report.cells) {
    for (std::size_t s = 0; s < options.seeds; ++s) {
      ExperimentConfig cfg = cell.config;
      cfg.seed = base.seed + s;
      cell.errors.push_back(results.at(cfg.canonical()));
    }
    std::tie(cell.mean, cell.stderr_) = mean_stderr(cell.errors);
  }
  report.notes.push_back("all cells share seeds " + std::to_string(base.seed) + ".." +
                         std::to_string(base.seed + options.seeds - 1) +
                         " and therefore data order and initialisation");
  return report;
}

std::string ablation_csv(const AblationReport& report) {
  std::ostringstream os;
  os << "group,cell,seeds,mean_top1,stderr_top1,flag\n" << std::fixed << std::setprecision(4);
  for (const auto& c : report.cells) {
    os << c.group << ',' << c.name << ',' << c.errors.size() << ',' << c.mean << ',' << c.stderr_
       << ',' << c.flag << '\n';
  }
  return os.str();
}

std::string table8_csv(const AblationReport& report) {
  std::ostringstream os;
  os << "method,top1_mean,top1_stderr,seeds\n" << std::fixed << std::setprecision(4);
  for (const auto& c : report.cells) {
    if (c.group != "table8") continue;
    os << c.name << ',' << c.mean << ',' << c.stderr_ << ',' << c.errors.size() << '\n';
  }
  return os.str();
}

FidelityReport label_fidelity_eval(const Dataset& dataset, std::size_t n_pairs,
                                   const GraftConfig& graft_config, RandomStream& rng,
                                   const TinyCnn* model) {
  graft_config.validate();
  if (!dataset.has_masks()) throw std::invalid_argument("label fidelity needs object masks");
  if (dataset.size() < 2) throw std::invalid_argument("label fidelity needs at least two images");

  struct PairDraw {
    std::size_t i, j;
    GridScale scale;
    double p_b;
    RandomStream mask_rng;
  };
  std::vector<PairDraw> draws;
  draws.reserve(n_pairs);
  for (std::size_t p = 0; p < n_pairs; ++p) {
    const std::size_t i = rng.uniform_index(dataset.size());
    std::size_t j = rng.uniform_index(dataset.size() - 1);
    if (j >= i) ++j;
    const GridScale scale = graft_config.scales[rng.uniform_index(graft_config.scales.size())];
    const double p_b = sample_beta(graft_config.alpha, rng);
    draws.push_back({i, j, scale, p_b, rng.split(p)});
  }

  std::vector<std::string> providers{"oracle", "oracle_blurred"};
  if (model) providers.push_back("forward");
  FidelityReport report;
  for (const auto& provider : providers) {
    auto saliency_of = [&](std::size_t idx, const GridScale& g) {
      const LabeledImage& item = dataset.items[idx];
      if (provider == "forward") {
        const ForwardResult fw = forward(*model, gather_images(dataset, std::vector<std::size_t>{idx}));
        return resample(forward_saliency(fw.features.slice(0)), g.rows, g.cols);
      }
      return oracle_saliency(*item.mask, g.rows, g.cols, provider == "oracle_blurred");
    };
    FidelityRow row{provider, 0.0, 0.0, n_pairs};
    for (const PairDraw& d : draws) {
      const LabeledImage& src = dataset.items[d.i];
      const LabeledImage& dst = dataset.items[d.j];
      const SaliencyMap s_i = saliency_of(d.i, d.scale);
      const SaliencyMap s_j = saliency_of(d.j, d.scale);
      RandomStream mask_rng = d.mask_rng;
      const MixMask mask = sample_mask(select_salient(s_i, graft_config.temperature, graft_config.sigma),
                                       d.p_b, mask_rng, src.pixels.dim(1), src.pixels.dim(2));
      const double oracle = oracle_lambda(*src.mask, *dst.mask, mask);
      row.saliency_error += std::abs(calibrated_lambda(s_i, s_j, mask) - oracle);
      row.area_error += std::abs(area_lambda(mask) - oracle);
    }
    if (n_pairs) {
      row.saliency_error /= static_cast<double>(n_pairs);
      row.area_error /= static_cast<double>(n_pairs);
    }
    report.rows.push_back(row);
  }
  return report;
}

std::string fidelity_csv(const FidelityReport& report) {
  std::ostringstream os;
  os << "provider,pairs,mean_abs_err_saliency,mean_abs_err_area\n" << std::fixed << std::setprecision(6);
  for (const auto& r : report.rows) {
    os << r.provider << ',' << r.pairs << ',' << r.saliency_error << ',' << r.area_error << '\n';
  }
  return os.str();
}

}  // namespace sg
