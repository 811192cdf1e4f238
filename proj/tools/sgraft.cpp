// sgraft: data generation, augmentation previews, training and evaluation protocols.
#include <CLI11.hpp>

#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <cmath>
#include <sstream>

#include "sg/data.hpp"
#include "sg/experiments.hpp"
#include "sg/image_io.hpp"
#include "sg/model.hpp"

namespace fs = std::filesystem;
using namespace sg;

namespace {

const ExperimentConfig kDefaults{};

// Raw flag values; converted into library types once parsing is done.
struct ExperimentFlags {
  std::string strategy = "saliency_grafting";
  std::string label_mode = "auto";
  std::string saliency = "forward";
  double alpha = kDefaults.graft.alpha;
  double temperature = kDefaults.graft.temperature;
  std::string sigma = "mean";
  std::vector<std::string> scales{"4x4", "8x8"};
  int warmup = kDefaults.graft.warmup_epochs;
  int k_augments = kDefaults.k_augments;
  int epochs = kDefaults.epochs;
  std::size_t batch_size = kDefaults.batch_size;
  double lr = kDefaults.lr;
  double momentum = kDefaults.momentum;
  double weight_decay = kDefaults.weight_decay;
  std::uint64_t seed = kDefaults.seed;
  double scarcity = kDefaults.scarcity_fraction;
  std::size_t topk = kDefaults.topk;
  double calibrate_k = kDefaults.calibrate_k;
  double mix_alpha = kDefaults.mix_alpha;
  double p_b = -1.0;
  bool oracle_blur = true;
  std::string external;

  ExperimentConfig resolve() const {
    ExperimentConfig c;
    c.strategy = parse_strategy(strategy);
    c.label_mode = parse_label_mode(label_mode);
    c.saliency_kind = parse_saliency_kind(saliency);
    c.graft.alpha = alpha;
    c.graft.temperature = temperature;
    c.graft.sigma = parse_sigma_mode(sigma);
    c.graft.scales.clear();
    for (const auto& s : scales) c.graft.scales.push_back(parse_grid_scale(s));
    c.graft.warmup_epochs = warmup;
    c.k_augments = k_augments;
    c.epochs = epochs;
    c.batch_size = batch_size;
    c.lr = lr;
    c.momentum = momentum;
    c.weight_decay = weight_decay;
    c.seed = seed;
    c.scarcity_fraction = scarcity;
    c.topk = topk;
    c.calibrate_k = calibrate_k;
    c.mix_alpha = mix_alpha;
    if (p_b >= 0.0) c.forced_p_b = p_b;
    c.oracle_blur = oracle_blur;
    c.external_saliency = external;
    c.validate();
    return c;
  }
};

struct DataFlags {
  std::string data;
  std::string test_data;
  std::string cifar;
  std::string cifar_test;
  std::size_t classes = 10;
  std::size_t per_class = 200;
  std::size_t test_per_class = 50;
  std::size_t size = 32;
  std::uint64_t data_seed = 0;
};

void add_data_flags(CLI::App* cmd, DataFlags& f, bool with_test) {
  cmd->add_option("--data", f.data, "Dataset bundle directory (default: generated shapes)");
  cmd->add_option("--cifar", f.cifar, "CIFAR binary file used instead of a bundle");
  cmd->add_option("--classes", f.classes, "Shape classes when generating")->check(CLI::Range(1, 10));
  cmd->add_option("--per-class", f.per_class, "Generated images per class");
  cmd->add_option("--size", f.size, "Generated image side");
  cmd->add_option("--data-seed", f.data_seed, "Seed of the generated dataset");
  if (with_test) {
    cmd->add_option("--test-data", f.test_data, "Test bundle directory");
    cmd->add_option("--cifar-test", f.cifar_test, "CIFAR binary test file");
    cmd->add_option("--test-per-class", f.test_per_class, "Generated test images per class");
  }
}

Dataset load_train(const DataFlags& f) {
  if (!f.data.empty()) return import_bundle(f.data);
  if (!f.cifar.empty()) return load_cifar_binary(f.cifar);
  RandomStream rng(f.data_seed);
  RandomStream gen = rng.split("train");
  return generate_shapes(f.classes, f.per_class, f.size, gen);
}

Dataset load_test(const DataFlags& f) {
  if (!f.test_data.empty()) return import_bundle(f.test_data);
  if (!f.cifar_test.empty()) return load_cifar_binary(f.cifar_test);
  if (!f.data.empty() || !f.cifar.empty()) return {};
  RandomStream rng(f.data_seed);
  RandomStream gen = rng.split("test");
  return generate_shapes(f.classes, f.test_per_class, f.size, gen);
}

void add_experiment_flags(CLI::App* cmd, ExperimentFlags& f) {
  cmd->add_option("--strategy", f.strategy, "saliency_grafting|mixup|cutmix|topk_deterministic|vanilla");
  cmd->add_option("--label-mode", f.label_mode, "auto|saliency|area");
  cmd->add_option("--saliency", f.saliency, "forward|cam|oracle|external");
  cmd->add_option("--alpha", f.alpha, "Beta(alpha, alpha) for p_B");
  cmd->add_option("--temperature", f.temperature, "Softmax temperature");
  cmd->add_option("--sigma", f.sigma, "Threshold: mean, a number, or F*mean");
  cmd->add_option("--scales", f.scales, "Region grids, e.g. 4x4 8x8");
  cmd->add_option("--warmup", f.warmup, "Epochs without augmentation");
  cmd->add_option("--k-augments", f.k_augments, "Augmented copies per step");
  cmd->add_option("--epochs", f.epochs);
  cmd->add_option("--batch-size", f.batch_size);
  cmd->add_option("--lr", f.lr);
  cmd->add_option("--momentum", f.momentum);
  cmd->add_option("--weight-decay", f.weight_decay);
  cmd->add_option("--seed", f.seed);
  cmd->add_option("--scarcity", f.scarcity, "Per-class fraction of the training set kept");
  cmd->add_option("--topk", f.topk, "Regions pasted by topk_deterministic");
  cmd->add_option("--calibrate-k", f.calibrate_k, "Calibrate T after warmup so E[regions] = k (0: off)");
  cmd->add_option("--mix-alpha", f.mix_alpha, "Beta parameter for mixup / cutmix");
  cmd->add_option("--p-b", f.p_b, "Fixed p_B instead of Beta draws (negative: off)");
  cmd->add_option("--oracle-blur", f.oracle_blur, "Blur masks for oracle saliency");
  cmd->add_option("--external-saliency", f.external, "SGT file of N x H x W maps");
}

fs::path prepare_dir(const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw std::runtime_error("cannot create " + dir.string() + ": " + ec.message());
  return dir;
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot open " + path.string() + " for writing");
  out << text;
}

void echo_config(const CLI::App* cmd, const fs::path& dir) {
  write_text(dir / "config.toml", "[" + cmd->get_name() + "]\n" + cmd->config_to_str(true, false));
}

std::vector<double> split_fractions(const std::vector<double>& v) {
  for (double f : v) {
    if (!(f >= 0.0 && f <= 1.0)) throw std::invalid_argument("fractions must lie in [0, 1]");
  }
  return v;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Saliency grafting augmentation toolkit"};
  app.allow_config_extras(CLI::config_extras_mode::error);
  app.option_defaults()->always_capture_default();
  app.set_config("--config", "", "TOML file with one [command] section");
  app.require_subcommand(1);
  app.fallthrough();

  std::string out = "runs";
  DataFlags data;
  ExperimentFlags exp;

  auto* gen = app.add_subcommand("gen-data", "Write a shapes dataset bundle");
  std::uint64_t gen_seed = 0;
  gen->add_option("--classes", data.classes)->check(CLI::Range(1, 10));
  gen->add_option("--per-class", data.per_class);
  gen->add_option("--size", data.size);
  gen->add_option("--seed", gen_seed);
  gen->add_option("--out", out, "Bundle directory")->required();

  auto* aug = app.add_subcommand("augment", "Render augmented pairs and their mixing ratios");
  std::size_t pairs = 8;
  std::string checkpoint;
  add_data_flags(aug, data, false);
  add_experiment_flags(aug, exp);
  aug->add_option("--pairs", pairs, "Pairs to render");
  aug->add_option("--checkpoint", checkpoint, "Model used for forward/cam saliency");
  aug->add_option("--out", out, "Output directory");

  auto* tr = app.add_subcommand("train", "Train one configuration");
  add_data_flags(tr, data, true);
  add_experiment_flags(tr, exp);
  tr->add_option("--out", out, "Root of run directories");

  auto* ev = app.add_subcommand("eval", "Evaluate a checkpoint");
  add_data_flags(ev, data, true);
  ev->add_option("--checkpoint", checkpoint)->required();
  ev->add_option("--seed", exp.seed);
  ev->add_option("--out", out, "Output directory");

  auto* ab = app.add_subcommand("ablate", "Run the ablation grid over paired seeds");
  std::size_t seeds = 3;
  std::size_t jobs = 1;
  std::vector<std::string> groups{"table8", "sigma", "temperature", "saliency"};
  std::string table8_scale = "8x8";
  add_data_flags(ab, data, true);
  add_experiment_flags(ab, exp);
  ab->add_option("--seeds", seeds)->check(CLI::PositiveNumber);
  ab->add_option("--jobs", jobs, "Concurrent training runs")->check(CLI::PositiveNumber);
  ab->add_option("--groups", groups, "table8 sigma temperature saliency");
  ab->add_option("--table8-scale", table8_scale, "Region grid of the strategy rows");
  ab->add_option("--out", out, "Root of run directories");

  auto* oc = app.add_subcommand("occlude", "Error under removal of the most salient regions");
  std::vector<double> fractions{0.0, 0.125, 0.25};
  std::string grid;
  add_data_flags(oc, data, true);
  oc->add_option("--checkpoint", checkpoint)->required();
  oc->add_option("--fractions", fractions);
  oc->add_option("--grid", grid, "Occlusion grid (default: feature grid)");
  oc->add_option("--seed", exp.seed);
  oc->add_option("--out", out, "Output directory");

  auto* fi = app.add_subcommand("fidelity", "Mixing-ratio error against the mask oracle");
  std::size_t fid_pairs = 1000;
  add_data_flags(fi, data, false);
  add_experiment_flags(fi, exp);
  fi->add_option("--pairs", fid_pairs);
  fi->add_option("--checkpoint", checkpoint, "Adds the forward saliency provider");
  fi->add_option("--out", out, "Output directory");

  CLI11_PARSE(app, argc, argv);

  try {
    if (gen->parsed()) {
      RandomStream rng(gen_seed);
      const Dataset ds = generate_shapes(data.classes, data.per_class, data.size, rng);
      export_bundle(ds, out);
      echo_config(gen, out);
      std::cout << ds.size() << " images in " << out << '\n';
      return 0;
    }

    if (ev->parsed()) {
      const TinyCnn model = load_checkpoint(checkpoint);
      Dataset test = load_test(data);
      if (test.empty()) test = load_train(data);
      const EvalResult r = evaluate(model, test);
      std::ostringstream csv;
      csv << std::fixed << std::setprecision(6) << "top1,top5,loss\n" << r.top1 << ',';
      if (!std::isnan(r.top5)) csv << r.top5;
      csv << ',' << r.loss << '\n';
      std::cout << csv.str();
      if (ev->count("--out")) {
        const fs::path dir = prepare_dir(out);
        write_text(dir / "eval.csv", csv.str());
        echo_config(ev, dir);
      }
      return 0;
    }

    if (oc->parsed()) {
      const TinyCnn model = load_checkpoint(checkpoint);
      split_fractions(fractions);
      std::optional<GridScale> g;
      if (!grid.empty()) g = parse_grid_scale(grid);
      Dataset test = load_test(data);
      if (test.empty()) test = load_train(data);
      const std::string csv = occlusion_csv(occlusion_eval(model, test, fractions, g));
      std::cout << csv;
      if (oc->count("--out")) {
        const fs::path dir = prepare_dir(out);
        write_text(dir / "occlusion.csv", csv);
        echo_config(oc, dir);
      }
      return 0;
    }

    const ExperimentConfig config = exp.resolve();

    if (tr->parsed()) {
      const Dataset train_set = load_train(data);
      const Dataset test_set = load_test(data);
      const TrainResult result = train(config, train_set, test_set.empty() ? nullptr : &test_set);
      const fs::path dir = prepare_dir(fs::path(out) / config.hash());
      write_metrics_csv(result.history, (dir / "metrics.csv").string());
      save_checkpoint((dir / "model.sgt").string(), result.model);
      echo_config(tr, dir);
      std::ostringstream summary;
      summary << std::setprecision(6) << "train_size " << result.train_size << '\n'
              << "augmented_samples_per_step " << result.augmented_samples_per_step << '\n';
      if (result.calibration) {
        summary << "calibrated_temperature " << result.calibration->temperature << '\n'
                << "expected_regions " << result.calibration->expected_regions << '\n';
      }
      write_text(dir / "summary.txt", summary.str());
      std::cout << dir.string() << '\n';
      return 0;
    }

    if (ab->parsed()) {
      AblationOptions options;
      options.seeds = seeds;
      options.jobs = jobs;
      options.groups = {groups.begin(), groups.end()};
      for (const auto& g : options.groups) {
        if (g != "table8" && g != "sigma" && g != "temperature" && g != "saliency") {
          throw std::invalid_argument("unknown ablation group '" + g + "'");
        }
      }
      options.table8_scale = parse_grid_scale(table8_scale);
      for (const auto& cell : ablation_cells(config, options)) cell.config.validate();
      const Dataset train_set = load_train(data);
      Dataset test_set = load_test(data);
      if (test_set.empty()) throw std::invalid_argument("ablate needs a test set");
      const AblationReport report = ablation_suite(config, train_set, test_set, options);
      const fs::path dir = prepare_dir(fs::path(out) / ("ablate-" + config.hash()));
      write_text(dir / "ablation.csv", ablation_csv(report));
      write_text(dir / "table8.csv", table8_csv(report));
      std::vector<double> means;
      std::vector<double> errs;
      for (const auto& c : report.cells) {
        means.push_back(c.mean);
        errs.push_back(c.stderr_);
      }
      write_png((dir / "ablation.png").string(), bar_plot(means, errs));
      echo_config(ab, dir);
      std::cout << table8_csv(report) << dir.string() << '\n';
      return 0;
    }

    if (fi->parsed()) {
      const Dataset ds = load_train(data);
      std::optional<TinyCnn> model;
      if (!checkpoint.empty()) model = load_checkpoint(checkpoint);
      RandomStream rng(config.seed);
      const std::string csv = fidelity_csv(label_fidelity_eval(ds, fid_pairs, config.graft, rng,
                                                              model ? &*model : nullptr));
      std::cout << csv;
      if (fi->count("--out")) {
        const fs::path dir = prepare_dir(out);
        write_text(dir / "fidelity.csv", csv);
        echo_config(fi, dir);
      }
      return 0;
    }

    if (aug->parsed()) {
      const Dataset ds = load_train(data);
      if (ds.size() < 2) throw std::invalid_argument("augment needs at least two images");
      RandomStream rng(config.seed);
      RandomStream init_rng = rng.split("init");
      const TinyCnn model = checkpoint.empty() ? TinyCnn(ds.num_classes, init_rng) : load_checkpoint(checkpoint);
      const std::size_t n = std::min(pairs, ds.size());
      RandomStream pick = rng.split("pick");
      std::vector<std::size_t> perm = pick.permutation(ds.size());
      std::vector<std::size_t> idx(perm.begin(), perm.begin() + static_cast<std::ptrdiff_t>(n));
      BatchPairing pairing{pick.permutation(n)};
      const Tensor images = gather_images(ds, idx);
      const auto labels = one_hot_labels(ds, idx);
      std::vector<SaliencyMap> maps;
      if (config.needs_saliency()) {
        std::vector<SaliencyMap> external;
        if (config.saliency_kind == SaliencyKind::external) external = load_external_saliency(config.external_saliency);
        maps = batch_saliency(config, model, forward(model, images).features, ds, idx, external);
      }
      ExperimentConfig shown = config;
      const bool grafting = config.strategy == Strategy::saliency_grafting;
      if (grafting) shown.label_mode = LabelMode::saliency;
      RandomStream aug_rng = rng.split("augment");
      const AugmentedBatch batch = augment_batch(shown, images, labels, pairing, maps, aug_rng);

      std::ostringstream csv;
      csv << std::fixed << std::setprecision(6) << "pair,source,destination,lambda_saliency,lambda_area\n";
      std::vector<Tensor> src, dst, masks, res;
      for (std::size_t i = 0; i < n; ++i) {
        csv << i << ',' << idx[i] << ',' << idx[pairing.partner[i]] << ',';
        if (grafting) csv << batch.lambdas[i];
        csv << ',' << batch.area_lambdas[i] << '\n';
        src.push_back(images.slice(i));
        dst.push_back(images.slice(pairing.partner[i]));
        masks.push_back(batch.pixel_masks[i]);
        res.push_back(batch.images.slice(i));
      }
      const fs::path dir = prepare_dir(out);
      write_text(dir / "lambdas.csv", csv.str());
      write_png((dir / "preview.png").string(), preview_grid(src, dst, masks, res));
      echo_config(aug, dir);
      std::cout << csv.str();
      return 0;
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
