#include "sg/data.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <stdexcept>

namespace sg {

bool Dataset::has_masks() const {
  return !items.empty() &&
         std::all_of(items.begin(), items.end(), [](const auto& it) { return it.mask.has_value(); });
}

std::vector<std::size_t> Dataset::class_counts() const {
  std::vector<std::size_t> counts(num_classes, 0);
  for (const auto& it : items) ++counts.at(it.label);
  return counts;
}

namespace {

constexpr std::array<const char*, kMaxShapeClasses> kShapeNames{
    "disk", "square", "triangle", "plus", "ring", "diamond", "bar", "cross", "frame", "half_disk"};

// Shape support in normalised coordinates (u right, v down, radius 1).
bool inside_shape(std::size_t cls, double u, double v) {
  const double au = std::abs(u);
  const double av = std::abs(v);
  const double d = std::sqrt(u * u + v * v);
  switch (cls) {
    case 0: return d < 1.0;
    case 1: return std::max(au, av) < 0.8;
    case 2: return v > -0.85 && v < 0.75 && au < 0.95 * (v + 0.85) / 1.6;
    case 3: return (au < 0.3 && av < 0.95) || (av < 0.3 && au < 0.95);
    case 4: return d > 0.55 && d < 1.0;
    case 5: return au + av < 1.0;
    case 6: return au < 1.0 && av < 0.35;
    case 7: return (std::abs(u - v) < 0.35 || std::abs(u + v) < 0.35) && au < 0.85 && av < 0.85;
    case 8: return std::max(au, av) < 0.9 && std::max(au, av) > 0.55;
    case 9: return d < 1.0 && v > -0.2;
    default: return false;
  }
}

float clamp01(double v) { return static_cast<float>(std::clamp(v, 0.0, 1.0)); }

constexpr std::size_t kStrokes = 3;

double segment_distance(double px, double py, double x0, double y0, double x1, double y1) {
  const double dx = x1 - x0;
  const double dy = y1 - y0;
  const double len2 = dx * dx + dy * dy;
  const double t = len2 > 0.0 ? std::clamp(((px - x0) * dx + (py - y0) * dy) / len2, 0.0, 1.0) : 0.0;
  return std::hypot(px - (x0 + t * dx), py - (y0 + t * dy));
}

LabeledImage render_shape(std::size_t cls, std::size_t size, RandomStream& rng) {
  const double s = static_cast<double>(size);
  std::array<double, 3> base{};
  std::array<double, 3> ink{};
  for (auto& b : base) b = rng.uniform(0.1, 0.9);
  double contrast = 0.0;
  do {
    for (auto& c : ink) c = rng.uniform(0.0, 1.0);
    contrast = std::abs(ink[0] - base[0]) + std::abs(ink[1] - base[1]) + std::abs(ink[2] - base[2]);
  } while (contrast < 0.6);

  // Low-frequency texture: a coarse grid of per-channel offsets, bilinearly
  // interpolated, plus fine white noise.
  constexpr std::size_t kCoarse = 5;
  std::array<std::array<double, kCoarse * kCoarse>, 3> coarse{};
  for (auto& ch : coarse) {
    for (auto& v : ch) v = rng.uniform(-0.2, 0.2);
  }

  // Clutter: thin strokes of random colour behind the object.
  struct Stroke {
    double x0, y0, x1, y1, half_width;
    std::array<double, 3> colour;
  };
  std::array<Stroke, kStrokes> strokes{};
  for (auto& st : strokes) {
    st.x0 = rng.uniform(0.0, s);
    st.y0 = rng.uniform(0.0, s);
    st.x1 = rng.uniform(0.0, s);
    st.y1 = rng.uniform(0.0, s);
    st.half_width = rng.uniform(0.5, 1.0);
    for (auto& c : st.colour) c = rng.uniform(0.0, 1.0);
  }

  const double radius = rng.uniform(0.18, 0.32) * s;
  const double margin = radius + 1.0;
  const double cy = rng.uniform(margin, s - margin);
  const double cx = rng.uniform(margin, s - margin);

  LabeledImage item{Tensor({3, size, size}), cls, Tensor({size, size})};
  Tensor& mask = *item.mask;
  for (std::size_t r = 0; r < size; ++r) {
    for (std::size_t c = 0; c < size; ++c) {
      const double u = (static_cast<double>(c) + 0.5 - cx) / radius;
      const double v = (static_cast<double>(r) + 0.5 - cy) / radius;
      const bool on = inside_shape(cls, u, v);
      mask.at(r, c) = on ? 1.0f : 0.0f;
      const double gy = (static_cast<double>(r) + 0.5) / s * (kCoarse - 1);
      const double gx = (static_cast<double>(c) + 0.5) / s * (kCoarse - 1);
      const auto y0 = std::min<std::size_t>(static_cast<std::size_t>(gy), kCoarse - 2);
      const auto x0 = std::min<std::size_t>(static_cast<std::size_t>(gx), kCoarse - 2);
      const double fy = gy - static_cast<double>(y0);
      const double fx = gx - static_cast<double>(x0);
      const Stroke* under = nullptr;
      for (const auto& st : strokes) {
        if (segment_distance(c + 0.5, r + 0.5, st.x0, st.y0, st.x1, st.y1) < st.half_width) under = &st;
      }
      for (std::size_t ch = 0; ch < 3; ++ch) {
        const auto& g = coarse[ch];
        const double tex = (1 - fy) * ((1 - fx) * g[y0 * kCoarse + x0] + fx * g[y0 * kCoarse + x0 + 1]) +
                           fy * ((1 - fx) * g[(y0 + 1) * kCoarse + x0] + fx * g[(y0 + 1) * kCoarse + x0 + 1]);
        const double noise = rng.uniform(-0.08, 0.08);
        const double back = under ? under->colour[ch] + noise : base[ch] + tex + noise;
        const double value = on ? ink[ch] + 0.5 * noise : back;
        item.pixels.at(ch, r, c) = clamp01(value);
      }
    }
  }
  return item;
}

}  // namespace

std::string shape_class_name(std::size_t cls) {
  if (cls >= kMaxShapeClasses) throw std::out_of_range("shape class out of range");
  return kShapeNames[cls];
}

Dataset generate_shapes(std::size_t num_classes, std::size_t per_class, std::size_t size,
                        RandomStream& rng) {
  if (num_classes == 0 || num_classes > kMaxShapeClasses) {
    throw std::invalid_argument("generate_shapes: num_classes must be in [1, 10]");
  }
  if (size < 8 || size % 4 != 0) {
    throw std::invalid_argument("generate_shapes: size must be a multiple of 4 (>= 8)");
  }
  Dataset out;
  out.num_classes = num_classes;
  out.items.reserve(num_classes * per_class);
  for (std::size_t i = 0; i < per_class; ++i) {
    for (std::size_t cls = 0; cls < num_classes; ++cls) {
      out.items.push_back(render_shape(cls, size, rng));
    }
  }
  return out;
}

Dataset load_cifar_binary(const std::string& path, std::size_t record_bytes) {
  constexpr std::size_t kPixels = 3 * 32 * 32;
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path);
  std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(in)),
                                   std::istreambuf_iterator<char>());
  if (record_bytes == 0) {
    if (bytes.empty() || bytes.size() % (kPixels + 1) == 0) {
      record_bytes = kPixels + 1;
    } else if (bytes.size() % (kPixels + 2) == 0) {
      record_bytes = kPixels + 2;
    } else {
      const std::size_t whole = bytes.size() / (kPixels + 1) * (kPixels + 1);
      throw std::runtime_error(path + ": truncated record at byte offset " +
                               std::to_string(whole) + " (file is " +
                               std::to_string(bytes.size()) + " bytes)");
    }
  }
  if (record_bytes != kPixels + 1 && record_bytes != kPixels + 2) {
    throw std::invalid_argument(path + ": record length " + std::to_string(record_bytes) +
                                " is neither 3073 nor 3074");
  }
  if (bytes.size() % record_bytes != 0) {
    throw std::runtime_error(path + ": truncated record at byte offset " +
                             std::to_string(bytes.size() / record_bytes * record_bytes));
  }
  const std::size_t label_bytes = record_bytes - kPixels;
  Dataset out;
  out.num_classes = label_bytes == 1 ? 10 : 100;
  const std::size_t n = bytes.size() / record_bytes;
  out.items.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    const unsigned char* rec = bytes.data() + i * record_bytes;
    const std::size_t label = rec[label_bytes - 1];
    if (label >= out.num_classes) {
      throw std::runtime_error(path + ": label " + std::to_string(label) +
                               " out of range at byte offset " + std::to_string(i * record_bytes));
    }
    LabeledImage item{Tensor({3, 32, 32}), label, std::nullopt};
    for (std::size_t k = 0; k < kPixels; ++k) {
      item.pixels[k] = static_cast<float>(rec[label_bytes + k]) / 255.0f;
    }
    out.items.push_back(std::move(item));
  }
  return out;
}

std::vector<std::size_t> subsample_indices(const Dataset& dataset, double fraction,
                                           RandomStream& rng) {
  if (!(fraction > 0.0 && fraction <= 1.0)) {
    throw std::invalid_argument("subsample_per_class: fraction must lie in (0, 1]");
  }
  std::vector<std::vector<std::size_t>> by_class(dataset.num_classes);
  for (std::size_t i = 0; i < dataset.size(); ++i) by_class.at(dataset.items[i].label).push_back(i);
  std::vector<std::size_t> keep;
  for (auto& members : by_class) {
    const auto want = static_cast<std::size_t>(
        std::ceil(fraction * static_cast<double>(members.size()) - 1e-9));
    const auto perm = rng.permutation(members.size());
    for (std::size_t r = 0; r < want; ++r) keep.push_back(members[perm[r]]);
  }
  std::sort(keep.begin(), keep.end());
  return keep;
}

Dataset select(const Dataset& dataset, std::span<const std::size_t> indices) {
  Dataset out;
  out.num_classes = dataset.num_classes;
  out.items.reserve(indices.size());
  for (std::size_t i : indices) out.items.push_back(dataset.items.at(i));
  return out;
}

Dataset subsample_per_class(const Dataset& dataset, double fraction, RandomStream& rng) {
  const auto keep = subsample_indices(dataset, fraction, rng);
  return select(dataset, keep);
}

std::vector<Batch> batches(const Dataset& dataset, std::size_t batch_size, RandomStream& rng) {
  if (batch_size < 2) throw std::invalid_argument("batches: batch_size must be at least 2");
  const auto order = rng.permutation(dataset.size());
  std::vector<Batch> out;
  for (std::size_t start = 0; start < order.size(); start += batch_size) {
    const std::size_t end = std::min(order.size(), start + batch_size);
    Batch b;
    b.indices.assign(order.begin() + static_cast<long>(start), order.begin() + static_cast<long>(end));
    b.pairing.partner = rng.permutation(b.indices.size());
    out.push_back(std::move(b));
  }
  return out;
}

Tensor gather_images(const Dataset& dataset, std::span<const std::size_t> indices) {
  if (indices.empty()) return Tensor({0, 3, 0, 0});
  const Shape& inner = dataset.items.at(indices.front()).pixels.shape();
  Tensor out({indices.size(), inner[0], inner[1], inner[2]});
  for (std::size_t i = 0; i < indices.size(); ++i) out.set_slice(i, dataset.items.at(indices[i]).pixels);
  return out;
}

std::vector<SoftLabel> one_hot_labels(const Dataset& dataset, std::span<const std::size_t> indices) {
  std::vector<SoftLabel> out;
  out.reserve(indices.size());
  for (std::size_t i : indices) out.push_back(SoftLabel::one_hot(dataset.items.at(i).label, dataset.num_classes));
  return out;
}

double oracle_lambda(const Tensor& source_mask, const Tensor& destination_mask,
                     const MixMask& mask) {
  const GridScale g = mask.scale();
  const SaliencyMap source(avg_pool_to(source_mask, g.rows, g.cols));
  const SaliencyMap destination(avg_pool_to(destination_mask, g.rows, g.cols));
  return calibrated_lambda(source, destination, mask);
}

void export_bundle(const Dataset& dataset, const std::string& directory) {
  namespace fs = std::filesystem;
  std::error_code ec;
  fs::create_directories(directory, ec);
  if (ec) throw std::runtime_error("cannot create " + directory + ": " + ec.message());
  const fs::path dir(directory);
  std::size_t h = 0;
  std::size_t w = 0;
  if (!dataset.empty()) {
    h = dataset.items.front().pixels.dim(1);
    w = dataset.items.front().pixels.dim(2);
  }
  Tensor images({dataset.size(), 3, h, w});
  for (std::size_t i = 0; i < dataset.size(); ++i) images.set_slice(i, dataset.items[i].pixels);
  save_sgt((dir / "images.sgt").string(), images);
  if (dataset.has_masks() || dataset.empty()) {
    Tensor masks({dataset.size(), h, w});
    for (std::size_t i = 0; i < dataset.size(); ++i) masks.set_slice(i, *dataset.items[i].mask);
    save_sgt((dir / "masks.sgt").string(), masks);
  }
  const std::string labels_path = (dir / "labels.csv").string();
  std::ofstream labels(labels_path);
  if (!labels) throw std::runtime_error("cannot open " + labels_path + " for writing");
  labels << "index,label\n";
  for (std::size_t i = 0; i < dataset.size(); ++i) labels << i << ',' << dataset.items[i].label << '\n';
  const std::string meta_path = (dir / "meta.txt").string();
  std::ofstream meta(meta_path);
  if (!meta) throw std::runtime_error("cannot open " + meta_path + " for writing");
  meta << "classes " << dataset.num_classes << '\n';
}

Dataset import_bundle(const std::string& directory) {
  namespace fs = std::filesystem;
  const fs::path dir(directory);
  if (!fs::exists(dir / "images.sgt") || !fs::exists(dir / "labels.csv")) {
    throw std::runtime_error("no dataset bundle in " + directory);
  }
  Dataset out;
  {
    std::ifstream meta(dir / "meta.txt");
    std::string key;
    if (!(meta >> key >> out.num_classes) || key != "classes") {
      throw std::runtime_error((dir / "meta.txt").string() + ": missing class count");
    }
  }
  const Tensor images = load_sgt((dir / "images.sgt").string());
  std::optional<Tensor> masks;
  if (fs::exists(dir / "masks.sgt")) masks = load_sgt((dir / "masks.sgt").string());
  std::ifstream labels(dir / "labels.csv");
  std::string line;
  std::getline(labels, line);  // header
  std::vector<std::size_t> ids;
  while (std::getline(labels, line)) {
    if (line.empty()) continue;
    const auto comma = line.find(',');
    if (comma == std::string::npos) throw std::runtime_error("labels.csv: malformed line '" + line + "'");
    ids.push_back(std::stoul(line.substr(comma + 1)));
  }
  if (images.rank() != 4 || ids.size() != images.dim(0)) {
    throw std::runtime_error(directory + ": images and labels disagree");
  }
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (ids[i] >= out.num_classes) throw std::runtime_error(directory + ": label out of range");
    LabeledImage item{images.slice(i), ids[i], std::nullopt};
    if (masks && masks->dim(0) == ids.size()) item.mask = masks->slice(i);
    out.items.push_back(std::move(item));
  }
  return out;
}

}  // namespace sg
