#include "sg/tensor.hpp"

#include <array>
#include <bit>
#include <cmath>
#include <fstream>
#include <functional>
#include <numeric>
#include <sstream>
#include <stdexcept>

namespace sg {

std::size_t shape_size(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1},
                         std::multiplies<>());
}

std::string shape_string(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << 'x';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

Tensor::Tensor(Shape shape, float fill)
    : shape_(std::move(shape)), data_(shape_size(shape_), fill) {}

Tensor::Tensor(Shape shape, std::vector<float> values)
    : shape_(std::move(shape)), data_(values.begin(), values.end()) {
  if (shape_size(shape_) != data_.size()) {
    throw std::invalid_argument("tensor: shape " + shape_string(shape_) +
                                " does not match " +
                                std::to_string(data_.size()) + " values");
  }
}

Tensor Tensor::matrix(std::size_t rows, std::size_t cols,
                      std::initializer_list<float> values) {
  return Tensor({rows, cols}, std::vector<float>(values));
}

std::size_t Tensor::dim(std::size_t axis) const {
  if (axis >= shape_.size()) {
    throw std::out_of_range("tensor: axis " + std::to_string(axis) +
                            " out of range for rank " +
                            std::to_string(shape_.size()));
  }
  return shape_[axis];
}

Tensor Tensor::slice(std::size_t index) const {
  if (shape_.empty() || index >= shape_[0]) {
    throw std::out_of_range("tensor: slice index out of range");
  }
  Shape inner(shape_.begin() + 1, shape_.end());
  const std::size_t stride = shape_size(inner);
  const auto first = data_.begin() + static_cast<std::ptrdiff_t>(index * stride);
  Tensor out;
  out.shape_ = std::move(inner);
  out.data_.assign(first, first + static_cast<std::ptrdiff_t>(stride));
  return out;
}

void Tensor::set_slice(std::size_t index, const Tensor& part) {
  if (shape_.empty() || index >= shape_[0] ||
      !std::equal(shape_.begin() + 1, shape_.end(), part.shape().begin(),
                  part.shape().end())) {
    throw std::invalid_argument("tensor: set_slice shape mismatch");
  }
  std::copy(part.values().begin(), part.values().end(),
            data_.begin() + static_cast<std::ptrdiff_t>(index * part.size()));
}

Tensor Tensor::reshaped(Shape shape) const {
  if (shape_size(shape) != data_.size()) {
    throw std::invalid_argument("tensor: cannot reshape " + shape_string(shape_) + " to " +
                                shape_string(shape));
  }
  Tensor out = *this;
  out.shape_ = std::move(shape);
  return out;
}

namespace {

void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw std::invalid_argument(std::string(op) + ": shape mismatch " +
                                shape_string(a.shape()) + " vs " +
                                shape_string(b.shape()));
  }
}

template <typename F>
Tensor zip(const Tensor& a, const Tensor& b, const char* op, F f) {
  require_same_shape(a, b, op);
  Tensor out(a.shape());
  for (std::size_t k = 0; k < a.size(); ++k) out[k] = f(a[k], b[k]);
  return out;
}

void require_2d(const Tensor& t, const char* op) {
  if (t.rank() != 2) {
    throw std::invalid_argument(std::string(op) + ": expected a 2D map, got " +
                                shape_string(t.shape()));
  }
}

std::size_t rounded_boundary(std::size_t i, std::size_t extent, std::size_t parts) {
  return static_cast<std::size_t>(std::lround(static_cast<double>(i) *
                                              static_cast<double>(extent) /
                                              static_cast<double>(parts)));
}

}  // namespace

Tensor hadamard(const Tensor& a, const Tensor& b) {
  return zip(a, b, "hadamard", [](float x, float y) { return x * y; });
}

Tensor add(const Tensor& a, const Tensor& b) {
  return zip(a, b, "add", [](float x, float y) { return x + y; });
}

Tensor subtract(const Tensor& a, const Tensor& b) {
  return zip(a, b, "subtract", [](float x, float y) { return x - y; });
}

Tensor scale(const Tensor& t, float factor) {
  Tensor out(t.shape());
  for (std::size_t k = 0; k < t.size(); ++k) out[k] = t[k] * factor;
  return out;
}

Tensor one_minus(const Tensor& t) {
  Tensor out(t.shape());
  for (std::size_t k = 0; k < t.size(); ++k) out[k] = 1.0f - t[k];
  return out;
}

double sum(const Tensor& t) {
  double acc = 0.0;
  for (float v : t.values()) acc += v;
  return acc;
}

double mean(const Tensor& t) {
  return t.empty() ? 0.0 : sum(t) / static_cast<double>(t.size());
}

double l2_norm(const Tensor& t) {
  double acc = 0.0;
  for (float v : t.values()) acc += static_cast<double>(v) * v;
  return std::sqrt(acc);
}

double max_abs_difference(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "max_abs_difference");
  double worst = 0.0;
  for (std::size_t k = 0; k < a.size(); ++k) {
    worst = std::max(worst, std::abs(static_cast<double>(a[k]) - b[k]));
  }
  return worst;
}

Tensor avg_pool_to(const Tensor& map, std::size_t hs, std::size_t ws) {
  require_2d(map, "avg_pool_to");
  const std::size_t h = map.dim(0);
  const std::size_t w = map.dim(1);
  if (hs == 0 || ws == 0) {
    throw std::invalid_argument("avg_pool_to: target grid must be non-empty");
  }
  if (hs > h || ws > w) {
    throw std::invalid_argument("avg_pool_to: cannot pool " +
                                shape_string(map.shape()) + " up to " +
                                std::to_string(hs) + "x" + std::to_string(ws));
  }
  Tensor out({hs, ws});
  for (std::size_t i = 0; i < hs; ++i) {
    const std::size_t r0 = rounded_boundary(i, h, hs);
    const std::size_t r1 = rounded_boundary(i + 1, h, hs);
    for (std::size_t j = 0; j < ws; ++j) {
      const std::size_t c0 = rounded_boundary(j, w, ws);
      const std::size_t c1 = rounded_boundary(j + 1, w, ws);
      double acc = 0.0;
      for (std::size_t r = r0; r < r1; ++r) {
        for (std::size_t c = c0; c < c1; ++c) acc += map.at(r, c);
      }
      out.at(i, j) = static_cast<float>(acc / static_cast<double>((r1 - r0) * (c1 - c0)));
    }
  }
  return out;
}

Tensor block_upsample(const Tensor& grid, std::size_t height, std::size_t width) {
  require_2d(grid, "block_upsample");
  const std::size_t rows = grid.dim(0);
  const std::size_t cols = grid.dim(1);
  if (height < rows || width < cols) {
    throw std::invalid_argument("block_upsample: target smaller than grid");
  }
  Tensor out({height, width});
  for (std::size_t r = 0; r < height; ++r) {
    const std::size_t gr = r * rows / height;
    for (std::size_t c = 0; c < width; ++c) {
      out.at(r, c) = grid.at(gr, c * cols / width);
    }
  }
  return out;
}

namespace {

constexpr std::array<char, 4> kSgtMagic{'S', 'G', 'T', '1'};

void put_u32(std::ostream& out, std::uint32_t v) {
  const std::array<char, 4> bytes{static_cast<char>(v & 0xff),
                                  static_cast<char>((v >> 8) & 0xff),
                                  static_cast<char>((v >> 16) & 0xff),
                                  static_cast<char>((v >> 24) & 0xff)};
  out.write(bytes.data(), 4);
}

std::uint32_t get_u32(std::istream& in) {
  std::array<unsigned char, 4> bytes{};
  if (!in.read(reinterpret_cast<char*>(bytes.data()), 4)) {
    throw std::runtime_error("sgt: unexpected end of stream");
  }
  return static_cast<std::uint32_t>(bytes[0]) |
         (static_cast<std::uint32_t>(bytes[1]) << 8) |
         (static_cast<std::uint32_t>(bytes[2]) << 16) |
         (static_cast<std::uint32_t>(bytes[3]) << 24);
}

}  // namespace

void write_sgt(std::ostream& out, const Tensor& t) {
  out.write(kSgtMagic.data(), kSgtMagic.size());
  put_u32(out, static_cast<std::uint32_t>(t.rank()));
  for (std::size_t d : t.shape()) put_u32(out, static_cast<std::uint32_t>(d));
  for (float v : t.values()) put_u32(out, std::bit_cast<std::uint32_t>(v));
}

Tensor read_sgt(std::istream& in) {
  std::array<char, 4> magic{};
  if (!in.read(magic.data(), magic.size()) || magic != kSgtMagic) {
    throw std::runtime_error("sgt: bad magic");
  }
  const std::uint32_t rank = get_u32(in);
  if (rank > 8) throw std::runtime_error("sgt: implausible rank " + std::to_string(rank));
  Shape shape(rank);
  for (auto& d : shape) d = get_u32(in);
  std::vector<float> values(shape_size(shape));
  for (auto& v : values) v = std::bit_cast<float>(get_u32(in));
  return Tensor(std::move(shape), std::move(values));
}

void save_sgt(const std::string& path, const Tensor& t) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot open " + path + " for writing");
  write_sgt(out, t);
  if (!out) throw std::runtime_error("write failed: " + path);
}

Tensor load_sgt(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path);
  try {
    return read_sgt(in);
  } catch (const std::runtime_error& e) {
    throw std::runtime_error(path + ": " + e.what());
  }
}

}  // namespace sg
