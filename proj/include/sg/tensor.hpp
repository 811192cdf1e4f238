#pragma once

#include <cstddef>
#include <cstdint>
#include <iosfwd>
#include <new>
#include <span>
#include <string>
#include <vector>

namespace sg {

using Shape = std::vector<std::size_t>;

/// 64-byte aligned storage. Vectorised kernels pick their code path from the
/// pointer alignment, so a fixed alignment keeps float results reproducible.
template <typename T>
struct AlignedAllocator {
  using value_type = T;
  static constexpr std::align_val_t kAlign{64};

  AlignedAllocator() = default;
  template <typename U>
  AlignedAllocator(const AlignedAllocator<U>&) {}

  T* allocate(std::size_t n) { return static_cast<T*>(::operator new(n * sizeof(T), kAlign)); }
  void deallocate(T* p, std::size_t) { ::operator delete(p, kAlign); }
  template <typename U>
  bool operator==(const AlignedAllocator<U>&) const { return true; }
};

using FloatBuffer = std::vector<float, AlignedAllocator<float>>;

std::size_t shape_size(const Shape& shape);
std::string shape_string(const Shape& shape);

/// Dense row-major float32 array with an explicit shape.
///
/// Images are stored as C x H x W, batches as N x C x H x W, and saliency
/// maps / masks as H x W.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Shape shape, float fill = 0.0f);
  Tensor(Shape shape, std::vector<float> values);

  static Tensor zeros(Shape shape) { return Tensor(std::move(shape), 0.0f); }
  static Tensor ones(Shape shape) { return Tensor(std::move(shape), 1.0f); }
  static Tensor matrix(std::size_t rows, std::size_t cols,
                       std::initializer_list<float> values);

  const Shape& shape() const { return shape_; }
  std::size_t rank() const { return shape_.size(); }
  std::size_t dim(std::size_t axis) const;
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  std::span<float> values() { return data_; }
  std::span<const float> values() const { return data_; }
  float* data() { return data_.data(); }
  const float* data() const { return data_.data(); }

  float& operator[](std::size_t k) { return data_[k]; }
  float operator[](std::size_t k) const { return data_[k]; }

  float& at(std::size_t r, std::size_t c) { return data_[r * shape_[1] + c]; }
  float at(std::size_t r, std::size_t c) const { return data_[r * shape_[1] + c]; }
  float& at(std::size_t a, std::size_t r, std::size_t c) {
    return data_[(a * shape_[1] + r) * shape_[2] + c];
  }
  float at(std::size_t a, std::size_t r, std::size_t c) const {
    return data_[(a * shape_[1] + r) * shape_[2] + c];
  }

  /// Copy of the leading-axis slice `index` (e.g. one image of a batch).
  Tensor slice(std::size_t index) const;
  /// Overwrite leading-axis slice `index` with `part`.
  void set_slice(std::size_t index, const Tensor& part);
  Tensor reshaped(Shape shape) const;

  bool operator==(const Tensor& other) const = default;

 private:
  Shape shape_;
  FloatBuffer data_;
};

// Elementwise algebra. All binary ops require identical shapes.
Tensor hadamard(const Tensor& a, const Tensor& b);
Tensor add(const Tensor& a, const Tensor& b);
Tensor subtract(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& t, float factor);
Tensor one_minus(const Tensor& t);

double sum(const Tensor& t);
double mean(const Tensor& t);
double l2_norm(const Tensor& t);
double max_abs_difference(const Tensor& a, const Tensor& b);

/// Average-pool a 2D map down to hs x ws. Output cell (i, j) averages the
/// source rows [round(i*H/hs), round((i+1)*H/hs)) and the analogous columns.
Tensor avg_pool_to(const Tensor& map, std::size_t hs, std::size_t ws);

/// Nearest block expansion of a 2D region grid to H x W pixels: pixel (r, c)
/// takes region (floor(r*rows/H), floor(c*cols/W)).
Tensor block_upsample(const Tensor& grid, std::size_t height, std::size_t width);

// SGT interchange format: "SGT1", u32 rank, rank x u32 dims, f32 payload (LE).
void write_sgt(std::ostream& out, const Tensor& t);
Tensor read_sgt(std::istream& in);
void save_sgt(const std::string& path, const Tensor& t);
Tensor load_sgt(const std::string& path);

}  // namespace sg
