#include "sg/image_io.hpp"

#include <png.h>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <memory>
#include <stdexcept>

namespace sg {

Rgb8::Rgb8(std::size_t h, std::size_t w, std::uint8_t fill)
    : height(h), width(w), pixels(h * w * 3, fill) {}

void Rgb8::set(std::size_t r, std::size_t c, std::uint8_t red, std::uint8_t green,
               std::uint8_t blue) {
  if (r >= height || c >= width) return;
  std::uint8_t* p = &pixels[(r * width + c) * 3];
  p[0] = red;
  p[1] = green;
  p[2] = blue;
}

void write_png(const std::string& path, const Rgb8& image) {
  if (image.height == 0 || image.width == 0) throw std::invalid_argument("write_png: empty image");
  std::unique_ptr<FILE, int (*)(FILE*)> file(std::fopen(path.c_str(), "wb"), &std::fclose);
  if (!file) throw std::runtime_error("cannot open " + path + " for writing");
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  if (!png) throw std::runtime_error("png_create_write_struct failed");
  png_infop info = png_create_info_struct(png);
  if (!info || setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    throw std::runtime_error("libpng failed writing " + path);
  }
  png_init_io(png, file.get());
  png_set_IHDR(png, info, static_cast<png_uint_32>(image.width),
               static_cast<png_uint_32>(image.height), 8, PNG_COLOR_TYPE_RGB, PNG_INTERLACE_NONE,
               PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  for (std::size_t r = 0; r < image.height; ++r) {
    png_write_row(png, const_cast<png_bytep>(&image.pixels[r * image.width * 3]));
  }
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
}

namespace {

std::uint8_t to_byte(float v) {
  return static_cast<std::uint8_t>(std::lround(std::clamp(v, 0.0f, 1.0f) * 255.0f));
}

}  // namespace

void blit(Rgb8& canvas, const Tensor& image, std::size_t top, std::size_t left, std::size_t zoom) {
  if (image.rank() != 3 || image.dim(0) != 3) throw std::invalid_argument("blit: expected 3 x H x W");
  const std::size_t h = image.dim(1);
  const std::size_t w = image.dim(2);
  for (std::size_t r = 0; r < h * zoom; ++r) {
    for (std::size_t c = 0; c < w * zoom; ++c) {
      canvas.set(top + r, left + c, to_byte(image.at(0, r / zoom, c / zoom)),
                 to_byte(image.at(1, r / zoom, c / zoom)), to_byte(image.at(2, r / zoom, c / zoom)));
    }
  }
}

Rgb8 preview_grid(std::span<const Tensor> sources, std::span<const Tensor> destinations,
                  std::span<const Tensor> masks, std::span<const Tensor> results, std::size_t zoom) {
  const std::size_t n = sources.size();
  if (n == 0 || destinations.size() != n || masks.size() != n || results.size() != n) {
    throw std::invalid_argument("preview_grid: inconsistent inputs");
  }
  const std::size_t h = sources[0].dim(1) * zoom;
  const std::size_t w = sources[0].dim(2) * zoom;
  constexpr std::size_t gap = 4;
  Rgb8 canvas(n * (h + gap) + gap, 4 * (w + gap) + gap);
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t top = gap + i * (h + gap);
    // Mask overlay: kept source pixels as is, the rest tinted red.
    Tensor overlay = sources[i];
    for (std::size_t r = 0; r < overlay.dim(1); ++r) {
      for (std::size_t c = 0; c < overlay.dim(2); ++c) {
        const float m = masks[i].at(r, c);
        overlay.at(0, r, c) = m * overlay.at(0, r, c) + (1.0f - m) * 0.85f;
        overlay.at(1, r, c) = m * overlay.at(1, r, c) + (1.0f - m) * 0.15f;
        overlay.at(2, r, c) = m * overlay.at(2, r, c) + (1.0f - m) * 0.15f;
      }
    }
    const Tensor* cols[4] = {&sources[i], &destinations[i], &overlay, &results[i]};
    for (std::size_t k = 0; k < 4; ++k) blit(canvas, *cols[k], top, gap + k * (w + gap), zoom);
  }
  return canvas;
}

Rgb8 bar_plot(std::span<const double> means, std::span<const double> errors, std::size_t height,
              std::size_t bar_width) {
  if (means.empty() || errors.size() != means.size()) throw std::invalid_argument("bar_plot: bad input");
  double top = 0.0;
  for (std::size_t i = 0; i < means.size(); ++i) top = std::max(top, means[i] + errors[i]);
  if (!(top > 0.0)) top = 1.0;
  const std::size_t margin = 10;
  const std::size_t usable = height - 2 * margin;
  Rgb8 canvas(height, margin + means.size() * (bar_width + margin));
  auto y_of = [&](double v) {
    const double frac = std::clamp(v / top, 0.0, 1.0);
    return height - margin - static_cast<std::size_t>(std::lround(frac * static_cast<double>(usable)));
  };
  for (std::size_t c = 0; c < canvas.width; ++c) canvas.set(height - margin, c, 0, 0, 0);
  for (std::size_t i = 0; i < means.size(); ++i) {
    const std::size_t left = margin + i * (bar_width + margin);
    for (std::size_t r = y_of(means[i]); r < height - margin; ++r) {
      for (std::size_t c = left; c < left + bar_width; ++c) canvas.set(r, c, 70, 110, 170);
    }
    const std::size_t lo = y_of(means[i] - errors[i]);
    const std::size_t hi = y_of(means[i] + errors[i]);
    const std::size_t mid = left + bar_width / 2;
    for (std::size_t r = hi; r <= lo; ++r) canvas.set(r, mid, 0, 0, 0);
    for (std::size_t c = mid - 4; c <= mid + 4; ++c) {
      canvas.set(hi, c, 0, 0, 0);
      canvas.set(lo, c, 0, 0, 0);
    }
  }
  return canvas;
}

}  // namespace sg
