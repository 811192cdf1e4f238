#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "sg/tensor.hpp"

namespace sg {

/// 8-bit RGB raster, row-major, 3 bytes per pixel.
struct Rgb8 {
  std::size_t height = 0;
  std::size_t width = 0;
  std::vector<std::uint8_t> pixels;

  Rgb8(std::size_t h, std::size_t w, std::uint8_t fill = 255);
  void set(std::size_t r, std::size_t c, std::uint8_t red, std::uint8_t green, std::uint8_t blue);
};

void write_png(const std::string& path, const Rgb8& image);

/// Paste a 3 x H x W image in [0, 1] at (top, left), each pixel scaled up by `zoom`.
void blit(Rgb8& canvas, const Tensor& image, std::size_t top, std::size_t left, std::size_t zoom);

/// One row per sample: source | destination | mask over source | grafted.
Rgb8 preview_grid(std::span<const Tensor> sources, std::span<const Tensor> destinations,
                  std::span<const Tensor> masks, std::span<const Tensor> results,
                  std::size_t zoom = 3);

/// Vertical bars with standard-error whiskers, no text.
Rgb8 bar_plot(std::span<const double> means, std::span<const double> errors,
              std::size_t height = 240, std::size_t bar_width = 28);

}  // namespace sg
