#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "dehaze/tensor.hpp"

namespace dehaze {

// 8-bit RGB, row-major, interleaved.
struct ImageU8 {
  int width = 0;
  int height = 0;
  std::vector<std::uint8_t> pixels;

  ImageU8() = default;
  ImageU8(int w, int h) : width(w), height(h), pixels(static_cast<std::size_t>(w) * h * 3, 0) {}

  std::uint8_t& at(int x, int y, int c) {
    return pixels[(static_cast<std::size_t>(y) * width + x) * 3 + c];
  }
  std::uint8_t at(int x, int y, int c) const {
    return pixels[(static_cast<std::size_t>(y) * width + x) * 3 + c];
  }
  bool operator==(const ImageU8&) const = default;
};

// Format chosen by file signature on read and by extension (.png / .ppm) on
// write. PNG must be 8-bit without alpha; grayscale and palette images are
// expanded to RGB. PPM must be binary P6 with maxval 255.
ImageU8 read_image(const std::string& path);
void write_image(const std::string& path, const ImageU8& image);

// v = p / 255
template <typename T>
Tensor<T> to_tensor(const ImageU8& image);

// Clamps to [0, 1], then p = floor(v * 255 + 0.5). Takes batch item `n`.
template <typename T>
ImageU8 from_tensor(const Tensor<T>& t, int n = 0);

}  // namespace dehaze
