#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "mcnet/common.hpp"

namespace mcnet {

/// 8-bit grayscale image, row-major. Both dimensions must be >= 16.
struct ImageGray {
  int width = 0;
  int height = 0;
  std::vector<uint8_t> pixels;

  ImageGray() = default;
  ImageGray(int w, int h, uint8_t fill = 0);

  uint8_t at(int r, int c) const { return pixels[static_cast<size_t>(r) * width + c]; }
  uint8_t& at(int r, int c) { return pixels[static_cast<size_t>(r) * width + c]; }
  size_t size() const { return pixels.size(); }
};

ImageGray read_image(const std::string& path);       // dispatches on extension
void write_image(const std::string& path, const ImageGray& img);

ImageGray read_pgm(const std::string& path);
void write_pgm(const std::string& path, const ImageGray& img);
ImageGray read_png(const std::string& path);
void write_png(const std::string& path, const ImageGray& img);

/// Bicubic resize with antialiasing on downscale (Keys kernel a=-0.5,
/// kernel stretched by the scale factor, replicated edges, round half away
/// from zero). Input must be square.
ImageGray resize_square(const ImageGray& img, int out_size);
inline ImageGray resize_to_256(const ImageGray& img) { return resize_square(img, 256); }

}  // namespace mcnet
