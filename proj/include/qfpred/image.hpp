// Copyright (c) 2026 qfpred contributors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "qfpred/common.hpp"

namespace qfpred {

// Decoded 8-bit image, interleaved row-major. channels is 1 (gray) or 3 (RGB).
struct ImageBuffer {
  int width = 0;
  int height = 0;
  int channels = 1;
  std::vector<std::uint8_t> pixels;

  static ImageBuffer make(int width, int height, int channels, std::uint8_t fill = 0);

  std::uint8_t& at(int y, int x, int c = 0) {
    return pixels[(static_cast<std::size_t>(y) * width + x) * channels + c];
  }
  std::uint8_t at(int y, int x, int c = 0) const {
    return pixels[(static_cast<std::size_t>(y) * width + x) * channels + c];
  }

  bool same_shape(const ImageBuffer& other) const {
    return width == other.width && height == other.height && channels == other.channels;
  }
  bool operator==(const ImageBuffer&) const = default;
};

// BT.601 full-range luma of an RGB image; gray images pass through unchanged.
ImageBuffer to_gray(const ImageBuffer& img);
// Replicates a gray plane into 3 channels; RGB images pass through unchanged.
ImageBuffer to_rgb(const ImageBuffer& img);

// Crop; the window must lie fully inside the image.
ImageBuffer crop(const ImageBuffer& img, int x0, int y0, int w, int h);

// Decodes PNG (8-bit gray/RGB, non-interlaced) or PNM (P2/P3/P5/P6, maxval
// <= 255). Anything else is a FormatError naming the path.
ImageBuffer load_image(const std::string& path);

// Format chosen by extension: .png, .pgm (gray), .ppm (RGB).
void save_image(const ImageBuffer& img, const std::string& path);

void save_png(const ImageBuffer& img, const std::string& path);
void save_pnm(const ImageBuffer& img, const std::string& path);

}  // namespace qfpred
