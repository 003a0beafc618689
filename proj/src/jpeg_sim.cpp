// Copyright (c) 2026 qfpred contributors
// SPDX-License-Identifier: Apache-2.0

#include "qfpred/jpeg_sim.hpp"

#include <algorithm>
#include <cmath>
#include <vector>

namespace qfpred::jpeg {

namespace {

// ITU T.81 Annex K.1 (luminance) and K.2 (chrominance), natural order.
constexpr std::array<int, 64> kLumaBase = {
    16, 11, 10, 16, 24,  40,  51,  61,   //
    12, 12, 14, 19, 26,  58,  60,  55,   //
    14, 13, 16, 24, 40,  57,  69,  56,   //
    14, 17, 22, 29, 51,  87,  80,  62,   //
    18, 22, 37, 56, 68,  109, 103, 77,   //
    24, 35, 55, 64, 81,  104, 113, 92,   //
    49, 64, 78, 87, 103, 121, 120, 101,  //
    72, 92, 95, 98, 112, 100, 103, 99};

constexpr std::array<int, 64> kChromaBase = {
    17, 18, 24, 47, 99, 99, 99, 99,  //
    18, 21, 26, 66, 99, 99, 99, 99,  //
    24, 26, 56, 99, 99, 99, 99, 99,  //
    47, 66, 99, 99, 99, 99, 99, 99,  //
    99, 99, 99, 99, 99, 99, 99, 99,  //
    99, 99, 99, 99, 99, 99, 99, 99,  //
    99, 99, 99, 99, 99, 99, 99, 99,  //
    99, 99, 99, 99, 99, 99, 99, 99};

// dct_basis[u][x] = a(u) * cos((2x+1) u pi / 16), a(0)=sqrt(1/8), else 1/2.
struct DctBasis {
  double m[8][8];
  DctBasis() {
    const double pi = 3.14159265358979323846;
    for (int u = 0; u < 8; ++u) {
      const double a = (u == 0) ? std::sqrt(1.0 / 8.0) : 0.5;
      for (int x = 0; x < 8; ++x) {
        m[u][x] = a * std::cos((2.0 * x + 1.0) * u * pi / 16.0);
      }
    }
  }
};

const DctBasis& basis() {
  static const DctBasis b;
  return b;
}

int round_half_away(double v) {
  return static_cast<int>(v < 0.0 ? std::ceil(v - 0.5) : std::floor(v + 0.5));
}

std::uint8_t clamp_u8(double v) {
  const int r = round_half_away(v);
  return static_cast<std::uint8_t>(std::clamp(r, 0, 255));
}

// Degrades one float plane in place: pad to block multiples by edge
// replication, quantize each 8x8 block, crop back.
void degrade_plane(std::vector<float>& plane, int w, int h, const QuantTable& qt) {
  const int pw = (w + 7) / 8 * 8;
  const int ph = (h + 7) / 8 * 8;
  std::vector<float> padded(static_cast<std::size_t>(pw) * ph);
  for (int y = 0; y < ph; ++y) {
    const int sy = std::min(y, h - 1);
    for (int x = 0; x < pw; ++x) {
      const int sx = std::min(x, w - 1);
      padded[static_cast<std::size_t>(y) * pw + x] = plane[static_cast<std::size_t>(sy) * w + sx];
    }
  }

  float block[64], coeff[64], recon[64];
  for (int by = 0; by < ph; by += 8) {
    for (int bx = 0; bx < pw; bx += 8) {
      for (int y = 0; y < 8; ++y) {
        for (int x = 0; x < 8; ++x) {
          block[y * 8 + x] = padded[static_cast<std::size_t>(by + y) * pw + bx + x] - 128.0f;
        }
      }
      dct8x8(block, coeff);
      for (int i = 0; i < 64; ++i) {
        const int level = round_half_away(coeff[i] / static_cast<float>(qt.entries[i]));
        coeff[i] = static_cast<float>(level * qt.entries[i]);
      }
      idct8x8(coeff, recon);
      for (int y = 0; y < 8; ++y) {
        for (int x = 0; x < 8; ++x) {
          padded[static_cast<std::size_t>(by + y) * pw + bx + x] = recon[y * 8 + x] + 128.0f;
        }
      }
    }
  }

  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      plane[static_cast<std::size_t>(y) * w + x] = padded[static_cast<std::size_t>(y) * pw + x];
    }
  }
}

// 2x2 box downsample, ceil dimensions, edge replication on odd extents.
std::vector<float> downsample2(const std::vector<float>& src, int w, int h, int& dw, int& dh) {
  dw = (w + 1) / 2;
  dh = (h + 1) / 2;
  std::vector<float> dst(static_cast<std::size_t>(dw) * dh);
  for (int y = 0; y < dh; ++y) {
    const int y0 = 2 * y, y1 = std::min(2 * y + 1, h - 1);
    for (int x = 0; x < dw; ++x) {
      const int x0 = 2 * x, x1 = std::min(2 * x + 1, w - 1);
      dst[static_cast<std::size_t>(y) * dw + x] =
          0.25f * (src[static_cast<std::size_t>(y0) * w + x0] +
                   src[static_cast<std::size_t>(y0) * w + x1] +
                   src[static_cast<std::size_t>(y1) * w + x0] +
                   src[static_cast<std::size_t>(y1) * w + x1]);
    }
  }
  return dst;
}

// Bilinear upsample back to (w, h); samples are centered on their 2x2 cells.
std::vector<float> upsample2(const std::vector<float>& src, int dw, int dh, int w, int h) {
  std::vector<float> dst(static_cast<std::size_t>(w) * h);
  for (int y = 0; y < h; ++y) {
    const double fy = (y + 0.5) / 2.0 - 0.5;
    const int y0 = std::clamp(static_cast<int>(std::floor(fy)), 0, dh - 1);
    const int y1 = std::min(y0 + 1, dh - 1);
    const double wy = std::clamp(fy - y0, 0.0, 1.0);
    for (int x = 0; x < w; ++x) {
      const double fx = (x + 0.5) / 2.0 - 0.5;
      const int x0 = std::clamp(static_cast<int>(std::floor(fx)), 0, dw - 1);
      const int x1 = std::min(x0 + 1, dw - 1);
      const double wx = std::clamp(fx - x0, 0.0, 1.0);
      const double v = (1 - wy) * ((1 - wx) * src[static_cast<std::size_t>(y0) * dw + x0] +
                                   wx * src[static_cast<std::size_t>(y0) * dw + x1]) +
                       wy * ((1 - wx) * src[static_cast<std::size_t>(y1) * dw + x0] +
                             wx * src[static_cast<std::size_t>(y1) * dw + x1]);
      dst[static_cast<std::size_t>(y) * w + x] = static_cast<float>(v);
    }
  }
  return dst;
}

}  // namespace

QualityFactor::QualityFactor(int q) : q_(q) {
  if (q < 1 || q > 100) {
    throw RangeError("quality factor must be in [1, 100], got " + std::to_string(q));
  }
}

QualityFactor QualityFactor::from_normalized(double y) {
  const int q = round_half_away(y * 100.0);
  return QualityFactor(q);
}

const QuantTable& annex_k_luma() {
  static const QuantTable t{kLumaBase, TableClass::luma};
  return t;
}

const QuantTable& annex_k_chroma() {
  static const QuantTable t{kChromaBase, TableClass::chroma};
  return t;
}

QuantTable scale_quant_table(const QuantTable& base, const QualityFactor& q) {
  const int raw = q.raw();
  const int scale = raw < 50 ? 5000 / raw : 200 - 2 * raw;
  QuantTable out;
  out.cls = base.cls;
  for (int i = 0; i < 64; ++i) {
    const int v = (base.entries[i] * scale + 50) / 100;
    out.entries[i] = std::clamp(v, 1, 255);
  }
  return out;
}

void dct8x8(const float in[64], float out[64]) {
  const auto& b = basis();
  // rows: tmp = in * M^T
  double tmp[64];
  for (int y = 0; y < 8; ++y) {
    for (int u = 0; u < 8; ++u) {
      double acc = 0.0;
      for (int x = 0; x < 8; ++x) acc += in[y * 8 + x] * b.m[u][x];
      tmp[y * 8 + u] = acc;
    }
  }
  // cols: out = M * tmp
  for (int v = 0; v < 8; ++v) {
    for (int u = 0; u < 8; ++u) {
      double acc = 0.0;
      for (int y = 0; y < 8; ++y) acc += b.m[v][y] * tmp[y * 8 + u];
      out[v * 8 + u] = static_cast<float>(acc);
    }
  }
}

void idct8x8(const float in[64], float out[64]) {
  const auto& b = basis();
  double tmp[64];
  for (int v = 0; v < 8; ++v) {
    for (int x = 0; x < 8; ++x) {
      double acc = 0.0;
      for (int u = 0; u < 8; ++u) acc += in[v * 8 + u] * b.m[u][x];
      tmp[v * 8 + x] = acc;
    }
  }
  for (int y = 0; y < 8; ++y) {
    for (int x = 0; x < 8; ++x) {
      double acc = 0.0;
      for (int v = 0; v < 8; ++v) acc += b.m[v][y] * tmp[v * 8 + x];
      out[y * 8 + x] = static_cast<float>(acc);
    }
  }
}

ImageBuffer jpeg_degrade(const ImageBuffer& image, const QualityFactor& q, ColorMode mode) {
  if (image.width < 8 || image.height < 8) {
    throw DimensionError("jpeg_degrade: image must be at least 8x8, got " +
                         std::to_string(image.width) + "x" + std::to_string(image.height));
  }
  const QuantTable luma_qt = scale_quant_table(annex_k_luma(), q);
  const int w = image.width, h = image.height;

  if (mode == ColorMode::luma_only) {
    if (image.channels != 1) {
      throw DimensionError("jpeg_degrade: luma_only mode expects a 1-channel image, got " +
                           std::to_string(image.channels));
    }
    std::vector<float> plane(static_cast<std::size_t>(w) * h);
    for (std::size_t i = 0; i < plane.size(); ++i) plane[i] = image.pixels[i];
    degrade_plane(plane, w, h, luma_qt);
    ImageBuffer out = ImageBuffer::make(w, h, 1);
    for (std::size_t i = 0; i < plane.size(); ++i) out.pixels[i] = clamp_u8(plane[i]);
    return out;
  }

  if (image.channels != 3) {
    throw DimensionError("jpeg_degrade: ycbcr_420 mode expects a 3-channel image, got " +
                         std::to_string(image.channels));
  }
  const QuantTable chroma_qt = scale_quant_table(annex_k_chroma(), q);

  // JFIF BT.601 full-range conversion, rounded to integer planes like a real
  // codec stores them.
  const std::size_t npx = static_cast<std::size_t>(w) * h;
  std::vector<float> yp(npx), cb(npx), cr(npx);
  for (std::size_t i = 0; i < npx; ++i) {
    const double r = image.pixels[3 * i + 0];
    const double g = image.pixels[3 * i + 1];
    const double b = image.pixels[3 * i + 2];
    yp[i] = static_cast<float>(round_half_away(0.299 * r + 0.587 * g + 0.114 * b));
    cb[i] = static_cast<float>(
        round_half_away(128.0 - 0.168735892 * r - 0.331264108 * g + 0.5 * b));
    cr[i] = static_cast<float>(
        round_half_away(128.0 + 0.5 * r - 0.418687589 * g - 0.081312411 * b));
  }

  degrade_plane(yp, w, h, luma_qt);

  int dw = 0, dh = 0;
  for (auto* chroma : {&cb, &cr}) {
    std::vector<float> small = downsample2(*chroma, w, h, dw, dh);
    degrade_plane(small, dw, dh, chroma_qt);
    *chroma = upsample2(small, dw, dh, w, h);
  }

  ImageBuffer out = ImageBuffer::make(w, h, 3);
  for (std::size_t i = 0; i < npx; ++i) {
    const double y = yp[i], u = cb[i] - 128.0, v = cr[i] - 128.0;
    out.pixels[3 * i + 0] = clamp_u8(y + 1.402 * v);
    out.pixels[3 * i + 1] = clamp_u8(y - 0.344136286 * u - 0.714136286 * v);
    out.pixels[3 * i + 2] = clamp_u8(y + 1.772 * u);
  }
  return out;
}

}  // namespace qfpred::jpeg
