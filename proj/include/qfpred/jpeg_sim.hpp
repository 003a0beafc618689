// Copyright (c) 2026 qfpred contributors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <array>
#include <cstdint>

#include "qfpred/image.hpp"

namespace qfpred::jpeg {

// JPEG quality factor, integer scale [1, 100]. Normalized form q/100 is what
// the predictor trains against.
class QualityFactor {
 public:
  explicit QualityFactor(int q);
  int raw() const { return q_; }
  double normalized() const { return q_ / 100.0; }
  static QualityFactor from_normalized(double y);

 private:
  int q_;
};

enum class TableClass { luma, chroma };

// 8x8 quantization divisors, row-major, entries in [1, 255].
struct QuantTable {
  std::array<int, 64> entries{};
  TableClass cls = TableClass::luma;
};

// ITU T.81 Annex K sample tables.
const QuantTable& annex_k_luma();
const QuantTable& annex_k_chroma();

// IJG scaling law: scale = 5000/q for q < 50, else 200 - 2q;
// entry' = clamp(floor((entry*scale + 50)/100), 1, 255).
QuantTable scale_quant_table(const QuantTable& base, const QualityFactor& q);

// Orthonormal 2-D DCT-II on an 8x8 block (input is expected level-shifted).
void dct8x8(const float in[64], float out[64]);
void idct8x8(const float in[64], float out[64]);

enum class ColorMode { luma_only, ycbcr_420 };

// The lossy core of JPEG: level shift, blockwise DCT, quality-scaled
// quantize/dequantize, inverse DCT. No entropy coding; the bitstream stages
// are lossless and contribute nothing to the artifacts. Edge blocks are
// replicate-padded and cropped back, so any image >= 8 px per side works.
//
// luma_only expects 1 channel. ycbcr_420 expects 3 channels and runs the
// BT.601 convert / 2x2 chroma subsample / bilinear upsample path.
ImageBuffer jpeg_degrade(const ImageBuffer& image, const QualityFactor& q, ColorMode mode);

}  // namespace qfpred::jpeg
