// Copyright (c) 2026 qfpred contributors
// SPDX-License-Identifier: Apache-2.0

#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "qfpred/data_pipeline.hpp"
#include "qfpred/degradations.hpp"
#include "qfpred/jpeg_sim.hpp"
#include "test_support.hpp"

using namespace qfpred;
using namespace qfpred::jpeg;

TEST_CASE("quality factor: range and normalization round-trip") {
  CHECK_THROWS_AS(QualityFactor(0), RangeError);
  CHECK_THROWS_AS(QualityFactor(101), RangeError);
  for (int q = 1; q <= 100; ++q) {
    const QualityFactor qf(q);
    CHECK(QualityFactor::from_normalized(qf.normalized()).raw() == q);
  }
}

TEST_CASE("scale_quant_table: q=50 is the fixed point") {
  const QuantTable scaled = scale_quant_table(annex_k_luma(), QualityFactor(50));
  for (int i = 0; i < 64; ++i) CHECK(scaled.entries[i] == annex_k_luma().entries[i]);
}

TEST_CASE("scale_quant_table: q=100 collapses to all ones") {
  const QuantTable scaled = scale_quant_table(annex_k_luma(), QualityFactor(100));
  for (int i = 0; i < 64; ++i) CHECK(scaled.entries[i] == 1);
}

TEST_CASE("scale_quant_table: q=10 scales entry 16 to 80") {
  CHECK(annex_k_luma().entries[0] == 16);
  const QuantTable scaled = scale_quant_table(annex_k_luma(), QualityFactor(10));
  CHECK(scaled.entries[0] == 80);
}

TEST_CASE("dct8x8: constant 128 block is all zeros after level shift") {
  float block[64], coeff[64];
  for (auto& v : block) v = 0.0f;  // 128 - 128
  dct8x8(block, coeff);
  for (float v : coeff) CHECK(v == doctest::Approx(0.0f).epsilon(1e-6));
}

TEST_CASE("dct8x8: constant block concentrates in DC as 8*(v-128)") {
  float block[64], coeff[64];
  for (auto& v : block) v = 200.0f - 128.0f;
  dct8x8(block, coeff);
  CHECK(coeff[0] == doctest::Approx(8.0f * 72.0f).epsilon(1e-5));
  for (int i = 1; i < 64; ++i) CHECK(std::abs(coeff[i]) < 1e-4f);
}

TEST_CASE("dct8x8/idct8x8: random round-trip within 1e-4") {
  Rng rng(4);
  for (int trial = 0; trial < 20; ++trial) {
    float block[64], coeff[64], recon[64];
    for (auto& v : block) v = static_cast<float>(rng.uniform01() * 255.0 - 128.0);
    dct8x8(block, coeff);
    idct8x8(coeff, recon);
    for (int i = 0; i < 64; ++i) CHECK(std::abs(recon[i] - block[i]) < 1e-4f);
  }
}

TEST_CASE("jpeg_degrade: q=100 changes no pixel by more than 1") {
  for (int i = 0; i < 20; ++i) {
    const ImageBuffer img = procedural_texture(64, 1000 + i, ColorSpace::gray);
    const ImageBuffer out = jpeg_degrade(img, QualityFactor(100), ColorMode::luma_only);
    int worst = 0;
    for (std::size_t p = 0; p < img.pixels.size(); ++p) {
      worst = std::max(worst, std::abs(static_cast<int>(img.pixels[p]) - out.pixels[p]));
    }
    CHECK(worst <= 1);
  }
}

TEST_CASE("jpeg_degrade: constant gray stays constant, within the DC rounding bound") {
  // Only the DC coefficient is populated, so the output is exactly constant.
  // Its value moves by at most Q00/16 (DC quantizer over the 8x / 2x rounding
  // ladder), which is <= 1 for q >= 50 and grows as the table scales up.
  for (int q : {1, 10, 35, 50, 60, 90, 100}) {
    const ImageBuffer img = ImageBuffer::make(24, 16, 1, 131);
    const ImageBuffer out = jpeg_degrade(img, QualityFactor(q), ColorMode::luma_only);
    for (std::uint8_t v : out.pixels) CHECK(v == out.pixels[0]);

    const QuantTable qt = scale_quant_table(annex_k_luma(), QualityFactor(q));
    const int bound = std::max(1, (qt.entries[0] + 15) / 16);
    CHECK(std::abs(static_cast<int>(out.pixels[0]) - 131) <= bound);
    if (q >= 50) CHECK(std::abs(static_cast<int>(out.pixels[0]) - 131) <= 1);
  }
  // the zero-coefficient block survives every q bit-exactly
  for (int q : {1, 25, 75}) {
    const ImageBuffer mid = ImageBuffer::make(16, 16, 1, 128);
    const ImageBuffer out = jpeg_degrade(mid, QualityFactor(q), ColorMode::luma_only);
    for (std::uint8_t v : out.pixels) CHECK(v == 128);
  }
}

TEST_CASE("jpeg_degrade: PSNR is non-increasing as q falls (corpus sweep)") {
  std::vector<ImageBuffer> corpus;
  for (int i = 0; i < 20; ++i) {
    corpus.push_back(procedural_texture(64, 2000 + i, ColorSpace::gray));
  }

  std::vector<double> mean_psnr;
  for (int q = 100; q >= 10; q -= 10) {
    double acc = 0.0;
    for (const auto& img : corpus) {
      const double p = psnr(img, jpeg_degrade(img, QualityFactor(q), ColorMode::luma_only));
      acc += std::isinf(p) ? 100.0 : p;
    }
    mean_psnr.push_back(acc / corpus.size());
  }
  int ordered = 0;
  for (std::size_t i = 0; i + 1 < mean_psnr.size(); ++i) {
    if (mean_psnr[i] >= mean_psnr[i + 1]) ++ordered;
  }
  CHECK(static_cast<double>(ordered) / (mean_psnr.size() - 1) >= 0.95);
}

TEST_CASE("jpeg_degrade: deterministic") {
  const ImageBuffer img = procedural_texture(48, 7, ColorSpace::gray);
  const ImageBuffer a = jpeg_degrade(img, QualityFactor(35), ColorMode::luma_only);
  const ImageBuffer b = jpeg_degrade(img, QualityFactor(35), ColorMode::luma_only);
  CHECK(a == b);
}

TEST_CASE("jpeg_degrade: second pass at the same q moves the image less") {
  double first = 0.0, second = 0.0;
  for (int i = 0; i < 10; ++i) {
    const ImageBuffer img = procedural_texture(64, 3000 + i, ColorSpace::gray);
    const ImageBuffer once = jpeg_degrade(img, QualityFactor(30), ColorMode::luma_only);
    const ImageBuffer twice = jpeg_degrade(once, QualityFactor(30), ColorMode::luma_only);
    auto mse = [](const ImageBuffer& a, const ImageBuffer& b) {
      double acc = 0.0;
      for (std::size_t p = 0; p < a.pixels.size(); ++p) {
        const double d = static_cast<double>(a.pixels[p]) - b.pixels[p];
        acc += d * d;
      }
      return acc / static_cast<double>(a.pixels.size());
    };
    first += mse(img, once);
    second += mse(once, twice);
  }
  CHECK(second < first);
}

TEST_CASE("jpeg_degrade: dimension and mode errors") {
  const ImageBuffer tiny = ImageBuffer::make(7, 12, 1);
  CHECK_THROWS_AS(jpeg_degrade(tiny, QualityFactor(50), ColorMode::luma_only), DimensionError);
  const ImageBuffer rgb = ImageBuffer::make(16, 16, 3);
  CHECK_THROWS_AS(jpeg_degrade(rgb, QualityFactor(50), ColorMode::luma_only), DimensionError);
  const ImageBuffer gray = ImageBuffer::make(16, 16, 1);
  CHECK_THROWS_AS(jpeg_degrade(gray, QualityFactor(50), ColorMode::ycbcr_420), DimensionError);
}

TEST_CASE("jpeg_degrade: ycbcr_420 preserves dimensions and channel count") {
  for (const auto [w, h] : {std::pair{33, 17}, std::pair{64, 48}, std::pair{9, 8}}) {
    ImageBuffer img = ImageBuffer::make(w, h, 3);
    Rng rng(static_cast<std::uint64_t>(w * 100 + h));
    for (auto& p : img.pixels) p = static_cast<std::uint8_t>(rng.below(256));
    const ImageBuffer out = jpeg_degrade(img, QualityFactor(40), ColorMode::ycbcr_420);
    CHECK(out.width == w);
    CHECK(out.height == h);
    CHECK(out.channels == 3);
  }
}

TEST_CASE("jpeg_degrade: odd sizes handled by replicate padding") {
  const ImageBuffer img = procedural_texture(64, 99, ColorSpace::gray);
  const ImageBuffer cropped = crop(img, 0, 0, 61, 53);
  const ImageBuffer out = jpeg_degrade(cropped, QualityFactor(25), ColorMode::luma_only);
  CHECK(out.width == 61);
  CHECK(out.height == 53);
}

TEST_CASE("jpeg_degrade: lower q degrades a textured image more (PSNR)") {
  const ImageBuffer img = procedural_texture(96, 12, ColorSpace::gray);
  const double hi = psnr(img, jpeg_degrade(img, QualityFactor(90), ColorMode::luma_only));
  const double lo = psnr(img, jpeg_degrade(img, QualityFactor(10), ColorMode::luma_only));
  CHECK(lo < hi);
}
