// Copyright (c) 2026 qfpred contributors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <string>

#include "qfpred/image.hpp"

namespace qfpred {

enum class CorruptionKind { gaussian_blur, salt_pepper, zero_fill_undersample };

// One corruption instance: a kind, its severity knob, and the seed that makes
// it reproducible. level means blur sigma in pixels, impulse density in
// [0, 1], or undersampling rate R >= 1 depending on kind.
struct CorruptionSpec {
  CorruptionKind kind = CorruptionKind::gaussian_blur;
  double level = 0.0;
  std::uint64_t seed = 0;

  void validate() const;
};

ImageBuffer apply_corruption(const ImageBuffer& img, const CorruptionSpec& spec);

// Separable Gaussian, radius ceil(3*sigma), kernel normalized to sum 1, edge
// replication. sigma 0 returns the input bit-identically.
ImageBuffer gaussian_blur(const ImageBuffer& img, double sigma);

// Each pixel independently replaced with the given probability; replacements
// are 0 or 255 with equal chance. RGB pixels are hit jointly across channels.
ImageBuffer salt_pepper(const ImageBuffer& img, double density, std::uint64_t seed);

// Cartesian k-space undersampling analog: keep a central column band of width
// center_fraction plus random extra columns so 1/R of columns survive, zero
// the rest, inverse transform, take the magnitude. Grayscale only.
ImageBuffer zero_fill_undersample(const ImageBuffer& img, double rate, double center_fraction,
                                  std::uint64_t seed);

inline constexpr double kDefaultCenterFraction = 0.08;

// 10*log10(255^2 / MSE); identical images report +infinity.
double psnr(const ImageBuffer& a, const ImageBuffer& b);

std::string to_string(CorruptionKind kind);
CorruptionKind corruption_kind_from_string(const std::string& s);

}  // namespace qfpred
