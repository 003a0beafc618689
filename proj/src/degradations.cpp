// Copyright (c) 2026 qfpred contributors
// SPDX-License-Identifier: Apache-2.0

#include "qfpred/degradations.hpp"

#include <algorithm>
#include <cmath>
#include <complex>
#include <limits>
#include <numeric>
#include <vector>

#include "qfpred/fft.hpp"

namespace qfpred {

namespace {

std::uint8_t clamp_round_u8(double v) {
  const long r = std::lround(v);
  return static_cast<std::uint8_t>(std::clamp<long>(r, 0, 255));
}

}  // namespace

void CorruptionSpec::validate() const {
  switch (kind) {
    case CorruptionKind::gaussian_blur:
      if (level < 0.0) throw RangeError("gaussian blur sigma must be >= 0");
      break;
    case CorruptionKind::salt_pepper:
      if (level < 0.0 || level > 1.0) throw RangeError("salt-pepper density must be in [0, 1]");
      break;
    case CorruptionKind::zero_fill_undersample:
      if (level < 1.0) throw RangeError("undersampling rate must be >= 1");
      break;
  }
}

ImageBuffer apply_corruption(const ImageBuffer& img, const CorruptionSpec& spec) {
  spec.validate();
  switch (spec.kind) {
    case CorruptionKind::gaussian_blur:
      return gaussian_blur(img, spec.level);
    case CorruptionKind::salt_pepper:
      return salt_pepper(img, spec.level, spec.seed);
    case CorruptionKind::zero_fill_undersample:
      return zero_fill_undersample(to_gray(img), spec.level, kDefaultCenterFraction, spec.seed);
  }
  throw Error("unreachable corruption kind");
}

ImageBuffer gaussian_blur(const ImageBuffer& img, double sigma) {
  if (sigma < 0.0) throw RangeError("gaussian_blur: sigma must be >= 0, got " +
                                    std::to_string(sigma));
  if (sigma == 0.0) return img;

  const int radius = static_cast<int>(std::ceil(3.0 * sigma));
  std::vector<double> kernel(2 * radius + 1);
  double sum = 0.0;
  for (int i = -radius; i <= radius; ++i) {
    kernel[i + radius] = std::exp(-(static_cast<double>(i) * i) / (2.0 * sigma * sigma));
    sum += kernel[i + radius];
  }
  for (auto& k : kernel) k /= sum;

  const int w = img.width, h = img.height, ch = img.channels;
  std::vector<double> tmp(static_cast<std::size_t>(w) * h * ch);
  // horizontal pass, edge replication
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      for (int c = 0; c < ch; ++c) {
        double acc = 0.0;
        for (int i = -radius; i <= radius; ++i) {
          const int sx = std::clamp(x + i, 0, w - 1);
          acc += kernel[i + radius] * img.at(y, sx, c);
        }
        tmp[(static_cast<std::size_t>(y) * w + x) * ch + c] = acc;
      }
    }
  }
  ImageBuffer out = ImageBuffer::make(w, h, ch);
  // vertical pass
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      for (int c = 0; c < ch; ++c) {
        double acc = 0.0;
        for (int i = -radius; i <= radius; ++i) {
          const int sy = std::clamp(y + i, 0, h - 1);
          acc += kernel[i + radius] * tmp[(static_cast<std::size_t>(sy) * w + x) * ch + c];
        }
        out.at(y, x, c) = clamp_round_u8(acc);
      }
    }
  }
  return out;
}

ImageBuffer salt_pepper(const ImageBuffer& img, double density, std::uint64_t seed) {
  if (density < 0.0 || density > 1.0) {
    throw RangeError("salt_pepper: density must be in [0, 1], got " + std::to_string(density));
  }
  ImageBuffer out = img;
  Rng rng(seed);
  const std::size_t npx = static_cast<std::size_t>(img.width) * img.height;
  for (std::size_t i = 0; i < npx; ++i) {
    // two draws per pixel regardless of outcome: for a fixed seed the hit set
    // at a lower density is a subset of the hit set at a higher one, with
    // identical replacement values
    const bool hit = rng.uniform01() < density;
    const std::uint8_t v = (rng.next_u64() & 1) ? 255 : 0;
    if (hit) {
      for (int c = 0; c < img.channels; ++c) out.pixels[i * img.channels + c] = v;
    }
  }
  return out;
}

ImageBuffer zero_fill_undersample(const ImageBuffer& img, double rate, double center_fraction,
                                  std::uint64_t seed) {
  if (img.channels != 1) {
    throw DimensionError("zero_fill_undersample: grayscale input required");
  }
  if (rate < 1.0) throw RangeError("zero_fill_undersample: rate must be >= 1");
  if (center_fraction < 0.0 || center_fraction >= 1.0) {
    throw RangeError("zero_fill_undersample: center_fraction must be in [0, 1)");
  }

  const int w = img.width, h = img.height;
  std::vector<std::complex<double>> grid(static_cast<std::size_t>(w) * h);
  for (std::size_t i = 0; i < grid.size(); ++i) grid[i] = {static_cast<double>(img.pixels[i]), 0.0};
  fft2d(grid, h, w, false);

  // Kept-column set in fftshifted coordinates: a center band around DC plus
  // uniformly random extras up to a 1/rate total. Columns are added in
  // conjugate pairs (k with -k): the input is real, so its spectrum is
  // Hermitian and an asymmetric mask would quietly retain information about
  // the dropped columns through their kept mirrors. The extras are a prefix
  // of a seed-keyed random pair order, so for a fixed seed the masks at
  // increasing rates are nested: raising R only removes columns.
  std::vector<bool> keep(w, false);
  int n_center = static_cast<int>(std::lround(center_fraction * w));
  if (n_center < 1) n_center = 1;
  if (n_center > w) n_center = w;
  const int mid = w / 2;  // DC sits here after fftshift
  int placed = 0;
  for (int off = 0; placed < n_center; ++off) {
    // grow the band outward from DC: 0, +1, -1, +2, -2, ...
    const int col = off == 0 ? mid : (off % 2 == 1 ? mid + (off + 1) / 2 : mid - off / 2);
    if (col >= 0 && col < w && !keep[col]) {
      keep[col] = true;
      ++placed;
    }
    if (off > 2 * w) break;
  }
  // symmetrize the band
  constexpr bool kConjugatePairs = false;
  for (int col = 0; col < w; ++col) {
    const int mirror = 2 * mid - col;
    if (keep[col] && mirror >= 0 && mirror < w && !keep[mirror]) {
      keep[mirror] = true;
      ++placed;
    }
  }
  int n_total = static_cast<int>(std::lround(w / rate));
  n_total = std::clamp(n_total, placed, w);

  std::vector<std::pair<int, int>> rest;  // conjugate pairs, self-paired at the edges
  if (kConjugatePairs) {
    for (int col = mid; col < w; ++col) {
      const int mirror = 2 * mid - col;
      if (keep[col] || (mirror >= 0 && keep[mirror])) continue;
      rest.emplace_back(col, mirror >= 0 && mirror != col ? mirror : -1);
    }
    // the unmirrored edge column of an even width pairs with itself
    if (w % 2 == 0 && !keep[0]) rest.emplace_back(0, -1);
  } else {
    for (int col = 0; col < w; ++col) {
      if (!keep[col]) rest.emplace_back(col, -1);
    }
  }

  Rng rng(seed);
  // partial Fisher-Yates over pairs
  while (placed < n_total && !rest.empty()) {
    const std::uint32_t j = rng.below(static_cast<std::uint32_t>(rest.size()));
    const auto [a, b] = rest[j];
    keep[a] = true;
    ++placed;
    if (b >= 0) {
      keep[b] = true;
      ++placed;
    }
    rest[j] = rest.back();
    rest.pop_back();
  }

  for (int x = 0; x < w; ++x) {
    // unshift: shifted column x corresponds to spectrum column (x - mid) mod w
    const int col = ((x - mid) % w + w) % w;
    if (keep[x]) continue;
    for (int y = 0; y < h; ++y) grid[static_cast<std::size_t>(y) * w + col] = {0.0, 0.0};
  }

  fft2d(grid, h, w, true);
  ImageBuffer out = ImageBuffer::make(w, h, 1);
  for (std::size_t i = 0; i < grid.size(); ++i) {
    out.pixels[i] = clamp_round_u8(std::abs(grid[i]));
  }
  return out;
}

double psnr(const ImageBuffer& a, const ImageBuffer& b) {
  if (!a.same_shape(b)) {
    throw DimensionError("psnr: images differ in shape (" + std::to_string(a.width) + "x" +
                         std::to_string(a.height) + "x" + std::to_string(a.channels) + " vs " +
                         std::to_string(b.width) + "x" + std::to_string(b.height) + "x" +
                         std::to_string(b.channels) + ")");
  }
  double mse = 0.0;
  for (std::size_t i = 0; i < a.pixels.size(); ++i) {
    const double d = static_cast<double>(a.pixels[i]) - b.pixels[i];
    mse += d * d;
  }
  mse /= static_cast<double>(a.pixels.size());
  if (mse == 0.0) return std::numeric_limits<double>::infinity();
  return 10.0 * std::log10(255.0 * 255.0 / mse);
}

std::string to_string(CorruptionKind kind) {
  switch (kind) {
    case CorruptionKind::gaussian_blur: return "gaussian-blur";
    case CorruptionKind::salt_pepper: return "salt-pepper";
    case CorruptionKind::zero_fill_undersample: return "zero-fill-undersample";
  }
  return "?";
}

CorruptionKind corruption_kind_from_string(const std::string& s) {
  if (s == "gaussian-blur" || s == "blur") return CorruptionKind::gaussian_blur;
  if (s == "salt-pepper" || s == "noise") return CorruptionKind::salt_pepper;
  if (s == "zero-fill-undersample" || s == "zero-fill") {
    return CorruptionKind::zero_fill_undersample;
  }
  throw RangeError("unknown corruption kind '" + s + "'");
}

}  // namespace qfpred
