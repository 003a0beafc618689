// Copyright (c) 2026 qfpred contributors
// SPDX-License-Identifier: Apache-2.0

#include "qfpred/data_pipeline.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <set>
#include <sstream>

namespace fs = std::filesystem;

namespace qfpred {

namespace {

Split split_from_string(const std::string& s, const std::string& context) {
  if (s == "train") return Split::train;
  if (s == "val") return Split::val;
  throw FormatError("manifest: unknown split '" + s + "' (" + context + ")");
}

}  // namespace

CorpusManifest CorpusManifest::load(const std::string& manifest_path) {
  std::ifstream in(manifest_path);
  if (!in) throw IoError("cannot open manifest " + manifest_path);
  const fs::path base = fs::path(manifest_path).parent_path();

  std::vector<ManifestEntry> entries;
  std::set<std::string> seen;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    if (line.find_first_not_of(" \t") == std::string::npos) continue;
    const auto tab = line.find('\t');
    if (tab == std::string::npos) {
      throw FormatError("manifest: line " + std::to_string(lineno) +
                        " has no tab separator in " + manifest_path);
    }
    std::string path = line.substr(0, tab);
    std::string split = line.substr(tab + 1);
    // trim trailing whitespace from the split token
    while (!split.empty() && (split.back() == ' ' || split.back() == '\t')) split.pop_back();
    if (!seen.insert(path).second) {
      throw FormatError("manifest: duplicate path '" + path + "' in " + manifest_path);
    }
    fs::path full = fs::path(path);
    if (full.is_relative()) full = base / full;
    entries.push_back(ManifestEntry{full.string(),
                                    split_from_string(split, manifest_path + ":" +
                                                                 std::to_string(lineno))});
  }
  return from_entries(std::move(entries));
}

CorpusManifest CorpusManifest::from_entries(std::vector<ManifestEntry> entries) {
  CorpusManifest m;
  m.entries_ = std::move(entries);
  m.cache_gray_.resize(m.entries_.size());
  m.cache_rgb_.resize(m.entries_.size());
  return m;
}

std::vector<int> CorpusManifest::indices(Split split) const {
  std::vector<int> out;
  for (std::size_t i = 0; i < entries_.size(); ++i) {
    if (entries_[i].split == split) out.push_back(static_cast<int>(i));
  }
  return out;
}

const ImageBuffer& CorpusManifest::image(int index, ColorSpace cs) const {
  auto& cache = cs == ColorSpace::gray ? cache_gray_ : cache_rgb_;
  if (!cache[index]) {
    ImageBuffer raw = load_image(entries_[index].path);
    cache[index] = cs == ColorSpace::gray ? to_gray(raw) : to_rgb(raw);
  }
  return *cache[index];
}

QFSampler::QFSampler(SamplerMode mode, std::uint64_t seed) : mode_(mode), seed_(seed) {
  if (mode == SamplerMode::classification_5) {
    // extra mass on the two highest-quality classes
    table_ = {1.0, 1.0, 1.0, 2.0, 2.0};
  } else if (mode == SamplerMode::log_weighted) {
    table_.resize(100);
    for (int q = 1; q <= 100; ++q) table_[q - 1] = std::log1p(static_cast<double>(q));
  } else {
    table_.assign(100, 1.0);
  }
  double sum = 0.0;
  for (double v : table_) sum += v;
  for (double& v : table_) v /= sum;
  cumulative_.resize(table_.size());
  double acc = 0.0;
  for (std::size_t i = 0; i < table_.size(); ++i) {
    acc += table_[i];
    cumulative_[i] = acc;
  }
  cumulative_.back() = 1.0;
}

QFSampler QFSampler::pinned(int q, std::uint64_t seed) {
  if (q < 1 || q > 100) throw RangeError("pinned sampler q must be in [1, 100]");
  QFSampler s(SamplerMode::uniform, seed);
  std::fill(s.table_.begin(), s.table_.end(), 0.0);
  s.table_[q - 1] = 1.0;
  double acc = 0.0;
  for (std::size_t i = 0; i < s.table_.size(); ++i) {
    acc += s.table_[i];
    s.cumulative_[i] = acc;
  }
  s.cumulative_.back() = 1.0;
  return s;
}

QFSampler::Draw QFSampler::sample(Rng& rng) const {
  const double u = rng.uniform01();
  const auto it = std::lower_bound(cumulative_.begin(), cumulative_.end(), u);
  const int idx = static_cast<int>(std::min<std::size_t>(it - cumulative_.begin(),
                                                         cumulative_.size() - 1));
  if (mode_ == SamplerMode::classification_5) {
    return Draw{kClassQ[idx], idx};
  }
  return Draw{idx + 1, -1};
}

Tensor image_to_tensor(const ImageBuffer& img) {
  Tensor t(Shape4{1, img.channels, img.height, img.width});
  float* d = t.data();
  const std::int64_t plane = static_cast<std::int64_t>(img.height) * img.width;
  for (int y = 0; y < img.height; ++y) {
    for (int x = 0; x < img.width; ++x) {
      for (int c = 0; c < img.channels; ++c) {
        d[c * plane + y * img.width + x] =
            static_cast<float>(img.at(y, x, c)) / 255.0f;
      }
    }
  }
  return t;
}

ImageBuffer tensor_to_image(const Tensor& t) {
  const Shape4& s = t.shape();
  if (s.n != 1 || (s.c != 1 && s.c != 3)) {
    throw DimensionError("tensor_to_image: expected (1, 1|3, H, W), got " + to_string(s));
  }
  ImageBuffer img = ImageBuffer::make(s.w, s.h, s.c);
  const std::int64_t plane = static_cast<std::int64_t>(s.h) * s.w;
  for (int y = 0; y < s.h; ++y) {
    for (int x = 0; x < s.w; ++x) {
      for (int c = 0; c < s.c; ++c) {
        const float v = t.data()[c * plane + y * s.w + x] * 255.0f;
        img.at(y, x, c) =
            static_cast<std::uint8_t>(std::clamp<long>(std::lround(v), 0, 255));
      }
    }
  }
  return img;
}

jpeg::ColorMode jpeg_mode_for(ColorSpace cs) {
  return cs == ColorSpace::gray ? jpeg::ColorMode::luma_only : jpeg::ColorMode::ycbcr_420;
}

PatchBatch make_patch_batch(const CorpusManifest& manifest, Split split,
                            const QFSampler& sampler, int patch_size, int batch_size,
                            ColorSpace color, Rng& rng) {
  if (patch_size % 8 != 0 || patch_size % 4 != 0) {
    throw RangeError("patch size must be divisible by 8 and 4, got " +
                     std::to_string(patch_size));
  }
  static std::set<std::string> warned;  // one warning per undersized image

  std::vector<int> pool;
  for (int idx : manifest.indices(split)) {
    const ImageBuffer& img = manifest.image(idx, color);
    if (img.width >= patch_size && img.height >= patch_size) {
      pool.push_back(idx);
    } else if (warned.insert(manifest.entries()[idx].path).second) {
      std::cerr << "warning: skipping " << manifest.entries()[idx].path << " (" << img.width
                << "x" << img.height << " smaller than patch " << patch_size << ")\n";
    }
  }
  if (pool.empty()) {
    throw Error("make_patch_batch: no image in the requested split is at least " +
                std::to_string(patch_size) + "px per side");
  }

  const int channels = color == ColorSpace::gray ? 1 : 3;
  PatchBatch batch;
  batch.input = Tensor(Shape4{batch_size, channels, patch_size, patch_size});
  const jpeg::ColorMode jmode = jpeg_mode_for(color);

  for (int b = 0; b < batch_size; ++b) {
    const int img_idx = pool[rng.below(static_cast<std::uint32_t>(pool.size()))];
    const ImageBuffer& img = manifest.image(img_idx, color);
    const int x0 = static_cast<int>(rng.below(static_cast<std::uint32_t>(img.width - patch_size + 1)));
    const int y0 = static_cast<int>(rng.below(static_cast<std::uint32_t>(img.height - patch_size + 1)));
    const QFSampler::Draw draw = sampler.sample(rng);

    const ImageBuffer degraded =
        jpeg::jpeg_degrade(crop(img, x0, y0, patch_size, patch_size),
                           jpeg::QualityFactor(draw.q), jmode);

    float* dst = batch.input.data() + batch.input.index(b, 0, 0, 0);
    const std::int64_t plane = static_cast<std::int64_t>(patch_size) * patch_size;
    for (int y = 0; y < patch_size; ++y) {
      for (int x = 0; x < patch_size; ++x) {
        for (int c = 0; c < channels; ++c) {
          dst[c * plane + y * patch_size + x] =
              static_cast<float>(degraded.at(y, x, c)) / 255.0f;
        }
      }
    }
    batch.targets_y.push_back(static_cast<float>(draw.q) / 100.0f);
    batch.targets_class.push_back(draw.class_index);
    batch.provenance.push_back(PatchProvenance{img_idx, x0, y0, draw.q});
  }
  return batch;
}

// ---------------------------------------------------------------------------
// Procedural corpus
// ---------------------------------------------------------------------------

namespace {

// Smoothed value noise: random lattice, bilinear interpolation.
void add_value_noise(std::vector<double>& acc, int size, int cell, double amp, Rng& rng) {
  const int gn = size / cell + 2;
  std::vector<double> lattice(static_cast<std::size_t>(gn) * gn);
  for (auto& v : lattice) v = rng.uniform01() * 2.0 - 1.0;
  for (int y = 0; y < size; ++y) {
    const double fy = static_cast<double>(y) / cell;
    const int y0 = static_cast<int>(fy);
    const double ty = fy - y0;
    for (int x = 0; x < size; ++x) {
      const double fx = static_cast<double>(x) / cell;
      const int x0 = static_cast<int>(fx);
      const double tx = fx - x0;
      const double v00 = lattice[static_cast<std::size_t>(y0) * gn + x0];
      const double v01 = lattice[static_cast<std::size_t>(y0) * gn + x0 + 1];
      const double v10 = lattice[static_cast<std::size_t>(y0 + 1) * gn + x0];
      const double v11 = lattice[static_cast<std::size_t>(y0 + 1) * gn + x0 + 1];
      const double v = (1 - ty) * ((1 - tx) * v00 + tx * v01) + ty * ((1 - tx) * v10 + tx * v11);
      acc[static_cast<std::size_t>(y) * size + x] += amp * v;
    }
  }
}

// Natural-leaning synthetic scene: fractal (1/f-ish) value noise for texture,
// soft-edged shapes for structure and flat regions, a few thin lines, an
// occasional gentle grating. Fine sensor-like grain is added at 8-bit export
// (see procedural_texture) because that micro-detail is exactly what high-QF
// compression and mild corruptions erase first.
std::vector<double> texture_plane(int size, Rng& rng) {
  std::vector<double> acc(static_cast<std::size_t>(size) * size, 0.0);

  // linear gradient base (illumination)
  const double gx = rng.uniform01() * 2.0 - 1.0;
  const double gy = rng.uniform01() * 2.0 - 1.0;
  for (int y = 0; y < size; ++y) {
    for (int x = 0; x < size; ++x) {
      acc[static_cast<std::size_t>(y) * size + x] = 0.5 * (gx * x / size + gy * y / size);
    }
  }

  // fractal octaves, amplitude falling with frequency; fine scales are kept
  // gentle so images carry smooth regions where artifacts stand out
  for (int cell = size / 2; cell >= 4; cell /= 2) {
    double amp = std::pow(static_cast<double>(cell) / size, 0.8) *
                 (0.9 + 0.5 * rng.uniform01());
    if (cell <= 8) amp *= 0.4;
    add_value_noise(acc, size, cell, amp, rng);
  }

  // ellipses: object-like structure, edges, flat interiors. Half the edges
  // are hard (1-2 px), so low-QF compression produces the strong ringing and
  // overshoot the predictor must learn to read as damage.
  const int n_shapes = 6 + static_cast<int>(rng.below(7));
  for (int s = 0; s < n_shapes; ++s) {
    const double cx = rng.uniform01() * size;
    const double cy = rng.uniform01() * size;
    const double rx = size * (0.06 + 0.30 * rng.uniform01());
    const double ry = size * (0.06 + 0.30 * rng.uniform01());
    const double theta = rng.uniform01() * 3.14159265358979323846;
    const double ct = std::cos(theta), st = std::sin(theta);
    const double intensity = (rng.below(2) ? 1.0 : -1.0) * (0.35 + 0.55 * rng.uniform01());
    const bool hard = rng.below(2) == 0;
    const double softness =
        hard ? 0.004 + 0.016 * rng.uniform01() : 0.04 + 0.10 * rng.uniform01();
    for (int y = 0; y < size; ++y) {
      for (int x = 0; x < size; ++x) {
        const double dx = x - cx, dy = y - cy;
        const double u = (dx * ct + dy * st) / rx;
        const double v = (-dx * st + dy * ct) / ry;
        const double d = u * u + v * v;
        if (d < 1.0 + 4.0 * softness) {
          const double t = std::clamp((1.0 + softness - d) / (2.0 * softness), 0.0, 1.0);
          acc[static_cast<std::size_t>(y) * size + x] += intensity * t * t * (3.0 - 2.0 * t);
        }
      }
    }
  }

  // thin lines, a mix of crisp and soft
  const int n_lines = 1 + static_cast<int>(rng.below(4));
  for (int l = 0; l < n_lines; ++l) {
    const double px = rng.uniform01() * size;
    const double py = rng.uniform01() * size;
    const double phi = rng.uniform01() * 3.14159265358979323846;
    const double nx = -std::sin(phi), ny = std::cos(phi);
    const double width = rng.below(2) ? 0.5 + 0.3 * rng.uniform01()
                                      : 1.2 + 1.2 * rng.uniform01();
    const double intensity = (rng.below(2) ? 1.0 : -1.0) * (0.35 + 0.45 * rng.uniform01());
    for (int y = 0; y < size; ++y) {
      for (int x = 0; x < size; ++x) {
        const double d = nx * (x - px) + ny * (y - py);
        acc[static_cast<std::size_t>(y) * size + x] +=
            intensity * std::exp(-d * d / (2.0 * width * width));
      }
    }
  }

  // occasional gentle grating
  if (rng.below(4) == 0) {
    const double freq = 3.0 + rng.uniform01() * 20.0;
    const double theta = rng.uniform01() * 3.14159265358979323846;
    const double phase = rng.uniform01() * 6.283185307179586;
    const double amp = 0.08 + 0.15 * rng.uniform01();
    const double kx = std::cos(theta) * freq / size;
    const double ky = std::sin(theta) * freq / size;
    for (int y = 0; y < size; ++y) {
      for (int x = 0; x < size; ++x) {
        acc[static_cast<std::size_t>(y) * size + x] +=
            amp * std::sin(6.283185307179586 * (kx * x + ky * y) + phase);
      }
    }
  }
  return acc;
}

// Sensor-like grain in 8-bit space: Gaussian, partially low-pass filtered so
// neighbouring pixels correlate slightly.
void add_grain(std::vector<double>& plane8, int size, Rng& rng) {
  const double sigma = 1.5 + 2.5 * rng.uniform01();  // gray levels
  std::vector<double> noise(plane8.size());
  for (auto& n : noise) n = rng.normal() * sigma;
  // 3-tap [1 2 1]/4 separable smoothing on half the energy
  std::vector<double> smooth = noise;
  for (int y = 0; y < size; ++y) {
    for (int x = 0; x < size; ++x) {
      const int xm = std::max(0, x - 1), xp = std::min(size - 1, x + 1);
      smooth[static_cast<std::size_t>(y) * size + x] =
          0.25 * noise[static_cast<std::size_t>(y) * size + xm] +
          0.5 * noise[static_cast<std::size_t>(y) * size + x] +
          0.25 * noise[static_cast<std::size_t>(y) * size + xp];
    }
  }
  for (int x = 0; x < size; ++x) {
    for (int y = 0; y < size; ++y) {
      const int ym = std::max(0, y - 1), yp = std::min(size - 1, y + 1);
      const double v = 0.25 * smooth[static_cast<std::size_t>(ym) * size + x] +
                       0.5 * smooth[static_cast<std::size_t>(y) * size + x] +
                       0.25 * smooth[static_cast<std::size_t>(yp) * size + x];
      plane8[static_cast<std::size_t>(y) * size + x] +=
          0.5 * v + 0.5 * noise[static_cast<std::size_t>(y) * size + x];
    }
  }
}

}  // namespace

ImageBuffer procedural_texture(int size, std::uint64_t seed, ColorSpace color) {
  Rng rng(seed);
  std::vector<double> luma = texture_plane(size, rng);
  {
    const auto [mn, mx] = std::minmax_element(luma.begin(), luma.end());
    const double lo = *mn, span = std::max(1e-9, *mx - lo);
    // leave headroom so the grain rarely clips
    for (auto& v : luma) v = (v - lo) / span * 235.0 + 10.0;
  }
  add_grain(luma, size, rng);

  if (color == ColorSpace::gray) {
    ImageBuffer img = ImageBuffer::make(size, size, 1);
    for (std::size_t i = 0; i < luma.size(); ++i) {
      img.pixels[i] = static_cast<std::uint8_t>(std::clamp(std::lround(luma[i]), 0L, 255L));
    }
    return img;
  }
  // correlated RGB: shared luma structure plus two low-amplitude chroma planes
  std::vector<double> ca(static_cast<std::size_t>(size) * size, 0.0);
  std::vector<double> cb(static_cast<std::size_t>(size) * size, 0.0);
  add_value_noise(ca, size, 16 + static_cast<int>(rng.below(32)), 1.0, rng);
  add_value_noise(cb, size, 16 + static_cast<int>(rng.below(32)), 1.0, rng);
  ImageBuffer img = ImageBuffer::make(size, size, 3);
  for (std::size_t i = 0; i < luma.size(); ++i) {
    const double y = luma[i];
    const double u = ca[i] * 26.0;
    const double v = cb[i] * 26.0;
    img.pixels[3 * i + 0] = static_cast<std::uint8_t>(std::clamp(std::lround(y + v), 0L, 255L));
    img.pixels[3 * i + 1] =
        static_cast<std::uint8_t>(std::clamp(std::lround(y - 0.5 * (u + v)), 0L, 255L));
    img.pixels[3 * i + 2] = static_cast<std::uint8_t>(std::clamp(std::lround(y + u), 0L, 255L));
  }
  return img;
}

std::string generate_desk_corpus(const std::string& dir, int count, int size,
                                 std::uint64_t seed, ColorSpace color, double val_fraction) {
  if (count < 1) throw RangeError("corpus count must be >= 1");
  fs::create_directories(dir);
  Rng root(seed);
  const int n_val = std::max(1, static_cast<int>(std::lround(count * val_fraction)));

  std::ostringstream manifest;
  manifest << "# procedural desk corpus, seed " << seed << "\n";
  for (int i = 0; i < count; ++i) {
    const ImageBuffer img = procedural_texture(size, root.child("texture", i).next_u64(), color);
    std::ostringstream name;
    name << "img_" << (i < 10 ? "0" : "") << i << (color == ColorSpace::gray ? ".pgm" : ".ppm");
    save_pnm(img, (fs::path(dir) / name.str()).string());
    manifest << name.str() << "\t" << (i < count - n_val ? "train" : "val") << "\n";
  }
  const std::string manifest_path = (fs::path(dir) / "manifest.txt").string();
  std::ofstream out(manifest_path);
  if (!out) throw IoError("cannot write " + manifest_path);
  out << manifest.str();
  return manifest_path;
}

}  // namespace qfpred
