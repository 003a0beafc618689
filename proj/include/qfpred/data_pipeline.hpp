// Copyright (c) 2026 qfpred contributors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "qfpred/image.hpp"
#include "qfpred/jpeg_sim.hpp"
#include "qfpred/tensor.hpp"

namespace qfpred {

enum class Split { train, val };
enum class ColorSpace { gray, rgb };

struct ManifestEntry {
  std::string path;
  Split split = Split::train;
};

// Image corpus: the manifest file lists one `path<TAB>split` per line with
// `#` comments; relative paths resolve against the manifest's directory.
// Decoded images are cached in memory after first use.
class CorpusManifest {
 public:
  static CorpusManifest load(const std::string& manifest_path);
  // In-memory manifest (tests, generated corpora).
  static CorpusManifest from_entries(std::vector<ManifestEntry> entries);

  const std::vector<ManifestEntry>& entries() const { return entries_; }
  std::vector<int> indices(Split split) const;

  // Cached decode; converts to the requested color space.
  const ImageBuffer& image(int index, ColorSpace cs) const;

 private:
  std::vector<ManifestEntry> entries_;
  mutable std::vector<std::optional<ImageBuffer>> cache_gray_;
  mutable std::vector<std::optional<ImageBuffer>> cache_rgb_;
};

enum class SamplerMode { uniform, log_weighted, classification_5 };

// Q values represented by the five classification classes. Class 0 is the
// paper's "QF 0" bucket; the codec's valid range starts at 1, so it maps to 1.
inline constexpr int kClassQ[5] = {1, 20, 40, 60, 80};

// Draws quality factors for self-supervised training. log_weighted uses
// P(q) proportional to ln(1+q) over q in [1, 100], which concentrates mass on
// the high-QF range where compression artifacts are subtle. classification_5
// draws the five class QFs with extra weight on the two highest.
class QFSampler {
 public:
  QFSampler(SamplerMode mode, std::uint64_t seed = 0);

  // Degenerate sampler with all mass on one q (tests, pinned-q training).
  static QFSampler pinned(int q, std::uint64_t seed = 0);

  struct Draw {
    int q = 0;            // raw quality factor in [1, 100]
    int class_index = -1; // set in classification mode
  };
  Draw sample(Rng& rng) const;

  SamplerMode mode() const { return mode_; }
  std::uint64_t seed() const { return seed_; }
  // Probability table: indexed by q-1 (100 entries) or class (5 entries).
  const std::vector<double>& table() const { return table_; }

 private:
  SamplerMode mode_;
  std::uint64_t seed_;
  std::vector<double> table_;
  std::vector<double> cumulative_;
};

struct PatchProvenance {
  int image_index = 0;
  int x0 = 0;
  int y0 = 0;
  int q = 0;
};

struct PatchBatch {
  Tensor input;                     // (B, C, P, P), values raw/255 exactly
  std::vector<float> targets_y;     // q/100, regression
  std::vector<int> targets_class;   // classification
  std::vector<PatchProvenance> provenance;
};

// Crops a random patch per element, degrades the crop at a sampled QF, and
// normalizes. Degradation happens after cropping so the JPEG block grid is
// aligned with the patch exactly as it will be at inference time.
// Images smaller than the patch are skipped (with a one-time warning).
PatchBatch make_patch_batch(const CorpusManifest& manifest, Split split,
                            const QFSampler& sampler, int patch_size, int batch_size,
                            ColorSpace color, Rng& rng);

// (1, C, H, W) tensor with values raw/255.
Tensor image_to_tensor(const ImageBuffer& img);
// Clamp-rounds a (1, C, H, W) tensor in [0,1] back to 8-bit.
ImageBuffer tensor_to_image(const Tensor& t);

// Color space to codec mode: gray patches use the luma-only path, RGB the
// 4:2:0 path.
jpeg::ColorMode jpeg_mode_for(ColorSpace cs);

// Procedurally generated multi-frequency texture corpus used for the
// self-contained demos and tests: sinusoidal gratings, ripples, smoothed
// noise, and gradients, written as PGM (gray) or PPM (rgb) plus a manifest.
// Returns the manifest path.
std::string generate_desk_corpus(const std::string& dir, int count, int size,
                                 std::uint64_t seed, ColorSpace color,
                                 double val_fraction = 0.2);

// Single procedural image (exposed for tests and the selftest command).
ImageBuffer procedural_texture(int size, std::uint64_t seed, ColorSpace color);

}  // namespace qfpred
