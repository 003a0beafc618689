// Copyright (c) 2026 qfpred contributors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "qfpred/degradations.hpp"
#include "qfpred/qf_model.hpp"

namespace qfpred {

// Dense per-region QF prediction over a whole image, with the geometry needed
// to map each cell back to its exact input window (valid convolutions make
// the mapping exact: cell (i, j) sees the RF x RF window at (i*stride,
// j*stride)). mean_intensity carries the per-window mean gray level so that
// low-signal regions (e.g. near-black background) can be filtered downstream.
struct QFMap {
  int grid_h = 0;
  int grid_w = 0;
  std::vector<double> values;          // row-major, in [0, 1]
  std::vector<double> mean_intensity;  // per cell, input window mean in [0, 255]
  int input_w = 0;
  int input_h = 0;
  int stride = 4;
  int receptive_field = 0;

  double value(int i, int j) const { return values[static_cast<std::size_t>(i) * grid_w + j]; }
  double mean() const;
  double min() const;
  double max() const;

  // Window origin of cell (i, j) in input pixels.
  std::pair<int, int> cell_origin(int i, int j) const { return {j * stride, i * stride}; }

  // Nearest-neighbor upscale to the input size, mapped to 8-bit gray.
  ImageBuffer render_heatmap() const;
};

// Eval-mode forward over the full image. Gray/RGB conversion follows the
// model's input channels. Classification models contribute class QFs
// (argmax -> {1,20,40,60,80}/100) per cell.
QFMap qf_map(const QfNet& net, const ImageBuffer& image);

// Per-image fixed-location sweep: the same patch windows are evaluated at
// every corruption level, so the only changing factor is artifact severity.
struct FixedPatchResult {
  std::vector<std::pair<int, int>> locations;  // snapped to the stride grid
  std::vector<double> levels;
  std::vector<std::vector<double>> qf;  // [level][location] mean map value
};

// locations are (x, y) patch origins; they are snapped to the output-stride
// grid (the snap is recorded in the result). The full image is corrupted once
// per level and the same patches extracted.
FixedPatchResult fixed_patch_eval(const QfNet& net, const ImageBuffer& image,
                                  const std::vector<std::pair<int, int>>& locations,
                                  int patch_size, const std::vector<CorruptionSpec>& sweep);

// Rank correlation with tie-averaged ranks; 0 when either side is constant.
double spearman(const std::vector<double>& a, const std::vector<double>& b);

struct CurveReport {
  CorruptionKind kind = CorruptionKind::gaussian_blur;
  std::vector<double> levels;
  std::vector<double> mean_qf;   // per level
  std::vector<double> std_qf;    // per level, population std
  std::vector<std::int64_t> samples;  // per level
  double spearman_level_qf = 0.0;

  void write_csv(const std::string& path) const;
  void write_json(const std::string& path) const;
  // Line plot with a mean +/- std band.
  void write_svg(const std::string& path) const;
};

// Aggregates fixed-patch sweeps over a corpus. All results must share the
// same level ladder; at least two levels are required.
CurveReport correlation_curve(const std::vector<FixedPatchResult>& results,
                              CorruptionKind kind);

enum class PatchPolicy { whole_image, random_patches };

struct DatasetScore {
  std::string corpus_id;
  std::vector<std::pair<std::string, double>> per_image;  // (path, mean QF)
  double mean = 0.0;
  double stddev = 0.0;
  int skipped = 0;

  void write_csv(const std::string& path) const;
  void write_json(const std::string& path) const;
};

// Scalar quality score per image (mean of its QF map or of N random patch
// means), then corpus mean +/- std. Undecodable or undersized images are
// skipped and counted; an empty remainder is an error. The result does not
// depend on manifest order: per-image RNG streams derive from the image path.
DatasetScore score_dataset(const QfNet& net, const CorpusManifest& manifest,
                           PatchPolicy policy, std::uint64_t seed, int n_patches = 8,
                           int patch_size = 64, const std::string& corpus_id = "corpus");

// Per-channel activation planes of one layer, min-max normalized to 8-bit
// grayscale (a constant plane renders mid-gray). Files are named
// layer<L>_ch<C>.<ext>; returns the written paths.
std::vector<std::string> dump_activations(const QfNet& net, const ImageBuffer& image,
                                          int layer_index, const std::string& out_dir,
                                          const std::string& ext = "png");

}  // namespace qfpred
