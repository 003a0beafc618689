// Copyright (c) 2026 qfpred contributors
// SPDX-License-Identifier: Apache-2.0

#include "qfpred/eval_harness.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <sstream>

#include <json.hpp>

namespace fs = std::filesystem;

namespace qfpred {

using nlohmann::json;

double QFMap::mean() const {
  double acc = 0.0;
  for (double v : values) acc += v;
  return values.empty() ? 0.0 : acc / static_cast<double>(values.size());
}

double QFMap::min() const {
  return values.empty() ? 0.0 : *std::min_element(values.begin(), values.end());
}

double QFMap::max() const {
  return values.empty() ? 0.0 : *std::max_element(values.begin(), values.end());
}

ImageBuffer QFMap::render_heatmap() const {
  ImageBuffer img = ImageBuffer::make(input_w, input_h, 1);
  for (int y = 0; y < input_h; ++y) {
    const int i = std::min(grid_h - 1, y * grid_h / input_h);
    for (int x = 0; x < input_w; ++x) {
      const int j = std::min(grid_w - 1, x * grid_w / input_w);
      img.at(y, x) = static_cast<std::uint8_t>(
          std::clamp<long>(std::lround(value(i, j) * 255.0), 0, 255));
    }
  }
  return img;
}

QFMap qf_map(const QfNet& net, const ImageBuffer& image) {
  const ImageBuffer converted =
      net.spec().input_channels == 1 ? to_gray(image) : to_rgb(image);
  const Tensor input = image_to_tensor(converted);
  const Tensor out = net.infer(input);  // throws with the minimum size if undersized
  const Shape4& os = out.shape();

  QFMap map;
  map.grid_h = os.h;
  map.grid_w = os.w;
  map.input_w = image.width;
  map.input_h = image.height;
  map.stride = net.spec().output_stride();
  map.receptive_field = net.spec().receptive_field();
  map.values.resize(static_cast<std::size_t>(os.h) * os.w);

  if (net.spec().mode == HeadMode::regression) {
    for (int i = 0; i < os.h; ++i) {
      for (int j = 0; j < os.w; ++j) {
        map.values[static_cast<std::size_t>(i) * os.w + j] = out.at(0, 0, i, j);
      }
    }
  } else {
    for (int i = 0; i < os.h; ++i) {
      for (int j = 0; j < os.w; ++j) {
        int arg = 0;
        for (int c = 1; c < 5; ++c) {
          if (out.at(0, c, i, j) > out.at(0, arg, i, j)) arg = c;
        }
        map.values[static_cast<std::size_t>(i) * os.w + j] = kClassQ[arg] / 100.0;
      }
    }
  }

  // per-cell input-window mean gray level via an integral image
  const ImageBuffer gray = to_gray(image);
  const int W = gray.width, H = gray.height;
  std::vector<double> integral(static_cast<std::size_t>(W + 1) * (H + 1), 0.0);
  for (int y = 0; y < H; ++y) {
    for (int x = 0; x < W; ++x) {
      integral[static_cast<std::size_t>(y + 1) * (W + 1) + x + 1] =
          gray.at(y, x) + integral[static_cast<std::size_t>(y) * (W + 1) + x + 1] +
          integral[static_cast<std::size_t>(y + 1) * (W + 1) + x] -
          integral[static_cast<std::size_t>(y) * (W + 1) + x];
    }
  }
  map.mean_intensity.resize(map.values.size());
  const int rf = map.receptive_field;
  for (int i = 0; i < os.h; ++i) {
    for (int j = 0; j < os.w; ++j) {
      const auto [x0, y0] = map.cell_origin(i, j);
      const int x1 = std::min(W, x0 + rf), y1 = std::min(H, y0 + rf);
      const double sum = integral[static_cast<std::size_t>(y1) * (W + 1) + x1] -
                         integral[static_cast<std::size_t>(y0) * (W + 1) + x1] -
                         integral[static_cast<std::size_t>(y1) * (W + 1) + x0] +
                         integral[static_cast<std::size_t>(y0) * (W + 1) + x0];
      map.mean_intensity[static_cast<std::size_t>(i) * os.w + j] =
          sum / (static_cast<double>(x1 - x0) * (y1 - y0));
    }
  }
  return map;
}

FixedPatchResult fixed_patch_eval(const QfNet& net, const ImageBuffer& image,
                                  const std::vector<std::pair<int, int>>& locations,
                                  int patch_size, const std::vector<CorruptionSpec>& sweep) {
  const int stride = net.spec().output_stride();
  FixedPatchResult result;
  for (const auto& [x, y] : locations) {
    if (x < 0 || y < 0 || x + patch_size > image.width || y + patch_size > image.height) {
      throw DimensionError("fixed_patch_eval: location (" + std::to_string(x) + ", " +
                           std::to_string(y) + ") with patch " + std::to_string(patch_size) +
                           " falls outside " + std::to_string(image.width) + "x" +
                           std::to_string(image.height));
    }
    // snap to the output-stride grid so map cells align with patch windows
    int sx = (x + stride / 2) / stride * stride;
    int sy = (y + stride / 2) / stride * stride;
    sx = std::min(sx, (image.width - patch_size) / stride * stride);
    sy = std::min(sy, (image.height - patch_size) / stride * stride);
    result.locations.emplace_back(sx, sy);
  }

  for (const auto& spec : sweep) {
    result.levels.push_back(spec.level);
    const ImageBuffer corrupted = apply_corruption(image, spec);
    std::vector<double> row;
    for (const auto& [sx, sy] : result.locations) {
      const QFMap m = qf_map(net, crop(corrupted, sx, sy, patch_size, patch_size));
      row.push_back(m.mean());
    }
    result.qf.push_back(std::move(row));
  }
  return result;
}

namespace {

std::vector<double> tie_ranks(const std::vector<double>& v) {
  const std::size_t n = v.size();
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return v[a] < v[b]; });
  std::vector<double> ranks(n);
  std::size_t i = 0;
  while (i < n) {
    std::size_t j = i;
    while (j + 1 < n && v[order[j + 1]] == v[order[i]]) ++j;
    const double rank = 0.5 * (static_cast<double>(i) + static_cast<double>(j)) + 1.0;
    for (std::size_t k = i; k <= j; ++k) ranks[order[k]] = rank;
    i = j + 1;
  }
  return ranks;
}

}  // namespace

double spearman(const std::vector<double>& a, const std::vector<double>& b) {
  if (a.size() != b.size()) throw DimensionError("spearman: length mismatch");
  if (a.size() < 2) throw RangeError("spearman: need at least 2 samples");
  const std::vector<double> ra = tie_ranks(a);
  const std::vector<double> rb = tie_ranks(b);
  const double n = static_cast<double>(a.size());
  double ma = 0.0, mb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    ma += ra[i];
    mb += rb[i];
  }
  ma /= n;
  mb /= n;
  double cov = 0.0, va = 0.0, vb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    cov += (ra[i] - ma) * (rb[i] - mb);
    va += (ra[i] - ma) * (ra[i] - ma);
    vb += (rb[i] - mb) * (rb[i] - mb);
  }
  if (va == 0.0 || vb == 0.0) return 0.0;  // constant side: no rank signal
  return cov / std::sqrt(va * vb);
}

CurveReport correlation_curve(const std::vector<FixedPatchResult>& results,
                              CorruptionKind kind) {
  if (results.empty()) throw RangeError("correlation_curve: no results");
  const std::size_t n_levels = results.front().levels.size();
  if (n_levels < 2) throw RangeError("correlation_curve: need at least 2 levels");
  for (const auto& r : results) {
    if (r.levels != results.front().levels) {
      throw DimensionError("correlation_curve: level ladders differ between images");
    }
  }

  CurveReport report;
  report.kind = kind;
  report.levels = results.front().levels;
  std::vector<double> level_index_samples, qf_samples;
  for (std::size_t l = 0; l < n_levels; ++l) {
    double sum = 0.0, sum2 = 0.0;
    std::int64_t n = 0;
    for (const auto& r : results) {
      for (double q : r.qf[l]) {
        sum += q;
        sum2 += q * q;
        ++n;
        level_index_samples.push_back(static_cast<double>(l));
        qf_samples.push_back(q);
      }
    }
    const double mean = n > 0 ? sum / static_cast<double>(n) : 0.0;
    const double var = n > 0 ? std::max(0.0, sum2 / static_cast<double>(n) - mean * mean) : 0.0;
    report.mean_qf.push_back(mean);
    report.std_qf.push_back(std::sqrt(var));
    report.samples.push_back(n);
  }
  report.spearman_level_qf = spearman(level_index_samples, qf_samples);
  return report;
}

void CurveReport::write_csv(const std::string& path) const {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path);
  out << "level,mean_qf,std_qf,samples\n";
  for (std::size_t i = 0; i < levels.size(); ++i) {
    out << levels[i] << "," << mean_qf[i] << "," << std_qf[i] << "," << samples[i] << "\n";
  }
  out << "# spearman(level, qf) = " << spearman_level_qf << "\n";
}

void CurveReport::write_json(const std::string& path) const {
  json j;
  j["kind"] = qfpred::to_string(kind);
  j["levels"] = levels;
  j["mean_qf"] = mean_qf;
  j["std_qf"] = std_qf;
  j["samples"] = samples;
  j["spearman_level_qf"] = spearman_level_qf;
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path);
  out << j.dump(2) << "\n";
}

void CurveReport::write_svg(const std::string& path) const {
  const int W = 640, H = 420, ml = 60, mr = 20, mt = 30, mb = 50;
  const int pw = W - ml - mr, ph = H - mt - mb;
  double lo = 1.0, hi = 0.0;
  for (std::size_t i = 0; i < mean_qf.size(); ++i) {
    lo = std::min(lo, mean_qf[i] - std_qf[i]);
    hi = std::max(hi, mean_qf[i] + std_qf[i]);
  }
  lo = std::max(0.0, lo - 0.05);
  hi = std::min(1.0, hi + 0.05);
  if (hi <= lo) hi = lo + 1e-3;

  auto px = [&](std::size_t i) {
    return ml + (levels.size() < 2 ? 0.0
                                   : static_cast<double>(i) * pw /
                                         static_cast<double>(levels.size() - 1));
  };
  auto py = [&](double v) { return mt + (hi - v) / (hi - lo) * ph; };

  std::ostringstream svg;
  svg << "<svg xmlns='http://www.w3.org/2000/svg' width='" << W << "' height='" << H << "'>\n";
  svg << "<rect width='" << W << "' height='" << H << "' fill='white'/>\n";
  // std band
  svg << "<polygon fill='#9ecae1' fill-opacity='0.5' points='";
  for (std::size_t i = 0; i < levels.size(); ++i) {
    svg << px(i) << "," << py(mean_qf[i] + std_qf[i]) << " ";
  }
  for (std::size_t i = levels.size(); i-- > 0;) {
    svg << px(i) << "," << py(mean_qf[i] - std_qf[i]) << " ";
  }
  svg << "'/>\n";
  // mean line
  svg << "<polyline fill='none' stroke='#08519c' stroke-width='2' points='";
  for (std::size_t i = 0; i < levels.size(); ++i) svg << px(i) << "," << py(mean_qf[i]) << " ";
  svg << "'/>\n";
  // axes
  svg << "<line x1='" << ml << "' y1='" << mt + ph << "' x2='" << ml + pw << "' y2='" << mt + ph
      << "' stroke='black'/>\n";
  svg << "<line x1='" << ml << "' y1='" << mt << "' x2='" << ml << "' y2='" << mt + ph
      << "' stroke='black'/>\n";
  for (std::size_t i = 0; i < levels.size(); ++i) {
    svg << "<text x='" << px(i) << "' y='" << mt + ph + 18
        << "' font-size='11' text-anchor='middle'>" << levels[i] << "</text>\n";
  }
  svg << "<text x='" << ml - 8 << "' y='" << py(lo) << "' font-size='11' text-anchor='end'>"
      << lo << "</text>\n";
  svg << "<text x='" << ml - 8 << "' y='" << py(hi) + 10 << "' font-size='11' text-anchor='end'>"
      << hi << "</text>\n";
  svg << "<text x='" << ml + pw / 2 << "' y='" << H - 12
      << "' font-size='12' text-anchor='middle'>" << qfpred::to_string(kind)
      << " severity</text>\n";
  svg << "<text x='" << ml + pw / 2 << "' y='" << mt - 10
      << "' font-size='12' text-anchor='middle'>mean predicted QF (spearman "
      << spearman_level_qf << ")</text>\n";
  svg << "</svg>\n";

  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path);
  out << svg.str();
}

DatasetScore score_dataset(const QfNet& net, const CorpusManifest& manifest,
                           PatchPolicy policy, std::uint64_t seed, int n_patches,
                           int patch_size, const std::string& corpus_id) {
  if (manifest.entries().empty()) throw Error("score_dataset: empty manifest");
  DatasetScore score;
  score.corpus_id = corpus_id;
  const int min_side =
      policy == PatchPolicy::whole_image ? net.spec().min_input_side() : patch_size;

  for (std::size_t i = 0; i < manifest.entries().size(); ++i) {
    const std::string& path = manifest.entries()[i].path;
    ImageBuffer img;
    try {
      img = manifest.image(static_cast<int>(i),
                           net.spec().input_channels == 1 ? ColorSpace::gray : ColorSpace::rgb);
    } catch (const Error&) {
      ++score.skipped;
      continue;
    }
    if (img.width < min_side || img.height < min_side) {
      ++score.skipped;
      continue;
    }
    double mean_qf;
    if (policy == PatchPolicy::whole_image) {
      mean_qf = qf_map(net, img).mean();
    } else {
      // per-image stream keyed by path: score is manifest-order invariant
      Rng rng(seed ^ hash_string(path));
      double acc = 0.0;
      for (int p = 0; p < n_patches; ++p) {
        const int x0 = static_cast<int>(rng.below(static_cast<std::uint32_t>(img.width - patch_size + 1)));
        const int y0 = static_cast<int>(rng.below(static_cast<std::uint32_t>(img.height - patch_size + 1)));
        acc += qf_map(net, crop(img, x0, y0, patch_size, patch_size)).mean();
      }
      mean_qf = acc / n_patches;
    }
    score.per_image.emplace_back(path, mean_qf);
  }
  if (score.per_image.empty()) {
    throw Error("score_dataset: every image was skipped (" + std::to_string(score.skipped) +
                " of " + std::to_string(manifest.entries().size()) + ")");
  }
  double sum = 0.0, sum2 = 0.0;
  for (const auto& [p, v] : score.per_image) {
    sum += v;
    sum2 += v * v;
  }
  const double n = static_cast<double>(score.per_image.size());
  score.mean = sum / n;
  score.stddev = std::sqrt(std::max(0.0, sum2 / n - score.mean * score.mean));
  return score;
}

void DatasetScore::write_csv(const std::string& path) const {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path);
  out << "path,mean_qf\n";
  for (const auto& [p, v] : per_image) out << p << "," << v << "\n";
  out << "# corpus " << corpus_id << " mean " << mean << " std " << stddev << " skipped "
      << skipped << "\n";
}

void DatasetScore::write_json(const std::string& path) const {
  json j;
  j["corpus_id"] = corpus_id;
  j["mean"] = mean;
  j["std"] = stddev;
  j["skipped"] = skipped;
  j["per_image"] = json::array();
  for (const auto& [p, v] : per_image) j["per_image"].push_back({{"path", p}, {"mean_qf", v}});
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path);
  out << j.dump(2) << "\n";
}

std::vector<std::string> dump_activations(const QfNet& net, const ImageBuffer& image,
                                          int layer_index, const std::string& out_dir,
                                          const std::string& ext) {
  if (layer_index < 0 || layer_index >= net.layer_count()) {
    throw RangeError("dump_activations: layer index " + std::to_string(layer_index) +
                     " outside [0, " + std::to_string(net.layer_count()) + ")");
  }
  const ImageBuffer converted =
      net.spec().input_channels == 1 ? to_gray(image) : to_rgb(image);
  const std::vector<Tensor> acts = net.infer_collect(image_to_tensor(converted));
  const Tensor& act = acts[layer_index];
  const Shape4& s = act.shape();

  fs::create_directories(out_dir);
  std::vector<std::string> paths;
  for (int c = 0; c < s.c; ++c) {
    float lo = act.at(0, c, 0, 0), hi = lo;
    for (int y = 0; y < s.h; ++y) {
      for (int x = 0; x < s.w; ++x) {
        lo = std::min(lo, act.at(0, c, y, x));
        hi = std::max(hi, act.at(0, c, y, x));
      }
    }
    ImageBuffer plane = ImageBuffer::make(s.w, s.h, 1);
    for (int y = 0; y < s.h; ++y) {
      for (int x = 0; x < s.w; ++x) {
        if (hi > lo) {
          plane.at(y, x) = static_cast<std::uint8_t>(
              std::lround((act.at(0, c, y, x) - lo) / (hi - lo) * 255.0));
        } else {
          plane.at(y, x) = 128;  // constant plane renders uniform gray
        }
      }
    }
    std::ostringstream name;
    name << "layer" << layer_index << "_ch" << c << "." << ext;
    const std::string path = (fs::path(out_dir) / name.str()).string();
    save_image(plane, path);
    paths.push_back(path);
  }
  return paths;
}

}  // namespace qfpred
