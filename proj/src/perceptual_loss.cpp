// Copyright (c) 2026 qfpred contributors
// SPDX-License-Identifier: Apache-2.0

#include "qfpred/perceptual_loss.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iostream>

#include <json.hpp>

namespace qfpred {

using nlohmann::json;

RestorerNet::RestorerNet(RestorerSpec spec, std::uint64_t init_seed) : spec_(spec) {
  if (spec.channels != 1 && spec.channels != 3) {
    throw DimensionError("restorer: channels must be 1 or 3");
  }
  Rng rng = Rng(init_seed).child("restorer-init");
  auto c1 = std::make_unique<nn::Conv2d>(spec.channels, spec.width1, 9, 1, 4);
  auto c2 = std::make_unique<nn::Conv2d>(spec.width1, spec.width2, 1, 1, 0);
  auto c3 = std::make_unique<nn::Conv2d>(spec.width2, spec.channels, 5, 1, 2);
  c1->init_he(rng);
  c2->init_he(rng);
  c3->init_he(rng);
  // Identity-passthrough init: the first `channels` feature planes carry the
  // input via delta kernels, the rest start as damped He noise, so the
  // restorer begins at the identity map (pixel values are non-negative, so
  // the ReLUs pass the carriers through). The L1 data term then anchors a
  // well-conditioned starting point for the lambda tradeoff.
  const auto damp = [](Tensor& w) {
    for (std::int64_t i = 0; i < w.size(); ++i) w.data()[i] *= 0.1f;
  };
  damp(c1->weight);
  damp(c2->weight);
  damp(c3->weight);
  for (int c = 0; c < spec.channels; ++c) {
    c1->weight.at(c, c, 4, 4) = 1.0f;
    for (int ic = 0; ic < spec.channels; ++ic) {
      c2->weight.at(c, ic, 0, 0) = (ic == c) ? 1.0f : 0.0f;
    }
    c3->weight.at(c, c, 2, 2) = 1.0f;
  }
  c1->register_params(params_, "conv1");
  c2->register_params(params_, "conv2");
  c3->register_params(params_, "conv3");
  layers_.push_back(std::move(c1));
  layers_.push_back(std::make_unique<nn::ReLU>());
  layers_.push_back(std::move(c2));
  layers_.push_back(std::make_unique<nn::ReLU>());
  layers_.push_back(std::move(c3));
}

Tensor RestorerNet::forward(const Tensor& input, nn::Mode mode) {
  Tensor x = input;
  for (auto& l : layers_) x = l->forward(x, mode);
  return x;
}

Tensor RestorerNet::backward(const Tensor& grad_out) {
  Tensor g = grad_out;
  for (auto it = layers_.rbegin(); it != layers_.rend(); ++it) g = (*it)->backward(g);
  return g;
}

Tensor RestorerNet::infer(const Tensor& input) const {
  Tensor x = input;
  for (const auto& l : layers_) x = l->infer(x);
  return x;
}

CombinedLossValue combined_loss(const Tensor& restored, const Tensor& degraded_input,
                                QfNet& frozen_qf, const CombinedLossConfig& cfg,
                                Tensor* grad_restored) {
  if (!frozen_qf.frozen()) {
    throw Error("combined_loss: QF network must be frozen (set_frozen(true))");
  }
  if (cfg.lambda < 0.0) throw RangeError("combined_loss: lambda must be >= 0");

  CombinedLossValue v;
  if (cfg.data_term == DataTerm::l1) {
    v.data = nn::l1_loss(restored, degraded_input, grad_restored);
  } else {
    v.data = nn::mse_loss(restored, degraded_input, grad_restored);
  }

  // QF term evaluated with running BN statistics; gradient flows through the
  // frozen net into the restorer output only.
  const Tensor qf_out = frozen_qf.forward(restored, nn::Mode::eval);
  v.mean_qf = qf_out.mean();
  v.qf_term = 1.0 - v.mean_qf;
  if (grad_restored && cfg.lambda > 0.0) {
    Tensor gmap(qf_out.shape());
    gmap.fill(static_cast<float>(-cfg.lambda / static_cast<double>(qf_out.size())));
    const Tensor ginput = frozen_qf.backward(gmap);
    float* acc = grad_restored->data();
    const float* g = ginput.data();
    for (std::int64_t i = 0; i < ginput.size(); ++i) acc[i] += g[i];
  }
  v.total = v.data + cfg.lambda * v.qf_term;
  return v;
}

RestorerReport train_restorer(RestorerNet& restorer, const CorpusManifest& manifest,
                              ColorSpace color, int degrade_q, QfNet& frozen_qf,
                              const CombinedLossConfig& cfg, const RestorerHyper& hyper) {
  if ((color == ColorSpace::gray) != (frozen_qf.spec().input_channels == 1)) {
    throw DimensionError("train_restorer: frozen QF checkpoint color mode does not match corpus");
  }
  if ((color == ColorSpace::gray) != (restorer.spec().channels == 1)) {
    throw DimensionError("train_restorer: restorer channels do not match corpus");
  }
  frozen_qf.set_frozen(true);

  Rng root(hyper.seed);
  Rng batch_rng = root.child("restorer-batches");
  const jpeg::QualityFactor q(degrade_q);
  const jpeg::ColorMode jmode = jpeg_mode_for(color);

  nn::OptimizerConfig opt;
  opt.kind = nn::OptimizerKind::adam;
  opt.lr = static_cast<float>(hyper.lr);

  const auto train_indices = manifest.indices(Split::train);
  if (train_indices.empty()) throw Error("train_restorer: manifest has no train split");
  std::vector<int> pool;
  for (int idx : train_indices) {
    const ImageBuffer& img = manifest.image(idx, color);
    if (img.width >= hyper.patch_size && img.height >= hyper.patch_size) pool.push_back(idx);
  }
  if (pool.empty()) throw Error("train_restorer: no train image fits the patch size");

  const int channels = color == ColorSpace::gray ? 1 : 3;
  const std::int64_t plane = static_cast<std::int64_t>(hyper.patch_size) * hyper.patch_size;

  for (int step = 1; step <= hyper.steps; ++step) {
    Tensor input(Shape4{hyper.batch_size, channels, hyper.patch_size, hyper.patch_size});
    for (int b = 0; b < hyper.batch_size; ++b) {
      const int img_idx = pool[batch_rng.below(static_cast<std::uint32_t>(pool.size()))];
      const ImageBuffer& img = manifest.image(img_idx, color);
      const int x0 = static_cast<int>(
          batch_rng.below(static_cast<std::uint32_t>(img.width - hyper.patch_size + 1)));
      const int y0 = static_cast<int>(
          batch_rng.below(static_cast<std::uint32_t>(img.height - hyper.patch_size + 1)));
      const ImageBuffer degraded =
          jpeg::jpeg_degrade(crop(img, x0, y0, hyper.patch_size, hyper.patch_size), q, jmode);
      float* dst = input.data() + input.index(b, 0, 0, 0);
      for (int y = 0; y < hyper.patch_size; ++y) {
        for (int x = 0; x < hyper.patch_size; ++x) {
          for (int c = 0; c < channels; ++c) {
            dst[c * plane + y * hyper.patch_size + x] =
                static_cast<float>(degraded.at(y, x, c)) / 255.0f;
          }
        }
      }
    }

    Tensor out = restorer.forward(input, nn::Mode::train);
    Tensor grad(out.shape());
    const CombinedLossValue loss = combined_loss(out, input, frozen_qf, cfg, &grad);
    if (!std::isfinite(loss.total)) {
      throw NumericError("train_restorer: loss became non-finite at step " +
                         std::to_string(step));
    }
    restorer.backward(grad);
    if (hyper.lr_decay) {
      opt.lr = static_cast<float>(hyper.lr * (1.0 - static_cast<double>(step - 1) / hyper.steps));
    }
    nn::optimizer_step(restorer.params(), opt);
    if (hyper.verbose && step % 50 == 0) {
      std::cout << "restorer step " << step << " loss " << loss.total << " data " << loss.data
                << " mean_qf " << loss.mean_qf << std::endl;
    }
  }

  // held-out report on whole val images
  RestorerReport report;
  report.lambda = cfg.lambda;
  for (int idx : manifest.indices(Split::val)) {
    const ImageBuffer& clean = manifest.image(idx, color);
    if (clean.width < frozen_qf.spec().min_input_side() ||
        clean.height < frozen_qf.spec().min_input_side()) {
      continue;
    }
    const ImageBuffer degraded = jpeg::jpeg_degrade(clean, q, jmode);
    const Tensor in_t = image_to_tensor(degraded);
    const Tensor out_t = restorer.infer(in_t);

    RestorerReportRow row;
    row.path = manifest.entries()[idx].path;
    row.qf_input = frozen_qf.infer(in_t).mean();
    row.qf_output = frozen_qf.infer(out_t).mean();
    row.l1_drift = 0.0;
    for (std::int64_t i = 0; i < in_t.size(); ++i) {
      row.l1_drift += std::abs(static_cast<double>(out_t.data()[i]) - in_t.data()[i]);
    }
    row.l1_drift /= static_cast<double>(in_t.size());
    report.rows.push_back(row);
  }
  if (report.rows.empty()) throw Error("train_restorer: no usable val images");

  for (const auto& r : report.rows) {
    report.mean_qf_input += r.qf_input;
    report.mean_qf_output += r.qf_output;
    report.mean_l1_drift += r.l1_drift;
  }
  const double n = static_cast<double>(report.rows.size());
  report.mean_qf_input /= n;
  report.mean_qf_output /= n;
  report.mean_l1_drift /= n;
  return report;
}

TradeoffReport lambda_sweep(const CorpusManifest& manifest, ColorSpace color, int degrade_q,
                            QfNet& frozen_qf, const std::vector<double>& lambdas,
                            const std::vector<std::uint64_t>& seeds,
                            const RestorerHyper& base_hyper, DataTerm data_term) {
  TradeoffReport report;
  for (double lambda : lambdas) {
    TradeoffRow row;
    row.lambda = lambda;
    for (std::uint64_t seed : seeds) {
      RestorerHyper hyper = base_hyper;
      hyper.seed = seed;
      RestorerSpec rspec;
      rspec.channels = color == ColorSpace::gray ? 1 : 3;
      RestorerNet restorer(rspec, seed);
      CombinedLossConfig cfg;
      cfg.lambda = lambda;
      cfg.data_term = data_term;
      const RestorerReport r =
          train_restorer(restorer, manifest, color, degrade_q, frozen_qf, cfg, hyper);
      row.qf_gain += r.mean_qf_output - r.mean_qf_input;
      row.l1_drift += r.mean_l1_drift;
    }
    row.qf_gain /= static_cast<double>(seeds.size());
    row.l1_drift /= static_cast<double>(seeds.size());
    report.rows.push_back(row);
  }
  return report;
}

void TradeoffReport::write_csv(const std::string& path) const {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path);
  out << "lambda,qf_gain,l1_drift\n";
  for (const auto& r : rows) out << r.lambda << "," << r.qf_gain << "," << r.l1_drift << "\n";
}

void TradeoffReport::write_json(const std::string& path) const {
  json j = json::array();
  for (const auto& r : rows) {
    j.push_back({{"lambda", r.lambda}, {"qf_gain", r.qf_gain}, {"l1_drift", r.l1_drift}});
  }
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path);
  out << j.dump(2) << "\n";
}

}  // namespace qfpred
