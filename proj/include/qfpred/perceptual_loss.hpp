// Copyright (c) 2026 qfpred contributors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <memory>
#include <string>
#include <vector>

#include "qfpred/qf_model.hpp"

namespace qfpred {

// SRCNN-style restoration backbone: conv9 -> ReLU -> conv1 -> ReLU -> conv5,
// same padding throughout so output dims equal input dims. Linear output;
// values are clamped to [0, 1] only when exported as an image.
struct RestorerSpec {
  int channels = 1;   // 1 or 3
  int width1 = 64;
  int width2 = 32;
};

class RestorerNet {
 public:
  RestorerNet(RestorerSpec spec, std::uint64_t init_seed);

  const RestorerSpec& spec() const { return spec_; }
  nn::ParamStore& params() { return params_; }

  Tensor forward(const Tensor& input, nn::Mode mode);
  Tensor backward(const Tensor& grad_out);
  Tensor infer(const Tensor& input) const;

 private:
  RestorerSpec spec_;
  std::vector<std::unique_ptr<nn::Layer>> layers_;
  nn::ParamStore params_;
};

enum class DataTerm { l1, l2 };

struct CombinedLossConfig {
  double lambda = 0.1;
  DataTerm data_term = DataTerm::l1;
};

struct CombinedLossValue {
  double total = 0.0;
  double data = 0.0;
  double qf_term = 0.0;  // mean(1 - QF(restored))
  double mean_qf = 0.0;
};

// loss = data(restored, input) + lambda * mean(1 - QF(restored)).
// The QF network runs in eval mode and must be frozen; its parameters receive
// no gradients, but the gradient flows through it into grad_restored
// (accumulated). restored must be at least the QF net's minimum input.
CombinedLossValue combined_loss(const Tensor& restored, const Tensor& degraded_input,
                                QfNet& frozen_qf, const CombinedLossConfig& cfg,
                                Tensor* grad_restored);

struct RestorerHyper {
  double lr = 2e-3;
  bool lr_decay = true;  // linear decay to 0; the L1 term needs it to settle
  int batch_size = 8;
  int steps = 200;
  int patch_size = 64;
  std::uint64_t seed = 7;
  bool verbose = false;
};

// Per held-out image: quality and consistency before/after restoration.
struct RestorerReportRow {
  std::string path;
  double qf_input = 0.0;
  double qf_output = 0.0;
  double l1_drift = 0.0;  // mean |output - input|, normalized units
};

struct RestorerReport {
  double lambda = 0.0;
  std::vector<RestorerReportRow> rows;
  double mean_qf_input = 0.0;
  double mean_qf_output = 0.0;
  double mean_l1_drift = 0.0;
};

// Reference-free training: inputs are train-split crops degraded at
// degrade_q; the loss ties the output to the degraded input (no clean
// targets). Evaluation runs on the val split's whole images.
RestorerReport train_restorer(RestorerNet& restorer, const CorpusManifest& manifest,
                              ColorSpace color, int degrade_q, QfNet& frozen_qf,
                              const CombinedLossConfig& cfg, const RestorerHyper& hyper);

struct TradeoffRow {
  double lambda = 0.0;
  double qf_gain = 0.0;   // mean over seeds of (qf_output - qf_input)
  double l1_drift = 0.0;  // mean over seeds
};

struct TradeoffReport {
  std::vector<TradeoffRow> rows;

  void write_csv(const std::string& path) const;
  void write_json(const std::string& path) const;
};

// Repeats train_restorer across lambda values and seeds (fresh restorer per
// run, shared frozen QF net) and averages the endpoints.
TradeoffReport lambda_sweep(const CorpusManifest& manifest, ColorSpace color, int degrade_q,
                            QfNet& frozen_qf, const std::vector<double>& lambdas,
                            const std::vector<std::uint64_t>& seeds,
                            const RestorerHyper& base_hyper, DataTerm data_term = DataTerm::l1);

}  // namespace qfpred
