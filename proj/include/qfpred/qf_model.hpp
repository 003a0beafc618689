// Copyright (c) 2026 qfpred contributors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <array>
#include <cstdint>
#include <memory>
#include <string>
#include <utility>
#include <vector>

#include "qfpred/data_pipeline.hpp"
#include "qfpred/nn.hpp"
#include "qfpred/tensor.hpp"

namespace qfpred {

enum class HeadMode { regression, classification };

std::string to_string(HeadMode m);
HeadMode head_mode_from_string(const std::string& s);

// Architecture description for the QF predictor family: a fixed sequence of
// square convolutions and 2x2 max pools, BN+ReLU after every conv except the
// last, sigmoid head in regression mode, raw 5-class logits in classification
// mode. Valid (zero) padding throughout, so the output map is smaller than
// the input and every output cell has an exact input window.
struct ArchSpec {
  struct LayerSpec {
    enum class Kind { conv, pool };
    Kind kind = Kind::conv;
    int k = 3;        // conv only
    int in_ch = 0;    // conv only
    int out_ch = 0;   // conv only
  };

  int input_channels = 1;
  HeadMode mode = HeadMode::regression;
  std::vector<LayerSpec> layers;

  // Enforces the family constraints: exactly 7 convs, exactly 2 pools, the
  // final two convs 1x1, channel chaining consistent, head width 1 or 5.
  void validate() const;

  int receptive_field() const;
  int output_stride() const;          // product of pool strides (4)
  int min_input_side() const;         // smallest H=W with a 1x1 output map
  Shape4 map_shape(const Shape4& in) const;
  std::int64_t trainable_param_count() const;

  // Single-line text form used in checkpoints, e.g.
  // "in=1 mode=regression conv3:1x32 conv3:32x64 pool ...".
  std::string serialize() const;
  static ArchSpec parse(const std::string& line);
};

// conv3(C->32) conv3(32->64) pool conv3(64->128) conv3(128->128) pool
// conv3(128->128) conv1(128->64) conv1(64->head). RF 24, stride 4.
ArchSpec build_default_arch(int channels, HeadMode mode);

// Narrow variant with the same topology (7 convs, 2 pools); useful wherever a
// cheap but contract-identical model is enough.
ArchSpec build_narrow_arch(int channels, HeadMode mode, int width = 8);

// The QF predictor. Fully convolutional: any input with spatial extents >=
// min_input_side() produces a map of per-region QF predictions.
class QfNet {
 public:
  QfNet(ArchSpec spec, std::uint64_t init_seed);

  const ArchSpec& spec() const { return spec_; }
  nn::ParamStore& params() { return params_; }
  const nn::ParamStore& params() const { return params_; }

  // Training-path forward: caches activations for backward. mode selects
  // batch vs running BN statistics.
  Tensor forward(const Tensor& input, nn::Mode mode);
  // Backward through the cached forward; returns d(loss)/d(input).
  // Parameter gradients accumulate unless the net is frozen.
  Tensor backward(const Tensor& grad_out);

  // Cache-free eval forward; const and safe to share across threads.
  Tensor infer(const Tensor& input) const;
  // Eval forward returning the activation after every layer (activation-map
  // dumps); index i corresponds to layers()[i].
  std::vector<Tensor> infer_collect(const Tensor& input) const;

  // Frozen nets skip all parameter-gradient accumulation in backward; input
  // gradients still flow (perceptual-loss use).
  void set_frozen(bool frozen);
  bool frozen() const { return frozen_; }

  int layer_count() const { return static_cast<int>(layers_.size()); }
  // Output channel count of layer i (post BN/ReLU fusion order).
  int layer_out_channels(int index) const;

  void check_input(const Shape4& in) const;

 private:
  ArchSpec spec_;
  std::vector<std::unique_ptr<nn::Layer>> layers_;
  nn::ParamStore params_;
  bool frozen_ = false;
};

// ---------------------------------------------------------------------------
// Checkpoints: 8-byte magic "QFPRED01", structured text header (arch, mode,
// metadata, parameter directory with byte offsets), then a little-endian
// float32 blob. save -> load -> save is byte-identical.
// ---------------------------------------------------------------------------

struct CheckpointMeta {
  std::vector<std::pair<std::string, std::string>> kv;  // order preserved

  void set(const std::string& key, const std::string& value);
  const std::string* get(const std::string& key) const;
};

void save_checkpoint(const QfNet& net, const CheckpointMeta& meta, const std::string& path);
QfNet load_checkpoint(const std::string& path, CheckpointMeta* meta_out = nullptr);

// ---------------------------------------------------------------------------
// Metrics
// ---------------------------------------------------------------------------

// Fraction of pairs with |y - y'| <= 0.02 (inclusive). Values normalized to
// [0, 1]; an empty list is an error, not zero.
double accuracy_at_002(const std::vector<std::pair<double, double>>& pairs);

struct EvalPoint {
  std::int64_t step = 0;
  double train_loss = 0.0;
  double val_loss = 0.0;
  double accuracy002 = 0.0;  // regression mode
  double class_accuracy = 0.0;  // classification mode
};

struct MetricsReport {
  HeadMode mode = HeadMode::regression;
  std::vector<std::pair<std::int64_t, double>> train_curve;  // (step, loss)
  std::vector<EvalPoint> val_curve;
  // Final-eval per-cell (y_true, y_pred) pairs, regression.
  std::vector<std::pair<double, double>> pairs;
  // Final-eval 5x5 confusion matrix (rows true, cols predicted).
  std::array<std::array<std::int64_t, 5>, 5> confusion{};

  void write_csv(const std::string& path) const;
  void write_json(const std::string& path) const;
};

// Fixed held-out evaluation set: patches cropped from the val split with QFs
// stratified across the full range (grid over [1,100] in regression, cycling
// classes in classification), so eval metrics are comparable across steps.
struct ValSet {
  HeadMode mode = HeadMode::regression;
  Tensor inputs;                // (count, C, P, P)
  std::vector<float> ys;        // normalized targets
  std::vector<int> classes;     // classification targets
};

ValSet build_val_set(const CorpusManifest& manifest, ColorSpace color, HeadMode mode,
                     int patch_size, int count, std::uint64_t seed);

struct ValEval {
  double loss = 0.0;
  std::vector<std::pair<double, double>> cell_pairs;   // (y_true, y_pred) per map cell
  std::vector<std::pair<double, double>> patch_pairs;  // (y_true, mean y_pred) per patch
  std::array<std::array<std::int64_t, 5>, 5> confusion{};
  double class_accuracy = 0.0;
};

// Eval-mode pass over the whole set (batched internally).
ValEval evaluate(const QfNet& net, const ValSet& vs);

struct TrainHyper {
  double lr = 1e-3;
  int batch_size = 16;
  int steps = 20000;
  int val_interval = 500;
  nn::OptimizerKind optimizer = nn::OptimizerKind::adam;
  std::uint64_t seed = 42;
  int patch_size = 64;
  int val_patch_count = 160;
  std::int64_t start_step = 0;      // resume offset
  bool verbose = false;
  std::string diverged_snapshot_path;  // written on NaN abort when non-empty
};

// Self-supervised training: random crops degraded at sampled QFs, constant
// target maps (regression) or per-cell class targets (classification).
// Validation runs on a fixed held-out patch set drawn uniformly over the QF
// range; the best-validation parameters are restored into the net before
// returning. NaN loss aborts with NumericError.
MetricsReport train_qf(QfNet& net, const CorpusManifest& manifest, const QFSampler& sampler,
                       ColorSpace color, const TrainHyper& hyper);

}  // namespace qfpred
