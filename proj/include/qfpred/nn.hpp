// Copyright (c) 2026 qfpred contributors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <map>
#include <memory>
#include <string>
#include <unordered_map>
#include <vector>

#include "qfpred/tensor.hpp"

namespace qfpred::nn {

enum class Mode { train, eval };

// ---------------------------------------------------------------------------
// Functional ops. Each forward has an explicit backward taking the cached
// forward inputs; null output pointers skip that gradient.
// ---------------------------------------------------------------------------

Shape4 conv2d_out_shape(const Shape4& in, int out_ch, int k, int stride, int pad);

// Cross-correlation with square kernel, zero padding.
// weight: (out_ch, in_ch, k, k), bias: (1, out_ch, 1, 1).
Tensor conv2d_forward(const Tensor& input, const Tensor& weight, const Tensor& bias,
                      int stride, int pad);
void conv2d_backward(const Tensor& input, const Tensor& weight, const Tensor& grad_out,
                     int stride, int pad, Tensor* grad_input, Tensor* grad_weight,
                     Tensor* grad_bias);

// 2x2 max pooling, stride 2, trailing odd row/column dropped. argmax holds the
// flat input index that won each window; ties go to the first element in
// row-major window order.
Tensor maxpool2_forward(const Tensor& input, std::vector<std::int64_t>* argmax);
Tensor maxpool2_backward(const Shape4& in_shape, const std::vector<std::int64_t>& argmax,
                         const Tensor& grad_out);

Tensor relu_forward(const Tensor& input);
// grad_input = grad_out where input > 0; subgradient at 0 is 0.
Tensor relu_backward(const Tensor& input, const Tensor& grad_out);

Tensor sigmoid_forward(const Tensor& input);
Tensor sigmoid_backward(const Tensor& output, const Tensor& grad_out);

// Mean squared error over every cell; returns the scalar loss and, when
// grad_pred is non-null, d(loss)/d(pred).
double mse_loss(const Tensor& pred, const Tensor& target, Tensor* grad_pred);

// Per-cell cross entropy with log-softmax over the channel axis. targets has
// one class index per (n, y, x) cell, row-major, in [0, channels).
double cross_entropy_loss(const Tensor& logits, const std::vector<int>& targets,
                          Tensor* grad_logits);

// Mean absolute error; subgradient at 0 is 0.
double l1_loss(const Tensor& pred, const Tensor& target, Tensor* grad_pred);

// ---------------------------------------------------------------------------
// Parameter store and optimizer
// ---------------------------------------------------------------------------

struct ParamRef {
  std::string name;
  Tensor* tensor = nullptr;
  bool trainable = true;  // running BN stats are registered non-trainable
};

// Ordered, name-addressable view over a model's parameters plus the optimizer
// state keyed by parameter name. Iteration order is registration order and is
// what the checkpoint format serializes.
class ParamStore {
 public:
  void add(const std::string& name, Tensor* tensor, bool trainable);
  const std::vector<ParamRef>& params() const { return params_; }
  ParamRef* find(const std::string& name);
  std::int64_t total_floats() const;
  void zero_grads();

  struct OptState {
    std::vector<float> m;  // Adam first moment / SGD velocity
    std::vector<float> v;  // Adam second moment
  };
  std::map<std::string, OptState>& opt_state() { return opt_state_; }
  std::int64_t step_count() const { return step_count_; }
  void set_step_count(std::int64_t s) { step_count_ = s; }
  void bump_step() { ++step_count_; }

 private:
  std::vector<ParamRef> params_;
  std::unordered_map<std::string, std::size_t> index_;
  std::map<std::string, OptState> opt_state_;
  std::int64_t step_count_ = 0;
};

enum class OptimizerKind { sgd_momentum, adam };

struct OptimizerConfig {
  OptimizerKind kind = OptimizerKind::adam;
  float lr = 1e-3f;
  float momentum = 0.9f;  // sgd only; 0 gives plain SGD
  float beta1 = 0.9f;
  float beta2 = 0.999f;
  float eps = 1e-8f;
  float weight_decay = 0.0f;
};

// In-place update of every trainable parameter, then zero all gradients.
// A trainable parameter whose gradient buffer was never allocated is an error.
void optimizer_step(ParamStore& params, const OptimizerConfig& cfg);

// ---------------------------------------------------------------------------
// Layer objects. The networks in this project are short fixed sequences, so a
// layer list with explicit forward/backward is all the autodiff we need.
// Mode::train caches activations for backward; infer() is const and cache-free
// so a frozen model can be shared across threads.
// ---------------------------------------------------------------------------

class Layer {
 public:
  virtual ~Layer() = default;
  virtual Tensor forward(const Tensor& input, Mode mode) = 0;
  virtual Tensor infer(const Tensor& input) const = 0;
  virtual Tensor backward(const Tensor& grad_out) = 0;
  virtual void register_params(ParamStore& /*store*/, const std::string& /*prefix*/) {}
  virtual Shape4 out_shape(const Shape4& in) const = 0;
};

class Conv2d final : public Layer {
 public:
  Conv2d(int in_ch, int out_ch, int k, int stride = 1, int pad = 0);

  void init_he(Rng& rng);

  Tensor forward(const Tensor& input, Mode mode) override;
  Tensor infer(const Tensor& input) const override;
  Tensor backward(const Tensor& grad_out) override;
  void register_params(ParamStore& store, const std::string& prefix) override;
  Shape4 out_shape(const Shape4& in) const override;

  Tensor weight;  // (out_ch, in_ch, k, k)
  Tensor bias;    // (1, out_ch, 1, 1)
  bool frozen = false;  // skip weight/bias grads, input grad still flows

  int in_channels() const { return in_ch_; }
  int out_channels() const { return out_ch_; }
  int kernel() const { return k_; }

 private:
  int in_ch_, out_ch_, k_, stride_, pad_;
  Tensor cached_input_;
};

class BatchNorm2d final : public Layer {
 public:
  explicit BatchNorm2d(int channels, float momentum = 0.1f, float epsilon = 1e-5f);

  Tensor forward(const Tensor& input, Mode mode) override;
  Tensor infer(const Tensor& input) const override;
  Tensor backward(const Tensor& grad_out) override;
  void register_params(ParamStore& store, const std::string& prefix) override;
  Shape4 out_shape(const Shape4& in) const override { return in; }

  Tensor scale;         // gamma, identity-initialized to 1
  Tensor shift;         // beta, 0
  Tensor running_mean;  // 0
  Tensor running_var;   // 1
  bool frozen = false;

  int channels() const { return channels_; }
  float epsilon() const { return epsilon_; }

 private:
  int channels_;
  float momentum_;
  float epsilon_;
  // backward caches (train mode) / eval-mode flag for the affine backward
  Tensor cached_input_;
  std::vector<double> batch_mean_, batch_inv_std_;
  bool cached_train_mode_ = false;
};

class ReLU final : public Layer {
 public:
  Tensor forward(const Tensor& input, Mode mode) override;
  Tensor infer(const Tensor& input) const override;
  Tensor backward(const Tensor& grad_out) override;
  Shape4 out_shape(const Shape4& in) const override { return in; }

 private:
  Tensor cached_input_;
};

class Sigmoid final : public Layer {
 public:
  Tensor forward(const Tensor& input, Mode mode) override;
  Tensor infer(const Tensor& input) const override;
  Tensor backward(const Tensor& grad_out) override;
  Shape4 out_shape(const Shape4& in) const override { return in; }

 private:
  Tensor cached_output_;
};

class MaxPool2 final : public Layer {
 public:
  Tensor forward(const Tensor& input, Mode mode) override;
  Tensor infer(const Tensor& input) const override;
  Tensor backward(const Tensor& grad_out) override;
  Shape4 out_shape(const Shape4& in) const override;

 private:
  Shape4 cached_in_shape_{};
  std::vector<std::int64_t> argmax_;
};

}  // namespace qfpred::nn
