// Copyright (c) 2026 qfpred contributors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "qfpred/common.hpp"

namespace qfpred {

// Extents of a dense 4-D tensor: batch, channel, height, width.
struct Shape4 {
  int n = 0;
  int c = 0;
  int h = 0;
  int w = 0;

  std::int64_t numel() const {
    return static_cast<std::int64_t>(n) * c * h * w;
  }
  bool operator==(const Shape4&) const = default;
};

std::string to_string(const Shape4& s);

// Dense float32 tensor, row-major within (h, w), channel-major within each
// batch element. Gradient buffer is allocated lazily on first use and always
// matches the data shape.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Shape4 shape, bool requires_grad = false);

  static Tensor zeros(Shape4 shape);
  static Tensor full(Shape4 shape, float value);

  const Shape4& shape() const { return shape_; }
  std::int64_t size() const { return static_cast<std::int64_t>(data_.size()); }

  float* data() { return data_.data(); }
  const float* data() const { return data_.data(); }

  float& at(int n, int c, int y, int x) { return data_[index(n, c, y, x)]; }
  float at(int n, int c, int y, int x) const { return data_[index(n, c, y, x)]; }

  std::int64_t index(int n, int c, int y, int x) const {
    return ((static_cast<std::int64_t>(n) * shape_.c + c) * shape_.h + y) * shape_.w + x;
  }

  bool requires_grad() const { return requires_grad_; }
  void set_requires_grad(bool v) { requires_grad_ = v; }

  bool has_grad() const { return !grad_.empty(); }
  // Allocates the gradient buffer (zeroed) if absent.
  float* ensure_grad();
  float* grad() { return grad_.empty() ? nullptr : grad_.data(); }
  const float* grad() const { return grad_.empty() ? nullptr : grad_.data(); }
  void zero_grad();

  void fill(float value);
  bool all_finite() const;

  // Mean of all elements, accumulated in double.
  double mean() const;

 private:
  Shape4 shape_{};
  std::vector<float> data_;
  std::vector<float> grad_;
  bool requires_grad_ = false;
};

}  // namespace qfpred
