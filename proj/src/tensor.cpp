// Copyright (c) 2026 qfpred contributors
// SPDX-License-Identifier: Apache-2.0

#include "qfpred/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

namespace qfpred {

std::string to_string(const Shape4& s) {
  std::ostringstream os;
  os << "(" << s.n << ", " << s.c << ", " << s.h << ", " << s.w << ")";
  return os.str();
}

Tensor::Tensor(Shape4 shape, bool requires_grad)
    : shape_(shape), requires_grad_(requires_grad) {
  if (shape.n < 0 || shape.c < 0 || shape.h < 0 || shape.w < 0) {
    throw DimensionError("tensor extents must be non-negative, got " + to_string(shape));
  }
  data_.assign(static_cast<std::size_t>(shape.numel()), 0.0f);
}

Tensor Tensor::zeros(Shape4 shape) { return Tensor(shape); }

Tensor Tensor::full(Shape4 shape, float value) {
  Tensor t(shape);
  t.fill(value);
  return t;
}

float* Tensor::ensure_grad() {
  if (grad_.empty()) grad_.assign(data_.size(), 0.0f);
  return grad_.data();
}

void Tensor::zero_grad() {
  std::fill(grad_.begin(), grad_.end(), 0.0f);
}

void Tensor::fill(float value) {
  std::fill(data_.begin(), data_.end(), value);
}

bool Tensor::all_finite() const {
  for (float v : data_) {
    if (!std::isfinite(v)) return false;
  }
  return true;
}

double Tensor::mean() const {
  if (data_.empty()) return 0.0;
  double acc = 0.0;
  for (float v : data_) acc += v;
  return acc / static_cast<double>(data_.size());
}

}  // namespace qfpred
