// Copyright (c) 2026 qfpred contributors
// SPDX-License-Identifier: Apache-2.0

#include "qfpred/nn.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <limits>

namespace qfpred::nn {

namespace {

// ---------------------------------------------------------------------------
// GEMM kernels. Both accumulate into C and keep a fixed contraction order per
// output element, so results are bit-identical for any thread count. The
// contraction dimension is tiled so the streamed operand stays in L2.
// ---------------------------------------------------------------------------

constexpr int kTileT = 240;

// C(M x N) += A(M x T) * B(T x N); row-major with explicit leading dimensions.
// Four C rows share each streamed B row; per-element accumulation order stays
// t-ascending, so the result is independent of blocking and thread count.
void gemm_nn_acc(int M, int N, int T, const float* A, int lda, const float* B, int ldb,
                 float* C, int ldc) {
  const int nt = num_threads();
  for (int t0 = 0; t0 < T; t0 += kTileT) {
    const int t1 = std::min(T, t0 + kTileT);
    const int quads = M / 4;
#pragma omp parallel for num_threads(nt) schedule(static) if (nt > 1 && quads > 1)
    for (int q = 0; q < quads; ++q) {
      const int i = q * 4;
      float* c0 = C + static_cast<std::int64_t>(i) * ldc;
      float* c1 = c0 + ldc;
      float* c2 = c1 + ldc;
      float* c3 = c2 + ldc;
      const float* a0 = A + static_cast<std::int64_t>(i) * lda;
      const float* a1 = a0 + lda;
      const float* a2 = a1 + lda;
      const float* a3 = a2 + lda;
      for (int t = t0; t < t1; ++t) {
        const float w0 = a0[t], w1 = a1[t], w2 = a2[t], w3 = a3[t];
        const float* brow = B + static_cast<std::int64_t>(t) * ldb;
        for (int j = 0; j < N; ++j) {
          const float b = brow[j];
          c0[j] += w0 * b;
          c1[j] += w1 * b;
          c2[j] += w2 * b;
          c3[j] += w3 * b;
        }
      }
    }
    for (int i = quads * 4; i < M; ++i) {
      float* crow = C + static_cast<std::int64_t>(i) * ldc;
      const float* arow = A + static_cast<std::int64_t>(i) * lda;
      for (int t = t0; t < t1; ++t) {
        const float a = arow[t];
        const float* brow = B + static_cast<std::int64_t>(t) * ldb;
        for (int j = 0; j < N; ++j) crow[j] += a * brow[j];
      }
    }
  }
}

// C(M x N) += A(T x M)^T * B(T x N).
void gemm_tn_acc(int M, int N, int T, const float* A, int lda, const float* B, int ldb,
                 float* C, int ldc) {
  const int nt = num_threads();
  const int quads = M / 4;
#pragma omp parallel for num_threads(nt) schedule(static) if (nt > 1 && quads > 1)
  for (int q = 0; q < quads; ++q) {
    const int i = q * 4;
    float* c0 = C + static_cast<std::int64_t>(i) * ldc;
    float* c1 = c0 + ldc;
    float* c2 = c1 + ldc;
    float* c3 = c2 + ldc;
    for (int t = 0; t < T; ++t) {
      const float* acol = A + static_cast<std::int64_t>(t) * lda + i;
      const float w0 = acol[0], w1 = acol[1], w2 = acol[2], w3 = acol[3];
      const float* brow = B + static_cast<std::int64_t>(t) * ldb;
      for (int j = 0; j < N; ++j) {
        const float b = brow[j];
        c0[j] += w0 * b;
        c1[j] += w1 * b;
        c2[j] += w2 * b;
        c3[j] += w3 * b;
      }
    }
  }
  for (int i = quads * 4; i < M; ++i) {
    float* crow = C + static_cast<std::int64_t>(i) * ldc;
    for (int t = 0; t < T; ++t) {
      const float a = A[static_cast<std::int64_t>(t) * lda + i];
      const float* brow = B + static_cast<std::int64_t>(t) * ldb;
      for (int j = 0; j < N; ++j) crow[j] += a * brow[j];
    }
  }
}

// ---------------------------------------------------------------------------
// im2col over a strip of output rows [oy0, oy1). cols is (K x N_strip) with
// K = in_ch*k*k, N_strip = (oy1-oy0)*out_w. Out-of-bounds taps read as zero.
// ---------------------------------------------------------------------------

void im2col_strip(const float* in, int in_ch, int H, int W, int k, int stride, int pad,
                  int out_w, int oy0, int oy1, float* cols) {
  const int n_strip = (oy1 - oy0) * out_w;
  for (int c = 0; c < in_ch; ++c) {
    const float* plane = in + static_cast<std::int64_t>(c) * H * W;
    for (int ki = 0; ki < k; ++ki) {
      for (int kj = 0; kj < k; ++kj) {
        float* row = cols + (static_cast<std::int64_t>(c) * k * k + ki * k + kj) * n_strip;
        std::int64_t idx = 0;
        for (int oy = oy0; oy < oy1; ++oy) {
          const int iy = oy * stride + ki - pad;
          if (iy < 0 || iy >= H) {
            for (int ox = 0; ox < out_w; ++ox) row[idx++] = 0.0f;
            continue;
          }
          const float* src = plane + static_cast<std::int64_t>(iy) * W;
          for (int ox = 0; ox < out_w; ++ox) {
            const int ix = ox * stride + kj - pad;
            row[idx++] = (ix < 0 || ix >= W) ? 0.0f : src[ix];
          }
        }
      }
    }
  }
}

// Scatter-add of a cols strip back into the input gradient.
void col2im_strip(const float* cols, int in_ch, int H, int W, int k, int stride, int pad,
                  int out_w, int oy0, int oy1, float* gin) {
  const int n_strip = (oy1 - oy0) * out_w;
  for (int c = 0; c < in_ch; ++c) {
    float* plane = gin + static_cast<std::int64_t>(c) * H * W;
    for (int ki = 0; ki < k; ++ki) {
      for (int kj = 0; kj < k; ++kj) {
        const float* row = cols + (static_cast<std::int64_t>(c) * k * k + ki * k + kj) * n_strip;
        std::int64_t idx = 0;
        for (int oy = oy0; oy < oy1; ++oy) {
          const int iy = oy * stride + ki - pad;
          if (iy < 0 || iy >= H) {
            idx += out_w;
            continue;
          }
          float* dst = plane + static_cast<std::int64_t>(iy) * W;
          for (int ox = 0; ox < out_w; ++ox) {
            const int ix = ox * stride + kj - pad;
            if (ix >= 0 && ix < W) dst[ix] += row[idx];
            ++idx;
          }
        }
      }
    }
  }
}

// Strip height keeping the im2col buffer near 4 MB.
int strip_rows(int K, int out_w, int out_h) {
  const std::int64_t budget = 4'000'000 / sizeof(float);
  std::int64_t rows = budget / (static_cast<std::int64_t>(K) * out_w);
  if (rows < 1) rows = 1;
  if (rows > out_h) rows = out_h;
  return static_cast<int>(rows);
}

void check_conv_args(const Tensor& input, const Tensor& weight, const Tensor& bias,
                     int stride, int pad) {
  const Shape4& ws = weight.shape();
  if (ws.h != ws.w) {
    throw DimensionError("conv2d: kernel must be square, got " + to_string(ws));
  }
  if (input.shape().c != ws.c) {
    throw DimensionError("conv2d: input channel axis is " + std::to_string(input.shape().c) +
                         " but weight expects " + std::to_string(ws.c));
  }
  if (bias.shape().c != ws.n || bias.shape().numel() != ws.n) {
    throw DimensionError("conv2d: bias channel axis must be " + std::to_string(ws.n) +
                         ", got " + to_string(bias.shape()));
  }
  if (stride < 1) throw RangeError("conv2d: stride must be positive");
  if (pad < 0) throw RangeError("conv2d: padding must be non-negative");
}

}  // namespace

Shape4 conv2d_out_shape(const Shape4& in, int out_ch, int k, int stride, int pad) {
  const int oh = (in.h + 2 * pad - k) / stride + 1;
  const int ow = (in.w + 2 * pad - k) / stride + 1;
  if (in.h + 2 * pad < k || oh < 1) {
    throw DimensionError("conv2d: height " + std::to_string(in.h) + " too small for kernel " +
                         std::to_string(k) + " with padding " + std::to_string(pad));
  }
  if (in.w + 2 * pad < k || ow < 1) {
    throw DimensionError("conv2d: width " + std::to_string(in.w) + " too small for kernel " +
                         std::to_string(k) + " with padding " + std::to_string(pad));
  }
  return Shape4{in.n, out_ch, oh, ow};
}

Tensor conv2d_forward(const Tensor& input, const Tensor& weight, const Tensor& bias,
                      int stride, int pad) {
  check_conv_args(input, weight, bias, stride, pad);
  const Shape4& is = input.shape();
  const Shape4& ws = weight.shape();
  const int k = ws.h;
  const Shape4 os = conv2d_out_shape(is, ws.n, k, stride, pad);
  const int K = ws.c * k * k;
  const std::int64_t out_hw = static_cast<std::int64_t>(os.h) * os.w;

  Tensor out(os);
  // 1x1/stride-1/no-pad convs skip im2col: the input plane already is the
  // cols matrix.
  const bool direct = (k == 1 && stride == 1 && pad == 0);
  std::vector<float> cols;
  const int rows = direct ? os.h : strip_rows(K, os.w, os.h);
  if (!direct) cols.resize(static_cast<std::size_t>(K) * rows * os.w);

  for (int n = 0; n < is.n; ++n) {
    const float* in_n = input.data() + input.index(n, 0, 0, 0);
    float* out_n = out.data() + out.index(n, 0, 0, 0);
    // seed with bias
    for (int oc = 0; oc < os.c; ++oc) {
      const float b = bias.data()[oc];
      float* row = out_n + oc * out_hw;
      for (std::int64_t j = 0; j < out_hw; ++j) row[j] = b;
    }
    for (int oy0 = 0; oy0 < os.h; oy0 += rows) {
      const int oy1 = std::min(os.h, oy0 + rows);
      const int n_strip = (oy1 - oy0) * os.w;
      const float* cols_ptr;
      if (direct) {
        cols_ptr = in_n;  // K = in_ch, strip covers the whole plane
      } else {
        im2col_strip(in_n, ws.c, is.h, is.w, k, stride, pad, os.w, oy0, oy1, cols.data());
        cols_ptr = cols.data();
      }
      gemm_nn_acc(os.c, n_strip, K, weight.data(), K, cols_ptr, n_strip,
                  out_n + static_cast<std::int64_t>(oy0) * os.w, static_cast<int>(out_hw));
    }
  }
  return out;
}

void conv2d_backward(const Tensor& input, const Tensor& weight, const Tensor& grad_out,
                     int stride, int pad, Tensor* grad_input, Tensor* grad_weight,
                     Tensor* grad_bias) {
  const Shape4& is = input.shape();
  const Shape4& ws = weight.shape();
  const int k = ws.h;
  const Shape4 os = grad_out.shape();
  const int K = ws.c * k * k;
  const std::int64_t out_hw = static_cast<std::int64_t>(os.h) * os.w;

  if (grad_bias) {
    float* gb = grad_bias->data();
    for (int n = 0; n < os.n; ++n) {
      for (int oc = 0; oc < os.c; ++oc) {
        const float* row = grad_out.data() + grad_out.index(n, oc, 0, 0);
        double acc = 0.0;
        for (std::int64_t j = 0; j < out_hw; ++j) acc += row[j];
        gb[oc] += static_cast<float>(acc);
      }
    }
  }

  const bool direct = (k == 1 && stride == 1 && pad == 0);
  const int rows = direct ? os.h : strip_rows(K, os.w, os.h);
  std::vector<float> cols, colsT, gcols;
  if (!direct) cols.resize(static_cast<std::size_t>(K) * rows * os.w);
  if (grad_weight) colsT.resize(static_cast<std::size_t>(K) * rows * os.w);
  if (grad_input && !direct) gcols.resize(static_cast<std::size_t>(K) * rows * os.w);

  for (int n = 0; n < os.n; ++n) {
    const float* in_n = input.data() + input.index(n, 0, 0, 0);
    const float* gout_n = grad_out.data() + grad_out.index(n, 0, 0, 0);
    float* gin_n = grad_input ? grad_input->data() + grad_input->index(n, 0, 0, 0) : nullptr;

    for (int oy0 = 0; oy0 < os.h; oy0 += rows) {
      const int oy1 = std::min(os.h, oy0 + rows);
      const int n_strip = (oy1 - oy0) * os.w;
      const float* gout_strip = gout_n + static_cast<std::int64_t>(oy0) * os.w;

      const float* cols_ptr = nullptr;
      if (grad_weight || (grad_input && direct)) {
        if (direct) {
          cols_ptr = in_n;
        } else {
          im2col_strip(in_n, ws.c, is.h, is.w, k, stride, pad, os.w, oy0, oy1, cols.data());
          cols_ptr = cols.data();
        }
      }

      if (grad_weight) {
        // GW(out_ch x K) += gout_strip(out_ch x n_strip) * cols^T(n_strip x K)
        const int nt = num_threads();
#pragma omp parallel for num_threads(nt) schedule(static) if (nt > 1)
        for (int t = 0; t < n_strip; ++t) {
          for (int r = 0; r < K; ++r) {
            colsT[static_cast<std::size_t>(t) * K + r] =
                cols_ptr[static_cast<std::size_t>(r) * n_strip + t];
          }
        }
        gemm_nn_acc(os.c, K, n_strip, gout_strip, static_cast<int>(out_hw), colsT.data(), K,
                    grad_weight->data(), K);
      }

      if (grad_input) {
        if (direct) {
          // gin(K x HW) += W^T(K x out_ch) * gout(out_ch x HW)
          gemm_tn_acc(K, n_strip, os.c, weight.data(), K, gout_strip, static_cast<int>(out_hw),
                      gin_n + static_cast<std::int64_t>(oy0) * os.w,
                      static_cast<int>(static_cast<std::int64_t>(is.h) * is.w));
        } else {
          std::fill(gcols.begin(), gcols.begin() + static_cast<std::size_t>(K) * n_strip, 0.0f);
          gemm_tn_acc(K, n_strip, os.c, weight.data(), K, gout_strip, static_cast<int>(out_hw),
                      gcols.data(), n_strip);
          col2im_strip(gcols.data(), ws.c, is.h, is.w, k, stride, pad, os.w, oy0, oy1, gin_n);
        }
      }
    }
  }
}

Tensor maxpool2_forward(const Tensor& input, std::vector<std::int64_t>* argmax) {
  const Shape4& is = input.shape();
  if (is.h < 2 || is.w < 2) {
    throw DimensionError("maxpool2: spatial extents must be >= 2, got " + to_string(is));
  }
  const Shape4 os{is.n, is.c, is.h / 2, is.w / 2};
  Tensor out(os);
  if (argmax) argmax->assign(static_cast<std::size_t>(os.numel()), 0);

  const int planes = is.n * is.c;
  const int nt = num_threads();
#pragma omp parallel for num_threads(nt) schedule(static) if (nt > 1)
  for (int p = 0; p < planes; ++p) {
    const float* in_p = input.data() + static_cast<std::int64_t>(p) * is.h * is.w;
    float* out_p = out.data() + static_cast<std::int64_t>(p) * os.h * os.w;
    for (int oy = 0; oy < os.h; ++oy) {
      for (int ox = 0; ox < os.w; ++ox) {
        const int iy = oy * 2, ix = ox * 2;
        // first maximum in row-major window order wins ties
        std::int64_t best = static_cast<std::int64_t>(iy) * is.w + ix;
        float best_v = in_p[best];
        const std::int64_t cand[3] = {best + 1, best + is.w, best + is.w + 1};
        for (std::int64_t c : cand) {
          if (in_p[c] > best_v) {
            best_v = in_p[c];
            best = c;
          }
        }
        out_p[static_cast<std::int64_t>(oy) * os.w + ox] = best_v;
        if (argmax) {
          (*argmax)[static_cast<std::int64_t>(p) * os.h * os.w + oy * os.w + ox] =
              static_cast<std::int64_t>(p) * is.h * is.w + best;
        }
      }
    }
  }
  return out;
}

Tensor maxpool2_backward(const Shape4& in_shape, const std::vector<std::int64_t>& argmax,
                         const Tensor& grad_out) {
  Tensor gin(in_shape);
  const float* go = grad_out.data();
  float* gi = gin.data();
  for (std::size_t i = 0; i < argmax.size(); ++i) gi[argmax[i]] += go[i];
  return gin;
}

Tensor relu_forward(const Tensor& input) {
  Tensor out(input.shape());
  const float* in = input.data();
  float* o = out.data();
  const std::int64_t n = input.size();
  for (std::int64_t i = 0; i < n; ++i) o[i] = in[i] > 0.0f ? in[i] : 0.0f;
  return out;
}

Tensor relu_backward(const Tensor& input, const Tensor& grad_out) {
  Tensor gin(input.shape());
  const float* in = input.data();
  const float* go = grad_out.data();
  float* gi = gin.data();
  const std::int64_t n = input.size();
  for (std::int64_t i = 0; i < n; ++i) gi[i] = in[i] > 0.0f ? go[i] : 0.0f;
  return gin;
}

Tensor sigmoid_forward(const Tensor& input) {
  Tensor out(input.shape());
  const float* in = input.data();
  float* o = out.data();
  const std::int64_t n = input.size();
  for (std::int64_t i = 0; i < n; ++i) {
    // evaluated in double so the output stays strictly inside (0, 1)
    o[i] = static_cast<float>(1.0 / (1.0 + std::exp(-static_cast<double>(in[i]))));
  }
  return out;
}

Tensor sigmoid_backward(const Tensor& output, const Tensor& grad_out) {
  Tensor gin(output.shape());
  const float* o = output.data();
  const float* go = grad_out.data();
  float* gi = gin.data();
  const std::int64_t n = output.size();
  for (std::int64_t i = 0; i < n; ++i) gi[i] = go[i] * o[i] * (1.0f - o[i]);
  return gin;
}

double mse_loss(const Tensor& pred, const Tensor& target, Tensor* grad_pred) {
  if (!(pred.shape() == target.shape())) {
    throw DimensionError("mse_loss: shape mismatch " + to_string(pred.shape()) + " vs " +
                         to_string(target.shape()));
  }
  const std::int64_t n = pred.size();
  if (n == 0) throw DimensionError("mse_loss: empty tensors");
  const float* p = pred.data();
  const float* t = target.data();
  double acc = 0.0;
  for (std::int64_t i = 0; i < n; ++i) {
    const double d = static_cast<double>(p[i]) - t[i];
    acc += d * d;
  }
  if (grad_pred) {
    float* g = grad_pred->data();
    const float inv = 2.0f / static_cast<float>(n);
    for (std::int64_t i = 0; i < n; ++i) g[i] += inv * (p[i] - t[i]);
  }
  return acc / static_cast<double>(n);
}

double l1_loss(const Tensor& pred, const Tensor& target, Tensor* grad_pred) {
  if (!(pred.shape() == target.shape())) {
    throw DimensionError("l1_loss: shape mismatch " + to_string(pred.shape()) + " vs " +
                         to_string(target.shape()));
  }
  const std::int64_t n = pred.size();
  if (n == 0) throw DimensionError("l1_loss: empty tensors");
  const float* p = pred.data();
  const float* t = target.data();
  double acc = 0.0;
  for (std::int64_t i = 0; i < n; ++i) acc += std::abs(static_cast<double>(p[i]) - t[i]);
  if (grad_pred) {
    float* g = grad_pred->data();
    const float inv = 1.0f / static_cast<float>(n);
    for (std::int64_t i = 0; i < n; ++i) {
      const float d = p[i] - t[i];
      g[i] += d > 0.0f ? inv : (d < 0.0f ? -inv : 0.0f);
    }
  }
  return acc / static_cast<double>(n);
}

double cross_entropy_loss(const Tensor& logits, const std::vector<int>& targets,
                          Tensor* grad_logits) {
  const Shape4& s = logits.shape();
  const std::int64_t cells = static_cast<std::int64_t>(s.n) * s.h * s.w;
  if (static_cast<std::int64_t>(targets.size()) != cells) {
    throw DimensionError("cross_entropy_loss: expected " + std::to_string(cells) +
                         " targets, got " + std::to_string(targets.size()));
  }
  const std::int64_t plane = static_cast<std::int64_t>(s.h) * s.w;
  double acc = 0.0;
  std::vector<double> probs(s.c);
  std::int64_t cell = 0;
  for (int n = 0; n < s.n; ++n) {
    for (int y = 0; y < s.h; ++y) {
      for (int x = 0; x < s.w; ++x, ++cell) {
        const int t = targets[cell];
        if (t < 0 || t >= s.c) {
          throw RangeError("cross_entropy_loss: class index " + std::to_string(t) +
                           " outside [0, " + std::to_string(s.c) + ")");
        }
        const std::int64_t base = logits.index(n, 0, y, x);
        double mx = -std::numeric_limits<double>::infinity();
        for (int c = 0; c < s.c; ++c) {
          mx = std::max(mx, static_cast<double>(logits.data()[base + c * plane]));
        }
        double sum = 0.0;
        for (int c = 0; c < s.c; ++c) {
          probs[c] = std::exp(static_cast<double>(logits.data()[base + c * plane]) - mx);
          sum += probs[c];
        }
        acc += -(static_cast<double>(logits.data()[base + t * plane]) - mx - std::log(sum));
        if (grad_logits) {
          const double inv = 1.0 / static_cast<double>(cells);
          for (int c = 0; c < s.c; ++c) {
            const double soft = probs[c] / sum;
            grad_logits->data()[base + c * plane] +=
                static_cast<float>((soft - (c == t ? 1.0 : 0.0)) * inv);
          }
        }
      }
    }
  }
  return acc / static_cast<double>(cells);
}

// ---------------------------------------------------------------------------
// ParamStore / optimizer
// ---------------------------------------------------------------------------

void ParamStore::add(const std::string& name, Tensor* tensor, bool trainable) {
  if (index_.count(name)) throw Error("ParamStore: duplicate parameter name " + name);
  index_[name] = params_.size();
  params_.push_back(ParamRef{name, tensor, trainable});
}

ParamRef* ParamStore::find(const std::string& name) {
  auto it = index_.find(name);
  return it == index_.end() ? nullptr : &params_[it->second];
}

std::int64_t ParamStore::total_floats() const {
  std::int64_t total = 0;
  for (const auto& p : params_) total += p.tensor->size();
  return total;
}

void ParamStore::zero_grads() {
  for (auto& p : params_) {
    if (p.trainable) p.tensor->zero_grad();
  }
}

void optimizer_step(ParamStore& params, const OptimizerConfig& cfg) {
  params.bump_step();
  const std::int64_t t = params.step_count();
  for (auto& p : params.params()) {
    if (!p.trainable) continue;
    Tensor& w = *p.tensor;
    if (!w.has_grad()) {
      throw Error("optimizer_step: parameter '" + p.name + "' has no gradient");
    }
    auto& st = params.opt_state()[p.name];
    const std::size_t n = static_cast<std::size_t>(w.size());
    float* wd = w.data();
    float* gd = w.grad();

    if (cfg.kind == OptimizerKind::adam) {
      if (st.m.size() != n) st.m.assign(n, 0.0f);
      if (st.v.size() != n) st.v.assign(n, 0.0f);
      const double bc1 = 1.0 - std::pow(static_cast<double>(cfg.beta1), static_cast<double>(t));
      const double bc2 = 1.0 - std::pow(static_cast<double>(cfg.beta2), static_cast<double>(t));
      for (std::size_t i = 0; i < n; ++i) {
        const float g = gd[i] + cfg.weight_decay * wd[i];
        st.m[i] = cfg.beta1 * st.m[i] + (1.0f - cfg.beta1) * g;
        st.v[i] = cfg.beta2 * st.v[i] + (1.0f - cfg.beta2) * g * g;
        const double mhat = st.m[i] / bc1;
        const double vhat = st.v[i] / bc2;
        wd[i] -= static_cast<float>(cfg.lr * mhat / (std::sqrt(vhat) + cfg.eps));
      }
    } else {
      if (st.m.size() != n) st.m.assign(n, 0.0f);
      for (std::size_t i = 0; i < n; ++i) {
        const float g = gd[i] + cfg.weight_decay * wd[i];
        st.m[i] = cfg.momentum * st.m[i] + g;
        wd[i] -= cfg.lr * st.m[i];
      }
    }
  }
  for (auto& p : params.params()) {
    if (p.trainable) p.tensor->zero_grad();
  }
}

// ---------------------------------------------------------------------------
// Layer objects
// ---------------------------------------------------------------------------

Conv2d::Conv2d(int in_ch, int out_ch, int k, int stride, int pad)
    : in_ch_(in_ch), out_ch_(out_ch), k_(k), stride_(stride), pad_(pad) {
  weight = Tensor(Shape4{out_ch, in_ch, k, k}, true);
  bias = Tensor(Shape4{1, out_ch, 1, 1}, true);
}

void Conv2d::init_he(Rng& rng) {
  const double std_dev = std::sqrt(2.0 / (static_cast<double>(in_ch_) * k_ * k_));
  float* w = weight.data();
  for (std::int64_t i = 0; i < weight.size(); ++i) {
    w[i] = static_cast<float>(rng.normal() * std_dev);
  }
  bias.fill(0.0f);
}

Tensor Conv2d::forward(const Tensor& input, Mode) {
  cached_input_ = input;
  return conv2d_forward(input, weight, bias, stride_, pad_);
}

Tensor Conv2d::infer(const Tensor& input) const {
  return conv2d_forward(input, weight, bias, stride_, pad_);
}

Tensor Conv2d::backward(const Tensor& grad_out) {
  Tensor gin(cached_input_.shape());
  if (frozen) {
    conv2d_backward(cached_input_, weight, grad_out, stride_, pad_, &gin, nullptr, nullptr);
    return gin;
  }
  weight.ensure_grad();
  bias.ensure_grad();
  // grad tensors alias the parameter grads through temporary views
  Tensor gw(weight.shape());
  Tensor gb(bias.shape());
  std::memcpy(gw.data(), weight.grad(), sizeof(float) * weight.size());
  std::memcpy(gb.data(), bias.grad(), sizeof(float) * bias.size());
  conv2d_backward(cached_input_, weight, grad_out, stride_, pad_, &gin, &gw, &gb);
  std::memcpy(weight.ensure_grad(), gw.data(), sizeof(float) * weight.size());
  std::memcpy(bias.ensure_grad(), gb.data(), sizeof(float) * bias.size());
  return gin;
}

void Conv2d::register_params(ParamStore& store, const std::string& prefix) {
  store.add(prefix + ".weight", &weight, true);
  store.add(prefix + ".bias", &bias, true);
}

Shape4 Conv2d::out_shape(const Shape4& in) const {
  return conv2d_out_shape(in, out_ch_, k_, stride_, pad_);
}

BatchNorm2d::BatchNorm2d(int channels, float momentum, float epsilon)
    : channels_(channels), momentum_(momentum), epsilon_(epsilon) {
  scale = Tensor(Shape4{1, channels, 1, 1}, true);
  shift = Tensor(Shape4{1, channels, 1, 1}, true);
  running_mean = Tensor(Shape4{1, channels, 1, 1});
  running_var = Tensor(Shape4{1, channels, 1, 1});
  scale.fill(1.0f);
  running_var.fill(1.0f);
}

Tensor BatchNorm2d::forward(const Tensor& input, Mode mode) {
  const Shape4& s = input.shape();
  if (s.c != channels_) {
    throw DimensionError("batchnorm: channel axis is " + std::to_string(s.c) + ", expected " +
                         std::to_string(channels_));
  }
  Tensor out(s);
  const std::int64_t plane = static_cast<std::int64_t>(s.h) * s.w;
  const std::int64_t per_ch = static_cast<std::int64_t>(s.n) * plane;

  if (mode == Mode::train) {
    if (per_ch == 0) {
      throw DimensionError("batchnorm: batch statistics undefined for empty batch/spatial axes");
    }
    cached_input_ = input;
    cached_train_mode_ = true;
    batch_mean_.assign(channels_, 0.0);
    batch_inv_std_.assign(channels_, 0.0);
    for (int c = 0; c < channels_; ++c) {
      double mean = 0.0;
      for (int n = 0; n < s.n; ++n) {
        const float* p = input.data() + input.index(n, c, 0, 0);
        for (std::int64_t i = 0; i < plane; ++i) mean += p[i];
      }
      mean /= static_cast<double>(per_ch);
      double var = 0.0;
      for (int n = 0; n < s.n; ++n) {
        const float* p = input.data() + input.index(n, c, 0, 0);
        for (std::int64_t i = 0; i < plane; ++i) {
          const double d = p[i] - mean;
          var += d * d;
        }
      }
      var /= static_cast<double>(per_ch);
      batch_mean_[c] = mean;
      batch_inv_std_[c] = 1.0 / std::sqrt(var + epsilon_);

      running_mean.data()[c] = static_cast<float>((1.0 - momentum_) * running_mean.data()[c] +
                                                  momentum_ * mean);
      running_var.data()[c] = static_cast<float>((1.0 - momentum_) * running_var.data()[c] +
                                                 momentum_ * var);

      const double g = scale.data()[c], b = shift.data()[c];
      const double inv = batch_inv_std_[c];
      for (int n = 0; n < s.n; ++n) {
        const float* p = input.data() + input.index(n, c, 0, 0);
        float* o = out.data() + out.index(n, c, 0, 0);
        for (std::int64_t i = 0; i < plane; ++i) {
          o[i] = static_cast<float>((p[i] - mean) * inv * g + b);
        }
      }
    }
  } else {
    cached_input_ = input;
    cached_train_mode_ = false;
    for (int c = 0; c < channels_; ++c) {
      const double inv = 1.0 / std::sqrt(static_cast<double>(running_var.data()[c]) + epsilon_);
      const double g = scale.data()[c], b = shift.data()[c];
      const double m = running_mean.data()[c];
      for (int n = 0; n < s.n; ++n) {
        const float* p = input.data() + input.index(n, c, 0, 0);
        float* o = out.data() + out.index(n, c, 0, 0);
        for (std::int64_t i = 0; i < plane; ++i) {
          o[i] = static_cast<float>((p[i] - m) * inv * g + b);
        }
      }
    }
  }
  return out;
}

Tensor BatchNorm2d::infer(const Tensor& input) const {
  const Shape4& s = input.shape();
  if (s.c != channels_) {
    throw DimensionError("batchnorm: channel axis is " + std::to_string(s.c) + ", expected " +
                         std::to_string(channels_));
  }
  Tensor out(s);
  const std::int64_t plane = static_cast<std::int64_t>(s.h) * s.w;
  for (int c = 0; c < channels_; ++c) {
    const double inv = 1.0 / std::sqrt(static_cast<double>(running_var.data()[c]) + epsilon_);
    const double g = scale.data()[c], b = shift.data()[c];
    const double m = running_mean.data()[c];
    for (int n = 0; n < s.n; ++n) {
      const float* p = input.data() + input.index(n, c, 0, 0);
      float* o = out.data() + out.index(n, c, 0, 0);
      for (std::int64_t i = 0; i < plane; ++i) {
        o[i] = static_cast<float>((p[i] - m) * inv * g + b);
      }
    }
  }
  return out;
}

Tensor BatchNorm2d::backward(const Tensor& grad_out) {
  const Shape4& s = cached_input_.shape();
  Tensor gin(s);
  const std::int64_t plane = static_cast<std::int64_t>(s.h) * s.w;
  const std::int64_t per_ch = static_cast<std::int64_t>(s.n) * plane;

  if (!frozen) {
    scale.ensure_grad();
    shift.ensure_grad();
  }

  if (!cached_train_mode_) {
    // eval mode is a per-channel affine map
    for (int c = 0; c < channels_; ++c) {
      const double inv = 1.0 / std::sqrt(static_cast<double>(running_var.data()[c]) + epsilon_);
      const float gi = static_cast<float>(scale.data()[c] * inv);
      const float m = running_mean.data()[c];
      double gsum = 0.0, gxhat = 0.0;
      for (int n = 0; n < s.n; ++n) {
        const float* go = grad_out.data() + grad_out.index(n, c, 0, 0);
        const float* x = cached_input_.data() + cached_input_.index(n, c, 0, 0);
        float* g = gin.data() + gin.index(n, c, 0, 0);
        for (std::int64_t i = 0; i < plane; ++i) {
          g[i] = go[i] * gi;
          gsum += go[i];
          gxhat += go[i] * (x[i] - m) * inv;
        }
      }
      if (!frozen) {
        scale.grad()[c] += static_cast<float>(gxhat);
        shift.grad()[c] += static_cast<float>(gsum);
      }
    }
    return gin;
  }

  for (int c = 0; c < channels_; ++c) {
    const double mean = batch_mean_[c];
    const double inv = batch_inv_std_[c];
    const double g = scale.data()[c];
    // two reduction passes, then the combined train-mode formula
    double sum_go = 0.0, sum_go_xhat = 0.0;
    for (int n = 0; n < s.n; ++n) {
      const float* go = grad_out.data() + grad_out.index(n, c, 0, 0);
      const float* x = cached_input_.data() + cached_input_.index(n, c, 0, 0);
      for (std::int64_t i = 0; i < plane; ++i) {
        sum_go += go[i];
        sum_go_xhat += go[i] * (x[i] - mean) * inv;
      }
    }
    if (!frozen) {
      scale.grad()[c] += static_cast<float>(sum_go_xhat);
      shift.grad()[c] += static_cast<float>(sum_go);
    }
    const double inv_m = 1.0 / static_cast<double>(per_ch);
    for (int n = 0; n < s.n; ++n) {
      const float* go = grad_out.data() + grad_out.index(n, c, 0, 0);
      const float* x = cached_input_.data() + cached_input_.index(n, c, 0, 0);
      float* gi = gin.data() + gin.index(n, c, 0, 0);
      for (std::int64_t i = 0; i < plane; ++i) {
        const double xhat = (x[i] - mean) * inv;
        gi[i] = static_cast<float>(g * inv *
                                   (go[i] - inv_m * sum_go - xhat * inv_m * sum_go_xhat));
      }
    }
  }
  return gin;
}

void BatchNorm2d::register_params(ParamStore& store, const std::string& prefix) {
  store.add(prefix + ".scale", &scale, true);
  store.add(prefix + ".shift", &shift, true);
  store.add(prefix + ".running_mean", &running_mean, false);
  store.add(prefix + ".running_var", &running_var, false);
}

Tensor ReLU::forward(const Tensor& input, Mode) {
  cached_input_ = input;
  return relu_forward(input);
}

Tensor ReLU::infer(const Tensor& input) const { return relu_forward(input); }

Tensor ReLU::backward(const Tensor& grad_out) {
  return relu_backward(cached_input_, grad_out);
}

Tensor Sigmoid::forward(const Tensor& input, Mode) {
  cached_output_ = sigmoid_forward(input);
  return cached_output_;
}

Tensor Sigmoid::infer(const Tensor& input) const { return sigmoid_forward(input); }

Tensor Sigmoid::backward(const Tensor& grad_out) {
  return sigmoid_backward(cached_output_, grad_out);
}

Tensor MaxPool2::forward(const Tensor& input, Mode) {
  cached_in_shape_ = input.shape();
  return maxpool2_forward(input, &argmax_);
}

Tensor MaxPool2::infer(const Tensor& input) const {
  return maxpool2_forward(input, nullptr);
}

Tensor MaxPool2::backward(const Tensor& grad_out) {
  return maxpool2_backward(cached_in_shape_, argmax_, grad_out);
}

Shape4 MaxPool2::out_shape(const Shape4& in) const {
  if (in.h < 2 || in.w < 2) {
    throw DimensionError("maxpool2: spatial extents must be >= 2, got " + to_string(in));
  }
  return Shape4{in.n, in.c, in.h / 2, in.w / 2};
}

}  // namespace qfpred::nn
