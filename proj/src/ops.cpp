#include "ops.hpp"

#include <cblas.h>

#include <algorithm>
#include <cmath>
#include <cstring>

#include "error.hpp"

namespace dssc::ops {

namespace {

// Views a [C,H,W] tensor as a single-sample batch so every spatial op only
// has to deal with the 4D layout. Returns {n, c, h, w, rank}.
struct Nchw {
  int n, c, h, w;
  int rank;
};

Nchw as_nchw(const std::vector<int>& shape, const char* op) {
  if (shape.size() == 3) return {1, shape[0], shape[1], shape[2], 3};
  if (shape.size() == 4) return {shape[0], shape[1], shape[2], shape[3], 4};
  throw Error(ErrorCode::shape_mismatch,
              std::string(op) + ": expected a [C,H,W] or [N,C,H,W] input, got " +
                  Tensor<float>::shape_str(shape));
}

std::vector<int> spatial_out_shape(const Nchw& in, int c_out, int oh, int ow) {
  if (in.rank == 3) return {c_out, oh, ow};
  return {in.n, c_out, oh, ow};
}

struct ConvGeom {
  int out_h, out_w;
  int pad_top, pad_left;
};

ConvGeom conv_geometry(int h, int w, int kh, int kw, Padding pad) {
  if (pad == Padding::same) {
    // Total padding kh-1 / kw-1, split with the smaller half on top/left.
    return {h, w, (kh - 1) / 2, (kw - 1) / 2};
  }
  if (kh > h || kw > w) {
    throw Error(ErrorCode::shape_mismatch,
                "conv2d: kernel " + std::to_string(kh) + "x" + std::to_string(kw) +
                    " exceeds unpadded input " + std::to_string(h) + "x" +
                    std::to_string(w));
  }
  return {h - kh + 1, w - kw + 1, 0, 0};
}

// col has one row per (c_in, ki, kj) and one column per output position.
template <typename T>
void im2col(const T* x, int c_in, int h, int w, int kh, int kw,
            const ConvGeom& g, T* col) {
  const int out_hw = g.out_h * g.out_w;
  for (int c = 0; c < c_in; ++c) {
    for (int ki = 0; ki < kh; ++ki) {
      for (int kj = 0; kj < kw; ++kj) {
        T* row = col + (static_cast<std::int64_t>(c) * kh * kw + ki * kw + kj) *
                           out_hw;
        for (int oh = 0; oh < g.out_h; ++oh) {
          const int ih = oh - g.pad_top + ki;
          if (ih < 0 || ih >= h) {
            std::fill(row + oh * g.out_w, row + (oh + 1) * g.out_w, T(0));
            continue;
          }
          const T* src = x + (static_cast<std::int64_t>(c) * h + ih) * w;
          for (int ow = 0; ow < g.out_w; ++ow) {
            const int iw = ow - g.pad_left + kj;
            row[oh * g.out_w + ow] = (iw < 0 || iw >= w) ? T(0) : src[iw];
          }
        }
      }
    }
  }
}

template <typename T>
void col2im_add(const T* col, int c_in, int h, int w, int kh, int kw,
                const ConvGeom& g, T* x) {
  const int out_hw = g.out_h * g.out_w;
  for (int c = 0; c < c_in; ++c) {
    for (int ki = 0; ki < kh; ++ki) {
      for (int kj = 0; kj < kw; ++kj) {
        const T* row = col + (static_cast<std::int64_t>(c) * kh * kw + ki * kw +
                              kj) *
                                 out_hw;
        for (int oh = 0; oh < g.out_h; ++oh) {
          const int ih = oh - g.pad_top + ki;
          if (ih < 0 || ih >= h) continue;
          T* dst = x + (static_cast<std::int64_t>(c) * h + ih) * w;
          for (int ow = 0; ow < g.out_w; ++ow) {
            const int iw = ow - g.pad_left + kj;
            if (iw >= 0 && iw < w) dst[iw] += row[oh * g.out_w + ow];
          }
        }
      }
    }
  }
}

template <typename T>
void check_conv_args(const Tensor<T>& x, const Tensor<T>& kernel,
                     const Tensor<T>* bias, const Nchw& in) {
  if (kernel.ndim() != 4) {
    throw Error(ErrorCode::shape_mismatch,
                "conv2d: kernel must be [C_out,C_in,kh,kw], got " +
                    kernel.shape_str());
  }
  if (kernel.dim(1) != in.c) {
    throw Error(ErrorCode::shape_mismatch,
                "conv2d: input has " + std::to_string(in.c) +
                    " channels but kernel " + kernel.shape_str() + " expects " +
                    std::to_string(kernel.dim(1)));
  }
  if (bias && !(bias->ndim() == 1 && bias->dim(0) == kernel.dim(0))) {
    throw Error(ErrorCode::shape_mismatch,
                "conv2d: bias must be [" + std::to_string(kernel.dim(0)) +
                    "], got " + bias->shape_str());
  }
  (void)x;
}

template <typename T>
void check_channel_param(const Tensor<T>& p, int c, const char* op,
                         const char* name) {
  if (!(p.ndim() == 1 && p.dim(0) == c)) {
    throw Error(ErrorCode::shape_mismatch,
                std::string(op) + ": " + name + " must be [" +
                    std::to_string(c) + "], got " + p.shape_str());
  }
}

}  // namespace

void gemm(bool trans_a, bool trans_b, int m, int n, int k, float alpha,
          const float* a, int lda, const float* b, int ldb, float beta,
          float* c, int ldc) {
  cblas_sgemm(CblasRowMajor, trans_a ? CblasTrans : CblasNoTrans,
              trans_b ? CblasTrans : CblasNoTrans, m, n, k, alpha, a, lda, b,
              ldb, beta, c, ldc);
}

void gemm(bool trans_a, bool trans_b, int m, int n, int k, double alpha,
          const double* a, int lda, const double* b, int ldb, double beta,
          double* c, int ldc) {
  cblas_dgemm(CblasRowMajor, trans_a ? CblasTrans : CblasNoTrans,
              trans_b ? CblasTrans : CblasNoTrans, m, n, k, alpha, a, lda, b,
              ldb, beta, c, ldc);
}

template <typename T>
Tensor<T> conv2d(const Tensor<T>& x, const Tensor<T>& kernel,
                 const Tensor<T>& bias, Padding pad) {
  const Nchw in = as_nchw(x.shape(), "conv2d");
  check_conv_args(x, kernel, &bias, in);
  const int c_out = kernel.dim(0);
  const int kh = kernel.dim(2), kw = kernel.dim(3);
  const ConvGeom g = conv_geometry(in.h, in.w, kh, kw, pad);
  const int out_hw = g.out_h * g.out_w;
  const int k_dim = in.c * kh * kw;

  Tensor<T> y(spatial_out_shape(in, c_out, g.out_h, g.out_w));
  std::vector<T> col(static_cast<std::size_t>(k_dim) * out_hw);
  const std::int64_t x_stride = static_cast<std::int64_t>(in.c) * in.h * in.w;
  const std::int64_t y_stride = static_cast<std::int64_t>(c_out) * out_hw;

  for (int n = 0; n < in.n; ++n) {
    im2col(x.data() + n * x_stride, in.c, in.h, in.w, kh, kw, g, col.data());
    T* yn = y.data() + n * y_stride;
    gemm(false, false, c_out, out_hw, k_dim, T(1), kernel.data(), k_dim,
         col.data(), out_hw, T(0), yn, out_hw);
    for (int co = 0; co < c_out; ++co) {
      const T b = bias[co];
      T* row = yn + static_cast<std::int64_t>(co) * out_hw;
      for (int i = 0; i < out_hw; ++i) row[i] += b;
    }
  }
  return y;
}

template <typename T>
void conv2d_backward(const Tensor<T>& x, const Tensor<T>& kernel, Padding pad,
                     const Tensor<T>& dy, Tensor<T>* dx, Tensor<T>* dkernel,
                     Tensor<T>* dbias) {
  const Nchw in = as_nchw(x.shape(), "conv2d");
  check_conv_args(x, kernel, static_cast<const Tensor<T>*>(nullptr), in);
  const int c_out = kernel.dim(0);
  const int kh = kernel.dim(2), kw = kernel.dim(3);
  const ConvGeom g = conv_geometry(in.h, in.w, kh, kw, pad);
  const int out_hw = g.out_h * g.out_w;
  const int k_dim = in.c * kh * kw;
  const std::vector<int> want = spatial_out_shape(in, c_out, g.out_h, g.out_w);
  if (dy.shape() != want) {
    throw Error(ErrorCode::shape_mismatch,
                "conv2d backward: upstream gradient is " + dy.shape_str() +
                    ", expected " + Tensor<T>::shape_str(want));
  }

  if (dx) *dx = Tensor<T>(x.shape(), T(0));
  if (dkernel) *dkernel = Tensor<T>(kernel.shape(), T(0));
  if (dbias) *dbias = Tensor<T>({c_out}, T(0));

  std::vector<T> col(static_cast<std::size_t>(k_dim) * out_hw);
  const std::int64_t x_stride = static_cast<std::int64_t>(in.c) * in.h * in.w;
  const std::int64_t y_stride = static_cast<std::int64_t>(c_out) * out_hw;

  for (int n = 0; n < in.n; ++n) {
    const T* dyn = dy.data() + n * y_stride;
    if (dkernel || dx) {
      im2col(x.data() + n * x_stride, in.c, in.h, in.w, kh, kw, g, col.data());
    }
    if (dkernel) {
      gemm(false, true, c_out, k_dim, out_hw, T(1), dyn, out_hw, col.data(),
           out_hw, T(1), dkernel->data(), k_dim);
    }
    if (dx) {
      // col is done for this sample, so it can hold d(col) in place.
      gemm(true, false, k_dim, out_hw, c_out, T(1), kernel.data(), k_dim, dyn,
           out_hw, T(0), col.data(), out_hw);
      col2im_add(col.data(), in.c, in.h, in.w, kh, kw, g,
                 dx->data() + n * x_stride);
    }
    if (dbias) {
      for (int co = 0; co < c_out; ++co) {
        T acc = T(0);
        const T* row = dyn + static_cast<std::int64_t>(co) * out_hw;
        for (int i = 0; i < out_hw; ++i) acc += row[i];
        (*dbias)[co] += acc;
      }
    }
  }
}

template <typename T>
Tensor<T> maxpool2d(const Tensor<T>& x, std::vector<std::int64_t>* argmax) {
  const Nchw in = as_nchw(x.shape(), "maxpool2d");
  if (in.h % 2 != 0) {
    throw Error(ErrorCode::shape_mismatch,
                "maxpool2d: height " + std::to_string(in.h) +
                    " is not divisible by the window size 2");
  }
  if (in.w % 2 != 0) {
    throw Error(ErrorCode::shape_mismatch,
                "maxpool2d: width " + std::to_string(in.w) +
                    " is not divisible by the window size 2");
  }
  const int oh = in.h / 2, ow = in.w / 2;
  Tensor<T> y(spatial_out_shape(in, in.c, oh, ow));
  if (argmax) argmax->resize(y.size());

  std::int64_t oi = 0;
  for (int n = 0; n < in.n; ++n) {
    for (int c = 0; c < in.c; ++c) {
      const std::int64_t plane =
          (static_cast<std::int64_t>(n) * in.c + c) * in.h * in.w;
      for (int i = 0; i < oh; ++i) {
        for (int j = 0; j < ow; ++j) {
          std::int64_t best = plane + static_cast<std::int64_t>(2 * i) * in.w +
                              2 * j;
          T best_v = x[best];
          const std::int64_t cand[3] = {best + 1, best + in.w,
                                        best + in.w + 1};
          for (std::int64_t idx : cand) {
            if (x[idx] > best_v) {
              best_v = x[idx];
              best = idx;
            }
          }
          y[oi] = best_v;
          if (argmax) (*argmax)[oi] = best;
          ++oi;
        }
      }
    }
  }
  return y;
}

template <typename T>
Tensor<T> maxpool2d_backward(const Tensor<T>& dy,
                             const std::vector<std::int64_t>& argmax,
                             const std::vector<int>& x_shape) {
  Tensor<T> dx(x_shape, T(0));
  if (static_cast<std::int64_t>(argmax.size()) != dy.size()) {
    throw Error(ErrorCode::shape_mismatch,
                "maxpool2d backward: argmax size " +
                    std::to_string(argmax.size()) +
                    " does not match gradient " + dy.shape_str());
  }
  for (std::int64_t i = 0; i < dy.size(); ++i) dx[argmax[i]] += dy[i];
  return dx;
}

template <typename T>
Tensor<T> batchnorm_train(const Tensor<T>& x, const Tensor<T>& scale,
                          const Tensor<T>& shift, T eps, Tensor<T>* mean_out,
                          Tensor<T>* var_out) {
  if (x.ndim() != 4) {
    throw Error(ErrorCode::shape_mismatch,
                "batchnorm: expected a [N,C,H,W] input, got " + x.shape_str());
  }
  const int n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
  check_channel_param(scale, c, "batchnorm", "scale");
  check_channel_param(shift, c, "batchnorm", "shift");
  const std::int64_t m = static_cast<std::int64_t>(n) * h * w;
  if (m < 2) {
    throw Error(ErrorCode::invalid_argument,
                "batchnorm: needs at least 2 values per channel in train mode, "
                "got " +
                    std::to_string(m));
  }

  Tensor<T> mean({c}, T(0)), var({c}, T(0));
  const std::int64_t hw = static_cast<std::int64_t>(h) * w;
  for (int ch = 0; ch < c; ++ch) {
    double acc = 0.0;
    for (int b = 0; b < n; ++b) {
      const T* p = x.data() + (static_cast<std::int64_t>(b) * c + ch) * hw;
      for (std::int64_t i = 0; i < hw; ++i) acc += p[i];
    }
    const double mu = acc / static_cast<double>(m);
    double sq = 0.0;
    for (int b = 0; b < n; ++b) {
      const T* p = x.data() + (static_cast<std::int64_t>(b) * c + ch) * hw;
      for (std::int64_t i = 0; i < hw; ++i) {
        const double d = p[i] - mu;
        sq += d * d;
      }
    }
    mean[ch] = static_cast<T>(mu);
    var[ch] = static_cast<T>(sq / static_cast<double>(m));
  }

  Tensor<T> y(x.shape());
  for (int ch = 0; ch < c; ++ch) {
    const T inv = T(1) / std::sqrt(var[ch] + eps);
    const T g = scale[ch], b0 = shift[ch], mu = mean[ch];
    for (int b = 0; b < n; ++b) {
      const std::int64_t base = (static_cast<std::int64_t>(b) * c + ch) * hw;
      for (std::int64_t i = 0; i < hw; ++i) {
        y[base + i] = g * (x[base + i] - mu) * inv + b0;
      }
    }
  }
  if (mean_out) *mean_out = mean;
  if (var_out) *var_out = var;
  return y;
}

template <typename T>
Tensor<T> batchnorm_eval(const Tensor<T>& x, const Tensor<T>& scale,
                         const Tensor<T>& shift, const Tensor<T>& running_mean,
                         const Tensor<T>& running_var, T eps) {
  if (x.ndim() != 4) {
    throw Error(ErrorCode::shape_mismatch,
                "batchnorm: expected a [N,C,H,W] input, got " + x.shape_str());
  }
  const int n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
  check_channel_param(scale, c, "batchnorm", "scale");
  check_channel_param(shift, c, "batchnorm", "shift");
  check_channel_param(running_mean, c, "batchnorm", "running_mean");
  check_channel_param(running_var, c, "batchnorm", "running_var");

  Tensor<T> y(x.shape());
  const std::int64_t hw = static_cast<std::int64_t>(h) * w;
  for (int ch = 0; ch < c; ++ch) {
    const T inv = T(1) / std::sqrt(running_var[ch] + eps);
    const T g = scale[ch], b0 = shift[ch], mu = running_mean[ch];
    for (int b = 0; b < n; ++b) {
      const std::int64_t base = (static_cast<std::int64_t>(b) * c + ch) * hw;
      for (std::int64_t i = 0; i < hw; ++i) {
        y[base + i] = g * (x[base + i] - mu) * inv + b0;
      }
    }
  }
  return y;
}

template <typename T>
void batchnorm_backward(const Tensor<T>& x, const Tensor<T>& scale,
                        const Tensor<T>& mean, const Tensor<T>& var, T eps,
                        const Tensor<T>& dy, Tensor<T>* dx, Tensor<T>* dscale,
                        Tensor<T>* dshift) {
  const int n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
  if (dy.shape() != x.shape()) {
    throw Error(ErrorCode::shape_mismatch,
                "batchnorm backward: upstream gradient is " + dy.shape_str() +
                    ", expected " + x.shape_str());
  }
  const std::int64_t hw = static_cast<std::int64_t>(h) * w;
  const double m = static_cast<double>(n) * hw;

  if (dx) *dx = Tensor<T>(x.shape());
  if (dscale) *dscale = Tensor<T>({c}, T(0));
  if (dshift) *dshift = Tensor<T>({c}, T(0));

  for (int ch = 0; ch < c; ++ch) {
    const double inv = 1.0 / std::sqrt(static_cast<double>(var[ch]) + eps);
    const double mu = mean[ch];
    double sum_dy = 0.0, sum_dy_xhat = 0.0;
    for (int b = 0; b < n; ++b) {
      const std::int64_t base = (static_cast<std::int64_t>(b) * c + ch) * hw;
      for (std::int64_t i = 0; i < hw; ++i) {
        const double xhat = (x[base + i] - mu) * inv;
        sum_dy += dy[base + i];
        sum_dy_xhat += dy[base + i] * xhat;
      }
    }
    if (dscale) (*dscale)[ch] = static_cast<T>(sum_dy_xhat);
    if (dshift) (*dshift)[ch] = static_cast<T>(sum_dy);
    if (dx) {
      const double k = static_cast<double>(scale[ch]) * inv / m;
      for (int b = 0; b < n; ++b) {
        const std::int64_t base = (static_cast<std::int64_t>(b) * c + ch) * hw;
        for (std::int64_t i = 0; i < hw; ++i) {
          const double xhat = (x[base + i] - mu) * inv;
          (*dx)[base + i] = static_cast<T>(
              k * (m * dy[base + i] - sum_dy - xhat * sum_dy_xhat));
        }
      }
    }
  }
}

template <typename T>
Tensor<T> dense(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>* bias) {
  if (w.ndim() != 2) {
    throw Error(ErrorCode::shape_mismatch,
                "dense: weight must be [d_out,d_in], got " + w.shape_str());
  }
  const int d_out = w.dim(0), d_in = w.dim(1);
  const bool batched = x.ndim() == 2;
  if (!(x.ndim() == 1 || batched) || x.dim(batched ? 1 : 0) != d_in) {
    throw Error(ErrorCode::shape_mismatch,
                "dense: input " + x.shape_str() + " does not match weight " +
                    w.shape_str());
  }
  if (bias) check_channel_param(*bias, d_out, "dense", "bias");
  const int n = batched ? x.dim(0) : 1;

  Tensor<T> y(batched ? std::vector<int>{n, d_out} : std::vector<int>{d_out});
  gemm(false, true, n, d_out, d_in, T(1), x.data(), d_in, w.data(), d_in, T(0),
       y.data(), d_out);
  if (bias) {
    for (int b = 0; b < n; ++b) {
      T* row = y.data() + static_cast<std::int64_t>(b) * d_out;
      for (int i = 0; i < d_out; ++i) row[i] += (*bias)[i];
    }
  }
  return y;
}

template <typename T>
void dense_backward(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& dy,
                    Tensor<T>* dx, Tensor<T>* dw, Tensor<T>* dbias) {
  const int d_out = w.dim(0), d_in = w.dim(1);
  const bool batched = x.ndim() == 2;
  const int n = batched ? x.dim(0) : 1;
  const std::vector<int> want =
      batched ? std::vector<int>{n, d_out} : std::vector<int>{d_out};
  if (dy.shape() != want) {
    throw Error(ErrorCode::shape_mismatch,
                "dense backward: upstream gradient is " + dy.shape_str() +
                    ", expected " + Tensor<T>::shape_str(want));
  }

  if (dx) {
    *dx = Tensor<T>(x.shape());
    gemm(false, false, n, d_in, d_out, T(1), dy.data(), d_out, w.data(), d_in,
         T(0), dx->data(), d_in);
  }
  if (dw) {
    *dw = Tensor<T>(w.shape());
    gemm(true, false, d_out, d_in, n, T(1), dy.data(), d_out, x.data(), d_in,
         T(0), dw->data(), d_in);
  }
  if (dbias) {
    *dbias = Tensor<T>({d_out}, T(0));
    for (int b = 0; b < n; ++b) {
      const T* row = dy.data() + static_cast<std::int64_t>(b) * d_out;
      for (int i = 0; i < d_out; ++i) (*dbias)[i] += row[i];
    }
  }
}

template <typename T>
Tensor<T> relu(const Tensor<T>& x) {
  Tensor<T> y(x.shape());
  for (std::int64_t i = 0; i < x.size(); ++i) y[i] = x[i] > T(0) ? x[i] : T(0);
  return y;
}

template <typename T>
Tensor<T> relu_backward(const Tensor<T>& y, const Tensor<T>& dy) {
  Tensor<T> dx(y.shape());
  for (std::int64_t i = 0; i < y.size(); ++i) {
    dx[i] = y[i] > T(0) ? dy[i] : T(0);
  }
  return dx;
}

template <typename T>
Tensor<T> sigmoid(const Tensor<T>& x) {
  Tensor<T> y(x.shape());
  for (std::int64_t i = 0; i < x.size(); ++i) {
    // Split on sign so exp never overflows.
    const T v = x[i];
    if (v >= T(0)) {
      const T e = std::exp(-v);
      y[i] = T(1) / (T(1) + e);
    } else {
      const T e = std::exp(v);
      y[i] = e / (T(1) + e);
    }
  }
  return y;
}

template <typename T>
Tensor<T> sigmoid_backward(const Tensor<T>& y, const Tensor<T>& dy) {
  Tensor<T> dx(y.shape());
  for (std::int64_t i = 0; i < y.size(); ++i) {
    dx[i] = dy[i] * y[i] * (T(1) - y[i]);
  }
  return dx;
}

template <typename T>
Tensor<T> softmax(const Tensor<T>& x) {
  if (!(x.ndim() == 1 || x.ndim() == 2)) {
    throw Error(ErrorCode::shape_mismatch,
                "softmax: expected a [C] or [N,C] input, got " + x.shape_str());
  }
  const int c = x.dim(x.ndim() - 1);
  const int n = x.ndim() == 2 ? x.dim(0) : 1;
  Tensor<T> y(x.shape());
  for (int b = 0; b < n; ++b) {
    const T* row = x.data() + static_cast<std::int64_t>(b) * c;
    T* out = y.data() + static_cast<std::int64_t>(b) * c;
    T mx = row[0];
    for (int i = 1; i < c; ++i) mx = std::max(mx, row[i]);
    T denom = T(0);
    for (int i = 0; i < c; ++i) {
      out[i] = std::exp(row[i] - mx);
      denom += out[i];
    }
    for (int i = 0; i < c; ++i) out[i] /= denom;
  }
  return y;
}

template <typename T>
Tensor<T> softmax_backward(const Tensor<T>& y, const Tensor<T>& dy) {
  const int c = y.dim(y.ndim() - 1);
  const int n = y.ndim() == 2 ? y.dim(0) : 1;
  Tensor<T> dx(y.shape());
  for (int b = 0; b < n; ++b) {
    const T* yr = y.data() + static_cast<std::int64_t>(b) * c;
    const T* gr = dy.data() + static_cast<std::int64_t>(b) * c;
    T* out = dx.data() + static_cast<std::int64_t>(b) * c;
    T dot = T(0);
    for (int i = 0; i < c; ++i) dot += gr[i] * yr[i];
    for (int i = 0; i < c; ++i) out[i] = yr[i] * (gr[i] - dot);
  }
  return dx;
}

template <typename T>
Tensor<T> global_avg_pool(const Tensor<T>& x) {
  const Nchw in = as_nchw(x.shape(), "global_avg_pool");
  Tensor<T> y(in.rank == 3 ? std::vector<int>{in.c}
                           : std::vector<int>{in.n, in.c});
  const std::int64_t hw = static_cast<std::int64_t>(in.h) * in.w;
  for (int n = 0; n < in.n; ++n) {
    for (int c = 0; c < in.c; ++c) {
      const T* p = x.data() + (static_cast<std::int64_t>(n) * in.c + c) * hw;
      double acc = 0.0;
      for (std::int64_t i = 0; i < hw; ++i) acc += p[i];
      y[static_cast<std::int64_t>(n) * in.c + c] =
          static_cast<T>(acc / static_cast<double>(hw));
    }
  }
  return y;
}

template <typename T>
Tensor<T> global_avg_pool_backward(const Tensor<T>& dy,
                                   const std::vector<int>& x_shape) {
  const Nchw in = as_nchw(x_shape, "global_avg_pool");
  const std::int64_t hw = static_cast<std::int64_t>(in.h) * in.w;
  Tensor<T> dx(x_shape);
  for (int n = 0; n < in.n; ++n) {
    for (int c = 0; c < in.c; ++c) {
      const T g = dy[static_cast<std::int64_t>(n) * in.c + c] /
                  static_cast<T>(hw);
      T* p = dx.data() + (static_cast<std::int64_t>(n) * in.c + c) * hw;
      for (std::int64_t i = 0; i < hw; ++i) p[i] = g;
    }
  }
  return dx;
}

template <typename T>
Tensor<T> channel_scale(const Tensor<T>& x, const Tensor<T>& s) {
  const Nchw in = as_nchw(x.shape(), "channel_scale");
  const std::vector<int> want = in.rank == 3 ? std::vector<int>{in.c}
                                             : std::vector<int>{in.n, in.c};
  if (s.shape() != want) {
    throw Error(ErrorCode::shape_mismatch,
                "channel_scale: scale is " + s.shape_str() + ", expected " +
                    Tensor<T>::shape_str(want));
  }
  Tensor<T> y(x.shape());
  const std::int64_t hw = static_cast<std::int64_t>(in.h) * in.w;
  for (int n = 0; n < in.n; ++n) {
    for (int c = 0; c < in.c; ++c) {
      const T g = s[static_cast<std::int64_t>(n) * in.c + c];
      const std::int64_t base = (static_cast<std::int64_t>(n) * in.c + c) * hw;
      for (std::int64_t i = 0; i < hw; ++i) y[base + i] = g * x[base + i];
    }
  }
  return y;
}

template <typename T>
void channel_scale_backward(const Tensor<T>& x, const Tensor<T>& s,
                            const Tensor<T>& dy, Tensor<T>* dx, Tensor<T>* ds) {
  const Nchw in = as_nchw(x.shape(), "channel_scale");
  if (dx) *dx = Tensor<T>(x.shape());
  if (ds) *ds = Tensor<T>(s.shape(), T(0));
  const std::int64_t hw = static_cast<std::int64_t>(in.h) * in.w;
  for (int n = 0; n < in.n; ++n) {
    for (int c = 0; c < in.c; ++c) {
      const std::int64_t sc = static_cast<std::int64_t>(n) * in.c + c;
      const std::int64_t base = sc * hw;
      if (dx) {
        for (std::int64_t i = 0; i < hw; ++i) {
          (*dx)[base + i] = s[sc] * dy[base + i];
        }
      }
      if (ds) {
        double acc = 0.0;
        for (std::int64_t i = 0; i < hw; ++i) acc += dy[base + i] * x[base + i];
        (*ds)[sc] = static_cast<T>(acc);
      }
    }
  }
}

template <typename T>
Tensor<T> bilinear_resize(const Tensor<T>& x, int out_h, int out_w) {
  if (x.ndim() != 2) {
    throw Error(ErrorCode::shape_mismatch,
                "bilinear_resize: expected a [H,W] input, got " + x.shape_str());
  }
  if (out_h <= 0 || out_w <= 0) {
    throw Error(ErrorCode::invalid_argument,
                "bilinear_resize: target " + std::to_string(out_h) + "x" +
                    std::to_string(out_w) + " must be positive");
  }
  const int h = x.dim(0), w = x.dim(1);
  Tensor<T> y({out_h, out_w});
  for (int i = 0; i < out_h; ++i) {
    double sy = (i + 0.5) * static_cast<double>(h) / out_h - 0.5;
    sy = std::clamp(sy, 0.0, static_cast<double>(h - 1));
    const int i0 = static_cast<int>(sy);
    const int i1 = std::min(i0 + 1, h - 1);
    const double fy = sy - i0;
    for (int j = 0; j < out_w; ++j) {
      double sx = (j + 0.5) * static_cast<double>(w) / out_w - 0.5;
      sx = std::clamp(sx, 0.0, static_cast<double>(w - 1));
      const int j0 = static_cast<int>(sx);
      const int j1 = std::min(j0 + 1, w - 1);
      const double fx = sx - j0;
      const double v =
          (1 - fy) * ((1 - fx) * x.data()[i0 * w + j0] +
                      fx * x.data()[i0 * w + j1]) +
          fy * ((1 - fx) * x.data()[i1 * w + j0] + fx * x.data()[i1 * w + j1]);
      y.data()[i * out_w + j] = static_cast<T>(v);
    }
  }
  return y;
}

template <typename T>
Tensor<T> bilinear_resize_backward(const Tensor<T>& dy, int in_h, int in_w) {
  const int out_h = dy.dim(0), out_w = dy.dim(1);
  Tensor<T> dx({in_h, in_w}, T(0));
  for (int i = 0; i < out_h; ++i) {
    double sy = (i + 0.5) * static_cast<double>(in_h) / out_h - 0.5;
    sy = std::clamp(sy, 0.0, static_cast<double>(in_h - 1));
    const int i0 = static_cast<int>(sy);
    const int i1 = std::min(i0 + 1, in_h - 1);
    const double fy = sy - i0;
    for (int j = 0; j < out_w; ++j) {
      double sx = (j + 0.5) * static_cast<double>(in_w) / out_w - 0.5;
      sx = std::clamp(sx, 0.0, static_cast<double>(in_w - 1));
      const int j0 = static_cast<int>(sx);
      const int j1 = std::min(j0 + 1, in_w - 1);
      const double fx = sx - j0;
      const T g = dy.data()[i * out_w + j];
      dx.data()[i0 * in_w + j0] += static_cast<T>((1 - fy) * (1 - fx)) * g;
      dx.data()[i0 * in_w + j1] += static_cast<T>((1 - fy) * fx) * g;
      dx.data()[i1 * in_w + j0] += static_cast<T>(fy * (1 - fx)) * g;
      dx.data()[i1 * in_w + j1] += static_cast<T>(fy * fx) * g;
    }
  }
  return dx;
}

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
  if (!a.same_shape(b)) {
    throw Error(ErrorCode::shape_mismatch, "add: shapes " + a.shape_str() +
                                               " and " + b.shape_str() +
                                               " differ");
  }
  Tensor<T> y(a.shape());
  for (std::int64_t i = 0; i < a.size(); ++i) y[i] = a[i] + b[i];
  return y;
}

template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
  if (!a.same_shape(b)) {
    throw Error(ErrorCode::shape_mismatch, "mul: shapes " + a.shape_str() +
                                               " and " + b.shape_str() +
                                               " differ");
  }
  Tensor<T> y(a.shape());
  for (std::int64_t i = 0; i < a.size(); ++i) y[i] = a[i] * b[i];
  return y;
}

template <typename T>
T sum(const Tensor<T>& x) {
  double acc = 0.0;
  for (std::int64_t i = 0; i < x.size(); ++i) acc += x[i];
  return static_cast<T>(acc);
}

template <typename T>
double weighted_cross_entropy(const Tensor<T>& logits,
                              const std::vector<int>& labels,
                              const std::vector<double>& weights,
                              Tensor<T>* dlogits) {
  if (logits.ndim() != 2) {
    throw Error(ErrorCode::shape_mismatch,
                "weighted_cross_entropy: logits must be [N,C], got " +
                    logits.shape_str());
  }
  const int n = logits.dim(0), c = logits.dim(1);
  if (static_cast<int>(labels.size()) != n) {
    throw Error(ErrorCode::invalid_argument,
                "weighted_cross_entropy: " + std::to_string(labels.size()) +
                    " labels for " + std::to_string(n) + " rows");
  }
  if (static_cast<int>(weights.size()) != c) {
    throw Error(ErrorCode::invalid_argument,
                "weighted_cross_entropy: " + std::to_string(weights.size()) +
                    " class weights for " + std::to_string(c) + " classes");
  }
  if (dlogits) *dlogits = Tensor<T>(logits.shape());

  double loss = 0.0;
  for (int b = 0; b < n; ++b) {
    const int y = labels[b];
    if (y < 0 || y >= c) {
      throw Error(ErrorCode::invalid_argument,
                  "weighted_cross_entropy: label " + std::to_string(y) +
                      " outside [0, " + std::to_string(c) + ")");
    }
    const T* row = logits.data() + static_cast<std::int64_t>(b) * c;
    double mx = row[0];
    for (int i = 1; i < c; ++i) mx = std::max(mx, static_cast<double>(row[i]));
    double denom = 0.0;
    for (int i = 0; i < c; ++i) denom += std::exp(row[i] - mx);
    const double lse = mx + std::log(denom);
    const double wy = weights[y];
    loss += wy * (lse - row[y]);
    if (dlogits) {
      T* g = dlogits->data() + static_cast<std::int64_t>(b) * c;
      for (int i = 0; i < c; ++i) {
        const double p = std::exp(row[i] - mx) / denom;
        g[i] = static_cast<T>(wy * (p - (i == y ? 1.0 : 0.0)) / n);
      }
    }
  }
  return loss / n;
}

// The numeric core is built for exactly these two element types.
#define DSSC_INSTANTIATE_OPS(T)                                                \
  template Tensor<T> conv2d<T>(const Tensor<T>&, const Tensor<T>&,             \
                               const Tensor<T>&, Padding);                     \
  template void conv2d_backward<T>(const Tensor<T>&, const Tensor<T>&,         \
                                   Padding, const Tensor<T>&, Tensor<T>*,      \
                                   Tensor<T>*, Tensor<T>*);                    \
  template Tensor<T> maxpool2d<T>(const Tensor<T>&,                            \
                                  std::vector<std::int64_t>*);                 \
  template Tensor<T> maxpool2d_backward<T>(                                    \
      const Tensor<T>&, const std::vector<std::int64_t>&,                      \
      const std::vector<int>&);                                                \
  template Tensor<T> batchnorm_train<T>(const Tensor<T>&, const Tensor<T>&,    \
                                        const Tensor<T>&, T, Tensor<T>*,       \
                                        Tensor<T>*);                           \
  template Tensor<T> batchnorm_eval<T>(const Tensor<T>&, const Tensor<T>&,     \
                                       const Tensor<T>&, const Tensor<T>&,     \
                                       const Tensor<T>&, T);                   \
  template void batchnorm_backward<T>(const Tensor<T>&, const Tensor<T>&,      \
                                      const Tensor<T>&, const Tensor<T>&, T,   \
                                      const Tensor<T>&, Tensor<T>*,            \
                                      Tensor<T>*, Tensor<T>*);                 \
  template Tensor<T> dense<T>(const Tensor<T>&, const Tensor<T>&,              \
                              const Tensor<T>*);                               \
  template void dense_backward<T>(const Tensor<T>&, const Tensor<T>&,          \
                                  const Tensor<T>&, Tensor<T>*, Tensor<T>*,    \
                                  Tensor<T>*);                                 \
  template Tensor<T> relu<T>(const Tensor<T>&);                                \
  template Tensor<T> relu_backward<T>(const Tensor<T>&, const Tensor<T>&);     \
  template Tensor<T> sigmoid<T>(const Tensor<T>&);                             \
  template Tensor<T> sigmoid_backward<T>(const Tensor<T>&, const Tensor<T>&);  \
  template Tensor<T> softmax<T>(const Tensor<T>&);                             \
  template Tensor<T> softmax_backward<T>(const Tensor<T>&, const Tensor<T>&);  \
  template Tensor<T> global_avg_pool<T>(const Tensor<T>&);                     \
  template Tensor<T> global_avg_pool_backward<T>(const Tensor<T>&,             \
                                                 const std::vector<int>&);     \
  template Tensor<T> channel_scale<T>(const Tensor<T>&, const Tensor<T>&);     \
  template void channel_scale_backward<T>(const Tensor<T>&, const Tensor<T>&,  \
                                          const Tensor<T>&, Tensor<T>*,        \
                                          Tensor<T>*);                         \
  template Tensor<T> bilinear_resize<T>(const Tensor<T>&, int, int);           \
  template Tensor<T> bilinear_resize_backward<T>(const Tensor<T>&, int, int);  \
  template Tensor<T> add<T>(const Tensor<T>&, const Tensor<T>&);               \
  template Tensor<T> mul<T>(const Tensor<T>&, const Tensor<T>&);               \
  template T sum<T>(const Tensor<T>&);                                         \
  template double weighted_cross_entropy<T>(const Tensor<T>&,                  \
                                            const std::vector<int>&,           \
                                            const std::vector<double>&,        \
                                            Tensor<T>*);

DSSC_INSTANTIATE_OPS(float)
DSSC_INSTANTIATE_OPS(double)

#undef DSSC_INSTANTIATE_OPS

}  // namespace dssc::ops
