#pragma once

#include <cstdint>
#include <vector>

#include "tensor.hpp"

namespace dssc::ops {

enum class Padding { same, valid };

// ---- dense linear algebra -------------------------------------------------
// Thin wrappers over BLAS *gemm, row-major. C = alpha * op(A) * op(B) + beta * C.
void gemm(bool trans_a, bool trans_b, int m, int n, int k, float alpha,
          const float* a, int lda, const float* b, int ldb, float beta,
          float* c, int ldc);
void gemm(bool trans_a, bool trans_b, int m, int n, int k, double alpha,
          const double* a, int lda, const double* b, int ldb, double beta,
          double* c, int ldc);

// ---- convolution ----------------------------------------------------------
// x: [C_in,H,W] or [N,C_in,H,W]; kernel: [C_out,C_in,kh,kw]; bias: [C_out].
// Cross-correlation, stride 1. "same" zero padding keeps H and W.
template <typename T>
Tensor<T> conv2d(const Tensor<T>& x, const Tensor<T>& kernel,
                 const Tensor<T>& bias, Padding pad);

// Any of the output slots may be null when that gradient is not needed.
template <typename T>
void conv2d_backward(const Tensor<T>& x, const Tensor<T>& kernel, Padding pad,
                     const Tensor<T>& dy, Tensor<T>* dx, Tensor<T>* dkernel,
                     Tensor<T>* dbias);

// ---- max pooling (2x2 window, stride 2) -----------------------------------
// x: [C,H,W] or [N,C,H,W] with even H and W. argmax, when non-null, receives
// one flat input index per output element (first index wins on ties).
template <typename T>
Tensor<T> maxpool2d(const Tensor<T>& x, std::vector<std::int64_t>* argmax);

template <typename T>
Tensor<T> maxpool2d_backward(const Tensor<T>& dy,
                             const std::vector<std::int64_t>& argmax,
                             const std::vector<int>& x_shape);

// ---- batch normalization --------------------------------------------------
// x: [N,C,H,W]. Per-channel statistics over N*H*W elements; train mode
// requires at least 2 of them. mean/var are the batch statistics used for
// normalization (biased variance); callers own the running-stat update.
template <typename T>
Tensor<T> batchnorm_train(const Tensor<T>& x, const Tensor<T>& scale,
                          const Tensor<T>& shift, T eps, Tensor<T>* mean_out,
                          Tensor<T>* var_out);

template <typename T>
Tensor<T> batchnorm_eval(const Tensor<T>& x, const Tensor<T>& scale,
                         const Tensor<T>& shift, const Tensor<T>& running_mean,
                         const Tensor<T>& running_var, T eps);

template <typename T>
void batchnorm_backward(const Tensor<T>& x, const Tensor<T>& scale,
                        const Tensor<T>& mean, const Tensor<T>& var, T eps,
                        const Tensor<T>& dy, Tensor<T>* dx, Tensor<T>* dscale,
                        Tensor<T>* dshift);

// ---- fully connected ------------------------------------------------------
// x: [d_in] or [N,d_in]; w: [d_out,d_in]; bias nullable (SE layers omit it).
template <typename T>
Tensor<T> dense(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>* bias);

template <typename T>
void dense_backward(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& dy,
                    Tensor<T>* dx, Tensor<T>* dw, Tensor<T>* dbias);

// ---- activations ----------------------------------------------------------
template <typename T>
Tensor<T> relu(const Tensor<T>& x);
template <typename T>
Tensor<T> relu_backward(const Tensor<T>& y, const Tensor<T>& dy);

template <typename T>
Tensor<T> sigmoid(const Tensor<T>& x);
template <typename T>
Tensor<T> sigmoid_backward(const Tensor<T>& y, const Tensor<T>& dy);

// Row-wise over the last axis of [C] or [N,C]; max-subtracted for stability.
template <typename T>
Tensor<T> softmax(const Tensor<T>& x);
template <typename T>
Tensor<T> softmax_backward(const Tensor<T>& y, const Tensor<T>& dy);

// ---- pooling / reweighting ------------------------------------------------
// [C,H,W] -> [C] or [N,C,H,W] -> [N,C]: per-channel spatial mean.
template <typename T>
Tensor<T> global_avg_pool(const Tensor<T>& x);
template <typename T>
Tensor<T> global_avg_pool_backward(const Tensor<T>& dy,
                                   const std::vector<int>& x_shape);

// y[n,c,h,w] = s[n,c] * x[n,c,h,w]; accepts [C,H,W] with s [C] as N=1.
template <typename T>
Tensor<T> channel_scale(const Tensor<T>& x, const Tensor<T>& s);
template <typename T>
void channel_scale_backward(const Tensor<T>& x, const Tensor<T>& s,
                            const Tensor<T>& dy, Tensor<T>* dx, Tensor<T>* ds);

// ---- resize ---------------------------------------------------------------
// x: [H,W]. Half-pixel-center coordinate mapping; exact identity when the
// target shape equals the source shape.
template <typename T>
Tensor<T> bilinear_resize(const Tensor<T>& x, int out_h, int out_w);
template <typename T>
Tensor<T> bilinear_resize_backward(const Tensor<T>& dy, int in_h, int in_w);

// ---- elementwise / reductions ---------------------------------------------
template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b);

template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b);

template <typename T>
T sum(const Tensor<T>& x);

// ---- classification loss --------------------------------------------------
// logits: [N,C]; labels: N class indices; weights: C per-class factors.
// Returns mean over the batch of w[label] * (logsumexp(z) - z[label]).
// When dlogits is non-null it receives d(loss)/d(logits).
template <typename T>
double weighted_cross_entropy(const Tensor<T>& logits,
                              const std::vector<int>& labels,
                              const std::vector<double>& weights,
                              Tensor<T>* dlogits);

}  // namespace dssc::ops
