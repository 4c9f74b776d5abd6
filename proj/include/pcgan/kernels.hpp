#pragma once

// Raw compute kernels shared by the tape ops and the double-precision
// self-check. Instantiated for float and double.

#include <cstddef>

#include "pcgan/tensor.hpp"

namespace pcgan::kernels {

/// Geometry of a cross-correlation from [N,C,H,W] with kernel [F,C,kh,kw]
/// to [N,F,out_h,out_w].
struct ConvGeometry {
  int batch = 0;
  int in_channels = 0;
  int in_h = 0;
  int in_w = 0;
  int out_channels = 0;
  int kernel_h = 0;
  int kernel_w = 0;
  int stride = 1;
  int pad = 0;
  int out_h = 0;
  int out_w = 0;

  std::size_t input_size() const { return std::size_t(batch) * in_channels * in_h * in_w; }
  std::size_t output_size() const { return std::size_t(batch) * out_channels * out_h * out_w; }
  std::size_t kernel_size() const { return std::size_t(out_channels) * in_channels * kernel_h * kernel_w; }
};

ConvGeometry conv2d_geometry(const Shape& input, const Shape& kernel, int stride, int pad);

/// A transposed convolution with input [N,C,H,W] and kernel [C,F,kh,kw] is
/// the input-adjoint of a conv2d from [N,F,H',W'] to [N,C,H,W] with the same
/// kernel; this returns that conv2d's geometry.
ConvGeometry conv_transpose2d_geometry(const Shape& input, const Shape& kernel, int stride, int pad);

template <class T>
void conv2d_forward(const ConvGeometry& g, const T* x, const T* w, const T* bias, T* y);
/// dx is overwritten.
template <class T>
void conv2d_backward_input(const ConvGeometry& g, const T* dy, const T* w, T* dx);
/// dw and dbias (nullable) are overwritten.
template <class T>
void conv2d_backward_weight(const ConvGeometry& g, const T* dy, const T* x, T* dw, T* dbias);

/// y[n,out] = x[n,in] * w[in,out] + b[out]
template <class T>
void dense_forward(int n, int in, int out, const T* x, const T* w, const T* b, T* y);
/// Any of dx, dw, db may be null; non-null outputs are overwritten.
template <class T>
void dense_backward(int n, int in, int out, const T* dy, const T* x, const T* w, T* dx, T* dw, T* db);

struct NormDims {
  int batch = 0;
  int channels = 0;
  int spatial = 1;
};

NormDims norm_dims(const Shape& shape);

/// Normalizes by batch statistics. mean/var_biased/invstd are per channel.
template <class T>
void batchnorm_train_forward(const NormDims& d, const T* x, const T* gamma, const T* beta, T eps, T* y,
                             T* xhat, T* mean, T* var_biased, T* invstd);
template <class T>
void batchnorm_train_backward(const NormDims& d, const T* dy, const T* xhat, const T* invstd, const T* gamma,
                              T* dx, T* dgamma, T* dbeta);
template <class T>
void batchnorm_infer_forward(const NormDims& d, const T* x, const T* gamma, const T* beta, const T* mean,
                             const T* var, T eps, T* y);

template <class T>
void softmax_rows(int rows, int cols, const T* x, T* y);

}  // namespace pcgan::kernels
