#include "pcgan/kernels.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <vector>

#include "pcgan/error.hpp"

namespace pcgan::kernels {
namespace {

template <class T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <class T>
using MapMat = Eigen::Map<RowMat<T>>;
template <class T>
using MapConstMat = Eigen::Map<const RowMat<T>>;

// Upper bound on im2col buffer elements; larger batches are processed in chunks.
constexpr std::size_t kMaxColumnElements = std::size_t(1) << 22;

int chunk_samples(const ConvGeometry& g) {
  const std::size_t per_sample = std::size_t(g.in_channels) * g.kernel_h * g.kernel_w * g.out_h * g.out_w;
  return static_cast<int>(std::clamp<std::size_t>(kMaxColumnElements / std::max<std::size_t>(per_sample, 1), 1,
                                                  std::size_t(g.batch)));
}

bool is_pointwise(const ConvGeometry& g) {
  return g.kernel_h == 1 && g.kernel_w == 1 && g.stride == 1 && g.pad == 0;
}

// cols layout: [C*kh*kw, samples*out_h*out_w], column = sample*ohw + pixel.
template <class T>
void im2col(const ConvGeometry& g, const T* x, int first, int count, T* cols) {
  const int ohw = g.out_h * g.out_w;
  const std::size_t ld = std::size_t(count) * ohw;
  for (int s = 0; s < count; ++s) {
    const T* xs = x + std::size_t(first + s) * g.in_channels * g.in_h * g.in_w;
    for (int c = 0; c < g.in_channels; ++c) {
      for (int ki = 0; ki < g.kernel_h; ++ki) {
        for (int kj = 0; kj < g.kernel_w; ++kj) {
          const int row = (c * g.kernel_h + ki) * g.kernel_w + kj;
          T* dst = cols + row * ld + std::size_t(s) * ohw;
          for (int oy = 0; oy < g.out_h; ++oy) {
            const int iy = oy * g.stride - g.pad + ki;
            T* line = dst + oy * g.out_w;
            if (iy < 0 || iy >= g.in_h) {
              std::fill(line, line + g.out_w, T(0));
              continue;
            }
            const T* src = xs + (std::size_t(c) * g.in_h + iy) * g.in_w;
            // Columns [lo, hi) read inside the image; the rest is padding.
            const int lo = std::clamp((g.pad - kj + g.stride - 1) / g.stride, 0, g.out_w);
            const int hi = std::clamp((g.in_w + g.pad - kj + g.stride - 1) / g.stride, lo, g.out_w);
            std::fill(line, line + lo, T(0));
            const T* from = src + lo * g.stride - g.pad + kj;
            if (g.stride == 1) {
              std::copy(from, from + (hi - lo), line + lo);
            } else {
              for (int ox = lo; ox < hi; ++ox, from += g.stride) line[ox] = *from;
            }
            std::fill(line + hi, line + g.out_w, T(0));
          }
        }
      }
    }
  }
}

template <class T>
void col2im_accumulate(const ConvGeometry& g, const T* cols, int first, int count, T* dx) {
  const int ohw = g.out_h * g.out_w;
  const std::size_t ld = std::size_t(count) * ohw;
  for (int s = 0; s < count; ++s) {
    T* xs = dx + std::size_t(first + s) * g.in_channels * g.in_h * g.in_w;
    for (int c = 0; c < g.in_channels; ++c) {
      for (int ki = 0; ki < g.kernel_h; ++ki) {
        for (int kj = 0; kj < g.kernel_w; ++kj) {
          const int row = (c * g.kernel_h + ki) * g.kernel_w + kj;
          const T* src = cols + row * ld + std::size_t(s) * ohw;
          for (int oy = 0; oy < g.out_h; ++oy) {
            const int iy = oy * g.stride - g.pad + ki;
            if (iy < 0 || iy >= g.in_h) continue;
            T* line = xs + (std::size_t(c) * g.in_h + iy) * g.in_w;
            const T* col_line = src + oy * g.out_w;
            for (int ox = 0; ox < g.out_w; ++ox) {
              const int ix = ox * g.stride - g.pad + kj;
              if (ix >= 0 && ix < g.in_w) line[ix] += col_line[ox];
            }
          }
        }
      }
    }
  }
}

// Gathers samples [first, first+count) of an NCHW-like buffer with `channels`
// channels and `pixels` pixels into [channels, count*pixels].
template <class T>
void gather_channels(const T* src, int first, int count, int channels, int pixels, T* dst) {
  const std::size_t ld = std::size_t(count) * pixels;
  for (int s = 0; s < count; ++s) {
    for (int c = 0; c < channels; ++c) {
      const T* from = src + (std::size_t(first + s) * channels + c) * pixels;
      std::copy(from, from + pixels, dst + c * ld + std::size_t(s) * pixels);
    }
  }
}

template <class T>
void scatter_channels(const T* src, int first, int count, int channels, int pixels, T* dst) {
  const std::size_t ld = std::size_t(count) * pixels;
  for (int s = 0; s < count; ++s) {
    for (int c = 0; c < channels; ++c) {
      const T* from = src + c * ld + std::size_t(s) * pixels;
      std::copy(from, from + pixels, dst + (std::size_t(first + s) * channels + c) * pixels);
    }
  }
}

}  // namespace

ConvGeometry conv2d_geometry(const Shape& input, const Shape& kernel, int stride, int pad) {
  if (input.size() != 4) throw DimensionError("conv2d input must be [N,C,H,W], got " + shape_to_string(input));
  if (kernel.size() != 4) throw DimensionError("conv2d kernel must be [F,C,kh,kw], got " + shape_to_string(kernel));
  if (stride < 1) throw UsageError("conv2d stride must be positive");
  if (pad < 0) throw UsageError("conv2d pad must be non-negative");
  if (kernel[1] != input[1]) {
    throw DimensionError("conv2d kernel expects " + std::to_string(kernel[1]) + " input channels, input has " +
                         std::to_string(input[1]));
  }
  ConvGeometry g;
  g.batch = input[0];
  g.in_channels = input[1];
  g.in_h = input[2];
  g.in_w = input[3];
  g.out_channels = kernel[0];
  g.kernel_h = kernel[2];
  g.kernel_w = kernel[3];
  g.stride = stride;
  g.pad = pad;
  if (g.kernel_h > g.in_h + 2 * pad || g.kernel_w > g.in_w + 2 * pad) {
    throw DimensionError("conv2d kernel " + shape_to_string(kernel) + " larger than padded input " +
                         shape_to_string(input));
  }
  g.out_h = (g.in_h + 2 * pad - g.kernel_h) / stride + 1;
  g.out_w = (g.in_w + 2 * pad - g.kernel_w) / stride + 1;
  return g;
}

ConvGeometry conv_transpose2d_geometry(const Shape& input, const Shape& kernel, int stride, int pad) {
  if (input.size() != 4) {
    throw DimensionError("conv_transpose2d input must be [N,C,H,W], got " + shape_to_string(input));
  }
  if (kernel.size() != 4) {
    throw DimensionError("conv_transpose2d kernel must be [C,F,kh,kw], got " + shape_to_string(kernel));
  }
  if (stride < 1) throw UsageError("conv_transpose2d stride must be positive");
  if (pad < 0) throw UsageError("conv_transpose2d pad must be non-negative");
  if (kernel[0] != input[1]) {
    throw DimensionError("conv_transpose2d kernel expects " + std::to_string(kernel[0]) +
                         " input channels, input has " + std::to_string(input[1]));
  }
  const int out_h = (input[2] - 1) * stride - 2 * pad + kernel[2];
  const int out_w = (input[3] - 1) * stride - 2 * pad + kernel[3];
  if (out_h <= 0 || out_w <= 0) {
    throw DimensionError("conv_transpose2d produces non-positive extent from " + shape_to_string(input));
  }
  ConvGeometry g;
  g.batch = input[0];
  g.in_channels = kernel[1];
  g.in_h = out_h;
  g.in_w = out_w;
  g.out_channels = kernel[0];
  g.kernel_h = kernel[2];
  g.kernel_w = kernel[3];
  g.stride = stride;
  g.pad = pad;
  g.out_h = input[2];
  g.out_w = input[3];
  return g;
}

template <class T>
void conv2d_forward(const ConvGeometry& g, const T* x, const T* w, const T* bias, T* y) {
  const int ckk = g.in_channels * g.kernel_h * g.kernel_w;
  const int ohw = g.out_h * g.out_w;
  const int chunk = chunk_samples(g);
  MapConstMat<T> W(w, g.out_channels, ckk);
  AlignedVector<T> cols;
  AlignedVector<T> out(std::size_t(g.out_channels) * chunk * ohw);
  for (int first = 0; first < g.batch; first += chunk) {
    const int count = std::min(chunk, g.batch - first);
    const std::size_t width = std::size_t(count) * ohw;
    if (is_pointwise(g)) {
      cols.resize(std::size_t(ckk) * width);
      gather_channels(x, first, count, g.in_channels, ohw, cols.data());
    } else {
      cols.resize(std::size_t(ckk) * width);
      im2col(g, x, first, count, cols.data());
    }
    MapConstMat<T> C(cols.data(), ckk, Eigen::Index(width));
    MapMat<T> Y(out.data(), g.out_channels, Eigen::Index(width));
    Y.noalias() = W * C;
    if (bias) {
      for (int f = 0; f < g.out_channels; ++f) Y.row(f).array() += bias[f];
    }
    scatter_channels(out.data(), first, count, g.out_channels, ohw, y);
  }
}

template <class T>
void conv2d_backward_input(const ConvGeometry& g, const T* dy, const T* w, T* dx) {
  const int ckk = g.in_channels * g.kernel_h * g.kernel_w;
  const int ohw = g.out_h * g.out_w;
  const int chunk = chunk_samples(g);
  MapConstMat<T> W(w, g.out_channels, ckk);
  std::fill(dx, dx + g.input_size(), T(0));
  AlignedVector<T> grad_out(std::size_t(g.out_channels) * chunk * ohw);
  AlignedVector<T> cols;
  for (int first = 0; first < g.batch; first += chunk) {
    const int count = std::min(chunk, g.batch - first);
    const std::size_t width = std::size_t(count) * ohw;
    gather_channels(dy, first, count, g.out_channels, ohw, grad_out.data());
    cols.resize(std::size_t(ckk) * width);
    MapConstMat<T> DY(grad_out.data(), g.out_channels, Eigen::Index(width));
    MapMat<T> C(cols.data(), ckk, Eigen::Index(width));
    C.noalias() = W.transpose() * DY;
    if (is_pointwise(g)) {
      scatter_channels(cols.data(), first, count, g.in_channels, ohw, dx);
    } else {
      col2im_accumulate(g, cols.data(), first, count, dx);
    }
  }
}

template <class T>
void conv2d_backward_weight(const ConvGeometry& g, const T* dy, const T* x, T* dw, T* dbias) {
  const int ckk = g.in_channels * g.kernel_h * g.kernel_w;
  const int ohw = g.out_h * g.out_w;
  const int chunk = chunk_samples(g);
  MapMat<T> DW(dw, g.out_channels, ckk);
  DW.setZero();
  if (dbias) std::fill(dbias, dbias + g.out_channels, T(0));
  AlignedVector<T> grad_out(std::size_t(g.out_channels) * chunk * ohw);
  AlignedVector<T> cols;
  for (int first = 0; first < g.batch; first += chunk) {
    const int count = std::min(chunk, g.batch - first);
    const std::size_t width = std::size_t(count) * ohw;
    gather_channels(dy, first, count, g.out_channels, ohw, grad_out.data());
    cols.resize(std::size_t(ckk) * width);
    if (is_pointwise(g)) {
      gather_channels(x, first, count, g.in_channels, ohw, cols.data());
    } else {
      im2col(g, x, first, count, cols.data());
    }
    MapConstMat<T> DY(grad_out.data(), g.out_channels, Eigen::Index(width));
    MapConstMat<T> C(cols.data(), ckk, Eigen::Index(width));
    DW.noalias() += DY * C.transpose();
    if (dbias) {
      for (int f = 0; f < g.out_channels; ++f) dbias[f] += DY.row(f).sum();
    }
  }
}

template <class T>
void dense_forward(int n, int in, int out, const T* x, const T* w, const T* b, T* y) {
  MapConstMat<T> X(x, n, in);
  MapConstMat<T> W(w, in, out);
  MapMat<T> Y(y, n, out);
  Y.noalias() = X * W;
  if (b) {
    Eigen::Map<const Eigen::Matrix<T, 1, Eigen::Dynamic>> B(b, out);
    Y.rowwise() += B;
  }
}

template <class T>
void dense_backward(int n, int in, int out, const T* dy, const T* x, const T* w, T* dx, T* dw, T* db) {
  MapConstMat<T> DY(dy, n, out);
  if (dx) {
    MapConstMat<T> W(w, in, out);
    MapMat<T> DX(dx, n, in);
    DX.noalias() = DY * W.transpose();
  }
  if (dw) {
    MapConstMat<T> X(x, n, in);
    MapMat<T> DW(dw, in, out);
    DW.noalias() = X.transpose() * DY;
  }
  if (db) {
    for (int j = 0; j < out; ++j) db[j] = DY.col(j).sum();
  }
}

NormDims norm_dims(const Shape& shape) {
  if (shape.size() < 2) throw DimensionError("batchnorm input must be [N,C,...], got " + shape_to_string(shape));
  NormDims d;
  d.batch = shape[0];
  d.channels = shape[1];
  for (std::size_t i = 2; i < shape.size(); ++i) d.spatial *= shape[i];
  return d;
}

template <class T>
void batchnorm_train_forward(const NormDims& d, const T* x, const T* gamma, const T* beta, T eps, T* y, T* xhat,
                             T* mean, T* var_biased, T* invstd) {
  const std::size_t count = std::size_t(d.batch) * d.spatial;
  for (int c = 0; c < d.channels; ++c) {
    // Accumulate in double so float32 statistics do not drift with batch size.
    double sum = 0.0;
    for (int n = 0; n < d.batch; ++n) {
      const T* p = x + (std::size_t(n) * d.channels + c) * d.spatial;
      for (int s = 0; s < d.spatial; ++s) sum += p[s];
    }
    const double mu = sum / double(count);
    double sq = 0.0;
    for (int n = 0; n < d.batch; ++n) {
      const T* p = x + (std::size_t(n) * d.channels + c) * d.spatial;
      for (int s = 0; s < d.spatial; ++s) {
        const double diff = p[s] - mu;
        sq += diff * diff;
      }
    }
    const double var = sq / double(count);
    const T inv = T(1.0 / std::sqrt(var + double(eps)));
    mean[c] = T(mu);
    var_biased[c] = T(var);
    invstd[c] = inv;
    for (int n = 0; n < d.batch; ++n) {
      const std::size_t off = (std::size_t(n) * d.channels + c) * d.spatial;
      for (int s = 0; s < d.spatial; ++s) {
        const T h = (x[off + s] - T(mu)) * inv;
        xhat[off + s] = h;
        y[off + s] = gamma[c] * h + beta[c];
      }
    }
  }
}

template <class T>
void batchnorm_train_backward(const NormDims& d, const T* dy, const T* xhat, const T* invstd, const T* gamma, T* dx,
                              T* dgamma, T* dbeta) {
  const double count = double(d.batch) * d.spatial;
  for (int c = 0; c < d.channels; ++c) {
    double sum_dy = 0.0;
    double sum_dy_xhat = 0.0;
    for (int n = 0; n < d.batch; ++n) {
      const std::size_t off = (std::size_t(n) * d.channels + c) * d.spatial;
      for (int s = 0; s < d.spatial; ++s) {
        sum_dy += dy[off + s];
        sum_dy_xhat += double(dy[off + s]) * xhat[off + s];
      }
    }
    if (dgamma) dgamma[c] = T(sum_dy_xhat);
    if (dbeta) dbeta[c] = T(sum_dy);
    if (dx) {
      const T scale = gamma[c] * invstd[c];
      const T mean_dy = T(sum_dy / count);
      const T mean_dy_xhat = T(sum_dy_xhat / count);
      for (int n = 0; n < d.batch; ++n) {
        const std::size_t off = (std::size_t(n) * d.channels + c) * d.spatial;
        for (int s = 0; s < d.spatial; ++s) {
          dx[off + s] = scale * (dy[off + s] - mean_dy - xhat[off + s] * mean_dy_xhat);
        }
      }
    }
  }
}

template <class T>
void batchnorm_infer_forward(const NormDims& d, const T* x, const T* gamma, const T* beta, const T* mean,
                             const T* var, T eps, T* y) {
  for (int c = 0; c < d.channels; ++c) {
    const T inv = T(1) / std::sqrt(var[c] + eps);
    for (int n = 0; n < d.batch; ++n) {
      const std::size_t off = (std::size_t(n) * d.channels + c) * d.spatial;
      for (int s = 0; s < d.spatial; ++s) y[off + s] = gamma[c] * (x[off + s] - mean[c]) * inv + beta[c];
    }
  }
}

template <class T>
void softmax_rows(int rows, int cols, const T* x, T* y) {
  for (int r = 0; r < rows; ++r) {
    const T* in = x + std::size_t(r) * cols;
    T* out = y + std::size_t(r) * cols;
    const T peak = *std::max_element(in, in + cols);
    T total = 0;
    for (int k = 0; k < cols; ++k) {
      out[k] = std::exp(in[k] - peak);
      total += out[k];
    }
    for (int k = 0; k < cols; ++k) out[k] /= total;
  }
}

#define PCGAN_INSTANTIATE(T)                                                                                   \
  template void conv2d_forward<T>(const ConvGeometry&, const T*, const T*, const T*, T*);                     \
  template void conv2d_backward_input<T>(const ConvGeometry&, const T*, const T*, T*);                        \
  template void conv2d_backward_weight<T>(const ConvGeometry&, const T*, const T*, T*, T*);                   \
  template void dense_forward<T>(int, int, int, const T*, const T*, const T*, T*);                            \
  template void dense_backward<T>(int, int, int, const T*, const T*, const T*, T*, T*, T*);                   \
  template void batchnorm_train_forward<T>(const NormDims&, const T*, const T*, const T*, T, T*, T*, T*, T*, \
                                           T*);                                                               \
  template void batchnorm_train_backward<T>(const NormDims&, const T*, const T*, const T*, const T*, T*, T*,  \
                                            T*);                                                              \
  template void batchnorm_infer_forward<T>(const NormDims&, const T*, const T*, const T*, const T*, const T*, \
                                           T, T*);                                                            \
  template void softmax_rows<T>(int, int, const T*, T*);

PCGAN_INSTANTIATE(float)
PCGAN_INSTANTIATE(double)

#undef PCGAN_INSTANTIATE

}  // namespace pcgan::kernels
