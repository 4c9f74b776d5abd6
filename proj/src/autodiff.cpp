#include "pcgan/autodiff.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdlib>

#include "pcgan/error.hpp"
#include "pcgan/kernels.hpp"

namespace pcgan::ad {
namespace {

std::atomic<bool> g_check_finite{
#ifdef NDEBUG
    false
#else
    true
#endif
};

std::atomic<testing::Fault> g_fault{testing::Fault::none};

Tape& tape_of(Var v) {
  if (!v.tape) throw UsageError("operation on a detached variable");
  return *v.tape;
}

void require_same_tape(Var a, Var b) {
  if (a.tape != b.tape) throw UsageError("variables belong to different tapes");
}

void require_same_shape(const char* op, Var a, Var b) {
  if (a.shape() != b.shape()) {
    throw DimensionError(std::string(op) + ": shape mismatch " + shape_to_string(a.shape()) + " vs " +
                         shape_to_string(b.shape()));
  }
}

}  // namespace

const Tensor& Var::value() const { return tape_of(*this).value(*this); }

void set_check_finite(bool enabled) { g_check_finite = enabled; }
bool check_finite_enabled() { return g_check_finite; }

namespace testing {
void inject_fault(Fault fault) { g_fault = fault; }
Fault active_fault() { return g_fault; }
}  // namespace testing

Var Tape::constant(Tensor value) { return leaf(std::move(value), false); }

Var Tape::leaf(Tensor value, bool requires_grad) {
  Node node;
  node.op = "leaf";
  node.value = std::move(value);
  node.requires_grad = requires_grad && recording_;
  nodes_.push_back(std::move(node));
  return Var{this, nodes_.size() - 1};
}

Var Tape::record(std::string_view op, Tensor value, std::initializer_list<Var> inputs, BackwardFn fn) {
  if (g_check_finite && !all_finite(value)) {
    throw NumericError(std::string(op) + " produced a non-finite value");
  }
  Node node;
  node.op = op;
  node.value = std::move(value);
  if (recording_) {
    for (Var in : inputs) {
      if (in.tape != this) throw UsageError(std::string(op) + ": input from a different tape");
      node.requires_grad = node.requires_grad || nodes_[in.id].requires_grad;
    }
    if (node.requires_grad) node.backward = std::move(fn);
  }
  nodes_.push_back(std::move(node));
  return Var{this, nodes_.size() - 1};
}

void Tape::accumulate(std::size_t id, const Tensor& g) {
  Node& node = nodes_[id];
  if (!node.requires_grad) return;
  if (node.grad.empty()) {
    node.grad = g;
    return;
  }
  float* dst = node.grad.ptr();
  const float* src = g.ptr();
  for (std::size_t i = 0; i < g.numel(); ++i) dst[i] += src[i];
}

void Tape::backward(Var loss) {
  if (loss.tape != this) throw UsageError("backward: loss belongs to a different tape");
  if (!recording_) throw UsageError("backward on a non-recording tape");
  if (backward_done_) throw UsageError("backward already ran on this tape");
  if (nodes_.at(loss.id).value.numel() != 1) {
    throw UsageError("backward requires a scalar loss, got shape " + shape_to_string(loss.shape()));
  }
  backward_done_ = true;
  Node& root = nodes_[loss.id];
  if (!root.requires_grad) return;
  root.grad = Tensor(root.value.shape(), 1.0f);
  for (std::size_t i = loss.id + 1; i-- > 0;) {
    Node& node = nodes_[i];
    if (!node.backward || node.grad.empty()) continue;
    node.backward(*this, i);
  }
}

// ---------------------------------------------------------------------------
// Elementwise and structural ops

Var add(Var a, Var b) {
  require_same_tape(a, b);
  require_same_shape("add", a, b);
  Tensor out = a.value();
  const float* pb = b.value().ptr();
  for (std::size_t i = 0; i < out.numel(); ++i) out[i] += pb[i];
  const std::size_t ia = a.id, ib = b.id;
  return tape_of(a).record("add", std::move(out), {a, b}, [ia, ib](Tape& t, std::size_t self) {
    t.accumulate(ia, t.grad(self));
    t.accumulate(ib, t.grad(self));
  });
}

Var mul(Var a, Var b) {
  require_same_tape(a, b);
  require_same_shape("mul", a, b);
  Tensor out = a.value();
  const float* pb = b.value().ptr();
  for (std::size_t i = 0; i < out.numel(); ++i) out[i] *= pb[i];
  const std::size_t ia = a.id, ib = b.id;
  return tape_of(a).record("mul", std::move(out), {a, b}, [ia, ib](Tape& t, std::size_t self) {
    const Tensor& g = t.grad(self);
    if (t.requires_grad(ia)) {
      Tensor ga = t.value(ib);
      for (std::size_t i = 0; i < ga.numel(); ++i) ga[i] *= g[i];
      t.accumulate(ia, ga);
    }
    if (t.requires_grad(ib)) {
      Tensor gb = t.value(ia);
      for (std::size_t i = 0; i < gb.numel(); ++i) gb[i] *= g[i];
      t.accumulate(ib, gb);
    }
  });
}

Var scale(Var a, float factor) {
  Tensor out = a.value();
  for (float& v : out.storage()) v *= factor;
  const std::size_t ia = a.id;
  return tape_of(a).record("scale", std::move(out), {a}, [ia, factor](Tape& t, std::size_t self) {
    Tensor g = t.grad(self);
    for (float& v : g.storage()) v *= factor;
    t.accumulate(ia, g);
  });
}

Var sum(Var a) {
  double total = 0.0;
  for (float v : a.value().storage()) total += v;
  const std::size_t ia = a.id;
  const Shape shape = a.shape();
  return tape_of(a).record("sum", Tensor::scalar(float(total)), {a}, [ia, shape](Tape& t, std::size_t self) {
    t.accumulate(ia, Tensor(shape, t.grad(self)[0]));
  });
}

Var mean(Var a) {
  const std::size_t n = a.value().numel();
  return scale(sum(a), 1.0f / float(n));
}

Var reshape(Var a, Shape shape) {
  Tensor out = a.value().reshaped(std::move(shape));
  const std::size_t ia = a.id;
  const Shape original = a.shape();
  return tape_of(a).record("reshape", std::move(out), {a}, [ia, original](Tape& t, std::size_t self) {
    t.accumulate(ia, t.grad(self).reshaped(original));
  });
}

Var slice_rows(Var a, int begin, int end) {
  const Shape& s = a.shape();
  if (s.empty() || begin < 0 || end > s[0] || begin >= end) {
    throw DimensionError("slice_rows [" + std::to_string(begin) + "," + std::to_string(end) + ") of " +
                         shape_to_string(s));
  }
  const std::size_t row = a.value().numel() / std::size_t(s[0]);
  Shape out_shape = s;
  out_shape[0] = end - begin;
  const float* src = a.value().ptr() + std::size_t(begin) * row;
  Tensor out(out_shape, std::vector<float>(src, src + std::size_t(end - begin) * row));
  const std::size_t ia = a.id;
  return tape_of(a).record("slice_rows", std::move(out), {a}, [ia, s, begin, row](Tape& t, std::size_t self) {
    Tensor g(s, 0.0f);
    const Tensor& gs = t.grad(self);
    std::copy(gs.ptr(), gs.ptr() + gs.numel(), g.ptr() + std::size_t(begin) * row);
    t.accumulate(ia, g);
  });
}

Var slice_cols(Var a, int begin, int end) {
  const Shape& s = a.shape();
  if (s.size() != 2 || begin < 0 || end > s[1] || begin >= end) {
    throw DimensionError("slice_cols [" + std::to_string(begin) + "," + std::to_string(end) + ") of " +
                         shape_to_string(s));
  }
  const int n = s[0], k = s[1], w = end - begin;
  Tensor out(Shape{n, w});
  for (int i = 0; i < n; ++i) {
    for (int j = 0; j < w; ++j) out[std::size_t(i) * w + j] = a.value()[std::size_t(i) * k + begin + j];
  }
  const std::size_t ia = a.id;
  return tape_of(a).record("slice_cols", std::move(out), {a}, [ia, n, k, w, begin](Tape& t, std::size_t self) {
    Tensor g(Shape{n, k}, 0.0f);
    const Tensor& gs = t.grad(self);
    for (int i = 0; i < n; ++i) {
      for (int j = 0; j < w; ++j) g[std::size_t(i) * k + begin + j] = gs[std::size_t(i) * w + j];
    }
    t.accumulate(ia, g);
  });
}

Var concat_rows(Var a, Var b) {
  require_same_tape(a, b);
  Shape sa = a.shape(), sb = b.shape();
  if (sa.empty() || sa.size() != sb.size() || !std::equal(sa.begin() + 1, sa.end(), sb.begin() + 1)) {
    throw DimensionError("concat_rows: incompatible " + shape_to_string(sa) + " and " + shape_to_string(sb));
  }
  Shape out_shape = sa;
  out_shape[0] = sa[0] + sb[0];
  AlignedVector<float> values(a.value().storage());
  values.insert(values.end(), b.value().storage().begin(), b.value().storage().end());
  const std::size_t ia = a.id, ib = b.id;
  const std::size_t na = a.value().numel();
  return tape_of(a).record("concat_rows", Tensor(out_shape, std::move(values)), {a, b},
                           [ia, ib, na, sa, sb](Tape& t, std::size_t self) {
                             const Tensor& g = t.grad(self);
                             if (t.requires_grad(ia)) {
                               t.accumulate(ia, Tensor(sa, AlignedVector<float>(g.ptr(), g.ptr() + na)));
                             }
                             if (t.requires_grad(ib)) {
                               t.accumulate(ib, Tensor(sb, AlignedVector<float>(g.ptr() + na, g.ptr() + g.numel())));
                             }
                           });
}

Var gather_rows(Var table, std::span<const int> rows) {
  const Shape& s = table.shape();
  if (s.size() != 2) throw DimensionError("gather_rows expects a [K,D] table, got " + shape_to_string(s));
  const int k = s[0], d = s[1];
  const int n = static_cast<int>(rows.size());
  if (n == 0) throw UsageError("gather_rows with no rows");
  Tensor out(Shape{n, d});
  for (int i = 0; i < n; ++i) {
    if (rows[i] < 0 || rows[i] >= k) {
      throw UsageError("row index " + std::to_string(rows[i]) + " outside table of " + std::to_string(k));
    }
    std::copy_n(table.value().ptr() + std::size_t(rows[i]) * d, d, out.ptr() + std::size_t(i) * d);
  }
  std::vector<int> idx(rows.begin(), rows.end());
  const std::size_t it = table.id;
  return tape_of(table).record("gather_rows", std::move(out), {table},
                               [it, idx = std::move(idx), s, d](Tape& t, std::size_t self) {
                                 Tensor g(s, 0.0f);
                                 const Tensor& gs = t.grad(self);
                                 for (std::size_t i = 0; i < idx.size(); ++i) {
                                   float* dst = g.ptr() + std::size_t(idx[i]) * d;
                                   const float* src = gs.ptr() + i * d;
                                   for (int j = 0; j < d; ++j) dst[j] += src[j];
                                 }
                                 t.accumulate(it, g);
                               });
}

// ---------------------------------------------------------------------------
// Layer primitives

Var conv2d(Var x, Var kernel, Var bias, int stride, int pad) {
  require_same_tape(x, kernel);
  require_same_tape(x, bias);
  const kernels::ConvGeometry g = kernels::conv2d_geometry(x.shape(), kernel.shape(), stride, pad);
  if (bias.shape() != Shape{g.out_channels}) {
    throw DimensionError("conv2d bias must be [" + std::to_string(g.out_channels) + "], got " +
                         shape_to_string(bias.shape()));
  }
  Tensor out(Shape{g.batch, g.out_channels, g.out_h, g.out_w});
  kernels::conv2d_forward(g, x.value().ptr(), kernel.value().ptr(), bias.value().ptr(), out.ptr());
  const std::size_t ix = x.id, ik = kernel.id, ib = bias.id;
  return tape_of(x).record("conv2d", std::move(out), {x, kernel, bias}, [g, ix, ik, ib](Tape& t, std::size_t self) {
    const Tensor& dy = t.grad(self);
    if (t.requires_grad(ix)) {
      Tensor dx(t.value(ix).shape());
      kernels::conv2d_backward_input(g, dy.ptr(), t.value(ik).ptr(), dx.ptr());
      t.accumulate(ix, dx);
    }
    if (t.requires_grad(ik) || t.requires_grad(ib)) {
      Tensor dw(t.value(ik).shape());
      Tensor db(t.value(ib).shape());
      kernels::conv2d_backward_weight(g, dy.ptr(), t.value(ix).ptr(), dw.ptr(), db.ptr());
      if (testing::active_fault() == testing::Fault::conv2d_backward) {
        for (float& v : dw.storage()) v *= 1.25f;
      }
      t.accumulate(ik, dw);
      t.accumulate(ib, db);
    }
  });
}

Var conv_transpose2d(Var x, Var kernel, Var bias, int stride, int pad) {
  require_same_tape(x, kernel);
  require_same_tape(x, bias);
  // g describes the conv2d whose input-adjoint this op is: its input is our
  // output and its output is our input.
  const kernels::ConvGeometry g = kernels::conv_transpose2d_geometry(x.shape(), kernel.shape(), stride, pad);
  if (bias.shape() != Shape{g.in_channels}) {
    throw DimensionError("conv_transpose2d bias must be [" + std::to_string(g.in_channels) + "], got " +
                         shape_to_string(bias.shape()));
  }
  Tensor out(Shape{g.batch, g.in_channels, g.in_h, g.in_w});
  kernels::conv2d_backward_input(g, x.value().ptr(), kernel.value().ptr(), out.ptr());
  const std::size_t plane = std::size_t(g.in_h) * g.in_w;
  for (int n = 0; n < g.batch; ++n) {
    for (int f = 0; f < g.in_channels; ++f) {
      float* p = out.ptr() + (std::size_t(n) * g.in_channels + f) * plane;
      const float b = bias.value()[f];
      for (std::size_t i = 0; i < plane; ++i) p[i] += b;
    }
  }
  const std::size_t ix = x.id, ik = kernel.id, ib = bias.id;
  return tape_of(x).record("conv_transpose2d", std::move(out), {x, kernel, bias},
                           [g, ix, ik, ib, plane](Tape& t, std::size_t self) {
                             const Tensor& dy = t.grad(self);
                             if (t.requires_grad(ix)) {
                               Tensor dx(t.value(ix).shape());
                               kernels::conv2d_forward<float>(g, dy.ptr(), t.value(ik).ptr(), nullptr, dx.ptr());
                               t.accumulate(ix, dx);
                             }
                             if (t.requires_grad(ik)) {
                               Tensor dw(t.value(ik).shape());
                               kernels::conv2d_backward_weight<float>(g, t.value(ix).ptr(), dy.ptr(), dw.ptr(),
                                                                      nullptr);
                               t.accumulate(ik, dw);
                             }
                             if (t.requires_grad(ib)) {
                               Tensor db(t.value(ib).shape(), 0.0f);
                               for (int n = 0; n < g.batch; ++n) {
                                 for (int f = 0; f < g.in_channels; ++f) {
                                   const float* p = dy.ptr() + (std::size_t(n) * g.in_channels + f) * plane;
                                   double acc = 0.0;
                                   for (std::size_t i = 0; i < plane; ++i) acc += p[i];
                                   db[f] += float(acc);
                                 }
                               }
                               t.accumulate(ib, db);
                             }
                           });
}

Var dense(Var x, Var weight, Var bias) {
  require_same_tape(x, weight);
  require_same_tape(x, bias);
  const Shape& sx = x.shape();
  const Shape& sw = weight.shape();
  if (sx.size() != 2 || sw.size() != 2 || sx[1] != sw[0]) {
    throw DimensionError("dense: input " + shape_to_string(sx) + " does not match weight " + shape_to_string(sw));
  }
  if (bias.shape() != Shape{sw[1]}) {
    throw DimensionError("dense bias must be [" + std::to_string(sw[1]) + "], got " + shape_to_string(bias.shape()));
  }
  const int n = sx[0], in = sx[1], out_units = sw[1];
  Tensor out(Shape{n, out_units});
  kernels::dense_forward(n, in, out_units, x.value().ptr(), weight.value().ptr(), bias.value().ptr(), out.ptr());
  const std::size_t ix = x.id, iw = weight.id, ib = bias.id;
  return tape_of(x).record("dense", std::move(out), {x, weight, bias},
                           [n, in, out_units, ix, iw, ib](Tape& t, std::size_t self) {
                             Tensor dx, dw, db;
                             if (t.requires_grad(ix)) dx = Tensor(Shape{n, in});
                             if (t.requires_grad(iw)) dw = Tensor(Shape{in, out_units});
                             if (t.requires_grad(ib)) db = Tensor(Shape{out_units});
                             kernels::dense_backward(n, in, out_units, t.grad(self).ptr(), t.value(ix).ptr(),
                                                     t.value(iw).ptr(), dx.empty() ? nullptr : dx.ptr(),
                                                     dw.empty() ? nullptr : dw.ptr(), db.empty() ? nullptr : db.ptr());
                             if (!dx.empty()) t.accumulate(ix, dx);
                             if (!dw.empty()) t.accumulate(iw, dw);
                             if (!db.empty()) t.accumulate(ib, db);
                           });
}

Var batchnorm(Var x, Var gamma, Var beta, const BatchNormOptions& options) {
  require_same_tape(x, gamma);
  require_same_tape(x, beta);
  const kernels::NormDims d = kernels::norm_dims(x.shape());
  const Shape channel_shape{d.channels};
  if (gamma.shape() != channel_shape || beta.shape() != channel_shape) {
    throw DimensionError("batchnorm parameters must be [" + std::to_string(d.channels) + "]");
  }
  Tensor out(x.shape());
  const std::size_t ix = x.id, ig = gamma.id, ibeta = beta.id;
  if (options.use_batch_stats) {
    if (d.batch < 2) throw PreconditionError("batchnorm with batch statistics needs at least 2 samples");
    Tensor xhat(x.shape());
    Tensor mu(channel_shape), var(channel_shape), invstd(channel_shape);
    kernels::batchnorm_train_forward(d, x.value().ptr(), gamma.value().ptr(), beta.value().ptr(), options.eps,
                                     out.ptr(), xhat.ptr(), mu.ptr(), var.ptr(), invstd.ptr());
    if (options.running_mean && options.running_var) {
      const float m = options.momentum;
      const double count = double(d.batch) * d.spatial;
      const float unbias = float(count / (count - 1.0));
      for (int c = 0; c < d.channels; ++c) {
        (*options.running_mean)[c] = (1.0f - m) * (*options.running_mean)[c] + m * mu[c];
        (*options.running_var)[c] = (1.0f - m) * (*options.running_var)[c] + m * var[c] * unbias;
      }
    }
    return tape_of(x).record(
        "batchnorm", std::move(out), {x, gamma, beta},
        [d, ix, ig, ibeta, xhat = std::move(xhat), invstd = std::move(invstd)](Tape& t, std::size_t self) {
          Tensor dx, dg, db;
          if (t.requires_grad(ix)) dx = Tensor(t.value(ix).shape());
          dg = Tensor(Shape{d.channels});
          db = Tensor(Shape{d.channels});
          kernels::batchnorm_train_backward(d, t.grad(self).ptr(), xhat.ptr(), invstd.ptr(), t.value(ig).ptr(),
                                            dx.empty() ? nullptr : dx.ptr(), dg.ptr(), db.ptr());
          if (!dx.empty()) t.accumulate(ix, dx);
          t.accumulate(ig, dg);
          t.accumulate(ibeta, db);
        });
  }
  if (!options.infer_mean || !options.infer_var) throw UsageError("batchnorm inference requires running statistics");
  const Tensor& rm = *options.infer_mean;
  const Tensor& rv = *options.infer_var;
  kernels::batchnorm_infer_forward(d, x.value().ptr(), gamma.value().ptr(), beta.value().ptr(), rm.ptr(), rv.ptr(),
                                   options.eps, out.ptr());
  Tensor invstd(channel_shape), shift(channel_shape);
  for (int c = 0; c < d.channels; ++c) {
    invstd[c] = 1.0f / std::sqrt(rv[c] + options.eps);
    shift[c] = rm[c];
  }
  return tape_of(x).record("batchnorm", std::move(out), {x, gamma, beta},
                           [d, ix, ig, ibeta, invstd, shift](Tape& t, std::size_t self) {
                             const Tensor& dy = t.grad(self);
                             const Tensor& xv = t.value(ix);
                             const Tensor& gv = t.value(ig);
                             Tensor dx(xv.shape());
                             Tensor dg(Shape{d.channels}, 0.0f), db(Shape{d.channels}, 0.0f);
                             for (int c = 0; c < d.channels; ++c) {
                               double sg = 0.0, sb = 0.0;
                               for (int n = 0; n < d.batch; ++n) {
                                 const std::size_t off = (std::size_t(n) * d.channels + c) * d.spatial;
                                 for (int s = 0; s < d.spatial; ++s) {
                                   dx[off + s] = dy[off + s] * gv[c] * invstd[c];
                                   sg += double(dy[off + s]) * (xv[off + s] - shift[c]) * invstd[c];
                                   sb += dy[off + s];
                                 }
                               }
                               dg[c] = float(sg);
                               db[c] = float(sb);
                             }
                             t.accumulate(ix, dx);
                             t.accumulate(ig, dg);
                             t.accumulate(ibeta, db);
                           });
}

Var leaky_relu(Var x, float alpha) {
  if (!(alpha >= 0.0f && alpha < 1.0f)) throw UsageError("leaky_relu alpha must lie in [0,1)");
  Tensor out = x.value();
  float* o = out.ptr();
  for (std::size_t i = 0, n = out.numel(); i < n; ++i) o[i] = o[i] > 0.0f ? o[i] : alpha * o[i];
  const std::size_t ix = x.id;
  return tape_of(x).record("leaky_relu", std::move(out), {x}, [ix, alpha](Tape& t, std::size_t self) {
    Tensor g = t.grad(self);
    const float* xv = t.value(ix).ptr();
    float* gp = g.ptr();
    for (std::size_t i = 0, n = g.numel(); i < n; ++i) gp[i] = xv[i] > 0.0f ? gp[i] : alpha * gp[i];
    t.accumulate(ix, g);
  });
}

Var tanh(Var x) {
  Tensor out = x.value();
  for (float& v : out.storage()) v = std::tanh(v);
  const std::size_t ix = x.id;
  return tape_of(x).record("tanh", std::move(out), {x}, [ix](Tape& t, std::size_t self) {
    Tensor g = t.grad(self);
    const Tensor& y = t.value(self);
    for (std::size_t i = 0; i < g.numel(); ++i) g[i] *= 1.0f - y[i] * y[i];
    t.accumulate(ix, g);
  });
}

Var sigmoid(Var x) {
  Tensor out = x.value();
  for (float& v : out.storage()) {
    v = v >= 0.0f ? 1.0f / (1.0f + std::exp(-v)) : std::exp(v) / (1.0f + std::exp(v));
  }
  const std::size_t ix = x.id;
  return tape_of(x).record("sigmoid", std::move(out), {x}, [ix](Tape& t, std::size_t self) {
    Tensor g = t.grad(self);
    const Tensor& y = t.value(self);
    for (std::size_t i = 0; i < g.numel(); ++i) g[i] *= y[i] * (1.0f - y[i]);
    t.accumulate(ix, g);
  });
}

Var softmax(Var x) {
  const Shape& s = x.shape();
  if (s.size() != 2 || s[1] < 1) throw DimensionError("softmax expects [N,K], got " + shape_to_string(s));
  const int n = s[0], k = s[1];
  Tensor out(s);
  kernels::softmax_rows(n, k, x.value().ptr(), out.ptr());
  const std::size_t ix = x.id;
  return tape_of(x).record("softmax", std::move(out), {x}, [ix, n, k](Tape& t, std::size_t self) {
    const Tensor& y = t.value(self);
    const Tensor& gy = t.grad(self);
    Tensor g(y.shape());
    for (int i = 0; i < n; ++i) {
      const std::size_t off = std::size_t(i) * k;
      double dot = 0.0;
      for (int j = 0; j < k; ++j) dot += double(gy[off + j]) * y[off + j];
      for (int j = 0; j < k; ++j) g[off + j] = y[off + j] * (gy[off + j] - float(dot));
    }
    t.accumulate(ix, g);
  });
}

Var dropout(Var x, float rate, bool training, Rng& rng) {
  if (!(rate >= 0.0f && rate < 1.0f)) throw UsageError("dropout rate must lie in [0,1)");
  if (!training || rate == 0.0f) return x;
  const float survivor_scale = 1.0f / (1.0f - rate);
  // Each 64-bit draw decides two elements: keep iff a 32-bit half >= rate * 2^32.
  const auto drop_below = static_cast<std::uint64_t>(double(rate) * 4294967296.0);
  Tensor mask(x.shape());
  float* m = mask.ptr();
  const std::size_t count = mask.numel();
  for (std::size_t i = 0; i < count; i += 2) {
    const std::uint64_t bits = rng();
    m[i] = (bits & 0xffffffffu) >= drop_below ? survivor_scale : 0.0f;
    if (i + 1 < count) m[i + 1] = (bits >> 32) >= drop_below ? survivor_scale : 0.0f;
  }
  Tensor out = x.value();
  float* o = out.ptr();
  for (std::size_t i = 0; i < count; ++i) o[i] *= m[i];
  const std::size_t ix = x.id;
  return tape_of(x).record("dropout", std::move(out), {x}, [ix, mask = std::move(mask)](Tape& t, std::size_t self) {
    Tensor g = t.grad(self);
    for (std::size_t i = 0; i < g.numel(); ++i) g[i] *= mask[i];
    t.accumulate(ix, g);
  });
}

Var binary_nll(Var probs, bool target_real, float eps) {
  const Tensor& p = probs.value();
  const std::size_t n = p.numel();
  if (n == 0) throw UsageError("binary_nll on an empty batch");
  double total = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double c = std::clamp(double(p[i]), double(eps), 1.0 - double(eps));
    total -= target_real ? std::log(c) : std::log(1.0 - c);
  }
  const std::size_t ip = probs.id;
  return tape_of(probs).record("binary_nll", Tensor::scalar(float(total / double(n))), {probs},
                               [ip, n, target_real, eps](Tape& t, std::size_t self) {
                                 const float upstream = t.grad(self)[0];
                                 const Tensor& pv = t.value(ip);
                                 Tensor g(pv.shape(), 0.0f);
                                 for (std::size_t i = 0; i < n; ++i) {
                                   const float v = pv[i];
                                   if (v <= eps || v >= 1.0f - eps) continue;
                                   g[i] = upstream * (target_real ? -1.0f / v : 1.0f / (1.0f - v)) / float(n);
                                 }
                                 t.accumulate(ip, g);
                               });
}

Var categorical_nll(Var probs, std::span<const int> labels, float eps) {
  const Shape& s = probs.shape();
  if (s.size() != 2) throw DimensionError("categorical_nll expects [N,K], got " + shape_to_string(s));
  const int n = s[0], k = s[1];
  if (static_cast<int>(labels.size()) != n) {
    throw DimensionError("categorical_nll: " + std::to_string(labels.size()) + " labels for " + std::to_string(n) +
                         " rows");
  }
  double total = 0.0;
  for (int i = 0; i < n; ++i) {
    if (labels[i] < 0 || labels[i] >= k) {
      throw UsageError("label " + std::to_string(labels[i]) + " outside [0," + std::to_string(k) + ")");
    }
    const double c = std::max(double(probs.value()[std::size_t(i) * k + labels[i]]), double(eps));
    total -= std::log(c);
  }
  std::vector<int> idx(labels.begin(), labels.end());
  const std::size_t ip = probs.id;
  return tape_of(probs).record("categorical_nll", Tensor::scalar(float(total / n)), {probs},
                               [ip, n, k, eps, idx = std::move(idx)](Tape& t, std::size_t self) {
                                 const float upstream = t.grad(self)[0];
                                 const Tensor& pv = t.value(ip);
                                 Tensor g(pv.shape(), 0.0f);
                                 for (int i = 0; i < n; ++i) {
                                   const std::size_t at = std::size_t(i) * k + idx[i];
                                   if (pv[at] <= eps) continue;
                                   g[at] = -upstream / (pv[at] * float(n));
                                 }
                                 t.accumulate(ip, g);
                               });
}

}  // namespace pcgan::ad
