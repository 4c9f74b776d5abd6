#include "pcgan/selfcheck.hpp"

#include <chrono>
#include <cstdio>
#include <cmath>
#include <functional>
#include <random>

#include "pcgan/autodiff.hpp"
#include "pcgan/kernels.hpp"
#include "pcgan/rng.hpp"

namespace pcgan {
namespace {

using DVec = std::vector<double>;

struct Instance {
  std::vector<Tensor> inputs;  // float values fed to the tape (the doubles are exact copies)
  std::function<ad::Var(ad::Tape&, const std::vector<ad::Var>&)> taped;
  std::function<double(const std::vector<DVec>&)> reference;  // scalar loss in double
};

Tensor random_tensor(Rng& rng, const Shape& shape, float lo = -1.0f, float hi = 1.0f) {
  Tensor t(shape);
  std::uniform_real_distribution<float> u(lo, hi);
  for (float& v : t.values()) v = u(rng);
  return t;
}

std::string sci(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.3e", v);
  return buf;
}

int uniform(Rng& rng, int lo, int hi) { return std::uniform_int_distribution<int>(lo, hi)(rng); }

DVec to_double(const Tensor& t) { return DVec(t.values().begin(), t.values().end()); }

double dot(const DVec& a, const DVec& b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

// Weighted-sum loss sum(r * y) turns a tensor-valued op into a scalar one.
ad::Var project(ad::Tape& tape, ad::Var y, const Tensor& r) { return ad::sum(ad::mul(y, tape.constant(r))); }

Instance conv_instance(Rng& rng) {
  const int n = uniform(rng, 1, 2), c = uniform(rng, 1, 3), f = uniform(rng, 1, 3);
  const int stride = uniform(rng, 1, 2), pad = uniform(rng, 0, 1), k = uniform(rng, 1, 3);
  const int h = uniform(rng, std::max(k, 3), 6), w = uniform(rng, std::max(k, 3), 6);
  const Shape xs{n, c, h, w}, ks{f, c, k, k};
  const kernels::ConvGeometry g = kernels::conv2d_geometry(xs, ks, stride, pad);
  const Tensor r = random_tensor(rng, Shape{n, f, g.out_h, g.out_w});
  Instance in;
  in.inputs = {random_tensor(rng, xs), random_tensor(rng, ks), random_tensor(rng, Shape{f})};
  in.taped = [=](ad::Tape& t, const std::vector<ad::Var>& v) {
    return project(t, ad::conv2d(v[0], v[1], v[2], stride, pad), r);
  };
  const DVec rd = to_double(r);
  in.reference = [=](const std::vector<DVec>& v) {
    DVec y(g.output_size());
    kernels::conv2d_forward<double>(g, v[0].data(), v[1].data(), v[2].data(), y.data());
    return dot(y, rd);
  };
  return in;
}

Instance conv_transpose_instance(Rng& rng) {
  const int n = uniform(rng, 1, 2), c = uniform(rng, 1, 3), f = uniform(rng, 1, 3);
  const int stride = uniform(rng, 1, 2), k = uniform(rng, 1, 4), pad = uniform(rng, 0, std::min(1, k - 1));
  const int h = uniform(rng, 2, 5), w = uniform(rng, 2, 5);
  const Shape xs{n, c, h, w}, ks{c, f, k, k};
  const kernels::ConvGeometry g = kernels::conv_transpose2d_geometry(xs, ks, stride, pad);
  const Tensor r = random_tensor(rng, Shape{n, f, g.in_h, g.in_w});
  Instance in;
  in.inputs = {random_tensor(rng, xs), random_tensor(rng, ks), random_tensor(rng, Shape{f})};
  in.taped = [=](ad::Tape& t, const std::vector<ad::Var>& v) {
    return project(t, ad::conv_transpose2d(v[0], v[1], v[2], stride, pad), r);
  };
  const DVec rd = to_double(r);
  in.reference = [=](const std::vector<DVec>& v) {
    DVec y(g.input_size());
    kernels::conv2d_backward_input<double>(g, v[0].data(), v[1].data(), y.data());
    const std::size_t plane = std::size_t(g.in_h) * g.in_w;
    for (std::size_t i = 0; i < y.size(); ++i) y[i] += v[2][(i / plane) % std::size_t(f)];
    return dot(y, rd);
  };
  return in;
}

Instance batchnorm_instance(Rng& rng) {
  const int n = uniform(rng, 2, 4), c = uniform(rng, 1, 3);
  const bool spatial = uniform(rng, 0, 1) == 1;
  const Shape xs = spatial ? Shape{n, c, uniform(rng, 1, 3), uniform(rng, 1, 3)} : Shape{n, c};
  const Tensor r = random_tensor(rng, xs);
  const float eps = 1e-5f;
  Instance in;
  in.inputs = {random_tensor(rng, xs, -2.0f, 2.0f), random_tensor(rng, Shape{c}, 0.5f, 1.5f),
               random_tensor(rng, Shape{c})};
  in.taped = [=](ad::Tape& t, const std::vector<ad::Var>& v) {
    ad::BatchNormOptions o;
    o.eps = eps;
    return project(t, ad::batchnorm(v[0], v[1], v[2], o), r);
  };
  const DVec rd = to_double(r);
  const kernels::NormDims d = kernels::norm_dims(xs);
  in.reference = [=](const std::vector<DVec>& v) {
    DVec y(v[0].size()), xhat(v[0].size()), mu(static_cast<std::size_t>(c)), var(mu), inv(mu);
    kernels::batchnorm_train_forward<double>(d, v[0].data(), v[1].data(), v[2].data(), double(eps), y.data(),
                                             xhat.data(), mu.data(), var.data(), inv.data());
    return dot(y, rd);
  };
  return in;
}

Instance dense_instance(Rng& rng) {
  const int n = uniform(rng, 1, 4), i = uniform(rng, 1, 6), o = uniform(rng, 1, 5);
  const Tensor r = random_tensor(rng, Shape{n, o});
  Instance in;
  in.inputs = {random_tensor(rng, Shape{n, i}), random_tensor(rng, Shape{i, o}), random_tensor(rng, Shape{o})};
  in.taped = [=](ad::Tape& t, const std::vector<ad::Var>& v) { return project(t, ad::dense(v[0], v[1], v[2]), r); };
  const DVec rd = to_double(r);
  in.reference = [=](const std::vector<DVec>& v) {
    DVec y(std::size_t(n) * o);
    kernels::dense_forward<double>(n, i, o, v[0].data(), v[1].data(), v[2].data(), y.data());
    return dot(y, rd);
  };
  return in;
}

Instance leaky_instance(Rng& rng) {
  const Shape xs{uniform(rng, 1, 3), uniform(rng, 1, 8)};
  Tensor x = random_tensor(rng, xs);
  // Keep clear of the kink so central differences stay on one side.
  for (float& v : x.values()) {
    if (std::fabs(v) < 0.05f) v = v < 0 ? -0.05f - std::fabs(v) : 0.05f + v;
  }
  const float alpha = std::uniform_real_distribution<float>(0.0f, 0.5f)(rng);
  const Tensor r = random_tensor(rng, xs);
  Instance in;
  in.inputs = {x};
  in.taped = [=](ad::Tape& t, const std::vector<ad::Var>& v) { return project(t, ad::leaky_relu(v[0], alpha), r); };
  const DVec rd = to_double(r);
  in.reference = [=](const std::vector<DVec>& v) {
    double s = 0.0;
    for (std::size_t i = 0; i < v[0].size(); ++i) s += rd[i] * (v[0][i] > 0 ? v[0][i] : double(alpha) * v[0][i]);
    return s;
  };
  return in;
}

Instance softmax_nll_instance(Rng& rng) {
  const int n = uniform(rng, 1, 4), k = uniform(rng, 2, 6);
  std::vector<int> labels(static_cast<std::size_t>(n));
  for (int& l : labels) l = uniform(rng, 0, k - 1);
  Instance in;
  in.inputs = {random_tensor(rng, Shape{n, k}, -2.0f, 2.0f)};
  in.taped = [=](ad::Tape&, const std::vector<ad::Var>& v) {
    return ad::categorical_nll(ad::softmax(v[0]), labels, 1e-7f);
  };
  in.reference = [=](const std::vector<DVec>& v) {
    DVec p(v[0].size());
    kernels::softmax_rows<double>(n, k, v[0].data(), p.data());
    double s = 0.0;
    for (int i = 0; i < n; ++i) s -= std::log(p[std::size_t(i) * k + labels[std::size_t(i)]]);
    return s / n;
  };
  return in;
}

Instance make_instance(GradKind kind, Rng& rng) {
  switch (kind) {
    case GradKind::conv2d: return conv_instance(rng);
    case GradKind::conv_transpose2d: return conv_transpose_instance(rng);
    case GradKind::batchnorm: return batchnorm_instance(rng);
    case GradKind::dense: return dense_instance(rng);
    case GradKind::leaky_relu: return leaky_instance(rng);
    case GradKind::softmax_nll: return softmax_nll_instance(rng);
  }
  return dense_instance(rng);
}

double instance_error(const Instance& in) {
  ad::Tape tape;
  std::vector<ad::Var> vars;
  for (const auto& t : in.inputs) vars.push_back(tape.leaf(t));
  tape.backward(in.taped(tape, vars));

  constexpr double h = 1e-3;
  std::vector<DVec> point;
  for (const auto& t : in.inputs) point.push_back(to_double(t));
  double diff2 = 0.0, a2 = 0.0, n2 = 0.0;
  for (std::size_t j = 0; j < point.size(); ++j) {
    const Tensor& g = tape.grad(vars[j]);
    for (std::size_t i = 0; i < point[j].size(); ++i) {
      const double saved = point[j][i];
      point[j][i] = saved + h;
      const double up = in.reference(point);
      point[j][i] = saved - h;
      const double down = in.reference(point);
      point[j][i] = saved;
      const double numeric = (up - down) / (2 * h);
      const double analytic = g.empty() ? 0.0 : double(g[i]);
      diff2 += (analytic - numeric) * (analytic - numeric);
      a2 += analytic * analytic;
      n2 += numeric * numeric;
    }
  }
  const double scale = std::sqrt(std::max(a2, n2));
  return scale < 1e-12 ? std::sqrt(diff2) : std::sqrt(diff2) / scale;
}

}  // namespace

std::string property_name(GradKind kind) {
  switch (kind) {
    case GradKind::conv2d: return "conv2d gradient";
    case GradKind::conv_transpose2d: return "conv_transpose2d gradient";
    case GradKind::batchnorm: return "batchnorm gradient";
    case GradKind::dense: return "dense gradient";
    case GradKind::leaky_relu: return "leaky_relu gradient";
    case GradKind::softmax_nll: return "softmax+nll gradient";
  }
  return "gradient";
}

PropertyResult check_gradient(GradKind kind, int instances, std::uint64_t seed, double tolerance) {
  Rng rng(derive_seed(seed, {std::uint64_t(kind)}));
  PropertyResult r;
  r.name = property_name(kind);
  r.instances = instances;
  for (int i = 0; i < instances; ++i) {
    const double err = instance_error(make_instance(kind, rng));
    r.worst = std::isnan(err) ? INFINITY : std::max(r.worst, err);
  }
  r.passed = r.worst < tolerance;
  r.detail = "worst relative error " + sci(r.worst);
  return r;
}

PropertyResult check_adjoint(int geometries, std::uint64_t seed, double tolerance) {
  Rng rng(derive_seed(seed, {0xad}));
  PropertyResult r;
  r.name = "adjoint identity";
  r.instances = geometries;
  double worst_dot = 0.0;
  for (int i = 0; i < geometries; ++i) {
    const int n = uniform(rng, 1, 2), c = uniform(rng, 1, 4), f = uniform(rng, 1, 4);
    const int stride = uniform(rng, 1, 2), k = uniform(rng, 1, 4), pad = uniform(rng, 0, std::min(1, k - 1));
    // Pick the input size so the transposed conv reproduces it exactly.
    const int oh = uniform(rng, 1, 5), ow = uniform(rng, 1, 5);
    const int h = (oh - 1) * stride - 2 * pad + k, w = (ow - 1) * stride - 2 * pad + k;
    if (h < 1 || w < 1) {
      --i;
      continue;
    }
    const Shape xs{n, c, h, w}, ks{f, c, k, k};
    const Tensor x = random_tensor(rng, xs), kern = random_tensor(rng, ks), dy = random_tensor(rng, Shape{n, f, oh, ow});

    ad::Tape tape;
    ad::Var xv = tape.leaf(x);
    ad::Var y = ad::conv2d(xv, tape.constant(kern), tape.constant(Tensor(Shape{f})), stride, pad);
    tape.backward(project(tape, y, dy));
    ad::Tape plain(false);
    const Tensor ct =
        ad::conv_transpose2d(plain.constant(dy), plain.constant(kern), plain.constant(Tensor(Shape{c})), stride, pad)
            .value();
    if (ct.shape() != xs) {
      r.passed = false;
      r.detail = "transposed output shape " + shape_to_string(ct.shape()) + " != " + shape_to_string(xs);
      return r;
    }
    r.worst = std::max(r.worst, double(max_abs_diff(tape.grad(xv), ct)));

    const kernels::ConvGeometry g = kernels::conv2d_geometry(xs, ks, stride, pad);
    const DVec xd = to_double(x), kd = to_double(kern), yd = to_double(dy);
    DVec cx(g.output_size()), ty(g.input_size());
    kernels::conv2d_forward<double>(g, xd.data(), kd.data(), nullptr, cx.data());
    kernels::conv2d_backward_input<double>(g, yd.data(), kd.data(), ty.data());
    const double lhs = dot(cx, yd), rhs = dot(xd, ty);
    worst_dot = std::max(worst_dot, std::fabs(lhs - rhs) / std::max(1.0, std::fabs(lhs)));
  }
  r.passed = r.worst < tolerance && worst_dot < 1e-10;
  r.detail = "max abs diff " + sci(r.worst) + ", inner-product mismatch " + sci(worst_dot);
  return r;
}

PropertyResult check_softmax_invariants(int instances, std::uint64_t seed) {
  Rng rng(derive_seed(seed, {0x50f7}));
  PropertyResult r;
  r.name = "softmax invariants";
  r.instances = instances;
  for (int i = 0; i < instances; ++i) {
    const int n = uniform(rng, 1, 6), k = uniform(rng, 2, 12);
    const float spread = i % 2 ? 60.0f : 3.0f;
    Tensor x = random_tensor(rng, Shape{n, k}, -spread, spread);
    // On a 1/64 grid the shifted logits are exact, so any difference is the softmax's own.
    for (float& v : x.values()) v = std::round(v * 64.0f) / 64.0f;
    Tensor shifted = x;
    for (float& v : shifted.values()) v += 7.0f;
    ad::Tape tape(false);
    const Tensor p = ad::softmax(tape.constant(x)).value();
    const Tensor q = ad::softmax(tape.constant(shifted)).value();
    for (int row = 0; row < n; ++row) {
      double s = 0.0;
      for (int j = 0; j < k; ++j) {
        const float v = p[std::size_t(row) * k + j];
        if (!(v >= 0.0f && v <= 1.0f)) r.worst = std::max(r.worst, 1.0);
        s += v;
      }
      r.worst = std::max(r.worst, std::fabs(s - 1.0));
    }
    r.worst = std::max(r.worst, double(max_abs_diff(p, q)));
  }
  r.passed = r.worst < 1e-6;
  r.detail = "worst deviation " + sci(r.worst);
  return r;
}

PropertyResult check_batchnorm_invariants(int instances, std::uint64_t seed) {
  Rng rng(derive_seed(seed, {0xb7}));
  PropertyResult r;
  r.name = "batchnorm invariants";
  r.instances = instances;
  for (int i = 0; i < instances; ++i) {
    const int n = uniform(rng, 2, 8), c = uniform(rng, 1, 4), h = uniform(rng, 1, 4);
    const float offset = std::uniform_real_distribution<float>(-3.0f, 3.0f)(rng);
    const Tensor x = random_tensor(rng, Shape{n, c, h, h}, offset - 2.0f, offset + 2.0f);
    ad::Tape tape(false);
    const Tensor y = ad::batchnorm(tape.constant(x), tape.constant(Tensor(Shape{c}, 1.0f)),
                                   tape.constant(Tensor(Shape{c})), ad::BatchNormOptions{})
                         .value();
    const std::size_t plane = std::size_t(h) * h;
    for (int ch = 0; ch < c; ++ch) {
      double s = 0.0, s2 = 0.0, xs = 0.0, xs2 = 0.0;
      for (int b = 0; b < n; ++b) {
        for (std::size_t p = 0; p < plane; ++p) {
          const std::size_t idx = (std::size_t(b) * c + ch) * plane + p;
          s += y[idx];
          s2 += double(y[idx]) * y[idx];
          xs += x[idx];
          xs2 += double(x[idx]) * x[idx];
        }
      }
      const double m = double(n) * plane;
      const double mean = s / m, var = s2 / m - mean * mean;
      const double xvar = xs2 / m - (xs / m) * (xs / m);
      const double expected_var = xvar / (xvar + 1e-5);
      r.worst = std::max({r.worst, std::fabs(mean), std::fabs(var - expected_var)});
    }
  }
  r.passed = r.worst < 1e-4;
  r.detail = "worst moment deviation " + sci(r.worst);
  return r;
}

std::string SelfCheckReport::first_failure() const {
  for (const auto& p : properties) {
    if (!p.passed) return p.name;
  }
  return {};
}

SelfCheckReport run_selfcheck(const SelfCheckOptions& o) {
  const auto start = std::chrono::steady_clock::now();
  SelfCheckReport report;
  auto add = [&](PropertyResult r) {
    report.passed = report.passed && r.passed;
    report.properties.push_back(std::move(r));
    return !(o.stop_at_first_failure && !report.passed);
  };
  bool go = true;
  for (GradKind k : {GradKind::conv2d, GradKind::conv_transpose2d, GradKind::batchnorm, GradKind::dense,
                     GradKind::leaky_relu, GradKind::softmax_nll}) {
    if (go) go = add(check_gradient(k, o.gradient_instances, o.seed));
  }
  if (go) go = add(check_adjoint(o.adjoint_geometries, o.seed));
  if (go) go = add(check_softmax_invariants(50, o.seed));
  if (go) add(check_batchnorm_invariants(50, o.seed));
  report.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return report;
}

}  // namespace pcgan
