#include "pcgan/layers.hpp"

#include <algorithm>
#include <cmath>

#include "pcgan/error.hpp"

namespace pcgan {
namespace {

template <class G>
const G& geom(const LayerSpec& spec) {
  const G* g = std::get_if<G>(&spec.geometry);
  if (!g) throw SpecError("layer " + spec.prefix() + " carries geometry of the wrong kind");
  return *g;
}

bool geometry_matches(const LayerSpec& s) {
  switch (s.kind) {
    case LayerKind::dense: return std::holds_alternative<DenseGeometry>(s.geometry);
    case LayerKind::conv:
    case LayerKind::conv_transpose: return std::holds_alternative<ConvLayerGeometry>(s.geometry);
    case LayerKind::batchnorm: return std::holds_alternative<NormGeometry>(s.geometry);
    case LayerKind::leaky_relu: return std::holds_alternative<LeakyGeometry>(s.geometry);
    case LayerKind::dropout: return std::holds_alternative<DropoutGeometry>(s.geometry);
    case LayerKind::reshape: return std::holds_alternative<ReshapeGeometry>(s.geometry);
    case LayerKind::embed: return std::holds_alternative<EmbedGeometry>(s.geometry);
    case LayerKind::flatten:
    case LayerKind::tanh:
    case LayerKind::softmax: return std::holds_alternative<NoGeometry>(s.geometry);
  }
  return false;
}

[[noreturn]] void spec_fail(const LayerSpec& s, const Shape& in, const std::string& why) {
  throw SpecError("layer " + s.prefix() + " cannot accept input " + shape_to_string(in) + ": " + why);
}

Shape layer_output_shape(const LayerSpec& s, const Shape& in) {
  if (!geometry_matches(s)) throw SpecError("layer " + s.prefix() + " has geometry inconsistent with its kind");
  switch (s.kind) {
    case LayerKind::dense: {
      const auto& g = geom<DenseGeometry>(s);
      if (g.in_units <= 0 || g.units <= 0) spec_fail(s, in, "non-positive units");
      if (in.size() != 1 || in[0] != g.in_units) spec_fail(s, in, "expects [" + std::to_string(g.in_units) + "]");
      return Shape{g.units};
    }
    case LayerKind::conv:
    case LayerKind::conv_transpose: {
      const auto& g = geom<ConvLayerGeometry>(s);
      if (g.in_channels <= 0 || g.out_channels <= 0 || g.kernel <= 0 || g.stride <= 0 || g.pad < 0) {
        spec_fail(s, in, "invalid convolution geometry");
      }
      if (in.size() != 3 || in[0] != g.in_channels) {
        spec_fail(s, in, "expects " + std::to_string(g.in_channels) + " channels");
      }
      int h, w;
      if (s.kind == LayerKind::conv) {
        if (g.kernel > in[1] + 2 * g.pad || g.kernel > in[2] + 2 * g.pad) spec_fail(s, in, "kernel exceeds input");
        h = (in[1] + 2 * g.pad - g.kernel) / g.stride + 1;
        w = (in[2] + 2 * g.pad - g.kernel) / g.stride + 1;
      } else {
        h = (in[1] - 1) * g.stride - 2 * g.pad + g.kernel;
        w = (in[2] - 1) * g.stride - 2 * g.pad + g.kernel;
        if (h <= 0 || w <= 0) spec_fail(s, in, "non-positive output extent");
      }
      return Shape{g.out_channels, h, w};
    }
    case LayerKind::batchnorm: {
      const auto& g = geom<NormGeometry>(s);
      if (in.empty() || in[0] != g.channels) spec_fail(s, in, "expects " + std::to_string(g.channels) + " channels");
      return in;
    }
    case LayerKind::leaky_relu: {
      const float a = geom<LeakyGeometry>(s).alpha;
      if (!(a >= 0.0f && a < 1.0f)) spec_fail(s, in, "alpha outside [0,1)");
      return in;
    }
    case LayerKind::dropout: {
      const float r = geom<DropoutGeometry>(s).rate;
      if (!(r >= 0.0f && r < 1.0f)) spec_fail(s, in, "rate outside [0,1)");
      return in;
    }
    case LayerKind::reshape: {
      const auto& g = geom<ReshapeGeometry>(s);
      std::size_t n = 1;
      for (int e : g.target) {
        if (e <= 0) spec_fail(s, in, "non-positive target extent");
        n *= std::size_t(e);
      }
      if (n != shape_numel(in)) spec_fail(s, in, "target " + shape_to_string(g.target) + " has a different size");
      return g.target;
    }
    case LayerKind::flatten: return Shape{static_cast<int>(shape_numel(in))};
    case LayerKind::tanh: return in;
    case LayerKind::softmax:
      if (in.size() != 1) spec_fail(s, in, "softmax expects a flat vector");
      return in;
    case LayerKind::embed: {
      const auto& g = geom<EmbedGeometry>(s);
      if (g.num_classes <= 0 || g.dim <= 0) spec_fail(s, in, "invalid embedding geometry");
      if (in.size() != 1 || in[0] != g.dim) spec_fail(s, in, "expects [" + std::to_string(g.dim) + "]");
      return in;
    }
  }
  return in;
}

Shape with_batch(int n, const Shape& per_sample) {
  Shape s{n};
  s.insert(s.end(), per_sample.begin(), per_sample.end());
  return s;
}

void fill_he_uniform(Tensor& t, double fan_in, Rng& rng) {
  const float bound = float(std::sqrt(6.0 / std::max(fan_in, 1.0)));
  std::uniform_real_distribution<float> dist(-bound, bound);
  for (float& v : t.storage()) v = dist(rng);
}

ForwardResult forward_impl(ad::Tape& tape, const Network& net, Network* writable, ad::Var x,
                           const ForwardContext& ctx) {
  const Shape& xs = x.shape();
  if (xs.empty() || Shape(xs.begin() + 1, xs.end()) != net.input_shape()) {
    throw DimensionError("network input expects [N," + shape_to_string(net.input_shape()).substr(1) + ", got " +
                         shape_to_string(xs));
  }
  const int n = xs[0];
  const bool training = net.mode() == Mode::train;
  ForwardResult result;
  const auto bind = [&](const std::string& name, bool trainable) {
    ad::Var v = tape.leaf(net.param(name), ctx.param_grads && trainable);
    result.params.emplace_back(name, v);
    return v;
  };
  ad::Var h = x;
  const auto& layers = net.layers();
  for (std::size_t pos = 0; pos < layers.size(); ++pos) {
    const LayerSpec& s = layers[pos];
    const bool trainable = net.layer_trainable(pos);
    try {
      switch (s.kind) {
        case LayerKind::dense: {
          ad::Var w = bind(s.prefix() + "weight", trainable);
          ad::Var b = bind(s.prefix() + "bias", trainable);
          h = ad::dense(h, w, b);
          break;
        }
        case LayerKind::conv:
        case LayerKind::conv_transpose: {
          const auto& g = geom<ConvLayerGeometry>(s);
          ad::Var w = bind(s.prefix() + "weight", trainable);
          ad::Var b = bind(s.prefix() + "bias", trainable);
          h = s.kind == LayerKind::conv ? ad::conv2d(h, w, b, g.stride, g.pad)
                                        : ad::conv_transpose2d(h, w, b, g.stride, g.pad);
          break;
        }
        case LayerKind::batchnorm: {
          const auto& g = geom<NormGeometry>(s);
          ad::Var gamma = bind(s.prefix() + "gamma", trainable);
          ad::Var beta = bind(s.prefix() + "beta", trainable);
          const std::string mean_name = s.prefix() + "running_mean";
          const std::string var_name = s.prefix() + "running_var";
          ad::BatchNormOptions opt;
          opt.momentum = g.momentum;
          opt.eps = g.eps;
          opt.use_batch_stats = training && trainable;
          opt.infer_mean = &net.buffers().at(mean_name);
          opt.infer_var = &net.buffers().at(var_name);
          if (writable && opt.use_batch_stats) {
            opt.running_mean = &writable->buffers().at(mean_name);
            opt.running_var = &writable->buffers().at(var_name);
          }
          h = ad::batchnorm(h, gamma, beta, opt);
          break;
        }
        case LayerKind::leaky_relu: h = ad::leaky_relu(h, geom<LeakyGeometry>(s).alpha); break;
        case LayerKind::dropout: {
          const float rate = geom<DropoutGeometry>(s).rate;
          if (training && rate > 0.0f) {
            if (!ctx.rng) throw UsageError("dropout in train mode needs a generator");
            h = ad::dropout(h, rate, true, *ctx.rng);
          }
          break;
        }
        case LayerKind::reshape: h = ad::reshape(h, with_batch(n, geom<ReshapeGeometry>(s).target)); break;
        case LayerKind::flatten: h = ad::reshape(h, Shape{n, static_cast<int>(h.value().numel() / std::size_t(n))}); break;
        case LayerKind::tanh: h = ad::tanh(h); break;
        case LayerKind::softmax: h = ad::softmax(h); break;
        case LayerKind::embed: {
          if (static_cast<int>(ctx.labels.size()) != n) {
            throw UsageError("embed layer needs one label per sample (" + std::to_string(n) + "), got " +
                             std::to_string(ctx.labels.size()));
          }
          ad::Var table = bind(s.prefix() + "weight", trainable);
          h = ad::mul(h, ad::gather_rows(table, ctx.labels));
          break;
        }
      }
    } catch (const DimensionError& e) {
      throw DimensionError("layer " + std::to_string(pos) + " (" + s.prefix() + "): " + e.what());
    }
  }
  result.output = h;
  return result;
}

}  // namespace

std::string_view kind_name(LayerKind kind) {
  switch (kind) {
    case LayerKind::dense: return "dense";
    case LayerKind::conv: return "conv";
    case LayerKind::conv_transpose: return "conv_transpose";
    case LayerKind::batchnorm: return "batchnorm";
    case LayerKind::leaky_relu: return "leaky_relu";
    case LayerKind::dropout: return "dropout";
    case LayerKind::reshape: return "reshape";
    case LayerKind::flatten: return "flatten";
    case LayerKind::tanh: return "tanh";
    case LayerKind::softmax: return "softmax";
    case LayerKind::embed: return "embed";
  }
  return "?";
}

LayerSpec LayerSpec::dense(int index, int in_units, int units) {
  return {LayerKind::dense, index, DenseGeometry{in_units, units}};
}
LayerSpec LayerSpec::conv(int index, int in_channels, int out_channels, int kernel, int stride, int pad) {
  return {LayerKind::conv, index, ConvLayerGeometry{in_channels, out_channels, kernel, stride, pad}};
}
LayerSpec LayerSpec::conv_transpose(int index, int in_channels, int out_channels, int kernel, int stride, int pad) {
  return {LayerKind::conv_transpose, index, ConvLayerGeometry{in_channels, out_channels, kernel, stride, pad}};
}
LayerSpec LayerSpec::batchnorm(int index, int channels, float momentum, float eps) {
  return {LayerKind::batchnorm, index, NormGeometry{channels, momentum, eps}};
}
LayerSpec LayerSpec::leaky_relu(int index, float alpha) { return {LayerKind::leaky_relu, index, LeakyGeometry{alpha}}; }
LayerSpec LayerSpec::dropout(int index, float rate) { return {LayerKind::dropout, index, DropoutGeometry{rate}}; }
LayerSpec LayerSpec::reshape(int index, Shape target) {
  return {LayerKind::reshape, index, ReshapeGeometry{std::move(target)}};
}
LayerSpec LayerSpec::flatten(int index) { return {LayerKind::flatten, index, NoGeometry{}}; }
LayerSpec LayerSpec::tanh(int index) { return {LayerKind::tanh, index, NoGeometry{}}; }
LayerSpec LayerSpec::softmax(int index) { return {LayerKind::softmax, index, NoGeometry{}}; }
LayerSpec LayerSpec::embed(int index, int num_classes, int dim) {
  return {LayerKind::embed, index, EmbedGeometry{num_classes, dim}};
}

std::string LayerSpec::prefix() const { return std::to_string(index) + "." + std::string(kind_name(kind)) + "."; }

std::vector<std::string> LayerSpec::parameter_names() const {
  switch (kind) {
    case LayerKind::dense:
    case LayerKind::conv:
    case LayerKind::conv_transpose: return {prefix() + "weight", prefix() + "bias"};
    case LayerKind::batchnorm: return {prefix() + "gamma", prefix() + "beta"};
    case LayerKind::embed: return {prefix() + "weight"};
    default: return {};
  }
}

std::vector<std::string> LayerSpec::buffer_names() const {
  if (kind == LayerKind::batchnorm) return {prefix() + "running_mean", prefix() + "running_var"};
  return {};
}

bool operator==(const LayerSpec& a, const LayerSpec& b) {
  if (a.kind != b.kind || a.index != b.index || a.geometry.index() != b.geometry.index()) return false;
  return std::visit(
      [&](const auto& ga) {
        using G = std::decay_t<decltype(ga)>;
        const G& gb = std::get<G>(b.geometry);
        if constexpr (std::is_same_v<G, NoGeometry>) {
          return true;
        } else if constexpr (std::is_same_v<G, DenseGeometry>) {
          return ga.in_units == gb.in_units && ga.units == gb.units;
        } else if constexpr (std::is_same_v<G, ConvLayerGeometry>) {
          return ga.in_channels == gb.in_channels && ga.out_channels == gb.out_channels && ga.kernel == gb.kernel &&
                 ga.stride == gb.stride && ga.pad == gb.pad;
        } else if constexpr (std::is_same_v<G, NormGeometry>) {
          return ga.channels == gb.channels && ga.momentum == gb.momentum && ga.eps == gb.eps;
        } else if constexpr (std::is_same_v<G, LeakyGeometry>) {
          return ga.alpha == gb.alpha;
        } else if constexpr (std::is_same_v<G, DropoutGeometry>) {
          return ga.rate == gb.rate;
        } else if constexpr (std::is_same_v<G, ReshapeGeometry>) {
          return ga.target == gb.target;
        } else {
          return ga.num_classes == gb.num_classes && ga.dim == gb.dim;
        }
      },
      a.geometry);
}

Network::Network(std::vector<LayerSpec> layers, Shape input_shape)
    : layers_(std::move(layers)), trainable_(layers_.size(), true), input_shape_(std::move(input_shape)) {
  output_shape_ = infer_output_shape(layers_, input_shape_);
  for (std::size_t pos = 0; pos < layers_.size(); ++pos) {
    for (const auto& name : layers_[pos].parameter_names()) {
      if (!owner_.emplace(name, pos).second) throw SpecError("duplicate parameter name " + name);
    }
    for (const auto& name : layers_[pos].buffer_names()) {
      if (!owner_.emplace(name, pos).second) throw SpecError("duplicate buffer name " + name);
    }
  }
}

Tensor& Network::param(const std::string& name) {
  auto it = params_.find(name);
  if (it == params_.end()) throw UsageError("no parameter named " + name);
  return it->second;
}

const Tensor& Network::param(const std::string& name) const {
  auto it = params_.find(name);
  if (it == params_.end()) throw UsageError("no parameter named " + name);
  return it->second;
}

std::optional<std::size_t> Network::position_of(int index) const {
  for (std::size_t pos = 0; pos < layers_.size(); ++pos) {
    if (layers_[pos].index == index) return pos;
  }
  return std::nullopt;
}

void Network::set_layer_trainable(int index, bool trainable) {
  auto pos = position_of(index);
  if (!pos) throw UsageError("no layer with index " + std::to_string(index));
  trainable_[*pos] = trainable;
}

void Network::set_trainable(bool trainable) { std::fill(trainable_.begin(), trainable_.end(), trainable); }

bool Network::param_trainable(const std::string& name) const {
  auto it = owner_.find(name);
  if (it == owner_.end()) throw UsageError("no parameter named " + name);
  return trainable_[it->second];
}

Shape infer_output_shape(const std::vector<LayerSpec>& specs, const Shape& input_shape) {
  Shape s = input_shape;
  for (const auto& spec : specs) s = layer_output_shape(spec, s);
  return s;
}

Network init_network(std::vector<LayerSpec> specs, Shape input_shape, std::uint64_t seed) {
  Network net(std::move(specs), std::move(input_shape));
  Rng rng(seed);
  Shape current = net.input_shape_;
  for (const auto& s : net.layers_) {
    switch (s.kind) {
      case LayerKind::dense: {
        const auto& g = geom<DenseGeometry>(s);
        Tensor w(Shape{g.in_units, g.units});
        fill_he_uniform(w, g.in_units, rng);
        net.params_[s.prefix() + "weight"] = std::move(w);
        net.params_[s.prefix() + "bias"] = Tensor(Shape{g.units}, 0.0f);
        break;
      }
      case LayerKind::conv: {
        const auto& g = geom<ConvLayerGeometry>(s);
        Tensor w(Shape{g.out_channels, g.in_channels, g.kernel, g.kernel});
        fill_he_uniform(w, double(g.in_channels) * g.kernel * g.kernel, rng);
        net.params_[s.prefix() + "weight"] = std::move(w);
        net.params_[s.prefix() + "bias"] = Tensor(Shape{g.out_channels}, 0.0f);
        break;
      }
      case LayerKind::conv_transpose: {
        const auto& g = geom<ConvLayerGeometry>(s);
        Tensor w(Shape{g.in_channels, g.out_channels, g.kernel, g.kernel});
        // Each output pixel sees about in_channels * (kernel/stride)^2 inputs.
        fill_he_uniform(w, double(g.in_channels) * g.kernel * g.kernel / double(g.stride * g.stride), rng);
        net.params_[s.prefix() + "weight"] = std::move(w);
        net.params_[s.prefix() + "bias"] = Tensor(Shape{g.out_channels}, 0.0f);
        break;
      }
      case LayerKind::batchnorm: {
        const int c = geom<NormGeometry>(s).channels;
        net.params_[s.prefix() + "gamma"] = Tensor(Shape{c}, 1.0f);
        net.params_[s.prefix() + "beta"] = Tensor(Shape{c}, 0.0f);
        net.buffers_[s.prefix() + "running_mean"] = Tensor(Shape{c}, 0.0f);
        net.buffers_[s.prefix() + "running_var"] = Tensor(Shape{c}, 1.0f);
        break;
      }
      case LayerKind::embed: {
        const auto& g = geom<EmbedGeometry>(s);
        Tensor w(Shape{g.num_classes, g.dim});
        std::normal_distribution<float> dist(0.0f, 1.0f);
        for (float& v : w.storage()) v = dist(rng);
        net.params_[s.prefix() + "weight"] = std::move(w);
        break;
      }
      default: break;
    }
    current = layer_output_shape(s, current);
  }
  return net;
}

ForwardResult forward(ad::Tape& tape, Network& net, ad::Var x, const ForwardContext& ctx) {
  return forward_impl(tape, net, &net, x, ctx);
}

ForwardResult forward(ad::Tape& tape, const Network& net, ad::Var x, const ForwardContext& ctx) {
  return forward_impl(tape, net, nullptr, x, ctx);
}

Tensor evaluate(const Network& net, const Tensor& x, std::span<const int> labels, Rng* rng) {
  ad::Tape tape(false);
  ForwardContext ctx;
  ctx.rng = rng;
  ctx.labels = labels;
  ctx.param_grads = false;
  ForwardResult r = forward(tape, net, tape.constant(x), ctx);
  return r.output.value();
}

GradMap collect_grads(const ad::Tape& tape, const ForwardResult& result) {
  GradMap grads;
  for (const auto& [name, var] : result.params) {
    const Tensor& g = tape.grad(var);
    if (g.empty()) continue;
    auto [it, inserted] = grads.emplace(name, g);
    if (!inserted) {
      for (std::size_t i = 0; i < g.numel(); ++i) it->second[i] += g[i];
    }
  }
  return grads;
}

}  // namespace pcgan
