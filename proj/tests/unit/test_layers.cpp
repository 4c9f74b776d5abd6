#include <cmath>
#include <string>

#include "doctest.h"
#include "oracles.hpp"
#include "pcgan/adam.hpp"
#include "pcgan/error.hpp"
#include "pcgan/layers.hpp"

using namespace pcgan;
namespace ad = pcgan::ad;

namespace {

std::vector<LayerSpec> small_specs() {
  return {LayerSpec::conv(1, 1, 4, 3, 1, 1), LayerSpec::batchnorm(2, 4), LayerSpec::leaky_relu(3, 0.2f),
          LayerSpec::dropout(4, 0.3f),       LayerSpec::flatten(5),      LayerSpec::dense(6, 4 * 5 * 5, 3),
          LayerSpec::softmax(7)};
}

GradMap grads_of(Network& net, const Tensor& x, const std::vector<int>& labels, Rng& rng) {
  ad::Tape tape;
  ForwardContext ctx;
  ctx.rng = &rng;
  ForwardResult r = forward(tape, net, tape.constant(x), ctx);
  tape.backward(ad::categorical_nll(r.output, labels, 1e-7f));
  return collect_grads(tape, r);
}

}  // namespace

TEST_CASE("batchnorm initializes to unit gamma and zero beta") {
  Network net = init_network({LayerSpec::batchnorm(1, 6)}, {6, 2, 2}, 1);
  for (float v : net.param("1.batchnorm.gamma").values()) CHECK(v == 1.0f);
  for (float v : net.param("1.batchnorm.beta").values()) CHECK(v == 0.0f);
  for (float v : net.buffers().at("1.batchnorm.running_mean").values()) CHECK(v == 0.0f);
  for (float v : net.buffers().at("1.batchnorm.running_var").values()) CHECK(v == 1.0f);
}

TEST_CASE("same seed gives bitwise-identical parameters") {
  Network a = init_network(small_specs(), {1, 5, 5}, 42);
  Network b = init_network(small_specs(), {1, 5, 5}, 42);
  Network c = init_network(small_specs(), {1, 5, 5}, 43);
  for (const auto& [n, t] : a.params()) CHECK(bitwise_equal(t, b.param(n)));
  CHECK_FALSE(bitwise_equal(a.param("1.conv.weight"), c.param("1.conv.weight")));
}

TEST_CASE("dense 100 to 1024 weights respect the He-uniform bound") {
  Network net = init_network({LayerSpec::dense(1, 100, 1024)}, {100}, 3);
  const double bound = std::sqrt(6.0 / 100.0);
  double lo = 1e9, hi = -1e9;
  for (float v : net.param("1.dense.weight").values()) {
    lo = std::min(lo, double(v));
    hi = std::max(hi, double(v));
  }
  CHECK(lo >= -bound);
  CHECK(hi <= bound);
  // The bound is nearly attained by 102400 uniform draws.
  CHECK(hi > 0.99 * bound);
  CHECK(lo < -0.99 * bound);
  for (float v : net.param("1.dense.bias").values()) CHECK(v == 0.0f);
}

TEST_CASE("inconsistent adjacent shapes are a spec error") {
  CHECK_THROWS_AS(init_network({LayerSpec::flatten(1), LayerSpec::dense(2, 10, 3)}, {1, 3, 3}, 1), SpecError);
  CHECK_THROWS_AS(init_network({LayerSpec::conv(1, 2, 4, 3, 1, 0)}, {1, 5, 5}, 1), SpecError);
  CHECK_THROWS_AS(init_network({LayerSpec::dense(1, 3, 3), LayerSpec::dense(1, 3, 3)}, {3}, 1), SpecError);
}

TEST_CASE("parameter names carry the stable index") {
  Network net = init_network(small_specs(), {1, 5, 5}, 1);
  CHECK(net.params().count("1.conv.weight") == 1);
  CHECK(net.params().count("6.dense.bias") == 1);
  CHECK(net.output_shape() == Shape{3});
}

TEST_CASE("empty network is the identity") {
  Network net = init_network({}, {4}, 1);
  Tensor x = oracle::random_tensor({3, 4}, 2);
  CHECK(bitwise_equal(evaluate(net, x), x));
}

TEST_CASE("single leaky_relu layer") {
  Network net = init_network({LayerSpec::leaky_relu(1, 0.2f)}, {2}, 1);
  Tensor y = evaluate(net, Tensor({1, 2}, std::vector<float>{-5.0f, 5.0f}));
  CHECK(y[0] == doctest::Approx(-1.0f));
  CHECK(y[1] == 5.0f);
}

TEST_CASE("shape mismatch at forward names the layer") {
  Network net = init_network({LayerSpec::leaky_relu(1, 0.2f), LayerSpec::dense(2, 4, 2)}, {4}, 1);
  net.param("2.dense.weight") = Tensor({5, 2});
  try {
    evaluate(net, Tensor({1, 4}, 1.0f));
    FAIL("expected a dimension error");
  } catch (const DimensionError& e) {
    CHECK(std::string(e.what()).find("2.dense.") != std::string::npos);
  }
  CHECK_THROWS_AS(evaluate(net, Tensor({1, 3}, 1.0f)), DimensionError);
}

TEST_CASE("infer mode disables dropout and uses running statistics") {
  Network net = init_network(small_specs(), {1, 5, 5}, 5);
  net.set_mode(Mode::infer);
  Tensor x = oracle::random_tensor({3, 1, 5, 5}, 6);
  Tensor a = evaluate(net, x), b = evaluate(net, x);
  CHECK(bitwise_equal(a, b));
  // Untrained batchnorm with identity statistics: rows are independent.
  Tensor single = evaluate(net, Tensor({1, 1, 5, 5}, std::vector<float>(x.storage().begin(), x.storage().begin() + 25)));
  for (int k = 0; k < 3; ++k) CHECK(single[k] == doctest::Approx(a[k]).epsilon(1e-6));
}

TEST_CASE("train-mode dropout needs a generator") {
  Network net = init_network(small_specs(), {1, 5, 5}, 5);
  CHECK_THROWS_AS(evaluate(net, Tensor({2, 1, 5, 5}, 0.5f)), UsageError);
}

TEST_CASE("train-mode forward updates batchnorm buffers; const forward does not") {
  Network net = init_network(small_specs(), {1, 5, 5}, 5);
  Rng rng(1);
  Tensor x = oracle::random_tensor({4, 1, 5, 5}, 7);
  Tensor before = net.buffers().at("2.batchnorm.running_mean");
  {
    ad::Tape tape(false);
    ForwardContext ctx;
    ctx.rng = &rng;
    forward(tape, static_cast<const Network&>(net), tape.constant(x), ctx);
  }
  CHECK(bitwise_equal(before, net.buffers().at("2.batchnorm.running_mean")));
  {
    ad::Tape tape(false);
    ForwardContext ctx;
    ctx.rng = &rng;
    forward(tape, net, tape.constant(x), ctx);
  }
  CHECK_FALSE(bitwise_equal(before, net.buffers().at("2.batchnorm.running_mean")));
}

TEST_CASE("adam first step moves by about lr") {
  Network net = init_network({LayerSpec::dense(1, 1, 1)}, {1}, 1);
  net.param("1.dense.weight") = Tensor({1, 1}, 0.5f);
  AdamState st;
  st.config = {1e-3f, 0.9f, 0.999f, 1e-8f};
  GradMap g{{"1.dense.weight", Tensor({1, 1}, 1.0f)}, {"1.dense.bias", Tensor({1}, 1.0f)}};
  adam_step(net, g, st);
  // m_hat = 1, v_hat = 1: delta = -lr / (1 + eps).
  const double expected = -1e-3 / (1.0 + 1e-8);
  CHECK(net.param("1.dense.weight")[0] - 0.5 == doctest::Approx(expected).epsilon(1e-4));
  CHECK(net.param("1.dense.bias")[0] == doctest::Approx(expected).epsilon(1e-4));
  CHECK(st.step == 1);
}

TEST_CASE("adam with zero gradients leaves parameters unchanged") {
  Network net = init_network(small_specs(), {1, 5, 5}, 2);
  Network ref = net;
  AdamState st;
  GradMap g;
  for (const auto& [n, t] : net.params()) g[n] = Tensor(t.shape(), 0.0f);
  for (int i = 0; i < 3; ++i) adam_step(net, g, st);
  for (const auto& [n, t] : net.params()) CHECK(bitwise_equal(t, ref.param(n)));
}

TEST_CASE("frozen layers are bitwise unchanged after a step") {
  Network net = init_network(small_specs(), {1, 5, 5}, 2);
  Rng rng(3);
  Tensor x = oracle::random_tensor({4, 1, 5, 5}, 8);
  net.set_layer_trainable(1, false);
  Network ref = net;
  GradMap g = grads_of(net, x, {0, 1, 2, 0}, rng);
  CHECK(g.count("1.conv.weight") == 0);
  AdamState st;
  adam_step(net, g, st);
  CHECK(bitwise_equal(net.param("1.conv.weight"), ref.param("1.conv.weight")));
  CHECK(bitwise_equal(net.param("1.conv.bias"), ref.param("1.conv.bias")));
  CHECK_FALSE(bitwise_equal(net.param("6.dense.weight"), ref.param("6.dense.weight")));
}

TEST_CASE("missing gradient on a trainable parameter is a usage error") {
  Network net = init_network({LayerSpec::dense(1, 2, 2)}, {2}, 1);
  Network ref = net;
  AdamState st;
  GradMap g{{"1.dense.weight", Tensor({2, 2}, 1.0f)}};
  CHECK_THROWS_AS(adam_step(net, g, st), UsageError);
  CHECK(bitwise_equal(net.param("1.dense.weight"), ref.param("1.dense.weight")));
  CHECK(st.step == 0);
}

TEST_CASE("adam converges on a quadratic bowl") {
  Network net = init_network({LayerSpec::dense(1, 3, 1)}, {3}, 9);
  AdamState st;
  st.config.lr = 0.05f;
  st.config.beta1 = 0.9f;
  for (int it = 0; it < 2000; ++it) {
    // loss = sum (w - 0.3)^2 + (b + 0.2)^2
    GradMap g;
    Tensor gw(net.param("1.dense.weight").shape());
    for (std::size_t i = 0; i < gw.numel(); ++i) gw[i] = 2.0f * (net.param("1.dense.weight")[i] - 0.3f);
    g["1.dense.weight"] = gw;
    g["1.dense.bias"] = Tensor({1}, 2.0f * (net.param("1.dense.bias")[0] + 0.2f));
    adam_step(net, g, st);
  }
  for (float v : net.param("1.dense.weight").values()) CHECK(v == doctest::Approx(0.3).epsilon(1e-2));
  CHECK(net.param("1.dense.bias")[0] == doctest::Approx(-0.2).epsilon(1e-2));
}

TEST_CASE("collect_grads sums by name and matches central differences") {
  Network net = init_network({LayerSpec::dense(1, 3, 2), LayerSpec::softmax(2)}, {3}, 4);
  Tensor x = oracle::random_tensor({5, 3}, 10);
  std::vector<int> labels{0, 1, 1, 0, 1};
  Rng rng(1);
  GradMap g = grads_of(net, x, labels, rng);
  auto loss = [&](const Network& n) {
    Tensor p = evaluate(n, x);
    return oracle::categorical_nll(oracle::to_double(p), 2, labels);
  };
  for (const std::string name : {"1.dense.weight", "1.dense.bias"}) {
    for (std::size_t i = 0; i < net.param(name).numel(); ++i) {
      Network a = net, b = net;
      a.param(name)[i] += 1e-2f;
      b.param(name)[i] -= 1e-2f;
      double fd = (loss(a) - loss(b)) / double(a.param(name)[i] - b.param(name)[i]);
      CHECK(g.at(name)[i] == doctest::Approx(fd).epsilon(1e-2).scale(1e-3));
    }
  }
}
