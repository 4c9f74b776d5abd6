#include <cmath>
#include <vector>

#include "doctest.h"
#include "oracles.hpp"
#include "pcgan/autodiff.hpp"
#include "pcgan/error.hpp"

using namespace pcgan;
namespace ad = pcgan::ad;

namespace {

Tensor run_conv(const Tensor& x, const Tensor& w, const Tensor& b, int s, int p) {
  ad::Tape tape(false);
  return ad::conv2d(tape.constant(x), tape.constant(w), tape.constant(b), s, p).value();
}

Tensor run_convt(const Tensor& x, const Tensor& w, const Tensor& b, int s, int p) {
  ad::Tape tape(false);
  return ad::conv_transpose2d(tape.constant(x), tape.constant(w), tape.constant(b), s, p).value();
}

}  // namespace

TEST_CASE("tensor basics") {
  Tensor t(Shape{2, 3}, 1.5f);
  CHECK(t.numel() == 6);
  CHECK(t.dim(1) == 3);
  CHECK_THROWS_AS(t.dim(2), DimensionError);
  CHECK_THROWS_AS(t.reshaped({4}), DimensionError);
  CHECK(t.reshaped({3, 2}).shape() == Shape{3, 2});
  CHECK_THROWS_AS(Tensor(Shape{2, 0}), DimensionError);
  CHECK_THROWS_AS(Tensor(Shape{2}, std::vector<float>{1, 2, 3}), DimensionError);
  Tensor u = t;
  CHECK(bitwise_equal(t, u));
  u[0] = 2.0f;
  CHECK_FALSE(bitwise_equal(t, u));
  CHECK(max_abs_diff(t, u) == doctest::Approx(0.5));
}

TEST_CASE("conv2d identity kernel returns the input") {
  Tensor x = oracle::random_tensor({1, 1, 3, 3}, 1);
  Tensor y = run_conv(x, Tensor({1, 1, 1, 1}, 1.0f), Tensor({1}, 0.0f), 1, 0);
  CHECK(bitwise_equal(x, y));
}

TEST_CASE("conv2d constant field sums to 9") {
  Tensor y = run_conv(Tensor({1, 1, 5, 5}, 1.0f), Tensor({1, 1, 3, 3}, 1.0f), Tensor({1}, 0.0f), 1, 0);
  REQUIRE(y.shape() == Shape{1, 1, 3, 3});
  for (float v : y.values()) CHECK(v == 9.0f);
}

TEST_CASE("conv2d shape arithmetic") {
  Tensor y = run_conv(Tensor({2, 1, 28, 28}, 0.1f), Tensor({32, 1, 3, 3}, 0.1f), Tensor({32}, 0.0f), 2, 1);
  CHECK(y.shape() == Shape{2, 32, 14, 14});
}

TEST_CASE("conv2d channel mismatch is a dimension error") {
  CHECK_THROWS_AS(run_conv(Tensor({1, 2, 5, 5}), Tensor({1, 3, 3, 3}), Tensor({1}), 1, 0), DimensionError);
}

TEST_CASE("conv2d matches the nested-loop oracle") {
  for (int trial = 0; trial < 10; ++trial) {
    int N = 2, C = 1 + trial % 3, H = 5 + trial % 4, W = 6, F = 2 + trial % 2, k = 1 + 2 * (trial % 2);
    int s = 1 + trial % 2, p = trial % 2;
    Tensor x = oracle::random_tensor({N, C, H, W}, 10 + trial);
    Tensor w = oracle::random_tensor({F, C, k, k}, 20 + trial);
    Tensor b = oracle::random_tensor({F}, 30 + trial);
    int oh, ow;
    auto ref = oracle::conv2d(oracle::to_double(x), oracle::to_double(w), oracle::to_double(b), N, C, H, W, F, k, s, p,
                              oh, ow);
    Tensor y = run_conv(x, w, b, s, p);
    REQUIRE(y.shape() == Shape{N, F, oh, ow});
    for (std::size_t i = 0; i < ref.size(); ++i) CHECK(std::fabs(y[i] - ref[i]) < 1e-5);
  }
}

TEST_CASE("conv_transpose2d single pixel spreads") {
  Tensor y = run_convt(Tensor({1, 1, 1, 1}, 0.75f), Tensor({1, 1, 2, 2}, 1.0f), Tensor({1}, 0.0f), 2, 0);
  REQUIRE(y.shape() == Shape{1, 1, 2, 2});
  for (float v : y.values()) CHECK(v == 0.75f);
}

TEST_CASE("conv_transpose2d doubles 7 to 14") {
  Tensor y = run_convt(Tensor({1, 3, 7, 7}, 0.1f), Tensor({3, 2, 4, 4}, 0.1f), Tensor({2}, 0.0f), 2, 1);
  CHECK(y.shape() == Shape{1, 2, 14, 14});
}

TEST_CASE("conv_transpose2d non-positive extent is a dimension error") {
  CHECK_THROWS_AS(run_convt(Tensor({1, 1, 1, 1}), Tensor({1, 1, 1, 1}), Tensor({1}), 1, 1), DimensionError);
}

TEST_CASE("conv_transpose2d matches the brute-force scatter oracle") {
  for (int trial = 0; trial < 10; ++trial) {
    int N = 2, C = 1 + trial % 3, H = 3 + trial % 3, W = 4, F = 1 + trial % 2, k = 1 + trial % 4;
    int s = trial < 5 ? 1 : 2, p = trial < 5 ? 0 : (k > 1 ? 1 : 0);
    Tensor x = oracle::random_tensor({N, C, H, W}, 40 + trial);
    Tensor w = oracle::random_tensor({C, F, k, k}, 50 + trial);
    Tensor b = oracle::random_tensor({F}, 60 + trial);
    int oh, ow;
    auto ref = oracle::conv_transpose2d(oracle::to_double(x), oracle::to_double(w), oracle::to_double(b), N, C, H, W,
                                        F, k, s, p, oh, ow);
    Tensor y = run_convt(x, w, b, s, p);
    REQUIRE(y.shape() == Shape{N, F, oh, ow});
    for (std::size_t i = 0; i < ref.size(); ++i) CHECK(std::fabs(y[i] - ref[i]) < 1e-5);
  }
}

TEST_CASE("batchnorm examples") {
  ad::Tape tape(false);
  Tensor x({2, 1}, std::vector<float>{1.0f, 3.0f});
  ad::BatchNormOptions opt;
  opt.eps = 0.0f;
  Tensor y = ad::batchnorm(tape.constant(x), tape.constant(Tensor({1}, 1.0f)), tape.constant(Tensor({1}, 0.0f)), opt)
                 .value();
  CHECK(y[0] == doctest::Approx(-1.0).epsilon(1e-6));
  CHECK(y[1] == doctest::Approx(1.0).epsilon(1e-6));

  Tensor y2 =
      ad::batchnorm(tape.constant(x), tape.constant(Tensor({1}, 2.0f)), tape.constant(Tensor({1}, 1.0f)), opt).value();
  CHECK(y2[0] == doctest::Approx(-1.0).epsilon(1e-6));
  CHECK(y2[1] == doctest::Approx(3.0).epsilon(1e-6));

  Tensor mean({1}, 0.0f), var({1}, 1.0f);
  ad::BatchNormOptions inf;
  inf.use_batch_stats = false;
  inf.infer_mean = &mean;
  inf.infer_var = &var;
  Tensor xs = oracle::random_tensor({4, 1}, 3);
  Tensor y3 =
      ad::batchnorm(tape.constant(xs), tape.constant(Tensor({1}, 1.0f)), tape.constant(Tensor({1}, 0.0f)), inf).value();
  CHECK(max_abs_diff(xs, y3) < 1e-5);
}

TEST_CASE("batchnorm needs two samples in train mode") {
  ad::Tape tape(false);
  CHECK_THROWS_AS(ad::batchnorm(tape.constant(Tensor({1, 1}, 1.0f)), tape.constant(Tensor({1}, 1.0f)),
                                tape.constant(Tensor({1}, 0.0f)), {}),
                  PreconditionError);
}

TEST_CASE("batchnorm running buffers blend by momentum") {
  ad::Tape tape(false);
  Tensor rm({1}, 0.0f), rv({1}, 1.0f);
  ad::BatchNormOptions opt;
  opt.running_mean = &rm;
  opt.running_var = &rv;
  ad::batchnorm(tape.constant(Tensor({2, 1}, std::vector<float>{1.0f, 3.0f})), tape.constant(Tensor({1}, 1.0f)),
                tape.constant(Tensor({1}, 0.0f)), opt);
  CHECK(rm[0] == doctest::Approx(0.2));
  // Unbiased batch variance of {1,3} is 2.
  CHECK(rv[0] == doctest::Approx(0.9 + 0.1 * 2.0));
}

TEST_CASE("leaky_relu examples") {
  ad::Tape tape(false);
  Tensor y = ad::leaky_relu(tape.constant(Tensor({3}, std::vector<float>{5.0f, -5.0f, 0.0f})), 0.2f).value();
  CHECK(y[0] == 5.0f);
  CHECK(y[1] == doctest::Approx(-1.0f));
  CHECK(y[2] == 0.0f);
  Tensor x = oracle::random_tensor({50}, 4);
  Tensor r = ad::leaky_relu(tape.constant(x), 0.0f).value();
  for (std::size_t i = 0; i < x.numel(); ++i) CHECK(r[i] == std::max(x[i], 0.0f));
}

TEST_CASE("softmax examples") {
  ad::Tape tape(false);
  Tensor y = ad::softmax(tape.constant(Tensor({3, 2}, std::vector<float>{0, 0, 0, std::log(3.0f), 1000, 1000}))).value();
  CHECK(y[0] == doctest::Approx(0.5));
  CHECK(y[1] == doctest::Approx(0.5));
  CHECK(y[2] == doctest::Approx(0.25));
  CHECK(y[3] == doctest::Approx(0.75));
  CHECK(y[4] == doctest::Approx(0.5));
  CHECK(y[5] == doctest::Approx(0.5));
  CHECK(all_finite(y));
}

TEST_CASE("dropout examples") {
  ad::Tape tape(false);
  Rng rng(7);
  Tensor x = oracle::random_tensor({100}, 5);
  CHECK(bitwise_equal(ad::dropout(tape.constant(x), 0.0f, true, rng).value(), x));
  CHECK(bitwise_equal(ad::dropout(tape.constant(x), 0.0f, false, rng).value(), x));
  CHECK(bitwise_equal(ad::dropout(tape.constant(x), 0.7f, false, rng).value(), x));

  Tensor ones({100000}, 1.0f);
  Tensor y = ad::dropout(tape.constant(ones), 0.5f, true, rng).value();
  double sum = 0.0;
  int zeros = 0;
  for (float v : y.values()) {
    sum += v;
    zeros += v == 0.0f;
  }
  CHECK(std::fabs(sum / 1e5 - 1.0) < 0.01);
  CHECK(std::fabs(zeros / 1e5 - 0.5) < 0.01);
}

TEST_CASE("backward of sum gives ones and of x squared gives 2x") {
  {
    ad::Tape tape;
    ad::Var x = tape.leaf(oracle::random_tensor({2, 3, 4}, 6));
    tape.backward(ad::sum(x));
    for (float g : tape.grad(x).values()) CHECK(g == 1.0f);
  }
  {
    ad::Tape tape;
    ad::Var x = tape.leaf(Tensor({3}, std::vector<float>{1, 2, 3}));
    tape.backward(ad::sum(ad::mul(x, x)));
    const Tensor& g = tape.grad(x);
    CHECK(g[0] == 2.0f);
    CHECK(g[1] == 4.0f);
    CHECK(g[2] == 6.0f);
  }
}

TEST_CASE("backward on a non-scalar is a usage error") {
  ad::Tape tape;
  ad::Var x = tape.leaf(Tensor({3}, 1.0f));
  CHECK_THROWS_AS(tape.backward(ad::scale(x, 2.0f)), UsageError);
}

TEST_CASE("two-layer network gradients match central differences") {
  // loss = mean(tanh(x W1 + b1) W2 + b2) with sigmoid on top.
  Tensor x = oracle::random_tensor({4, 3}, 11);
  Tensor w1 = oracle::random_tensor({3, 5}, 12), b1 = oracle::random_tensor({5}, 13);
  Tensor w2 = oracle::random_tensor({5, 2}, 14), b2 = oracle::random_tensor({2}, 15);
  auto loss_of = [&](const std::vector<Tensor>& ps, ad::Tape& tape, std::vector<ad::Var>* leaves) {
    std::vector<ad::Var> v;
    for (const auto& p : ps) v.push_back(tape.leaf(p));
    if (leaves) *leaves = v;
    ad::Var h = ad::tanh(ad::dense(tape.constant(x), v[0], v[1]));
    return ad::mean(ad::sigmoid(ad::dense(h, v[2], v[3])));
  };
  std::vector<Tensor> ps{w1, b1, w2, b2};
  ad::Tape tape;
  std::vector<ad::Var> leaves;
  tape.backward(loss_of(ps, tape, &leaves));
  const double h = 1e-2;
  for (std::size_t k = 0; k < ps.size(); ++k) {
    for (std::size_t i = 0; i < ps[k].numel(); ++i) {
      auto plus = ps, minus = ps;
      plus[k][i] += float(h);
      minus[k][i] -= float(h);
      ad::Tape tp(false), tm(false);
      double fd = (double(loss_of(plus, tp, nullptr).value()[0]) - double(loss_of(minus, tm, nullptr).value()[0])) /
                  (double(plus[k][i]) - double(minus[k][i]));
      CHECK(tape.grad(leaves[k])[i] == doctest::Approx(fd).epsilon(2e-3).scale(1e-3));
    }
  }
}

TEST_CASE("conv gradients flow to input, kernel and bias") {
  ad::Tape tape;
  ad::Var x = tape.leaf(Tensor({1, 1, 3, 3}, 1.0f));
  ad::Var w = tape.leaf(Tensor({1, 1, 3, 3}, 2.0f));
  ad::Var b = tape.leaf(Tensor({1}, 0.0f));
  tape.backward(ad::sum(ad::conv2d(x, w, b, 1, 0)));
  for (float g : tape.grad(x).values()) CHECK(g == 2.0f);
  for (float g : tape.grad(w).values()) CHECK(g == 1.0f);
  CHECK(tape.grad(b)[0] == 1.0f);
}

TEST_CASE("losses clamp probabilities") {
  ad::Tape tape(false);
  Tensor one({2, 1}, 1.0f);
  float v = ad::binary_nll(tape.constant(one), true, 1e-7f).value()[0];
  CHECK(v >= 0.0f);
  CHECK(v < 1e-6f);
  float f = ad::binary_nll(tape.constant(one), false, 1e-7f).value()[0];
  CHECK(std::isfinite(f));
  CHECK(f == doctest::Approx(-std::log(1e-7)).epsilon(1e-3));
}

TEST_CASE("finite checking raises on NaN") {
  ad::set_check_finite(true);
  ad::Tape tape(false);
  CHECK_THROWS_AS(ad::scale(tape.constant(Tensor({1}, 1.0f)), std::nanf("")), NumericError);
  ad::set_check_finite(false);
}
