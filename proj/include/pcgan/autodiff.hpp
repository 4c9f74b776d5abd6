#pragma once

// Tape-based reverse-mode differentiation over float32 tensors.
//
// Ops append nodes in execution order, so the node vector is already a
// topological order; backward() walks it once in reverse.

#include <cstddef>
#include <functional>
#include <span>
#include <string_view>
#include <vector>

#include "pcgan/rng.hpp"
#include "pcgan/tensor.hpp"

namespace pcgan::ad {

class Tape;

/// Handle to a value recorded on a tape. Cheap to copy; valid while the tape lives.
struct Var {
  Tape* tape = nullptr;
  std::size_t id = 0;

  const Tensor& value() const;
  const Shape& shape() const { return value().shape(); }
};

class Tape {
 public:
  using BackwardFn = std::function<void(Tape&, std::size_t)>;

  /// A non-recording tape evaluates ops without keeping backward state.
  explicit Tape(bool recording = true) : recording_(recording) {}
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var constant(Tensor value);
  Var leaf(Tensor value, bool requires_grad = true);

  const Tensor& value(Var v) const { return nodes_.at(v.id).value; }
  const Tensor& value(std::size_t id) const { return nodes_[id].value; }
  bool requires_grad(Var v) const { return nodes_.at(v.id).requires_grad; }
  bool requires_grad(std::size_t id) const { return nodes_[id].requires_grad; }
  std::string_view op(Var v) const { return nodes_.at(v.id).op; }
  bool recording() const noexcept { return recording_; }
  std::size_t size() const noexcept { return nodes_.size(); }

  /// Gradient reached by backward(); an empty tensor if none flowed here.
  const Tensor& grad(Var v) const { return nodes_.at(v.id).grad; }
  const Tensor& grad(std::size_t id) const { return nodes_[id].grad; }

  /// Seeds d(loss)/d(loss) = 1 and propagates. Requires a scalar loss.
  void backward(Var loss);

  // Op-implementation interface.
  Var record(std::string_view op, Tensor value, std::initializer_list<Var> inputs, BackwardFn fn);
  void accumulate(std::size_t id, const Tensor& g);

 private:
  struct Node {
    std::string_view op;
    Tensor value;
    Tensor grad;
    bool requires_grad = false;
    BackwardFn backward;
  };

  std::vector<Node> nodes_;
  bool recording_;
  bool backward_done_ = false;
};

/// Enables NaN/Inf checks on every recorded value. Off by default in release builds.
void set_check_finite(bool enabled);
bool check_finite_enabled();

// Elementwise and structural ops.
Var add(Var a, Var b);
Var mul(Var a, Var b);
Var scale(Var a, float factor);
Var sum(Var a);
Var mean(Var a);
Var reshape(Var a, Shape shape);
Var slice_rows(Var a, int begin, int end);
Var slice_cols(Var a, int begin, int end);
Var concat_rows(Var a, Var b);
Var gather_rows(Var table, std::span<const int> rows);

// Layer primitives.
Var conv2d(Var x, Var kernel, Var bias, int stride, int pad);
Var conv_transpose2d(Var x, Var kernel, Var bias, int stride, int pad);
Var dense(Var x, Var weight, Var bias);

struct BatchNormOptions {
  float momentum = 0.1f;
  float eps = 1e-5f;
  bool use_batch_stats = true;
  /// When set with batch stats, the running buffers are blended toward the batch.
  Tensor* running_mean = nullptr;
  Tensor* running_var = nullptr;
  const Tensor* infer_mean = nullptr;
  const Tensor* infer_var = nullptr;
};
Var batchnorm(Var x, Var gamma, Var beta, const BatchNormOptions& options);

Var leaky_relu(Var x, float alpha);
Var tanh(Var x);
Var sigmoid(Var x);
/// Row-wise softmax over the last axis of a rank-2 tensor.
Var softmax(Var x);
/// Inverted dropout; identity when !training or rate == 0.
Var dropout(Var x, float rate, bool training, Rng& rng);

/// Mean of -log p (target real) or -log(1-p) (target fake), p clamped to [eps, 1-eps].
Var binary_nll(Var probs, bool target_real, float eps);
/// Mean of -log probs[i, labels[i]], clamped below at eps.
Var categorical_nll(Var probs, std::span<const int> labels, float eps);

namespace testing {
enum class Fault { none, conv2d_backward };
/// Deliberately corrupts a backward rule so self-checks can be validated.
void inject_fault(Fault fault);
Fault active_fault();
}  // namespace testing

}  // namespace pcgan::ad
