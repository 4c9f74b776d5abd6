#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <variant>
#include <vector>

#include "pcgan/autodiff.hpp"
#include "pcgan/rng.hpp"
#include "pcgan/tensor.hpp"

namespace pcgan {

enum class Mode { train, infer };

enum class LayerKind { dense, conv, conv_transpose, batchnorm, leaky_relu, dropout, reshape, flatten, tanh, softmax, embed };

std::string_view kind_name(LayerKind kind);

struct NoGeometry {};
struct DenseGeometry {
  int in_units = 0;
  int units = 0;
};
struct ConvLayerGeometry {
  int in_channels = 0;
  int out_channels = 0;
  int kernel = 1;
  int stride = 1;
  int pad = 0;
};
struct NormGeometry {
  int channels = 0;
  float momentum = 0.1f;
  float eps = 1e-5f;
};
struct LeakyGeometry {
  float alpha = 0.2f;
};
struct DropoutGeometry {
  float rate = 0.0f;
};
struct ReshapeGeometry {
  Shape target;  // per-sample
};
/// Multiplies each sample elementwise by the learned row of its label.
struct EmbedGeometry {
  int num_classes = 0;
  int dim = 0;
};

using LayerGeometry = std::variant<NoGeometry, DenseGeometry, ConvLayerGeometry, NormGeometry, LeakyGeometry,
                                   DropoutGeometry, ReshapeGeometry, EmbedGeometry>;

/// One layer of a sequential network. `index` is a stable logical id: it names
/// the layer's parameters ("{index}.{kind}.{param}") and survives growth of
/// the network on either end, so parameters stay addressable across stages.
struct LayerSpec {
  LayerKind kind = LayerKind::flatten;
  int index = 0;
  LayerGeometry geometry;

  static LayerSpec dense(int index, int in_units, int units);
  static LayerSpec conv(int index, int in_channels, int out_channels, int kernel, int stride, int pad);
  static LayerSpec conv_transpose(int index, int in_channels, int out_channels, int kernel, int stride, int pad);
  static LayerSpec batchnorm(int index, int channels, float momentum = 0.1f, float eps = 1e-5f);
  static LayerSpec leaky_relu(int index, float alpha);
  static LayerSpec dropout(int index, float rate);
  static LayerSpec reshape(int index, Shape target);
  static LayerSpec flatten(int index);
  static LayerSpec tanh(int index);
  static LayerSpec softmax(int index);
  static LayerSpec embed(int index, int num_classes, int dim);

  std::string prefix() const;
  /// Names of trainable parameters this layer owns, in a fixed order.
  std::vector<std::string> parameter_names() const;
  /// Names of non-trainable state (batchnorm running statistics).
  std::vector<std::string> buffer_names() const;
};

bool operator==(const LayerSpec& a, const LayerSpec& b);

/// Ordered layer stack with a name-addressed parameter store.
class Network {
 public:
  Network() = default;
  Network(std::vector<LayerSpec> layers, Shape input_shape);

  const std::vector<LayerSpec>& layers() const noexcept { return layers_; }
  /// Per-sample input shape (no batch axis).
  const Shape& input_shape() const noexcept { return input_shape_; }
  /// Per-sample output shape.
  const Shape& output_shape() const noexcept { return output_shape_; }

  Mode mode() const noexcept { return mode_; }
  void set_mode(Mode mode) noexcept { mode_ = mode; }

  std::map<std::string, Tensor>& params() noexcept { return params_; }
  const std::map<std::string, Tensor>& params() const noexcept { return params_; }
  std::map<std::string, Tensor>& buffers() noexcept { return buffers_; }
  const std::map<std::string, Tensor>& buffers() const noexcept { return buffers_; }

  Tensor& param(const std::string& name);
  const Tensor& param(const std::string& name) const;

  bool layer_trainable(std::size_t position) const { return trainable_.at(position); }
  /// Toggles by stable layer index.
  void set_layer_trainable(int index, bool trainable);
  void set_trainable(bool trainable);
  /// Whether the parameter's owning layer is currently trainable.
  bool param_trainable(const std::string& name) const;
  std::optional<std::size_t> position_of(int index) const;

 private:
  friend Network init_network(std::vector<LayerSpec> specs, Shape input_shape, std::uint64_t seed);

  std::vector<LayerSpec> layers_;
  std::vector<bool> trainable_;
  Shape input_shape_;
  Shape output_shape_;
  Mode mode_ = Mode::train;
  std::map<std::string, Tensor> params_;
  std::map<std::string, Tensor> buffers_;
  std::map<std::string, std::size_t> owner_;
};

/// Builds and initializes a network: He-uniform weights, zero biases,
/// unit/zero batchnorm affine, unit-normal embeddings. Throws SpecError
/// when adjacent layers disagree on shape.
Network init_network(std::vector<LayerSpec> specs, Shape input_shape, std::uint64_t seed);

/// Per-sample output shape of `specs` applied to `input_shape`; SpecError on mismatch.
Shape infer_output_shape(const std::vector<LayerSpec>& specs, const Shape& input_shape);

struct ForwardContext {
  /// Dropout randomness; required when the network runs dropout in train mode.
  Rng* rng = nullptr;
  /// Conditioning labels for embed layers.
  std::span<const int> labels;
  /// Whether parameters of trainable layers become gradient leaves.
  bool param_grads = true;
};

struct ForwardResult {
  ad::Var output;
  std::vector<std::pair<std::string, ad::Var>> params;
};

/// Applies the layers in order under the network's mode. In train mode,
/// trainable batchnorm layers use batch statistics and update their running
/// buffers; frozen batchnorm layers normalize with running statistics.
ForwardResult forward(ad::Tape& tape, Network& net, ad::Var x, const ForwardContext& ctx);
/// Same as above but never writes the network's buffers.
ForwardResult forward(ad::Tape& tape, const Network& net, ad::Var x, const ForwardContext& ctx);

/// Untaped forward pass.
Tensor evaluate(const Network& net, const Tensor& x, std::span<const int> labels = {}, Rng* rng = nullptr);

using GradMap = std::map<std::string, Tensor>;

/// Gradients of every parameter leaf that received one, summed by name.
GradMap collect_grads(const ad::Tape& tape, const ForwardResult& result);

}  // namespace pcgan
