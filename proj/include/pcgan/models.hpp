#pragma once

#include <array>
#include <cstdint>
#include <span>
#include <vector>

#include "pcgan/layers.hpp"

namespace pcgan {

/// Architecture knobs shared by every stage.
struct ModelConfig {
  int num_classes = 10;
  int latent_dim = 100;
  /// Channel widths of the 7x7, 14x14 and 28x28 blocks.
  std::array<int, 3> widths{64, 64, 128};
  /// Channels of the generator's dense projection (reshaped to [c,7,7]).
  int gen_base_channels = 128;
  float leaky_alpha = 0.2f;
  float dropout_rate = 0.3f;

  void validate() const;
};

bool operator==(const ModelConfig& a, const ModelConfig& b);

struct StageConfig {
  int stage_index = 1;  // 1..3
  int resolution = 7;   // 7 * 2^(stage_index-1)
  ModelConfig model;

  static StageConfig for_stage(int stage_index, const ModelConfig& model);
  void validate() const;
};

int stage_resolution(int stage_index);

/// embed(label) * z -> dense -> [base,7,7] -> per-stage [conv_transpose, batchnorm,
/// leaky_relu] blocks (stride-2 doubling after the first) -> 1x1 conv_transpose -> tanh.
Network build_generator(const StageConfig& cfg, std::uint64_t seed);

/// 1x1 from-grayscale conv -> one 3x3 conv block per stage (stride 2 above 7x7)
/// -> flatten -> dense producing [realness logit, K class logits].
Network build_discriminator(const StageConfig& cfg, std::uint64_t seed);

/// Layers of the discriminator up to and including flatten.
std::vector<LayerSpec> discriminator_trunk_specs(const StageConfig& cfg);

/// Stable layer indices used by the builders (see models.cpp for the layout).
inline constexpr int kFlattenIndex = 90;
inline constexpr int kDiscHeadIndex = 91;

struct DiscOutput {
  ad::Var realness;     // [n,1] in (0,1)
  ad::Var class_probs;  // [n,K], rows sum to 1
  ForwardResult forward;
};

DiscOutput discriminate(ad::Tape& tape, Network& disc, ad::Var images, const ForwardContext& ctx);
DiscOutput discriminate(ad::Tape& tape, const Network& disc, ad::Var images, const ForwardContext& ctx);

/// Taped generator pass. Throws UsageError for labels outside [0,K).
ForwardResult generate(ad::Tape& tape, Network& gen, ad::Var z, std::span<const int> labels,
                       ForwardContext ctx = {});
ForwardResult generate(ad::Tape& tape, const Network& gen, ad::Var z, std::span<const int> labels,
                       ForwardContext ctx = {});
/// Untaped generator pass under the network's current mode.
Tensor generate(const Network& gen, const Tensor& z, std::span<const int> labels);

enum class Target { real, fake };

inline constexpr float kProbabilityEps = 1e-7f;

/// Mean -log p for real targets, -log(1-p) for fake targets.
ad::Var loss_discern(ad::Var realness, Target target);
/// Mean negative log-likelihood of the true labels.
ad::Var loss_class(ad::Var class_probs, std::span<const int> labels);

float loss_discern(const Tensor& realness, Target target);
float loss_class(const Tensor& class_probs, std::span<const int> labels);

}  // namespace pcgan
