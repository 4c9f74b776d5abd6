#include "pcgan/models.hpp"

#include "pcgan/error.hpp"

// Layer index layout (indices name parameters, so they must not move when a
// stage adds layers):
//   generator      0 embed, 1 dense, 2 reshape,
//                  block d: 10d+1 conv_transpose, 10d+2 batchnorm, 10d+3 leaky_relu,
//                  stage s output: 10s+5 conv_transpose 1x1, 10s+6 tanh
//   discriminator  stage s input: 10s+5 conv 1x1,
//                  block d: 10d+1 conv, 10d+2 batchnorm (d == 2), 10d+3 leaky_relu,
//                           10d+4 dropout (d != 2),
//                  90 flatten, 91 dense head
// Block d works at 7 * 2^(d-1) pixels; block 1 is shared by every stage.

namespace pcgan {
namespace {

int width(const ModelConfig& m, int depth) { return m.widths[std::size_t(depth - 1)]; }

int head_classes(const Network& disc) {
  return disc.output_shape().at(0) - 1;
}

int embed_classes(const Network& gen) {
  for (const auto& s : gen.layers()) {
    if (s.kind == LayerKind::embed) return std::get<EmbedGeometry>(s.geometry).num_classes;
  }
  return 0;
}

void check_labels(std::span<const int> labels, int num_classes) {
  for (int l : labels) {
    if (l < 0 || l >= num_classes) {
      throw UsageError("label " + std::to_string(l) + " outside [0," + std::to_string(num_classes) + ")");
    }
  }
}

template <class Net>
DiscOutput discriminate_impl(ad::Tape& tape, Net& disc, ad::Var images, const ForwardContext& ctx) {
  DiscOutput out;
  out.forward = forward(tape, disc, images, ctx);
  const int k = head_classes(disc);
  out.realness = ad::sigmoid(ad::slice_cols(out.forward.output, 0, 1));
  out.class_probs = ad::softmax(ad::slice_cols(out.forward.output, 1, k + 1));
  return out;
}

template <class Net>
ForwardResult generate_impl(ad::Tape& tape, Net& gen, ad::Var z, std::span<const int> labels, ForwardContext ctx) {
  check_labels(labels, embed_classes(gen));
  ctx.labels = labels;
  return forward(tape, gen, z, ctx);
}

}  // namespace

void ModelConfig::validate() const {
  if (num_classes < 2) throw UsageError("num_classes must be at least 2");
  if (latent_dim < 1) throw UsageError("latent_dim must be positive");
  if (gen_base_channels < 1) throw UsageError("gen_base_channels must be positive");
  for (int w : widths) {
    if (w < 1) throw UsageError("channel widths must be positive");
  }
  if (!(leaky_alpha >= 0.0f && leaky_alpha < 1.0f)) throw UsageError("leaky_alpha must lie in [0,1)");
  if (!(dropout_rate >= 0.0f && dropout_rate < 1.0f)) throw UsageError("dropout_rate must lie in [0,1)");
}

bool operator==(const ModelConfig& a, const ModelConfig& b) {
  return a.num_classes == b.num_classes && a.latent_dim == b.latent_dim && a.widths == b.widths &&
         a.gen_base_channels == b.gen_base_channels && a.leaky_alpha == b.leaky_alpha &&
         a.dropout_rate == b.dropout_rate;
}

int stage_resolution(int stage_index) {
  if (stage_index < 1 || stage_index > 3) throw UsageError("stage index must be 1, 2 or 3");
  return 7 << (stage_index - 1);
}

StageConfig StageConfig::for_stage(int stage_index, const ModelConfig& model) {
  StageConfig c;
  c.stage_index = stage_index;
  c.resolution = stage_resolution(stage_index);
  c.model = model;
  c.validate();
  return c;
}

void StageConfig::validate() const {
  if (resolution != stage_resolution(stage_index)) {
    throw UsageError("stage " + std::to_string(stage_index) + " must run at " +
                     std::to_string(stage_resolution(stage_index)) + "x" +
                     std::to_string(stage_resolution(stage_index)));
  }
  model.validate();
}

Network build_generator(const StageConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  const ModelConfig& m = cfg.model;
  std::vector<LayerSpec> specs;
  specs.push_back(LayerSpec::embed(0, m.num_classes, m.latent_dim));
  specs.push_back(LayerSpec::dense(1, m.latent_dim, m.gen_base_channels * 7 * 7));
  specs.push_back(LayerSpec::reshape(2, Shape{m.gen_base_channels, 7, 7}));
  for (int d = 1; d <= cfg.stage_index; ++d) {
    if (d == 1) {
      specs.push_back(LayerSpec::conv_transpose(11, m.gen_base_channels, width(m, 1), 3, 1, 1));
    } else {
      specs.push_back(LayerSpec::conv_transpose(10 * d + 1, width(m, d - 1), width(m, d), 4, 2, 1));
    }
    specs.push_back(LayerSpec::batchnorm(10 * d + 2, width(m, d)));
    specs.push_back(LayerSpec::leaky_relu(10 * d + 3, m.leaky_alpha));
  }
  const int s = cfg.stage_index;
  specs.push_back(LayerSpec::conv_transpose(10 * s + 5, width(m, s), 1, 1, 1, 0));
  specs.push_back(LayerSpec::tanh(10 * s + 6));
  return init_network(std::move(specs), Shape{m.latent_dim}, seed);
}

std::vector<LayerSpec> discriminator_trunk_specs(const StageConfig& cfg) {
  cfg.validate();
  const ModelConfig& m = cfg.model;
  const int s = cfg.stage_index;
  std::vector<LayerSpec> specs;
  specs.push_back(LayerSpec::conv(10 * s + 5, 1, width(m, s), 1, 1, 0));
  for (int d = s; d >= 1; --d) {
    if (d == 1) {
      specs.push_back(LayerSpec::conv(11, width(m, 1), width(m, 1), 3, 1, 1));
    } else {
      specs.push_back(LayerSpec::conv(10 * d + 1, width(m, d), width(m, d - 1), 3, 2, 1));
    }
    if (d == 2) specs.push_back(LayerSpec::batchnorm(22, width(m, 1)));
    specs.push_back(LayerSpec::leaky_relu(10 * d + 3, m.leaky_alpha));
    if (d != 2) specs.push_back(LayerSpec::dropout(10 * d + 4, m.dropout_rate));
  }
  specs.push_back(LayerSpec::flatten(kFlattenIndex));
  return specs;
}

Network build_discriminator(const StageConfig& cfg, std::uint64_t seed) {
  std::vector<LayerSpec> specs = discriminator_trunk_specs(cfg);
  const ModelConfig& m = cfg.model;
  specs.push_back(LayerSpec::dense(kDiscHeadIndex, width(m, 1) * 7 * 7, 1 + m.num_classes));
  return init_network(std::move(specs), Shape{1, cfg.resolution, cfg.resolution}, seed);
}

DiscOutput discriminate(ad::Tape& tape, Network& disc, ad::Var images, const ForwardContext& ctx) {
  return discriminate_impl(tape, disc, images, ctx);
}

DiscOutput discriminate(ad::Tape& tape, const Network& disc, ad::Var images, const ForwardContext& ctx) {
  return discriminate_impl(tape, disc, images, ctx);
}

ForwardResult generate(ad::Tape& tape, Network& gen, ad::Var z, std::span<const int> labels, ForwardContext ctx) {
  return generate_impl(tape, gen, z, labels, ctx);
}

ForwardResult generate(ad::Tape& tape, const Network& gen, ad::Var z, std::span<const int> labels,
                       ForwardContext ctx) {
  return generate_impl(tape, gen, z, labels, ctx);
}

Tensor generate(const Network& gen, const Tensor& z, std::span<const int> labels) {
  check_labels(labels, embed_classes(gen));
  return evaluate(gen, z, labels);
}

ad::Var loss_discern(ad::Var realness, Target target) {
  return ad::binary_nll(realness, target == Target::real, kProbabilityEps);
}

ad::Var loss_class(ad::Var class_probs, std::span<const int> labels) {
  return ad::categorical_nll(class_probs, labels, kProbabilityEps);
}

float loss_discern(const Tensor& realness, Target target) {
  ad::Tape tape(false);
  return loss_discern(tape.constant(realness), target).value()[0];
}

float loss_class(const Tensor& class_probs, std::span<const int> labels) {
  ad::Tape tape(false);
  return loss_class(tape.constant(class_probs), labels).value()[0];
}

}  // namespace pcgan
