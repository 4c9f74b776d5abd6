#include "pcgan/trainer.hpp"

#include <cstdio>
#include <fstream>
#include <random>

#include "pcgan/error.hpp"

namespace pcgan {
namespace {

void sample_conditioning(Rng& rng, int n, int latent_dim, int num_classes, Tensor& z, std::vector<int>& labels) {
  z = Tensor(Shape{n, latent_dim});
  std::normal_distribution<float> normal(0.0f, 1.0f);
  for (float& v : z.values()) v = normal(rng);
  std::uniform_int_distribution<int> pick(0, num_classes - 1);
  labels.resize(std::size_t(n));
  for (int& l : labels) l = pick(rng);
}

int net_classes(const Network& disc) { return disc.output_shape().at(0) - 1; }

/// Freezes every layer of a network for its lifetime, then restores the previous flags.
class FreezeGuard {
 public:
  explicit FreezeGuard(Network& net) : net_(net) {
    for (std::size_t i = 0; i < net.layers().size(); ++i) flags_.push_back(net.layer_trainable(i));
    net.set_trainable(false);
  }
  ~FreezeGuard() {
    for (std::size_t i = 0; i < flags_.size(); ++i) net_.set_layer_trainable(net_.layers()[i].index, flags_[i]);
  }
  FreezeGuard(const FreezeGuard&) = delete;
  FreezeGuard& operator=(const FreezeGuard&) = delete;

 private:
  Network& net_;
  std::vector<bool> flags_;
};

constexpr const char* kMetricsTensor = "log.metrics";

Tensor metrics_to_tensor(const std::vector<MetricsRow>& rows) {
  Tensor t(Shape{int(rows.size()), 7});
  for (std::size_t i = 0; i < rows.size(); ++i) {
    const MetricsRow& r = rows[i];
    float* p = t.ptr() + i * 7;
    p[0] = float(r.stage);
    p[1] = float(r.epoch);
    p[2] = float(r.batches);
    p[3] = r.d_discern;
    p[4] = r.d_class;
    p[5] = r.g_discern;
    p[6] = r.g_class;
  }
  return t;
}

std::vector<MetricsRow> metrics_from_tensor(const Tensor& t) {
  if (t.rank() != 2 || t.dim(1) != 7) throw FormatError(FormatError::Kind::malformed, "metrics log has wrong shape");
  std::vector<MetricsRow> rows(std::size_t(t.dim(0)));
  for (std::size_t i = 0; i < rows.size(); ++i) {
    const float* p = t.ptr() + i * 7;
    rows[i] = MetricsRow{int(p[0]), int(p[1]), int(p[2]), p[3], p[4], p[5], p[6]};
  }
  return rows;
}

}  // namespace

void TrainConfig::validate() const {
  if (epochs_per_stage < 1) throw UsageError("epochs per stage must be at least 1");
  if (batch_size < 2) throw UsageError("batch size must be at least 2");
  if (stages.empty()) throw UsageError("stage list is empty");
  for (std::size_t i = 0; i < stages.size(); ++i) {
    if (stages[i] != int(i) + 1) throw UsageError("stages must run consecutively from 1 (at most 3)");
  }
  if (stages.size() > 3) throw UsageError("at most three stages");
  if (!(adam.lr > 0.0f) || !(adam.beta1 >= 0.0f && adam.beta1 < 1.0f) || !(adam.beta2 >= 0.0f && adam.beta2 < 1.0f) ||
      !(adam.eps > 0.0f)) {
    throw UsageError("invalid optimizer settings");
  }
  model.validate();
}

void to_json(nlohmann::json& j, const ModelConfig& m) {
  j = {{"num_classes", m.num_classes},        {"latent_dim", m.latent_dim},     {"widths", m.widths},
       {"gen_base_channels", m.gen_base_channels}, {"leaky_alpha", m.leaky_alpha}, {"dropout_rate", m.dropout_rate}};
}

void from_json(const nlohmann::json& j, ModelConfig& m) {
  m.num_classes = j.value("num_classes", m.num_classes);
  m.latent_dim = j.value("latent_dim", m.latent_dim);
  m.widths = j.value("widths", m.widths);
  m.gen_base_channels = j.value("gen_base_channels", m.gen_base_channels);
  m.leaky_alpha = j.value("leaky_alpha", m.leaky_alpha);
  m.dropout_rate = j.value("dropout_rate", m.dropout_rate);
}

void to_json(nlohmann::json& j, const AdamConfig& a) {
  j = {{"lr", a.lr}, {"beta1", a.beta1}, {"beta2", a.beta2}, {"eps", a.eps}};
}

void from_json(const nlohmann::json& j, AdamConfig& a) {
  a.lr = j.value("lr", a.lr);
  a.beta1 = j.value("beta1", a.beta1);
  a.beta2 = j.value("beta2", a.beta2);
  a.eps = j.value("eps", a.eps);
}

void to_json(nlohmann::json& j, const TrainSeeds& s) {
  j = {{"init", s.init}, {"shuffle", s.shuffle}, {"latent", s.latent}, {"dropout", s.dropout}};
}

void from_json(const nlohmann::json& j, TrainSeeds& s) {
  s.init = j.value("init", s.init);
  s.shuffle = j.value("shuffle", s.shuffle);
  s.latent = j.value("latent", s.latent);
  s.dropout = j.value("dropout", s.dropout);
}

void to_json(nlohmann::json& j, const TrainConfig& c) {
  j = {{"epochs_per_stage", c.epochs_per_stage}, {"batch_size", c.batch_size}, {"adam", c.adam},
       {"seeds", c.seeds}, {"stages", c.stages}, {"model", c.model}};
}

void from_json(const nlohmann::json& j, TrainConfig& c) {
  c.epochs_per_stage = j.value("epochs_per_stage", c.epochs_per_stage);
  c.batch_size = j.value("batch_size", c.batch_size);
  if (j.contains("adam")) from_json(j.at("adam"), c.adam);
  if (j.contains("seeds")) from_json(j.at("seeds"), c.seeds);
  c.stages = j.value("stages", c.stages);
  if (j.contains("model")) from_json(j.at("model"), c.model);
}

StageNetworks init_stage(int stage_index, const TrainConfig& cfg) {
  StageNetworks s;
  s.config = StageConfig::for_stage(stage_index, cfg.model);
  s.generator = build_generator(s.config, derive_seed(cfg.seeds.init, {std::uint64_t(stage_index), 0}));
  s.discriminator = build_discriminator(s.config, derive_seed(cfg.seeds.init, {std::uint64_t(stage_index), 1}));
  s.gen_opt.config = cfg.adam;
  s.disc_opt.config = cfg.adam;
  return s;
}

TrainingRngs make_rngs(const TrainSeeds& seeds) {
  return TrainingRngs{Rng(derive_seed(seeds.latent, {})), Rng(derive_seed(seeds.dropout, {}))};
}

DiscObjective disc_objective(ad::Tape& tape, Network& disc, const Tensor& reals, std::span<const int> real_labels,
                             const Tensor& fakes, Rng* dropout_rng) {
  const int n = reals.dim(0);
  if (fakes.dim(0) != n || int(real_labels.size()) != n) {
    throw DimensionError("discriminator objective needs matching real, fake and label counts");
  }
  Tensor both(Shape{2 * n, reals.dim(1), reals.dim(2), reals.dim(3)});
  if (fakes.shape() != reals.shape()) throw DimensionError("real and fake batches differ in shape");
  std::copy(reals.values().begin(), reals.values().end(), both.values().begin());
  std::copy(fakes.values().begin(), fakes.values().end(), both.values().begin() + std::ptrdiff_t(reals.numel()));

  ForwardContext ctx;
  ctx.rng = dropout_rng;
  DiscOutput out = discriminate(tape, disc, tape.constant(std::move(both)), ctx);
  DiscObjective obj;
  ad::Var real_part = ad::slice_rows(out.realness, 0, n);
  ad::Var fake_part = ad::slice_rows(out.realness, n, 2 * n);
  obj.discern = ad::scale(ad::add(loss_discern(real_part, Target::real), loss_discern(fake_part, Target::fake)), 0.5f);
  obj.cls = loss_class(ad::slice_rows(out.class_probs, 0, n), real_labels);
  obj.total = ad::add(obj.discern, obj.cls);
  obj.forward = std::move(out.forward);
  return obj;
}

UpdateLosses disc_update(Network& disc, const Network& gen, const Batch& batch, AdamState& opt, TrainingRngs& rngs) {
  if (batch.images.rank() != 4 || batch.images.shape() != Shape({batch.images.dim(0), 1, disc.input_shape()[1],
                                                                   disc.input_shape()[2]})) {
    throw UsageError("batch of shape " + shape_to_string(batch.images.shape()) + " does not match the " +
                     std::to_string(disc.input_shape()[1]) + "x" + std::to_string(disc.input_shape()[2]) +
                     " discriminator");
  }
  if (gen.output_shape() != disc.input_shape()) throw UsageError("generator and discriminator stages differ");
  const int n = batch.images.dim(0);
  Tensor z;
  std::vector<int> labels;
  sample_conditioning(rngs.latent, n, gen.input_shape()[0], net_classes(disc), z, labels);
  const Tensor fakes = generate(gen, z, labels);

  ad::Tape tape;
  DiscObjective obj = disc_objective(tape, disc, batch.images, batch.labels, fakes, &rngs.dropout);
  tape.backward(obj.total);
  adam_step(disc, collect_grads(tape, obj.forward), opt);
  return UpdateLosses{obj.discern.value()[0], obj.cls.value()[0]};
}

UpdateLosses gen_update(Network& disc, Network& gen, int n, AdamState& opt, TrainingRngs& rngs) {
  if (gen.output_shape() != disc.input_shape()) throw UsageError("generator and discriminator stages differ");
  if (n < 1) throw UsageError("generator update needs n >= 1");
  Tensor z;
  std::vector<int> labels;
  sample_conditioning(rngs.latent, 2 * n, gen.input_shape()[0], net_classes(disc), z, labels);

  FreezeGuard frozen(disc);
  ad::Tape tape;
  ForwardResult fake = generate(tape, gen, tape.constant(std::move(z)), labels);
  ForwardContext dctx;
  dctx.rng = &rngs.dropout;
  dctx.param_grads = false;
  const Network& d = disc;
  DiscOutput out = discriminate(tape, d, fake.output, dctx);
  ad::Var discern = loss_discern(out.realness, Target::real);
  ad::Var cls = loss_class(out.class_probs, labels);
  tape.backward(ad::add(discern, cls));
  adam_step(gen, collect_grads(tape, fake), opt);
  return UpdateLosses{discern.value()[0], cls.value()[0]};
}

TransferReport transfer_by_name(const Network& src, Network& dst) {
  auto check = [](const std::map<std::string, Tensor>& from, const std::map<std::string, Tensor>& to) {
    for (const auto& [name, t] : to) {
      auto it = from.find(name);
      if (it != from.end() && it->second.shape() != t.shape()) {
        throw TransferError("cannot transfer " + name + ": shape " + shape_to_string(it->second.shape()) + " vs " +
                            shape_to_string(t.shape()));
      }
    }
  };
  check(src.params(), dst.params());
  check(src.buffers(), dst.buffers());

  TransferReport report;
  for (auto& [name, t] : dst.params()) {
    auto it = src.params().find(name);
    if (it == src.params().end()) {
      report.fresh.push_back(name);
    } else {
      t = it->second;
      report.copied.push_back(name);
    }
  }
  for (auto& [name, t] : dst.buffers()) {
    auto it = src.buffers().find(name);
    if (it != src.buffers().end()) t = it->second;
  }
  return report;
}

StageTransfer transfer_weights(const StageNetworks& prev, StageNetworks& next) {
  if (next.config.stage_index != prev.config.stage_index + 1) throw UsageError("weight transfer needs adjacent stages");
  // Check both before copying either so a failure leaves `next` untouched.
  Network g = next.generator;
  Network d = next.discriminator;
  StageTransfer t{transfer_by_name(prev.generator, g), transfer_by_name(prev.discriminator, d)};
  next.generator = std::move(g);
  next.discriminator = std::move(d);
  return t;
}

bool operator==(const MetricsRow& a, const MetricsRow& b) {
  return a.stage == b.stage && a.epoch == b.epoch && a.batches == b.batches && a.d_discern == b.d_discern &&
         a.d_class == b.d_class && a.g_discern == b.g_discern && a.g_class == b.g_class;
}

std::string metrics_csv(const std::vector<MetricsRow>& rows) {
  std::string out = std::string(kMetricsHeader) + "\n";
  char line[256];
  for (const auto& r : rows) {
    std::snprintf(line, sizeof line, "%d,%d,%d,%.9g,%.9g,%.9g,%.9g\n", r.stage, r.epoch, r.batches, double(r.d_discern),
                  double(r.d_class), double(r.g_discern), double(r.g_class));
    out += line;
  }
  return out;
}

void write_metrics_csv(const std::filesystem::path& path, const std::vector<MetricsRow>& rows) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write " + path.string());
  out << metrics_csv(rows);
  if (!out) throw IoError("failed writing " + path.string());
}

ProgressiveTrainer::ProgressiveTrainer(const Dataset& train, TrainConfig cfg)
    : ProgressiveTrainer(train, cfg, 0, init_stage(cfg.stages.empty() ? 1 : cfg.stages.front(), cfg)) {}

ProgressiveTrainer::ProgressiveTrainer(const Dataset& train, TrainConfig cfg, std::size_t stage_pos, StageNetworks nets)
    : data_(&train), cfg_(std::move(cfg)), stage_pos_(stage_pos), nets_(std::move(nets)), rngs_(make_rngs(cfg_.seeds)) {
  cfg_.validate();
  train.validate();
  if (train.resolution() != 28) throw UsageError("training data must be canonicalized to 28x28");
  if (train.num_classes > cfg_.model.num_classes) {
    throw UsageError("dataset has " + std::to_string(train.num_classes) + " classes but the model only " +
                     std::to_string(cfg_.model.num_classes));
  }
  if (train.size() < cfg_.batch_size) throw UsageError("dataset is smaller than one batch");
}

ProgressiveTrainer ProgressiveTrainer::resume(const Dataset& train, TrainConfig cfg, const Checkpoint& ckpt) {
  using Kind = FormatError::Kind;
  if (ckpt.kind != CheckpointKind::trainer) throw FormatError(Kind::malformed, "not a trainer checkpoint");
  cfg.validate();
  if (!ckpt.meta.contains("config") || ckpt.meta.at("config") != nlohmann::json(cfg)) {
    throw UsageError("checkpoint was written with a different training configuration");
  }
  std::size_t pos = 0;
  while (pos < cfg.stages.size() && cfg.stages[pos] != int(ckpt.stage)) ++pos;
  if (pos == cfg.stages.size()) throw FormatError(Kind::malformed, "checkpoint stage not in the stage list");
  if (ckpt.epoch < 1 || int(ckpt.epoch) > cfg.epochs_per_stage) {
    throw FormatError(Kind::malformed, "checkpoint epoch out of range");
  }
  for (const auto& [name, t] : ckpt.tensors) {
    if (name.rfind("G.", 0) != 0 && name.rfind("D.", 0) != 0 && name != kMetricsTensor) {
      throw FormatError(Kind::unknown_tensor, "checkpoint tensor " + name + " matches no network");
    }
  }
  StageNetworks nets = init_stage(int(ckpt.stage), cfg);
  import_network(nets.generator, "G.", ckpt.tensors);
  import_network(nets.discriminator, "D.", ckpt.tensors);
  auto opt = [&](const char* n) {
    auto it = ckpt.optimizers.find(n);
    if (it == ckpt.optimizers.end()) throw FormatError(Kind::malformed, std::string("checkpoint lacks optimizer ") + n);
    return it->second;
  };
  auto rng = [&](const char* n) {
    auto it = ckpt.rngs.find(n);
    if (it == ckpt.rngs.end()) throw FormatError(Kind::malformed, std::string("checkpoint lacks rng ") + n);
    return rng_from_state(it->second);
  };
  nets.gen_opt = opt("G");
  nets.disc_opt = opt("D");
  TrainingRngs rngs{rng("latent"), rng("dropout")};
  std::vector<MetricsRow> metrics;
  if (auto it = ckpt.tensors.find(kMetricsTensor); it != ckpt.tensors.end()) metrics = metrics_from_tensor(it->second);

  ProgressiveTrainer t(train, std::move(cfg), pos, std::move(nets));
  t.epoch_ = int(ckpt.epoch);
  t.rngs_ = std::move(rngs);
  t.metrics_ = std::move(metrics);
  return t;
}

bool ProgressiveTrainer::finished() const {
  return stage_pos_ + 1 == cfg_.stages.size() && epoch_ == cfg_.epochs_per_stage;
}

MetricsRow ProgressiveTrainer::run_epoch() {
  if (finished()) throw UsageError("training already finished");
  if (epoch_ == cfg_.epochs_per_stage) {
    StageNetworks next = init_stage(cfg_.stages[stage_pos_ + 1], cfg_);
    transfers_.push_back(transfer_weights(nets_, next));
    nets_ = std::move(next);
    ++stage_pos_;
    epoch_ = 0;
  }
  const int stage = nets_.config.stage_index;
  const int res = nets_.config.resolution;
  nets_.generator.set_mode(Mode::train);
  nets_.discriminator.set_mode(Mode::train);

  BatchStream stream(*data_, cfg_.batch_size, res,
                     derive_seed(cfg_.seeds.shuffle, {std::uint64_t(stage), std::uint64_t(epoch_)}));
  double sums[4] = {0, 0, 0, 0};
  int batch_no = 0;
  while (auto batch = stream.next()) {
    const UpdateLosses d = disc_update(nets_.discriminator, nets_.generator, *batch, nets_.disc_opt, rngs_);
    if (observer_) observer_(UpdateEvent{UpdateKind::disc, stage, epoch_ + 1, batch_no, batch->resolution(), d});
    const UpdateLosses g = gen_update(nets_.discriminator, nets_.generator, cfg_.batch_size, nets_.gen_opt, rngs_);
    if (observer_) observer_(UpdateEvent{UpdateKind::gen, stage, epoch_ + 1, batch_no, res, g});
    sums[0] += d.discern;
    sums[1] += d.cls;
    sums[2] += g.discern;
    sums[3] += g.cls;
    ++batch_no;
  }
  ++epoch_;
  MetricsRow row{stage,
                 epoch_,
                 batch_no,
                 float(sums[0] / batch_no),
                 float(sums[1] / batch_no),
                 float(sums[2] / batch_no),
                 float(sums[3] / batch_no)};
  metrics_.push_back(row);
  return row;
}

Checkpoint ProgressiveTrainer::checkpoint() const {
  Checkpoint c;
  c.kind = CheckpointKind::trainer;
  c.stage = std::uint32_t(nets_.config.stage_index);
  c.epoch = std::uint32_t(epoch_);
  c.meta = {{"config", cfg_}};
  export_network(nets_.generator, "G.", c.tensors);
  export_network(nets_.discriminator, "D.", c.tensors);
  if (!metrics_.empty()) c.tensors[kMetricsTensor] = metrics_to_tensor(metrics_);
  c.optimizers["G"] = nets_.gen_opt;
  c.optimizers["D"] = nets_.disc_opt;
  c.rngs["latent"] = rng_state(rngs_.latent);
  c.rngs["dropout"] = rng_state(rngs_.dropout);
  return c;
}

TrainResult train_all(const Dataset& train, const TrainConfig& cfg, const ProgressiveTrainer::Observer& observer) {
  ProgressiveTrainer t(train, cfg);
  t.set_observer(observer);
  while (!t.finished()) t.run_epoch();
  return TrainResult{t.networks(), t.metrics()};
}

}  // namespace pcgan
