#include "pcgan/classifier.hpp"

#include <algorithm>

#include "pcgan/error.hpp"
#include "pcgan/trainer.hpp"

namespace pcgan {
namespace {

constexpr int kPredictChunk = 256;

std::string head_prefix() { return std::to_string(kClassifierHeadIndex) + "."; }

bool is_head(const std::string& name) { return name.rfind(head_prefix(), 0) == 0; }

double monitor_accuracy(const Classifier& clf, const Dataset& ds) {
  const Prediction p = predict(clf, ds.images);
  int hits = 0;
  for (std::size_t i = 0; i < p.labels.size(); ++i) hits += p.labels[i] == ds.labels[i];
  return double(hits) / double(p.labels.size());
}

float run_epoch(Classifier& clf, const Dataset& train, int batch_size, std::uint64_t shuffle_seed, AdamState& opt,
                Rng& dropout) {
  BatchStream stream(train, batch_size, 28, shuffle_seed);
  double total = 0.0;
  int count = 0;
  while (auto batch = stream.next()) {
    ad::Tape tape;
    ForwardContext ctx;
    ctx.rng = &dropout;
    ForwardResult r = forward(tape, clf.net, tape.constant(batch->images), ctx);
    ad::Var loss = loss_class(r.output, batch->labels);
    tape.backward(loss);
    adam_step(clf.net, collect_grads(tape, r), opt);
    total += loss.value()[0];
    ++count;
  }
  return float(total / count);
}

}  // namespace

std::vector<std::string> Classifier::head_parameter_names() const {
  std::vector<std::string> out;
  for (const auto& [n, t] : net.params()) {
    if (is_head(n)) out.push_back(n);
  }
  return out;
}

std::vector<std::string> Classifier::trunk_parameter_names() const {
  std::vector<std::string> out;
  for (const auto& [n, t] : net.params()) {
    if (!is_head(n)) out.push_back(n);
  }
  return out;
}

Classifier build_classifier(const ModelConfig& model, std::uint64_t seed) {
  model.validate();
  std::vector<LayerSpec> specs = discriminator_trunk_specs(StageConfig::for_stage(3, model));
  specs.push_back(LayerSpec::dense(kClassifierHeadIndex, model.widths[0] * 7 * 7, model.num_classes));
  specs.push_back(LayerSpec::softmax(kClassifierSoftmaxIndex));
  Classifier c;
  c.model = model;
  c.net = init_network(std::move(specs), Shape{1, 28, 28}, seed);
  c.net.set_mode(Mode::infer);
  for (const auto& [n, t] : c.net.params()) c.provenance[n] = Provenance::fresh;
  return c;
}

Classifier build_classifier(int num_classes, std::uint64_t seed) {
  ModelConfig m;
  m.num_classes = num_classes;
  return build_classifier(m, seed);
}

Classifier transfer_from_discriminator(Classifier clf, const Network& disc) {
  if (disc.input_shape() != Shape({1, 28, 28})) throw TransferError("classifier transfer needs a stage-3 discriminator");
  auto check = [&](const std::map<std::string, Tensor>& mine, const std::map<std::string, Tensor>& theirs) {
    for (const auto& [n, t] : mine) {
      if (is_head(n)) continue;
      auto it = theirs.find(n);
      if (it == theirs.end()) throw TransferError("discriminator has no tensor " + n);
      if (it->second.shape() != t.shape()) {
        throw TransferError("cannot transfer " + n + ": shape " + shape_to_string(it->second.shape()) + " vs " +
                            shape_to_string(t.shape()));
      }
    }
  };
  check(clf.net.params(), disc.params());
  check(clf.net.buffers(), disc.buffers());
  for (auto& [n, t] : clf.net.params()) {
    if (is_head(n)) continue;
    t = disc.params().at(n);
    clf.provenance[n] = Provenance::transferred;
  }
  for (auto& [n, t] : clf.net.buffers()) {
    if (!is_head(n)) t = disc.buffers().at(n);
  }
  return clf;
}

void FinetuneConfig::validate() const {
  if (head_epochs < 0 || full_epochs < 0) throw UsageError("fine-tuning epochs must be non-negative");
  if (batch_size < 2) throw UsageError("fine-tuning batch size must be at least 2");
  if (!(head_adam.lr > 0.0f) || !(full_adam.lr > 0.0f)) throw UsageError("fine-tuning learning rates must be positive");
}

void to_json(nlohmann::json& j, const FinetuneConfig& c) {
  j = {{"head_epochs", c.head_epochs}, {"full_epochs", c.full_epochs}, {"batch_size", c.batch_size},
       {"head_adam", c.head_adam},     {"full_adam", c.full_adam},     {"seed", c.seed}};
}

void from_json(const nlohmann::json& j, FinetuneConfig& c) {
  c.head_epochs = j.value("head_epochs", c.head_epochs);
  c.full_epochs = j.value("full_epochs", c.full_epochs);
  c.batch_size = j.value("batch_size", c.batch_size);
  if (j.contains("head_adam")) from_json(j.at("head_adam"), c.head_adam);
  if (j.contains("full_adam")) from_json(j.at("full_adam"), c.full_adam);
  c.seed = j.value("seed", c.seed);
}

FinetuneResult finetune(Classifier clf, const Dataset& train, const FinetuneConfig& cfg, const Dataset* monitor) {
  cfg.validate();
  train.validate();
  if (train.resolution() != 28) throw UsageError("fine-tuning data must be canonicalized to 28x28");
  if (train.size() < cfg.batch_size) throw UsageError("fine-tuning set is smaller than one batch");
  for (int l : train.labels) {
    if (l >= clf.model.num_classes) throw UsageError("label " + std::to_string(l) + " exceeds the classifier's classes");
  }

  FinetuneResult result;
  Rng dropout(derive_seed(cfg.seed, {0xd0}));
  int epoch = 0;
  auto phase = [&](FinetunePhase which, int epochs, const AdamConfig& adam) {
    AdamState opt;
    opt.config = adam;
    for (int e = 0; e < epochs; ++e) {
      ++epoch;
      clf.net.set_mode(Mode::train);
      const float loss = run_epoch(clf, train, cfg.batch_size,
                                   derive_seed(cfg.seed, {std::uint64_t(which), std::uint64_t(e)}), opt, dropout);
      clf.net.set_mode(Mode::infer);
      FinetuneEpoch rec{which, epoch, loss, std::nullopt};
      if (monitor) rec.monitor_accuracy = monitor_accuracy(clf, *monitor);
      result.history.push_back(rec);
    }
  };

  clf.net.set_trainable(false);
  clf.net.set_layer_trainable(kClassifierHeadIndex, true);
  phase(FinetunePhase::head, cfg.head_epochs, cfg.head_adam);
  clf.net.set_trainable(true);
  phase(FinetunePhase::full, cfg.full_epochs, cfg.full_adam);
  clf.net.set_mode(Mode::infer);
  result.classifier = std::move(clf);
  return result;
}

std::vector<int> argmax_rows(const Tensor& probs) {
  if (probs.rank() != 2) throw DimensionError("argmax expects [n,K], got " + shape_to_string(probs.shape()));
  const int n = probs.dim(0), k = probs.dim(1);
  std::vector<int> out(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) {
    const float* row = probs.ptr() + std::size_t(i) * k;
    int best = 0;
    for (int j = 1; j < k; ++j) {
      if (row[j] > row[best]) best = j;
    }
    out[std::size_t(i)] = best;
  }
  return out;
}

Prediction predict(const Classifier& clf, const Tensor& images) {
  if (clf.net.mode() != Mode::infer) throw UsageError("predict requires an infer-mode classifier");
  if (images.rank() != 4 || images.dim(1) != 1 || images.dim(2) != 28 || images.dim(3) != 28) {
    throw DimensionError("classifier expects [n,1,28,28], got " + shape_to_string(images.shape()));
  }
  const int n = images.dim(0), k = clf.model.num_classes;
  const std::size_t plane = 28 * 28;
  Prediction p;
  p.probs = Tensor(Shape{n, k});
  for (int b = 0; b < n; b += kPredictChunk) {
    const int e = std::min(n, b + kPredictChunk);
    std::vector<float> chunk(images.values().begin() + std::ptrdiff_t(b * plane),
                             images.values().begin() + std::ptrdiff_t(e * plane));
    const Tensor out = evaluate(clf.net, Tensor(Shape{e - b, 1, 28, 28}, std::move(chunk)));
    std::copy(out.values().begin(), out.values().end(), p.probs.values().begin() + std::ptrdiff_t(b) * k);
  }
  p.labels = argmax_rows(p.probs);
  return p;
}

Checkpoint classifier_checkpoint(const Classifier& clf) {
  Checkpoint c;
  c.kind = CheckpointKind::classifier;
  c.stage = 3;
  nlohmann::json prov = nlohmann::json::object();
  for (const auto& [n, p] : clf.provenance) prov[n] = p == Provenance::transferred ? "transferred" : "fresh";
  c.meta = {{"model", clf.model}, {"provenance", prov}};
  export_network(clf.net, "C.", c.tensors);
  return c;
}

Classifier classifier_from_checkpoint(const Checkpoint& ckpt) {
  using Kind = FormatError::Kind;
  if (ckpt.kind != CheckpointKind::classifier) throw FormatError(Kind::malformed, "not a classifier checkpoint");
  ModelConfig model;
  try {
    from_json(ckpt.meta.at("model"), model);
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(Kind::malformed, std::string("classifier metadata: ") + e.what());
  }
  for (const auto& [n, t] : ckpt.tensors) {
    if (n.rfind("C.", 0) != 0) throw FormatError(Kind::unknown_tensor, "checkpoint tensor " + n + " matches no network");
  }
  Classifier c = build_classifier(model, 0);
  import_network(c.net, "C.", ckpt.tensors);
  if (ckpt.meta.contains("provenance")) {
    for (const auto& [n, v] : ckpt.meta.at("provenance").items()) {
      if (!c.provenance.count(n)) throw FormatError(Kind::unknown_tensor, "provenance names unknown tensor " + n);
      c.provenance[n] = v == "transferred" ? Provenance::transferred : Provenance::fresh;
    }
  }
  return c;
}

}  // namespace pcgan
