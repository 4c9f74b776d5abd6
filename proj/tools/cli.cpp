#include "cli.hpp"

#include <CLI11.hpp>

#include <charconv>
#include <cstdio>
#include <fstream>
#include <ostream>
#include <sstream>

#include "pcgan/error.hpp"
#include "pcgan/eval.hpp"
#include "pcgan/selfcheck.hpp"
#include "pcgan/synthetic.hpp"

namespace pcgan::cli {
namespace fs = std::filesystem;

RunConfig parse_run_config(const nlohmann::json& j, const fs::path& base_dir) {
  if (!j.is_object()) throw UsageError("config must be a JSON object");
  static const std::vector<std::string> known{"train_images", "train_labels", "test_images", "test_labels",
                                              "num_classes",  "output_dir",   "dataset",     "train",
                                              "finetune",     "noise",        "noise_seed"};
  for (const auto& [key, value] : j.items()) {
    if (std::find(known.begin(), known.end(), key) == known.end()) throw UsageError("unknown config key: " + key);
  }
  auto path = [&](const char* key) -> fs::path {
    if (!j.contains(key)) return {};
    const fs::path p = j.at(key).get<std::string>();
    return p.is_absolute() ? p : base_dir / p;
  };
  RunConfig c;
  try {
    c.train_images = path("train_images");
    c.train_labels = path("train_labels");
    c.test_images = path("test_images");
    c.test_labels = path("test_labels");
    if (j.contains("output_dir")) c.output_dir = path("output_dir");
    c.num_classes = j.value("num_classes", c.num_classes);
    c.dataset = j.value("dataset", c.dataset);
    if (j.contains("train")) from_json(j.at("train"), c.train);
    if (j.contains("finetune")) from_json(j.at("finetune"), c.finetune);
    if (j.contains("noise") && !j.at("noise").is_null()) c.noise = j.at("noise").get<NoiseSpec>();
    c.noise_seed = j.value("noise_seed", c.noise_seed);
  } catch (const nlohmann::json::exception& e) {
    throw UsageError(std::string("invalid config: ") + e.what());
  }
  c.train.model.num_classes = c.num_classes;
  return c;
}

RunConfig load_run_config(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open config " + path.string());
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw UsageError("config " + path.string() + ": " + e.what());
  }
  return parse_run_config(j, path.parent_path());
}

namespace {

void require_file(const fs::path& p, const char* what) {
  if (p.empty()) throw UsageError(std::string("no ") + what + " given");
  if (!fs::is_regular_file(p)) throw IoError(std::string(what) + " not found: " + p.string());
}

void write_text(const fs::path& p, const std::string& text) {
  if (p.has_parent_path()) fs::create_directories(p.parent_path());
  std::ofstream out(p, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write " + p.string());
  out << text;
  if (!out) throw IoError("failed writing " + p.string());
}

std::vector<int> read_label_csv(const fs::path& p) {
  std::ifstream in(p);
  if (!in) throw IoError("cannot open " + p.string());
  std::vector<int> out;
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    int v = 0;
    const auto [ptr, ec] = std::from_chars(line.data(), line.data() + line.size(), v);
    if (ec != std::errc() || ptr != line.data() + line.size()) {
      throw UsageError(p.string() + ":" + std::to_string(line_no) + ": not an integer: '" + line + "'");
    }
    out.push_back(v);
  }
  return out;
}

std::string labels_csv(const std::vector<int>& labels) {
  std::string s;
  for (int l : labels) s += std::to_string(l) + "\n";
  return s;
}

Dataset load_split(const fs::path& images, const fs::path& labels, int num_classes, Split split) {
  require_file(images, split == Split::train ? "train image file" : "test image file");
  require_file(labels, split == Split::train ? "train label file" : "test label file");
  Dataset ds = load_idx(images, labels, 0, split);
  for (int l : ds.labels) {
    if (l >= num_classes) {
      throw UsageError(labels.string() + ": label " + std::to_string(l) + " exceeds num_classes " +
                       std::to_string(num_classes));
    }
  }
  ds.num_classes = num_classes;
  return canonicalize(std::move(ds));
}

void apply_seed(RunConfig& c, std::uint64_t seed) {
  c.train.seeds = TrainSeeds{derive_seed(seed, {1}), derive_seed(seed, {2}), derive_seed(seed, {3}),
                             derive_seed(seed, {4})};
  c.finetune.seed = derive_seed(seed, {5});
  c.noise_seed = derive_seed(seed, {6});
}

// Options shared by subcommands that read a RunConfig.
struct Common {
  std::string config;
  std::string out_dir;
  std::optional<std::uint64_t> seed;

  void add(CLI::App* app) {
    app->add_option("--config", config, "JSON run configuration");
    app->add_option("--out-dir", out_dir, "Output directory (overrides output_dir)");
    app->add_option("--seed", seed, "Base seed; derives every seed of the run (overrides the config's seeds)");
  }
  RunConfig load() const {
    RunConfig c = config.empty() ? parse_run_config(nlohmann::json::object(), fs::current_path())
                                 : load_run_config(config);
    if (!out_dir.empty()) c.output_dir = out_dir;
    if (seed) apply_seed(c, *seed);
    return c;
  }
};

struct NoisegenArgs {
  Common common;
  std::string images, labels, kind;
  std::optional<float> sigma, factor, angle;
  std::optional<int> length;
};

int cmd_noisegen(const NoisegenArgs& a, std::ostream& out) {
  RunConfig c = a.common.load();
  const fs::path images = a.images.empty() ? c.train_images : fs::path(a.images);
  const fs::path labels = a.labels.empty() ? c.train_labels : fs::path(a.labels);
  require_file(images, "image file");
  require_file(labels, "label file");

  NoiseSpec spec = c.noise.value_or(NoiseSpec::preset(NoiseKind::awgn));
  if (!a.kind.empty()) spec = NoiseSpec::preset(parse_noise_kind(a.kind));
  if (a.sigma) spec.sigma = *a.sigma;
  if (a.factor) spec.contrast_factor = *a.factor;
  if (a.length) spec.motion_length = *a.length;
  if (a.angle) spec.motion_angle = *a.angle;
  spec.validate();

  const IdxImages raw = read_idx_images(images);
  const std::vector<std::uint8_t> raw_labels = read_idx_labels(labels);
  if (std::size_t(raw.count) != raw_labels.size()) {
    throw FormatError(FormatError::Kind::count_mismatch, "image and label counts differ");
  }
  Rng rng(c.noise_seed);
  const Tensor noisy = apply_noise(idx_to_tensor(raw), spec, rng);
  fs::create_directories(c.output_dir);
  write_idx_images(c.output_dir / "images.idx", tensor_to_idx(noisy));
  write_idx_labels(c.output_dir / "labels.idx", raw_labels);
  const nlohmann::json manifest = {{"noise", spec},
                                   {"seed", c.noise_seed},
                                   {"count", raw.count},
                                   {"source_images", images.filename().string()},
                                   {"source_labels", labels.filename().string()},
                                   {"images", "images.idx"},
                                   {"labels", "labels.idx"}};
  write_text(c.output_dir / "manifest.json", manifest.dump(2) + "\n");
  out << "wrote " << raw.count << " " << noise_kind_name(spec.kind) << " images to " << c.output_dir.string() << "\n";
  return kExitOk;
}

struct TrainArgs {
  Common common;
  std::string train_images, train_labels, test_images, test_labels, resume;
  std::optional<int> epochs, batch_size, head_epochs, full_epochs, stop_after;
};

std::string finetune_csv(const std::vector<FinetuneEpoch>& history) {
  std::string s = "epoch,phase,loss,accuracy\n";
  char buf[128];
  for (const auto& h : history) {
    std::snprintf(buf, sizeof buf, "%d,%s,%.9g,", h.epoch, h.phase == FinetunePhase::head ? "head" : "full",
                  double(h.loss));
    s += buf;
    if (h.monitor_accuracy) {
      std::snprintf(buf, sizeof buf, "%.6f", *h.monitor_accuracy);
      s += buf;
    }
    s += "\n";
  }
  return s;
}

int cmd_train(const TrainArgs& a, std::ostream& out) {
  RunConfig c = a.common.load();
  if (!a.train_images.empty()) c.train_images = a.train_images;
  if (!a.train_labels.empty()) c.train_labels = a.train_labels;
  if (!a.test_images.empty()) c.test_images = a.test_images;
  if (!a.test_labels.empty()) c.test_labels = a.test_labels;
  if (a.epochs) c.train.epochs_per_stage = *a.epochs;
  if (a.batch_size) c.train.batch_size = *a.batch_size;
  if (a.head_epochs) c.finetune.head_epochs = *a.head_epochs;
  if (a.full_epochs) c.finetune.full_epochs = *a.full_epochs;
  if (a.stop_after && *a.stop_after < 1) throw UsageError("--stop-after must be at least 1");
  c.train.validate();
  c.finetune.validate();
  require_file(c.train_images, "train image file");
  require_file(c.train_labels, "train label file");
  const bool monitor = !c.test_images.empty() || !c.test_labels.empty();
  if (monitor) {
    require_file(c.test_images, "test image file");
    require_file(c.test_labels, "test label file");
  }
  std::optional<Checkpoint> resume;
  if (!a.resume.empty()) {
    require_file(a.resume, "checkpoint");
    resume = load_checkpoint(a.resume);
  }

  const Dataset train = load_split(c.train_images, c.train_labels, c.num_classes, Split::train);
  std::optional<Dataset> test;
  if (monitor) test = load_split(c.test_images, c.test_labels, c.num_classes, Split::test);

  const fs::path ckpt_dir = c.output_dir / "checkpoints";
  fs::create_directories(ckpt_dir);
  ProgressiveTrainer trainer = resume ? ProgressiveTrainer::resume(train, c.train, *resume)
                                      : ProgressiveTrainer(train, c.train);
  int ran = 0;
  while (!trainer.finished()) {
    const MetricsRow row = trainer.run_epoch();
    ++ran;
    const Checkpoint ck = trainer.checkpoint();
    save_checkpoint(ck, ckpt_dir / "last.pcgn");
    if (trainer.stage_complete()) {
      save_checkpoint(ck, ckpt_dir / ("stage" + std::to_string(row.stage) + ".pcgn"));
    }
    write_metrics_csv(c.output_dir / "metrics.csv", trainer.metrics());
    char buf[200];
    std::snprintf(buf, sizeof buf, "stage %d epoch %d/%d: d_discern=%.4f d_class=%.4f g_discern=%.4f g_class=%.4f\n",
                  row.stage, row.epoch, c.train.epochs_per_stage, double(row.d_discern), double(row.d_class),
                  double(row.g_discern), double(row.g_class));
    out << buf;
    if (a.stop_after && ran == *a.stop_after && !trainer.finished()) {
      out << "stopped after " << ran << " epochs; resume with --resume " << (ckpt_dir / "last.pcgn").string() << "\n";
      return kExitOk;
    }
  }
  write_metrics_csv(c.output_dir / "metrics.csv", trainer.metrics());

  Classifier clf = build_classifier(c.train.model, derive_seed(c.train.seeds.init, {4}));
  clf = transfer_from_discriminator(std::move(clf), trainer.networks().discriminator);
  FinetuneResult ft = finetune(std::move(clf), train, c.finetune, test ? &*test : nullptr);
  Checkpoint ck = classifier_checkpoint(ft.classifier);
  ck.epoch = std::uint32_t(ft.history.size());
  nlohmann::json hist = nlohmann::json::array();
  for (const auto& h : ft.history) {
    hist.push_back({{"epoch", h.epoch},
                    {"loss", h.loss},
                    {"accuracy", h.monitor_accuracy ? nlohmann::json(*h.monitor_accuracy) : nlohmann::json(nullptr)}});
  }
  ck.meta["history"] = hist;
  ck.meta["noise"] = c.noise ? noise_kind_name(c.noise->kind) : "none";
  ck.meta["dataset"] = c.dataset;
  save_checkpoint(ck, ckpt_dir / "classifier.pcgn");
  write_text(c.output_dir / "finetune.csv", finetune_csv(ft.history));
  out << "classifier fine-tuned for " << ft.history.size() << " epochs";
  if (!ft.history.empty() && ft.history.back().monitor_accuracy) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "; monitor accuracy %.4f", *ft.history.back().monitor_accuracy);
    out << buf;
  }
  out << "\n";
  return kExitOk;
}

struct EvalArgs {
  Common common;
  std::string checkpoint, test_images, test_labels, baseline;
};

int cmd_eval(const EvalArgs& a, std::ostream& out) {
  RunConfig c = a.common.load();
  if (!a.test_images.empty()) c.test_images = a.test_images;
  if (!a.test_labels.empty()) c.test_labels = a.test_labels;
  const fs::path ckpt_path = a.checkpoint.empty() ? c.output_dir / "checkpoints" / "classifier.pcgn" : fs::path(a.checkpoint);
  require_file(ckpt_path, "checkpoint");
  require_file(c.test_images, "test image file");
  require_file(c.test_labels, "test label file");
  const Checkpoint ck = load_checkpoint(ckpt_path);
  const Classifier clf = classifier_from_checkpoint(ck);
  const Dataset test = load_split(c.test_images, c.test_labels, clf.model.num_classes, Split::test);
  std::vector<int> baseline;
  if (!a.baseline.empty()) {
    require_file(a.baseline, "baseline predictions");
    baseline = read_label_csv(a.baseline);
    if (baseline.size() != test.labels.size()) throw UsageError("baseline predictions and test set differ in length");
  }

  const Prediction pred = predict(clf, test.images);
  const std::string noise = c.noise ? noise_kind_name(c.noise->kind) : ck.meta.value("noise", std::string("none"));
  EvalReport report = make_report(c.dataset, noise, pred.labels, test.labels, clf.model.num_classes);
  if (ck.meta.contains("history")) {
    std::vector<CurvePoint> pts;
    for (const auto& h : ck.meta.at("history")) {
      if (!h.at("accuracy").is_null()) pts.push_back({h.at("epoch").get<int>(), h.at("accuracy").get<double>()});
    }
    if (!pts.empty()) report.curve = epoch_curve(std::move(pts));
  }
  if (report.curve.empty()) report.curve.push_back({int(ck.epoch), report.final_accuracy});
  if (!baseline.empty()) report.mcnemar = mcnemar(pred.labels, baseline, test.labels);

  fs::create_directories(c.output_dir);
  emit_report(report, c.output_dir / "report.json", ReportFormat::json);
  emit_report(report, c.output_dir / "report.csv", ReportFormat::csv);
  write_text(c.output_dir / "predictions.csv", labels_csv(pred.labels));
  char buf[64];
  std::snprintf(buf, sizeof buf, "accuracy=%.4f\n", report.final_accuracy);
  out << buf;
  if (report.mcnemar) {
    std::snprintf(buf, sizeof buf, "chi2=%.6g df=1 p=%.6g\n", report.mcnemar->chi2, report.mcnemar->p);
    out << buf;
  }
  return kExitOk;
}

struct SelfcheckArgs {
  int instances = 20;
  int geometries = 100;
  std::uint64_t seed = SelfCheckOptions{}.seed;
  std::string fault;
  bool all = false;
};

int cmd_selfcheck(const SelfcheckArgs& a, std::ostream& out, std::ostream& err) {
  if (a.instances < 1 || a.geometries < 1) throw UsageError("instance counts must be positive");
  if (!a.fault.empty()) {
    if (a.fault != "conv2d") throw UsageError("unknown fault '" + a.fault + "' (supported: conv2d)");
    ad::testing::inject_fault(ad::testing::Fault::conv2d_backward);
  }
  struct Reset {
    ~Reset() { ad::testing::inject_fault(ad::testing::Fault::none); }
  } reset;
  SelfCheckOptions o;
  o.gradient_instances = a.instances;
  o.adjoint_geometries = a.geometries;
  o.seed = a.seed;
  o.stop_at_first_failure = !a.all;
  const SelfCheckReport r = run_selfcheck(o);
  for (const auto& p : r.properties) {
    out << (p.passed ? "PASS " : "FAIL ") << p.name << " (" << p.instances << " instances): " << p.detail << "\n";
  }
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.2f", r.seconds);
  if (!r.passed) {
    err << "selfcheck failed: " << r.first_failure() << "\n";
    return kExitFailure;
  }
  out << "selfcheck passed in " << buf << " s\n";
  return kExitOk;
}

struct McnemarArgs {
  std::string a, b, truth;
};

int cmd_mcnemar(const McnemarArgs& m, std::ostream& out) {
  require_file(m.a, "predictions file");
  require_file(m.b, "predictions file");
  require_file(m.truth, "truth file");
  const auto a = read_label_csv(m.a), b = read_label_csv(m.b), t = read_label_csv(m.truth);
  if (a.size() != t.size() || b.size() != t.size()) {
    throw UsageError("length mismatch: " + std::to_string(a.size()) + ", " + std::to_string(b.size()) + " and " +
                     std::to_string(t.size()) + " lines");
  }
  const McNemarResult r = mcnemar(a, b, t);
  char buf[128];
  std::snprintf(buf, sizeof buf, "chi2=%.6g df=1 p=%.6g\n", r.chi2, r.p);
  out << buf;
  return kExitOk;
}

struct SynthArgs {
  std::string out_dir = ".";
  std::string prefix = "train";
  int count = 1000;
  int classes = 10;
  std::uint64_t seed = 1;
};

int cmd_synth(const SynthArgs& s, std::ostream& out) {
  const Dataset ds = make_glyph_dataset(s.count, s.classes, s.seed);
  const fs::path dir = s.out_dir;
  fs::create_directories(dir);
  write_dataset_idx(ds, dir / (s.prefix + "-images.idx"), dir / (s.prefix + "-labels.idx"));
  out << "wrote " << s.count << " glyphs (" << s.classes << " classes) to " << (dir / (s.prefix + "-*.idx")).string()
      << "\n";
  return kExitOk;
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Progressive conditional GAN pretraining for noisy image classification", "pcgan"};
  app.require_subcommand(1);
  app.set_help_all_flag("--help-all", "Show help for every subcommand");

  NoisegenArgs ng;
  CLI::App* noisegen = app.add_subcommand("noisegen", "Write a noisy copy of an IDX corpus plus a JSON manifest");
  ng.common.add(noisegen);
  noisegen->add_option("--images", ng.images, "Clean IDX image file (default: train_images)");
  noisegen->add_option("--labels", ng.labels, "IDX label file copied through (default: train_labels)");
  noisegen->add_option("--kind", ng.kind, "Noise kind preset: awgn, contrast or motion");
  noisegen->add_option("--sigma", ng.sigma, "Gaussian noise standard deviation (pixel range [-1,1])");
  noisegen->add_option("--factor", ng.factor, "Contrast factor in (0,1]");
  noisegen->add_option("--length", ng.length, "Motion blur kernel length (odd)");
  noisegen->add_option("--angle", ng.angle, "Motion blur angle in degrees");

  TrainArgs tr;
  CLI::App* train = app.add_subcommand("train", "Progressive GAN training, then classifier transfer and fine-tuning");
  tr.common.add(train);
  train->add_option("--train-images", tr.train_images, "Training IDX image file");
  train->add_option("--train-labels", tr.train_labels, "Training IDX label file");
  train->add_option("--test-images", tr.test_images, "Optional IDX images for per-epoch accuracy monitoring");
  train->add_option("--test-labels", tr.test_labels, "Optional IDX labels for per-epoch accuracy monitoring");
  train->add_option("--epochs", tr.epochs, "GAN epochs per stage");
  train->add_option("--batch-size", tr.batch_size, "GAN batch size n");
  train->add_option("--head-epochs", tr.head_epochs, "Softmax-head fine-tuning epochs");
  train->add_option("--full-epochs", tr.full_epochs, "Optional whole-network fine-tuning epochs");
  train->add_option("--resume", tr.resume, "Continue from a trainer checkpoint (e.g. checkpoints/last.pcgn)");
  train->add_option("--stop-after", tr.stop_after, "Stop after this many GAN epochs in this invocation");

  EvalArgs ev;
  CLI::App* eval = app.add_subcommand("eval", "Evaluate a classifier checkpoint; prints accuracy=<v>");
  ev.common.add(eval);
  eval->add_option("--checkpoint", ev.checkpoint, "Classifier checkpoint (default: <out>/checkpoints/classifier.pcgn)");
  eval->add_option("--test-images", ev.test_images, "Test IDX image file");
  eval->add_option("--test-labels", ev.test_labels, "Test IDX label file");
  eval->add_option("--baseline", ev.baseline, "Predictions CSV of a second classifier; adds McNemar's test");

  SelfcheckArgs sc;
  CLI::App* selfcheck = app.add_subcommand("selfcheck", "Gradient, adjoint, softmax and batchnorm self-checks");
  selfcheck->add_option("--instances", sc.instances, "Randomized instances per gradient check")->capture_default_str();
  selfcheck->add_option("--geometries", sc.geometries, "Random geometries for the adjoint check")->capture_default_str();
  selfcheck->add_option("--seed", sc.seed, "Seed of the randomized instances")->capture_default_str();
  selfcheck->add_flag("--all", sc.all, "Run every property instead of stopping at the first failure");
  selfcheck->add_option("--inject-fault", sc.fault, "Test hook: corrupt a backward rule (conv2d)");

  McnemarArgs mc;
  CLI::App* mcn = app.add_subcommand("mcnemar", "McNemar's test between two prediction files");
  mcn->add_option("preds_a", mc.a, "Predictions of classifier A, one integer per line")->required();
  mcn->add_option("preds_b", mc.b, "Predictions of classifier B, one integer per line")->required();
  mcn->add_option("truths", mc.truth, "True labels, one integer per line")->required();

  SynthArgs sy;
  CLI::App* synth = app.add_subcommand("synth", "Generate a clean synthetic 28x28 glyph corpus as IDX files");
  synth->add_option("--out-dir", sy.out_dir, "Output directory")->capture_default_str();
  synth->add_option("--prefix", sy.prefix, "File name prefix")->capture_default_str();
  synth->add_option("--count", sy.count, "Number of images")->capture_default_str();
  synth->add_option("--classes", sy.classes, "Number of classes")->capture_default_str();
  synth->add_option("--seed", sy.seed, "Generator seed")->capture_default_str();

  std::vector<const char*> argv{"pcgan"};
  for (const auto& s : args) argv.push_back(s.c_str());
  try {
    app.parse(int(argv.size()), argv.data());
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kExitOk : kExitInput;
  }

  try {
    if (*noisegen) return cmd_noisegen(ng, out);
    if (*train) return cmd_train(tr, out);
    if (*eval) return cmd_eval(ev, out);
    if (*selfcheck) return cmd_selfcheck(sc, out, err);
    if (*mcn) return cmd_mcnemar(mc, out);
    if (*synth) return cmd_synth(sy, out);
  } catch (const UsageError& e) {
    err << "error: " << e.what() << "\n";
    return kExitInput;
  } catch (const IoError& e) {
    err << "error: " << e.what() << "\n";
    return kExitInput;
  } catch (const FormatError& e) {
    err << "error: " << e.what() << "\n";
    return kExitInput;
  } catch (const SpecError& e) {
    err << "error: " << e.what() << "\n";
    return kExitInput;
  } catch (const fs::filesystem_error& e) {
    err << "error: " << e.what() << "\n";
    return kExitInput;
  } catch (const std::exception& e) {
    err << "failure: " << e.what() << "\n";
    return kExitFailure;
  }
  return kExitInput;
}

}  // namespace pcgan::cli
