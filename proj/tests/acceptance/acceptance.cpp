// Acceptance suite: one PASS/FAIL line per criterion; exit status 1 if any fails.
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "cli.hpp"
#include "oracles.hpp"
#include "pcgan/autodiff.hpp"
#include "pcgan/checkpoint.hpp"
#include "pcgan/classifier.hpp"
#include "pcgan/data.hpp"
#include "pcgan/eval.hpp"
#include "pcgan/models.hpp"
#include "pcgan/noise.hpp"
#include "pcgan/selfcheck.hpp"
#include "pcgan/synthetic.hpp"
#include "pcgan/trainer.hpp"

using namespace pcgan;
namespace fs = std::filesystem;

namespace {

// Pinned tolerances.
constexpr double kGradRelTol = 1e-3;
constexpr int kGradInstances = 20;
constexpr double kGradSuiteSeconds = 60.0;
constexpr int kAdjointGeometries = 100;
constexpr double kAdjointTol = 1e-5;
constexpr double kObjectiveTol = 1e-6;
constexpr double kLossOracleTol = 1e-6;
constexpr int kMcnemarTables = 1000;
constexpr double kChi2Tol = 1e-9;
constexpr double kPTol = 1e-6;
constexpr double kAwgnStdRel = 0.02;
constexpr double kKernelSumTol = 1e-6;
constexpr int kSeeds = 10;
constexpr int kRequiredWins = 8;
constexpr double kMinAccuracy = 0.85;
constexpr double kMinMargin = 0.03;

int failures = 0;

void report(const char* id, const std::string& name, bool pass, const std::string& detail) {
  std::printf("%s %s %s: %s\n", pass ? "PASS" : "FAIL", id, name.c_str(), detail.c_str());
  std::fflush(stdout);
  if (!pass) ++failures;
}

std::string fmt(const char* f, double a) {
  char buf[128];
  std::snprintf(buf, sizeof buf, f, a);
  return buf;
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

std::vector<std::uint8_t> bytes(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), {}};
}

bool nets_equal(const Network& a, const Network& b) {
  if (a.params().size() != b.params().size() || a.buffers().size() != b.buffers().size()) return false;
  for (const auto& [n, t] : a.params())
    if (!b.params().count(n) || !bitwise_equal(t, b.params().at(n))) return false;
  for (const auto& [n, t] : a.buffers())
    if (!b.buffers().count(n) || !bitwise_equal(t, b.buffers().at(n))) return false;
  return true;
}

fs::path fresh_dir(const std::string& name) {
  fs::path p = fs::temp_directory_path() / ("pcgan_acceptance_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

TrainConfig tiny_train(int k) {
  TrainConfig c;
  c.epochs_per_stage = 2;
  c.batch_size = 4;
  c.model.num_classes = k;
  c.model.latent_dim = 8;
  c.model.widths = {4, 6, 8};
  c.model.gen_base_channels = 4;
  return c;
}

void gradient_checks() {
  const auto t0 = std::chrono::steady_clock::now();
  bool ok = true;
  std::string detail;
  for (GradKind k : {GradKind::conv2d, GradKind::conv_transpose2d, GradKind::batchnorm, GradKind::dense,
                     GradKind::leaky_relu, GradKind::softmax_nll}) {
    PropertyResult r = check_gradient(k, kGradInstances, 20240611, kGradRelTol);
    ok = ok && r.passed && r.instances >= kGradInstances && r.worst < kGradRelTol;
    detail += r.name + " worst " + fmt("%.2e", r.worst) + " (" + std::to_string(r.instances) + "); ";
  }
  const double secs = seconds_since(t0);
  detail += "suite " + fmt("%.2f", secs) + " s";
  report("C1", "gradient check vs central differences (rel < 1e-3, >= 20 instances, < 60 s)",
         ok && secs < kGradSuiteSeconds, detail);
}

void adjoint_check() {
  PropertyResult r = check_adjoint(kAdjointGeometries, 7, kAdjointTol);
  // Independent brute-force scatter comparison on the same number of geometries.
  std::mt19937_64 rng(99);
  std::uniform_int_distribution<int> small(1, 4), sp(4, 9), ks(1, 4), st(1, 2);
  double worst = 0.0;
  int geometries = 0;
  while (geometries < kAdjointGeometries) {
    const int N = small(rng), C = small(rng), F = small(rng), H = sp(rng), W = sp(rng), k = ks(rng), s = st(rng);
    const int p = std::uniform_int_distribution<int>(0, k - 1)(rng);
    if ((H - 1) * s - 2 * p + k <= 0 || (W - 1) * s - 2 * p + k <= 0) continue;
    Tensor x = oracle::random_tensor({N, C, H, W}, 1000 + geometries);
    Tensor w = oracle::random_tensor({C, F, k, k}, 2000 + geometries);
    Tensor b = oracle::random_tensor({F}, 3000 + geometries);
    int oh, ow;
    auto ref = oracle::conv_transpose2d(oracle::to_double(x), oracle::to_double(w), oracle::to_double(b), N, C, H, W, F,
                                        k, s, p, oh, ow);
    ad::Tape tape(false);
    Tensor y = ad::conv_transpose2d(tape.constant(x), tape.constant(w), tape.constant(b), s, p).value();
    for (std::size_t i = 0; i < ref.size(); ++i) worst = std::max(worst, std::fabs(double(y[i]) - ref[i]));
    ++geometries;
  }
  report("C2", "conv2d/conv_transpose2d adjoint identity and scatter oracle (< 1e-5, 100 geometries)",
         r.passed && r.instances >= kAdjointGeometries && worst < kAdjointTol,
         "adjoint worst " + fmt("%.2e", r.worst) + " over " + std::to_string(r.instances) + "; scatter worst " +
             fmt("%.2e", worst));
}

void algorithm_contracts() {
  TrainConfig c = tiny_train(3);
  Dataset ds = make_glyph_dataset(16, 3, 1);
  bool g_frozen = true, d_frozen = true, flags = true, d_moves = true, g_moves = true;
  for (int s = 1; s <= 3; ++s) {
    StageNetworks nets = init_stage(s, c);
    TrainingRngs rngs = make_rngs(c.seeds);
    BatchStream stream = batches(ds, 4, nets.config.resolution, 3);
    Batch b = *stream.next();
    Network g0 = nets.generator, d0 = nets.discriminator;
    disc_update(nets.discriminator, nets.generator, b, nets.disc_opt, rngs);
    g_frozen = g_frozen && nets_equal(nets.generator, g0);
    d_moves = d_moves && !nets_equal(nets.discriminator, d0);
    Network d1 = nets.discriminator, g1 = nets.generator;
    gen_update(nets.discriminator, nets.generator, 4, nets.gen_opt, rngs);
    d_frozen = d_frozen && nets_equal(nets.discriminator, d1);
    g_moves = g_moves && !nets_equal(nets.generator, g1);
    for (std::size_t p = 0; p < nets.discriminator.layers().size(); ++p)
      flags = flags && nets.discriminator.layer_trainable(p);
  }

  // Micro-batch weighting (1/2n, 1/n) against a double-precision oracle.
  TrainConfig w = tiny_train(3);
  w.model.dropout_rate = 0.0f;
  StageNetworks nets = init_stage(1, w);
  Tensor reals = oracle::random_tensor({2, 1, 7, 7}, 21), fakes = oracle::random_tensor({2, 1, 7, 7}, 22);
  std::vector<int> labels{2, 0};
  Tensor lr = evaluate(nets.discriminator, reals), lf = evaluate(nets.discriminator, fakes);
  auto sig = [](double v) { return 1.0 / (1.0 + std::exp(-v)); };
  double discern = 0.0, cls = 0.0;
  for (std::size_t i = 0; i < 2; ++i) {
    discern += -std::log(sig(lr[i * 4])) - std::log(1.0 - sig(lf[i * 4]));
    double z = 0.0;
    for (std::size_t j = 1; j <= 3; ++j) z += std::exp(double(lr[i * 4 + j]));
    cls += -(double(lr[i * 4 + 1 + std::size_t(labels[i])]) - std::log(z));
  }
  ad::Tape tape;
  DiscObjective obj = disc_objective(tape, nets.discriminator, reals, labels, fakes, nullptr);
  const double werr = std::fabs(obj.total.value()[0] - (0.25 * discern + 0.5 * cls));

  // Transfer copies shared names bitwise.
  bool transfer_ok = true;
  for (int s = 2; s <= 3; ++s) {
    StageNetworks prev = init_stage(s - 1, c);
    for (auto& [n, t] : prev.discriminator.params()) t[0] += 0.5f;
    for (auto& [n, t] : prev.generator.params()) t[0] += 0.5f;
    StageNetworks next = init_stage(s, c);
    StageTransfer tr = transfer_weights(prev, next);
    for (const auto& n : tr.generator.copied) transfer_ok &= bitwise_equal(next.generator.param(n), prev.generator.param(n));
    for (const auto& n : tr.discriminator.copied)
      transfer_ok &= bitwise_equal(next.discriminator.param(n), prev.discriminator.param(n));
    transfer_ok &= !tr.generator.copied.empty() && !tr.discriminator.copied.empty();
  }
  report("C3", "training-loop contracts (frozen nets bitwise, weighting < 1e-6, transfer bitwise)",
         g_frozen && d_frozen && flags && d_moves && g_moves && werr < kObjectiveTol && transfer_ok,
         std::string("G frozen in D-step ") + (g_frozen ? "yes" : "no") + ", D frozen in G-step " +
             (d_frozen ? "yes" : "no") + ", D flags restored " + (flags ? "yes" : "no") + ", weighting error " +
             fmt("%.2e", werr) + ", transfer " + (transfer_ok ? "bitwise" : "mismatch"));
}

int cli_run(std::vector<std::string> args) {
  std::ostringstream out, err;
  const int code = cli::run(args, out, err);
  if (code != 0) std::fprintf(stderr, "%s", err.str().c_str());
  return code;
}

void determinism() {
  fs::path d = fresh_dir("determinism");
  bool ok = cli_run({"synth", "--out-dir", d.string(), "--count", "64", "--classes", "4", "--seed", "11"}) == 0;
  const nlohmann::json cfg = {
      {"train_images", "train-images.idx"},
      {"train_labels", "train-labels.idx"},
      {"num_classes", 4},
      {"train",
       {{"epochs_per_stage", 1},
        {"batch_size", 8},
        {"model", {{"latent_dim", 16}, {"widths", {4, 6, 8}}, {"gen_base_channels", 8}}}}},
      {"finetune", {{"head_epochs", 2}, {"batch_size", 8}}}};
  std::ofstream(d / "config.json") << cfg.dump(2);
  for (const char* run : {"a", "b"})
    ok = ok && cli_run({"train", "--config", (d / "config.json").string(), "--out-dir", (d / run).string(), "--seed",
                        "5"}) == 0;
  int compared = 0;
  for (const char* f : {"checkpoints/stage1.pcgn", "checkpoints/stage2.pcgn", "checkpoints/stage3.pcgn",
                        "checkpoints/classifier.pcgn", "metrics.csv", "finetune.csv"}) {
    const auto a = bytes(d / "a" / f), b = bytes(d / "b" / f);
    ok = ok && !a.empty() && a == b;
    ++compared;
  }
  report("C4", "same seed gives byte-identical checkpoints and metrics", ok,
         std::to_string(compared) + " artifacts compared");
}

void loss_oracles() {
  double worst = 0.0;
  std::string detail;
  for (int k : {10, 50}) {
    std::vector<int> labels;
    for (int i = 0; i < 37; ++i) labels.push_back(i % k);
    Tensor probs(Shape{37, k}, 1.0f / float(k));
    const double err = std::fabs(loss_class(probs, labels) - std::log(double(k)));
    worst = std::max(worst, err);
    detail += "ln" + std::to_string(k) + " err " + fmt("%.1e", err) + "; ";
  }
  Tensor half(Shape{20, 1}, 0.5f);
  for (Target t : {Target::real, Target::fake}) {
    const double err = std::fabs(loss_discern(half, t) - std::log(2.0));
    worst = std::max(worst, err);
    detail += "ln2 err " + fmt("%.1e", err) + "; ";
  }
  report("C6", "loss oracles at uniform outputs (within 1e-6)", worst < kLossOracleTol, detail);
}

void mcnemar_check() {
  std::mt19937_64 rng(42);
  std::uniform_int_distribution<int> d(0, 400);
  double worst_chi = 0.0, worst_p = 0.0;
  for (int i = 0; i < kMcnemarTables; ++i) {
    ContingencyTable t{d(rng), d(rng), d(rng), d(rng)};
    McNemarResult r = mcnemar_from_table(t);
    const double b = double(t.n10), c = double(t.n01);
    const double chi = b + c == 0 ? 0.0 : (b - c) * (b - c) / (b + c);
    worst_chi = std::max(worst_chi, std::fabs(r.chi2 - chi));
    worst_p = std::max(worst_p, std::fabs(r.p - oracle::chi2_df1_sf(chi)));
  }
  McNemarResult fx = mcnemar_from_table({0, 2, 10, 0});
  const bool fixture = std::fabs(fx.chi2 - 64.0 / 12.0) < kChi2Tol && std::fabs(fx.p - 0.0209) < 5e-4;
  report("C7", "McNemar vs oracle on 1000 tables (chi2 1e-9, p 1e-6) and b=10,c=2 fixture",
         worst_chi < kChi2Tol && worst_p < kPTol && fixture,
         "worst chi2 " + fmt("%.1e", worst_chi) + ", worst p " + fmt("%.1e", worst_p) + ", fixture p " +
             fmt("%.5f", fx.p));
}

void round_trips() {
  fs::path d = fresh_dir("roundtrip");
  Dataset ds = make_glyph_dataset(12, 3, 8);
  write_dataset_idx(ds, d / "i.idx", d / "l.idx");
  IdxImages img = read_idx_images(d / "i.idx");
  write_idx_images(d / "i2.idx", img);
  write_idx_labels(d / "l2.idx", read_idx_labels(d / "l.idx"));
  const bool idx_ok = bytes(d / "i.idx") == bytes(d / "i2.idx") && bytes(d / "l.idx") == bytes(d / "l2.idx");

  TrainConfig c = tiny_train(3);
  ProgressiveTrainer full(ds, c);
  full.run_epoch();
  full.run_epoch();
  full.run_epoch();
  save_checkpoint(full.checkpoint(), d / "a.pcgn");
  save_checkpoint(load_checkpoint(d / "a.pcgn"), d / "b.pcgn");
  const bool ckpt_ok = bytes(d / "a.pcgn") == bytes(d / "b.pcgn");

  ProgressiveTrainer resumed = ProgressiveTrainer::resume(ds, c, load_checkpoint(d / "a.pcgn"));
  while (!full.finished()) full.run_epoch();
  while (!resumed.finished()) resumed.run_epoch();
  const bool resume_ok = serialize_checkpoint(full.checkpoint()) == serialize_checkpoint(resumed.checkpoint()) &&
                         full.metrics() == resumed.metrics();
  report("C8", "IDX, checkpoint and resume round trips are bitwise", idx_ok && ckpt_ok && resume_ok,
         std::string("idx ") + (idx_ok ? "ok" : "differs") + ", checkpoint " + (ckpt_ok ? "ok" : "differs") +
             ", resume " + (resume_ok ? "ok" : "differs"));
}

void noise_statistics() {
  Rng rng(17);
  const float sigma = 0.4f;
  Tensor n = sample_awgn(Shape{100000}, sigma, rng);
  double mean = 0.0, sq = 0.0;
  for (std::size_t i = 0; i < n.numel(); ++i) mean += n[i];
  mean /= double(n.numel());
  for (std::size_t i = 0; i < n.numel(); ++i) sq += (n[i] - mean) * (n[i] - mean);
  const double sd = std::sqrt(sq / double(n.numel() - 1));
  const double sd_rel = std::fabs(sd - sigma) / sigma;

  double worst_sum = 0.0;
  for (int len : {1, 3, 5, 7, 9})
    for (float ang : {0.0f, 30.0f, 45.0f, 90.0f, 135.0f, 200.0f}) {
      Tensor k = motion_kernel(len, ang);
      double s = 0.0;
      for (std::size_t i = 0; i < k.numel(); ++i) s += k[i];
      worst_sum = std::max(worst_sum, std::fabs(s - 1.0));
    }

  Tensor img = oracle::random_tensor({4, 1, 28, 28}, 18);
  Tensor half = apply_noise(img, NoiseSpec::contrast(0.5f, 0.0f), rng);
  bool exact = half.shape() == img.shape();
  for (std::size_t i = 0; exact && i < img.numel(); ++i) exact = half[i] == 0.5f * img[i];
  report("C9", "noise statistics (AWGN std 2%, motion kernel sum 1e-6, contrast 0.5 exact)",
         sd_rel < kAwgnStdRel && worst_sum < kKernelSumTol && exact,
         "std " + fmt("%.4f", sd) + " (rel " + fmt("%.4f", sd_rel) + "), kernel sum err " + fmt("%.1e", worst_sum) +
             ", contrast " + (exact ? "exact" : "inexact"));
}

void scaled_experiment() {
  const auto t0 = std::chrono::steady_clock::now();
  int wins = 0;
  double min_pcgan = 1.0;
  for (int s = 0; s < kSeeds; ++s) {
    const auto ts = std::chrono::steady_clock::now();
    Dataset train = make_glyph_dataset(4000, 10, 100 + std::uint64_t(s));
    Dataset test = make_glyph_dataset(1000, 10, 200 + std::uint64_t(s));
    test.split = Split::test;
    Rng noise(300 + std::uint64_t(s));
    train.images = apply_noise(train.images, NoiseSpec::awgn(0.4f), noise);
    test.images = apply_noise(test.images, NoiseSpec::awgn(0.4f), noise);

    TrainConfig c;
    c.epochs_per_stage = 10;
    c.batch_size = 32;
    c.model.widths = {8, 8, 8};
    c.model.gen_base_channels = 16;
    c.seeds = {derive_seed(std::uint64_t(s), {1}), derive_seed(std::uint64_t(s), {2}),
               derive_seed(std::uint64_t(s), {3}), derive_seed(std::uint64_t(s), {4})};
    TrainResult gan = train_all(train, c);

    FinetuneConfig fc;
    fc.head_epochs = 10;
    fc.seed = derive_seed(std::uint64_t(s), {5});
    const Classifier fresh = build_classifier(c.model, derive_seed(std::uint64_t(s), {6}));
    FinetuneResult pc = finetune(transfer_from_discriminator(fresh, gan.final.discriminator), train, fc, &test);
    FinetuneResult rnd = finetune(fresh, train, fc, &test);
    const double a = accuracy(predict(pc.classifier, test.images).labels, test.labels);
    const double b = accuracy(predict(rnd.classifier, test.images).labels, test.labels);
    min_pcgan = std::min(min_pcgan, a);
    if (a - b >= kMinMargin) ++wins;
    std::printf("  seed %d: pcgan %.4f random-trunk %.4f (%.1f s)\n", s, a, b, seconds_since(ts));
    std::fflush(stdout);
  }
  const double secs = seconds_since(t0);
  report("C5", "scaled 10-seed experiment (every pcgan >= 0.85; beats random trunk by >= 3 points in >= 8/10)",
         min_pcgan >= kMinAccuracy && wins >= kRequiredWins,
         "min pcgan " + fmt("%.4f", min_pcgan) + ", wins " + std::to_string(wins) + "/10, runtime " +
             fmt("%.1f", secs / 60.0) + " min");
}

}  // namespace

int main() {
  gradient_checks();
  adjoint_check();
  algorithm_contracts();
  determinism();
  loss_oracles();
  mcnemar_check();
  round_trips();
  noise_statistics();
  scaled_experiment();
  std::printf("%d criteria failed\n", failures);
  return failures == 0 ? 0 : 1;
}
