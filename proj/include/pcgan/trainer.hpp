#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "pcgan/adam.hpp"
#include "pcgan/checkpoint.hpp"
#include "pcgan/data.hpp"
#include "pcgan/models.hpp"

namespace pcgan {

struct TrainSeeds {
  std::uint64_t init = 1;
  std::uint64_t shuffle = 2;
  std::uint64_t latent = 3;
  std::uint64_t dropout = 4;
};

struct TrainConfig {
  int epochs_per_stage = 1;  // K
  int batch_size = 32;       // n
  AdamConfig adam;
  TrainSeeds seeds;
  /// Consecutive stages starting at 1.
  std::vector<int> stages{1, 2, 3};
  ModelConfig model;

  void validate() const;
};

void to_json(nlohmann::json& j, const ModelConfig& m);
void from_json(const nlohmann::json& j, ModelConfig& m);
void to_json(nlohmann::json& j, const AdamConfig& a);
void from_json(const nlohmann::json& j, AdamConfig& a);
void to_json(nlohmann::json& j, const TrainSeeds& s);
void from_json(const nlohmann::json& j, TrainSeeds& s);
void to_json(nlohmann::json& j, const TrainConfig& c);
/// Missing keys keep their defaults.
void from_json(const nlohmann::json& j, TrainConfig& c);

struct StageNetworks {
  StageConfig config;
  Network generator;
  Network discriminator;
  AdamState gen_opt;
  AdamState disc_opt;
};

/// Fresh G and D for a stage with seeds derived from cfg.seeds.init.
StageNetworks init_stage(int stage_index, const TrainConfig& cfg);

struct TrainingRngs {
  Rng latent;
  Rng dropout;
};
TrainingRngs make_rngs(const TrainSeeds& seeds);

struct UpdateLosses {
  float discern = 0.0f;
  float cls = 0.0f;
};

/// Discriminator objective on n reals and n fakes:
/// (1/2n) sum L_discern over reals (target real) and fakes (target fake)
/// + (1/n) sum L_class over reals.
struct DiscObjective {
  ad::Var discern;
  ad::Var cls;
  ad::Var total;
  ForwardResult forward;
};
DiscObjective disc_objective(ad::Tape& tape, Network& disc, const Tensor& reals, std::span<const int> real_labels,
                             const Tensor& fakes, Rng* dropout_rng);

/// Samples n latents and labels, generates fakes with G (untouched), takes one Adam step on D.
UpdateLosses disc_update(Network& disc, const Network& gen, const Batch& batch, AdamState& opt, TrainingRngs& rngs);

/// Samples 2n latents and labels, takes one Adam step on G with D frozen; D's trainable flags are restored.
UpdateLosses gen_update(Network& disc, Network& gen, int n, AdamState& opt, TrainingRngs& rngs);

struct TransferReport {
  std::vector<std::string> copied;
  std::vector<std::string> fresh;
};

/// Copies every parameter (and batchnorm buffer) whose name exists in both
/// networks. TransferError on a shape mismatch, raised before anything is copied.
TransferReport transfer_by_name(const Network& src, Network& dst);

struct StageTransfer {
  TransferReport generator;
  TransferReport discriminator;
};
StageTransfer transfer_weights(const StageNetworks& prev, StageNetworks& next);

struct MetricsRow {
  int stage = 0;
  int epoch = 0;    // 1-based within the stage
  int batches = 0;  // updates of each kind in the epoch
  float d_discern = 0.0f;
  float d_class = 0.0f;
  float g_discern = 0.0f;
  float g_class = 0.0f;
};

bool operator==(const MetricsRow& a, const MetricsRow& b);

inline constexpr const char* kMetricsHeader = "stage,epoch,batch,d_loss_discern,d_loss_class,g_loss_discern,g_loss_class";
std::string metrics_csv(const std::vector<MetricsRow>& rows);
void write_metrics_csv(const std::filesystem::path& path, const std::vector<MetricsRow>& rows);

enum class UpdateKind { disc, gen };

struct UpdateEvent {
  UpdateKind kind;
  int stage;
  int epoch;
  int batch;
  int resolution;
  UpdateLosses losses;
};

class ProgressiveTrainer {
 public:
  using Observer = std::function<void(const UpdateEvent&)>;

  /// Initializes stage cfg.stages.front(). `train` must be 28x28 and outlive the trainer.
  ProgressiveTrainer(const Dataset& train, TrainConfig cfg);
  /// Restores a trainer checkpoint written with the same configuration.
  static ProgressiveTrainer resume(const Dataset& train, TrainConfig cfg, const Checkpoint& ckpt);

  bool finished() const;
  /// Enters (and transfers into) the next stage if the current one is complete, then runs one epoch.
  MetricsRow run_epoch();
  /// True right after the last epoch of a stage.
  bool stage_complete() const { return epoch_ == cfg_.epochs_per_stage; }

  Checkpoint checkpoint() const;

  int stage_index() const { return nets_.config.stage_index; }
  int epochs_done() const { return epoch_; }
  const TrainConfig& config() const { return cfg_; }
  const StageNetworks& networks() const { return nets_; }
  StageNetworks& networks() { return nets_; }
  const std::vector<MetricsRow>& metrics() const { return metrics_; }
  const std::vector<StageTransfer>& transfers() const { return transfers_; }
  void set_observer(Observer observer) { observer_ = std::move(observer); }

 private:
  ProgressiveTrainer(const Dataset& train, TrainConfig cfg, std::size_t stage_pos, StageNetworks nets);

  const Dataset* data_;
  TrainConfig cfg_;
  std::size_t stage_pos_ = 0;
  int epoch_ = 0;
  StageNetworks nets_;
  TrainingRngs rngs_;
  std::vector<MetricsRow> metrics_;
  std::vector<StageTransfer> transfers_;
  Observer observer_;
};

struct TrainResult {
  StageNetworks final;
  std::vector<MetricsRow> metrics;
};

/// Runs every stage of cfg to completion.
TrainResult train_all(const Dataset& train, const TrainConfig& cfg, const ProgressiveTrainer::Observer& observer = {});

}  // namespace pcgan
