#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "pcgan/adam.hpp"
#include "pcgan/checkpoint.hpp"
#include "pcgan/data.hpp"
#include "pcgan/models.hpp"

namespace pcgan {

inline constexpr int kClassifierHeadIndex = 95;
inline constexpr int kClassifierSoftmaxIndex = 96;

enum class Provenance { transferred, fresh };

struct Classifier {
  ModelConfig model;
  Network net;  // [n,1,28,28] -> [n,K] probabilities
  std::map<std::string, Provenance> provenance;

  std::vector<std::string> head_parameter_names() const;
  std::vector<std::string> trunk_parameter_names() const;
};

/// Stage-3 discriminator trunk (same layer specs and names) + dense softmax head, in infer mode.
Classifier build_classifier(const ModelConfig& model, std::uint64_t seed);
Classifier build_classifier(int num_classes, std::uint64_t seed);

/// Copies every trunk parameter and buffer from a stage-3 discriminator; the head is untouched.
Classifier transfer_from_discriminator(Classifier clf, const Network& disc);

struct FinetuneConfig {
  int head_epochs = 10;
  int full_epochs = 0;
  int batch_size = 32;
  AdamConfig head_adam{1e-3f, 0.9f, 0.999f, 1e-8f};
  AdamConfig full_adam{1e-4f, 0.9f, 0.999f, 1e-8f};
  std::uint64_t seed = 5;

  void validate() const;
};

void to_json(nlohmann::json& j, const FinetuneConfig& c);
void from_json(const nlohmann::json& j, FinetuneConfig& c);

enum class FinetunePhase { head, full };

struct FinetuneEpoch {
  FinetunePhase phase;
  int epoch;  // 1-based over both phases
  float loss;
  /// Accuracy on the monitor set, if one was given.
  std::optional<double> monitor_accuracy;
};

struct FinetuneResult {
  Classifier classifier;
  std::vector<FinetuneEpoch> history;
};

/// Head-only training with the trunk frozen, then an optional full-network phase.
FinetuneResult finetune(Classifier clf, const Dataset& train, const FinetuneConfig& cfg,
                        const Dataset* monitor = nullptr);

struct Prediction {
  std::vector<int> labels;
  Tensor probs;  // [n,K]
};

/// Row-wise argmax; ties go to the lowest index.
std::vector<int> argmax_rows(const Tensor& probs);

/// Requires infer mode and [n,1,28,28] input.
Prediction predict(const Classifier& clf, const Tensor& images);

Checkpoint classifier_checkpoint(const Classifier& clf);
Classifier classifier_from_checkpoint(const Checkpoint& ckpt);

}  // namespace pcgan
