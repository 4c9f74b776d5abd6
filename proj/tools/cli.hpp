#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "pcgan/classifier.hpp"
#include "pcgan/noise.hpp"
#include "pcgan/trainer.hpp"

namespace pcgan::cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitFailure = 1;
inline constexpr int kExitInput = 2;

/// Single JSON source of truth for a run. Relative paths resolve against the config file's directory.
struct RunConfig {
  std::filesystem::path train_images;
  std::filesystem::path train_labels;
  std::filesystem::path test_images;
  std::filesystem::path test_labels;
  int num_classes = 10;
  std::filesystem::path output_dir = "out";
  std::string dataset = "dataset";
  TrainConfig train;
  FinetuneConfig finetune;
  std::optional<NoiseSpec> noise;
  std::uint64_t noise_seed = 0;
};

RunConfig parse_run_config(const nlohmann::json& j, const std::filesystem::path& base_dir);
RunConfig load_run_config(const std::filesystem::path& path);

/// Runs one subcommand; `args` excludes the program name.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace pcgan::cli
