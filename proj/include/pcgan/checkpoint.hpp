#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "pcgan/adam.hpp"
#include "pcgan/tensor.hpp"

namespace pcgan {

// Binary layout (little-endian):
//   "PCGN" | u32 version | u32 kind | u32 stage | u32 epoch
//   u32 meta_len | meta JSON bytes
//   u32 tensor_count | tensor records
//   u32 optimizer_count | optimizer records
//   u32 rng_count | rng records
// tensor record:    u16 name_len | name | u8 rank | u32 dims[rank] | f32 data[numel]
// optimizer record: u16 name_len | name | u64 step | f32 lr, beta1, beta2, eps
//                   | u32 moment_count | (tensor record m, tensor record v) per moment
// rng record:       u16 name_len | name | u32 state_len | state text

inline constexpr std::uint32_t kCheckpointVersion = 1;

enum class CheckpointKind : std::uint32_t { trainer = 0, classifier = 1 };

struct Checkpoint {
  CheckpointKind kind = CheckpointKind::trainer;
  std::uint32_t stage = 0;
  std::uint32_t epoch = 0;
  nlohmann::json meta = nlohmann::json::object();
  std::map<std::string, Tensor> tensors;
  std::map<std::string, AdamState> optimizers;
  std::map<std::string, std::string> rngs;
};

std::vector<std::uint8_t> serialize_checkpoint(const Checkpoint& ckpt);
/// Throws FormatError (bad_magic, version_mismatch, truncated, malformed).
Checkpoint deserialize_checkpoint(const std::vector<std::uint8_t>& bytes);

/// Writes atomically via a sibling temporary file.
void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path);
Checkpoint load_checkpoint(const std::filesystem::path& path);

/// Copies `net`'s parameters and buffers into `out` as "{prefix}{name}".
void export_network(const Network& net, const std::string& prefix, std::map<std::string, Tensor>& out);

/// Overwrites every parameter and buffer of `net` from "{prefix}{name}" entries.
/// Missing entries or shape mismatches are malformed; entries under `prefix`
/// the network does not own are unknown_tensor. `net` is untouched on error.
void import_network(Network& net, const std::string& prefix, const std::map<std::string, Tensor>& tensors);

}  // namespace pcgan
