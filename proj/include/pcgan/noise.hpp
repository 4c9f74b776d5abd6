#pragma once

#include <nlohmann/json.hpp>
#include <string>

#include "pcgan/rng.hpp"
#include "pcgan/tensor.hpp"

namespace pcgan {

enum class NoiseKind { awgn, contrast, motion };

std::string noise_kind_name(NoiseKind kind);
NoiseKind parse_noise_kind(const std::string& name);

struct NoiseSpec {
  NoiseKind kind = NoiseKind::awgn;
  float sigma = 0.0f;            // awgn, contrast
  float contrast_factor = 1.0f;  // contrast, in (0,1]
  int motion_length = 1;         // motion, odd
  float motion_angle = 0.0f;     // motion, degrees

  static NoiseSpec awgn(float sigma);
  static NoiseSpec contrast(float factor, float sigma);
  static NoiseSpec motion(int length, float angle_degrees);
  /// Synthesis defaults: awgn sigma 0.4; contrast 0.5 with sigma 0.2; motion length 5 at 45 degrees.
  static NoiseSpec preset(NoiseKind kind);

  void validate() const;
};

void to_json(nlohmann::json& j, const NoiseSpec& spec);
void from_json(const nlohmann::json& j, NoiseSpec& spec);

/// Normalized [length,length] line kernel through the center at `angle_degrees`.
Tensor motion_kernel(int length, float angle_degrees);

/// Raw N(0, sigma^2) field, before any clamping.
Tensor sample_awgn(const Shape& shape, float sigma, Rng& rng);

/// Corrupts images over their last two axes and clamps to [-1,1].
/// Motion blur draws no randomness.
Tensor apply_noise(const Tensor& images, const NoiseSpec& spec, Rng& rng);

}  // namespace pcgan
