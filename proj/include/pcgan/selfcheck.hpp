#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace pcgan {

enum class GradKind { conv2d, conv_transpose2d, batchnorm, dense, leaky_relu, softmax_nll };

/// "conv2d gradient", "batchnorm gradient", ...
std::string property_name(GradKind kind);

struct PropertyResult {
  std::string name;
  bool passed = false;
  /// Worst observed error measure (relative error, abs diff, ...).
  double worst = 0.0;
  int instances = 0;
  std::string detail;
};

/// Compares tape gradients against double-precision central differences on
/// randomized small instances. Error is ||analytic - numeric|| / max(||.||, ||.||).
PropertyResult check_gradient(GradKind kind, int instances, std::uint64_t seed, double tolerance = 1e-3);

/// conv2d input-gradient vs conv_transpose2d forward (max abs diff), plus the
/// double-precision inner-product identity <conv(x), y> = <x, conv_t(y)>.
PropertyResult check_adjoint(int geometries, std::uint64_t seed, double tolerance = 1e-5);

/// Rows of softmax sum to 1 and are shift invariant, including large logits.
PropertyResult check_softmax_invariants(int instances, std::uint64_t seed);

/// Train-mode batchnorm with unit affine yields zero-mean, unit-variance channels.
PropertyResult check_batchnorm_invariants(int instances, std::uint64_t seed);

struct SelfCheckOptions {
  int gradient_instances = 20;
  int adjoint_geometries = 100;
  std::uint64_t seed = 20240611;
  bool stop_at_first_failure = true;
};

struct SelfCheckReport {
  bool passed = true;
  std::vector<PropertyResult> properties;
  double seconds = 0.0;

  /// Name of the first failing property, empty if all passed.
  std::string first_failure() const;
};

SelfCheckReport run_selfcheck(const SelfCheckOptions& options = {});

}  // namespace pcgan
