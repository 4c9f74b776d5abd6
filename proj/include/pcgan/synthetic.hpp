#pragma once

#include <cstdint>

#include "pcgan/data.hpp"

namespace pcgan {

/// Per-sample geometric variation of rendered glyphs.
struct GlyphOptions {
  int size = 28;
  float max_rotation_deg = 12.0f;
  float min_scale = 0.85f;
  float max_scale = 1.1f;
  float max_shear = 0.15f;
  float max_shift = 2.0f;
  float min_thickness = 1.3f;
  float max_thickness = 2.4f;
  /// Std-dev of per-vertex displacement, in glyph units.
  float vertex_jitter = 0.03f;
};

/// Clean handwriting-like glyph corpus: classes 0-9 are digit-shaped stroke
/// templates, higher classes are fixed pseudo-random stroke sets. Labels are
/// balanced and shuffled; pixels lie on the IDX byte grid in [-1,1] with background -1.
Dataset make_glyph_dataset(int count, int num_classes, std::uint64_t seed, const GlyphOptions& options = {});

}  // namespace pcgan
