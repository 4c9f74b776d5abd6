#include "pcgan/synthetic.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <numbers>
#include <vector>

#include "pcgan/error.hpp"
#include "pcgan/rng.hpp"

namespace pcgan {
namespace {

struct Point {
  double x, y;
};
using Stroke = std::vector<Point>;
using Glyph = std::vector<Stroke>;

Stroke ellipse(double cx, double cy, double rx, double ry, int segments = 14) {
  Stroke s;
  for (int i = 0; i <= segments; ++i) {
    const double t = 2.0 * std::numbers::pi * i / segments;
    s.push_back({cx + rx * std::cos(t), cy + ry * std::sin(t)});
  }
  return s;
}

Glyph digit_template(int digit) {
  switch (digit) {
    case 0: return {ellipse(0.5, 0.5, 0.26, 0.38)};
    case 1: return {{{0.38, 0.25}, {0.52, 0.12}, {0.52, 0.88}}};
    case 2: return {{{0.25, 0.3}, {0.35, 0.16}, {0.55, 0.12}, {0.72, 0.22}, {0.72, 0.38}, {0.25, 0.88}, {0.78, 0.88}}};
    case 3:
      return {{{0.25, 0.15}, {0.7, 0.15}, {0.45, 0.45}, {0.7, 0.55}, {0.72, 0.75}, {0.55, 0.88}, {0.25, 0.84}}};
    case 4: return {{{0.62, 0.88}, {0.62, 0.12}, {0.22, 0.62}, {0.8, 0.62}}};
    case 5:
      return {{{0.72, 0.12}, {0.32, 0.12}, {0.28, 0.45}, {0.55, 0.42}, {0.72, 0.56}, {0.7, 0.78}, {0.5, 0.88},
               {0.25, 0.82}}};
    case 6:
      return {{{0.65, 0.12}, {0.38, 0.35}, {0.28, 0.62}, {0.35, 0.85}, {0.58, 0.88}, {0.72, 0.7}, {0.6, 0.52},
               {0.3, 0.6}}};
    case 7: return {{{0.22, 0.12}, {0.78, 0.12}, {0.42, 0.88}}};
    case 8: return {ellipse(0.5, 0.3, 0.19, 0.17), ellipse(0.5, 0.68, 0.23, 0.2)};
    case 9: return {ellipse(0.5, 0.32, 0.21, 0.19), {{0.71, 0.32}, {0.64, 0.88}}};
    default: return {};
  }
}

// Classes beyond the ten digits get a fixed stroke set per class id.
Glyph random_template(int cls) {
  Rng rng(derive_seed(0x61797068u, {std::uint64_t(cls)}));
  std::uniform_real_distribution<double> coord(0.15, 0.85);
  std::uniform_int_distribution<int> strokes(2, 3), points(2, 4);
  Glyph g;
  const int ns = strokes(rng);
  for (int s = 0; s < ns; ++s) {
    Stroke st;
    const int np = points(rng);
    for (int p = 0; p < np; ++p) st.push_back({coord(rng), coord(rng)});
    g.push_back(std::move(st));
  }
  return g;
}

double segment_distance(Point p, Point a, Point b) {
  const double vx = b.x - a.x, vy = b.y - a.y;
  const double len2 = vx * vx + vy * vy;
  double t = len2 > 0.0 ? ((p.x - a.x) * vx + (p.y - a.y) * vy) / len2 : 0.0;
  t = std::clamp(t, 0.0, 1.0);
  const double dx = p.x - (a.x + t * vx), dy = p.y - (a.y + t * vy);
  return std::sqrt(dx * dx + dy * dy);
}

void render(const Glyph& glyph, const GlyphOptions& o, Rng& rng, float* out) {
  std::uniform_real_distribution<double> unit(-1.0, 1.0);
  std::normal_distribution<double> jitter(0.0, o.vertex_jitter);
  const double angle = unit(rng) * o.max_rotation_deg * std::numbers::pi / 180.0;
  const double scale = o.min_scale + (unit(rng) * 0.5 + 0.5) * (o.max_scale - o.min_scale);
  const double shear = unit(rng) * o.max_shear;
  const double shift_x = unit(rng) * o.max_shift, shift_y = unit(rng) * o.max_shift;
  const double thickness = o.min_thickness + (unit(rng) * 0.5 + 0.5) * (o.max_thickness - o.min_thickness);
  const double box = 0.72 * o.size * scale;
  const double ca = std::cos(angle), sa = std::sin(angle);
  const double center = 0.5 * (o.size - 1);

  std::vector<std::pair<Point, Point>> segments;
  for (const Stroke& s : glyph) {
    std::vector<Point> pts;
    for (Point p : s) {
      double x = p.x - 0.5 + jitter(rng), y = p.y - 0.5 + jitter(rng);
      x += shear * y;
      const double rx = ca * x - sa * y, ry = sa * x + ca * y;
      pts.push_back({center + shift_x + rx * box, center + shift_y + ry * box});
    }
    for (std::size_t i = 1; i < pts.size(); ++i) segments.emplace_back(pts[i - 1], pts[i]);
  }
  for (int y = 0; y < o.size; ++y) {
    for (int x = 0; x < o.size; ++x) {
      double d = 1e9;
      for (const auto& [a, b] : segments) d = std::min(d, segment_distance({double(x), double(y)}, a, b));
      const double ink = std::clamp(0.5 * thickness + 0.5 - d, 0.0, 1.0);
      out[y * o.size + x] = float(2.0 * ink - 1.0);
    }
  }
}

}  // namespace

Dataset make_glyph_dataset(int count, int num_classes, std::uint64_t seed, const GlyphOptions& options) {
  if (count < 1) throw UsageError("glyph dataset needs at least one image");
  if (num_classes < 1 || num_classes > 255) throw UsageError("glyph classes must lie in [1,255]");
  std::vector<Glyph> templates;
  for (int k = 0; k < num_classes; ++k) templates.push_back(k < 10 ? digit_template(k) : random_template(k));

  Rng rng(seed);
  std::vector<int> labels(static_cast<std::size_t>(count));
  for (int i = 0; i < count; ++i) labels[std::size_t(i)] = i % num_classes;
  for (std::size_t i = labels.size(); i > 1; --i) {
    std::uniform_int_distribution<std::size_t> pick(0, i - 1);
    std::swap(labels[i - 1], labels[pick(rng)]);
  }
  Dataset ds;
  ds.images = Tensor(Shape{count, 1, options.size, options.size});
  ds.labels = labels;
  ds.num_classes = num_classes;
  const std::size_t plane = std::size_t(options.size) * options.size;
  for (int i = 0; i < count; ++i) {
    render(templates[std::size_t(labels[std::size_t(i)])], options, rng, ds.images.ptr() + std::size_t(i) * plane);
  }
  for (float& v : ds.images.storage()) v = byte_to_pixel(pixel_to_byte(v));
  return ds;
}

}  // namespace pcgan
