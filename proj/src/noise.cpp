#include "pcgan/noise.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include "pcgan/error.hpp"

namespace pcgan {
namespace {

int reflect(int i, int n) {
  if (n == 1) return 0;
  while (i < 0 || i >= n) {
    if (i < 0) i = -i;
    if (i >= n) i = 2 * (n - 1) - i;
  }
  return i;
}

void clamp_unit(Tensor& t) {
  for (float& v : t.storage()) v = std::clamp(v, -1.0f, 1.0f);
}

}  // namespace

std::string noise_kind_name(NoiseKind kind) {
  switch (kind) {
    case NoiseKind::awgn: return "awgn";
    case NoiseKind::contrast: return "contrast";
    case NoiseKind::motion: return "motion";
  }
  return "?";
}

NoiseKind parse_noise_kind(const std::string& name) {
  if (name == "awgn") return NoiseKind::awgn;
  if (name == "contrast") return NoiseKind::contrast;
  if (name == "motion") return NoiseKind::motion;
  throw UsageError("unknown noise kind '" + name + "' (expected awgn, contrast or motion)");
}

NoiseSpec NoiseSpec::awgn(float sigma) {
  NoiseSpec s;
  s.kind = NoiseKind::awgn;
  s.sigma = sigma;
  return s;
}

NoiseSpec NoiseSpec::contrast(float factor, float sigma) {
  NoiseSpec s;
  s.kind = NoiseKind::contrast;
  s.contrast_factor = factor;
  s.sigma = sigma;
  return s;
}

NoiseSpec NoiseSpec::motion(int length, float angle_degrees) {
  NoiseSpec s;
  s.kind = NoiseKind::motion;
  s.motion_length = length;
  s.motion_angle = angle_degrees;
  return s;
}

NoiseSpec NoiseSpec::preset(NoiseKind kind) {
  switch (kind) {
    case NoiseKind::awgn: return awgn(0.4f);
    case NoiseKind::contrast: return contrast(0.5f, 0.2f);
    case NoiseKind::motion: return motion(5, 45.0f);
  }
  return awgn(0.4f);
}

void NoiseSpec::validate() const {
  if (kind != NoiseKind::motion && !(sigma >= 0.0f)) throw UsageError("noise sigma must be non-negative");
  if (kind == NoiseKind::contrast && !(contrast_factor > 0.0f && contrast_factor <= 1.0f)) {
    throw UsageError("contrast factor must lie in (0,1]");
  }
  if (kind == NoiseKind::motion && (motion_length < 1 || motion_length % 2 == 0)) {
    throw UsageError("motion length must be a positive odd integer");
  }
}

void to_json(nlohmann::json& j, const NoiseSpec& spec) {
  j = nlohmann::json{{"kind", noise_kind_name(spec.kind)}};
  switch (spec.kind) {
    case NoiseKind::awgn: j["sigma"] = spec.sigma; break;
    case NoiseKind::contrast:
      j["sigma"] = spec.sigma;
      j["contrast_factor"] = spec.contrast_factor;
      break;
    case NoiseKind::motion:
      j["motion_length"] = spec.motion_length;
      j["motion_angle"] = spec.motion_angle;
      break;
  }
}

void from_json(const nlohmann::json& j, NoiseSpec& spec) {
  spec = NoiseSpec::preset(parse_noise_kind(j.at("kind").get<std::string>()));
  if (j.contains("sigma")) spec.sigma = j.at("sigma").get<float>();
  if (j.contains("contrast_factor")) spec.contrast_factor = j.at("contrast_factor").get<float>();
  if (j.contains("motion_length")) spec.motion_length = j.at("motion_length").get<int>();
  if (j.contains("motion_angle")) spec.motion_angle = j.at("motion_angle").get<float>();
  spec.validate();
}

Tensor motion_kernel(int length, float angle_degrees) {
  if (length < 1 || length % 2 == 0) throw UsageError("motion length must be a positive odd integer");
  Tensor k(Shape{length, length}, 0.0f);
  const int c = length / 2;
  const double theta = double(angle_degrees) * std::numbers::pi / 180.0;
  const double dx = std::cos(theta), dy = -std::sin(theta);
  for (int t = -c; t <= c; ++t) {
    const int col = c + int(std::lround(t * dx));
    const int row = c + int(std::lround(t * dy));
    k[std::size_t(row) * length + col] += 1.0f;
  }
  double total = 0.0;
  for (float v : k.storage()) total += v;
  for (float& v : k.storage()) v = float(v / total);
  return k;
}

Tensor sample_awgn(const Shape& shape, float sigma, Rng& rng) {
  Tensor noise(shape, 0.0f);
  if (sigma == 0.0f) return noise;
  std::normal_distribution<float> dist(0.0f, sigma);
  for (float& v : noise.storage()) v = dist(rng);
  return noise;
}

Tensor apply_noise(const Tensor& images, const NoiseSpec& spec, Rng& rng) {
  spec.validate();
  if (images.rank() < 2) throw DimensionError("noise expects [...,H,W], got " + shape_to_string(images.shape()));
  Tensor out = images;
  switch (spec.kind) {
    case NoiseKind::awgn:
    case NoiseKind::contrast: {
      if (spec.kind == NoiseKind::contrast) {
        for (float& v : out.storage()) v *= spec.contrast_factor;
      }
      if (spec.sigma > 0.0f) {
        const Tensor noise = sample_awgn(out.shape(), spec.sigma, rng);
        for (std::size_t i = 0; i < out.numel(); ++i) out[i] += noise[i];
      }
      break;
    }
    case NoiseKind::motion: {
      const Tensor k = motion_kernel(spec.motion_length, spec.motion_angle);
      const int h = images.dim(-2), w = images.dim(-1);
      const int len = spec.motion_length, c = len / 2;
      const std::size_t plane = std::size_t(h) * w;
      const std::size_t planes = images.numel() / plane;
      for (std::size_t p = 0; p < planes; ++p) {
        const float* in = images.ptr() + p * plane;
        float* o = out.ptr() + p * plane;
        for (int y = 0; y < h; ++y) {
          for (int x = 0; x < w; ++x) {
            float acc = 0.0f;
            for (int a = 0; a < len; ++a) {
              for (int b = 0; b < len; ++b) {
                const float kv = k[std::size_t(a) * len + b];
                if (kv == 0.0f) continue;
                acc += kv * in[reflect(y + a - c, h) * w + reflect(x + b - c, w)];
              }
            }
            o[std::size_t(y) * w + x] = acc;
          }
        }
      }
      break;
    }
  }
  clamp_unit(out);
  return out;
}

}  // namespace pcgan
