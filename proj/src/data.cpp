#include "pcgan/data.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <fstream>
#include <iterator>

#include "pcgan/error.hpp"
#include "pcgan/rng.hpp"

namespace pcgan {
namespace {

std::vector<std::uint8_t> read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void write_file(const std::filesystem::path& path, const std::vector<std::uint8_t>& bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()), std::streamsize(bytes.size()));
  if (!out) throw IoError("write failed for " + path.string());
}

std::uint32_t read_be32(const std::vector<std::uint8_t>& b, std::size_t at, const std::filesystem::path& path) {
  if (at + 4 > b.size()) throw FormatError(FormatError::Kind::truncated, path.string() + ": truncated header");
  return (std::uint32_t(b[at]) << 24) | (std::uint32_t(b[at + 1]) << 16) | (std::uint32_t(b[at + 2]) << 8) |
         std::uint32_t(b[at + 3]);
}

void put_be32(std::vector<std::uint8_t>& b, std::uint32_t v) {
  b.push_back(std::uint8_t(v >> 24));
  b.push_back(std::uint8_t(v >> 16));
  b.push_back(std::uint8_t(v >> 8));
  b.push_back(std::uint8_t(v));
}

}  // namespace

void Dataset::validate() const {
  if (images.rank() != 4 || images.dim(1) != 1) {
    throw DimensionError("dataset images must be [M,1,H,W], got " + shape_to_string(images.shape()));
  }
  if (images.dim(0) != size()) {
    throw FormatError(FormatError::Kind::count_mismatch, std::to_string(images.dim(0)) + " images but " +
                                                             std::to_string(size()) + " labels");
  }
  if (num_classes <= 0) throw UsageError("dataset needs a positive class count");
  for (int l : labels) {
    if (l < 0 || l >= num_classes) {
      throw FormatError(FormatError::Kind::malformed,
                        "label " + std::to_string(l) + " outside [0," + std::to_string(num_classes) + ")");
    }
  }
}

IdxImages read_idx_images(const std::filesystem::path& path) {
  const auto bytes = read_file(path);
  const std::uint32_t magic = read_be32(bytes, 0, path);
  if (magic != kIdxImageMagic) {
    throw FormatError(FormatError::Kind::bad_magic, path.string() + ": not an IDX image file (bad magic)");
  }
  IdxImages out;
  out.count = int(read_be32(bytes, 4, path));
  out.rows = int(read_be32(bytes, 8, path));
  out.cols = int(read_be32(bytes, 12, path));
  const std::size_t payload = std::size_t(out.count) * out.rows * out.cols;
  if (bytes.size() < 16 + payload) {
    throw FormatError(FormatError::Kind::truncated, path.string() + ": truncated pixel payload");
  }
  out.pixels.assign(bytes.begin() + 16, bytes.begin() + 16 + std::ptrdiff_t(payload));
  return out;
}

std::vector<std::uint8_t> read_idx_labels(const std::filesystem::path& path) {
  const auto bytes = read_file(path);
  const std::uint32_t magic = read_be32(bytes, 0, path);
  if (magic != kIdxLabelMagic) {
    throw FormatError(FormatError::Kind::bad_magic, path.string() + ": not an IDX label file (bad magic)");
  }
  const std::size_t count = read_be32(bytes, 4, path);
  if (bytes.size() < 8 + count) throw FormatError(FormatError::Kind::truncated, path.string() + ": truncated labels");
  return {bytes.begin() + 8, bytes.begin() + 8 + std::ptrdiff_t(count)};
}

void write_idx_images(const std::filesystem::path& path, const IdxImages& images) {
  std::vector<std::uint8_t> bytes;
  bytes.reserve(16 + images.pixels.size());
  put_be32(bytes, kIdxImageMagic);
  put_be32(bytes, std::uint32_t(images.count));
  put_be32(bytes, std::uint32_t(images.rows));
  put_be32(bytes, std::uint32_t(images.cols));
  bytes.insert(bytes.end(), images.pixels.begin(), images.pixels.end());
  write_file(path, bytes);
}

void write_idx_labels(const std::filesystem::path& path, const std::vector<std::uint8_t>& labels) {
  std::vector<std::uint8_t> bytes;
  put_be32(bytes, kIdxLabelMagic);
  put_be32(bytes, std::uint32_t(labels.size()));
  bytes.insert(bytes.end(), labels.begin(), labels.end());
  write_file(path, bytes);
}

float byte_to_pixel(std::uint8_t b) { return float(b) / 127.5f - 1.0f; }

std::uint8_t pixel_to_byte(float x) {
  const float v = std::round((x + 1.0f) * 127.5f);
  return std::uint8_t(std::clamp(v, 0.0f, 255.0f));
}

Tensor idx_to_tensor(const IdxImages& images) {
  Tensor t(Shape{images.count, 1, images.rows, images.cols});
  for (std::size_t i = 0; i < images.pixels.size(); ++i) t[i] = byte_to_pixel(images.pixels[i]);
  return t;
}

IdxImages tensor_to_idx(const Tensor& images) {
  if (images.rank() != 4 || images.dim(1) != 1) {
    throw DimensionError("IDX export expects [M,1,H,W], got " + shape_to_string(images.shape()));
  }
  IdxImages out;
  out.count = images.dim(0);
  out.rows = images.dim(2);
  out.cols = images.dim(3);
  out.pixels.resize(images.numel());
  for (std::size_t i = 0; i < images.numel(); ++i) out.pixels[i] = pixel_to_byte(images[i]);
  return out;
}

Dataset load_idx(const std::filesystem::path& image_path, const std::filesystem::path& label_path, int num_classes,
                 Split split) {
  const IdxImages images = read_idx_images(image_path);
  const std::vector<std::uint8_t> labels = read_idx_labels(label_path);
  if (std::size_t(images.count) != labels.size()) {
    throw FormatError(FormatError::Kind::count_mismatch, image_path.string() + " holds " +
                                                             std::to_string(images.count) + " images but " +
                                                             label_path.string() + " holds " +
                                                             std::to_string(labels.size()) + " labels");
  }
  Dataset ds;
  ds.images = idx_to_tensor(images);
  ds.labels.assign(labels.begin(), labels.end());
  ds.split = split;
  if (num_classes <= 0) {
    num_classes = labels.empty() ? 1 : int(*std::max_element(labels.begin(), labels.end())) + 1;
  }
  ds.num_classes = num_classes;
  ds.validate();
  return ds;
}

void write_dataset_idx(const Dataset& ds, const std::filesystem::path& image_path,
                       const std::filesystem::path& label_path) {
  write_idx_images(image_path, tensor_to_idx(ds.images));
  std::vector<std::uint8_t> labels(ds.labels.size());
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (ds.labels[i] < 0 || ds.labels[i] > 255) throw UsageError("IDX labels must fit in a byte");
    labels[i] = std::uint8_t(ds.labels[i]);
  }
  write_idx_labels(label_path, labels);
}

Tensor resize_to_28(const Tensor& images) {
  if (images.rank() < 2) throw DimensionError("resize expects [...,H,W], got " + shape_to_string(images.shape()));
  const int h = images.dim(-2), w = images.dim(-1);
  if (h == 28 && w == 28) return images;
  if (h != 32 || w != 32) {
    throw DimensionError("resize_to_28 expects 32x32 or 28x28 images, got " + shape_to_string(images.shape()));
  }
  constexpr int kOut = 28;
  Shape out_shape = images.shape();
  out_shape[out_shape.size() - 2] = kOut;
  out_shape[out_shape.size() - 1] = kOut;
  Tensor out(out_shape);
  const std::size_t planes = images.numel() / (32 * 32);
  const float step = 31.0f / 27.0f;
  std::array<int, kOut> lo{};
  std::array<float, kOut> frac{};
  for (int i = 0; i < kOut; ++i) {
    const float src = float(i) * step;
    lo[i] = std::min(int(std::floor(src)), 30);
    frac[i] = src - float(lo[i]);
  }
  for (std::size_t p = 0; p < planes; ++p) {
    const float* in = images.ptr() + p * 32 * 32;
    float* o = out.ptr() + p * kOut * kOut;
    for (int y = 0; y < kOut; ++y) {
      const float fy = frac[y];
      const float* r0 = in + lo[y] * 32;
      const float* r1 = r0 + 32;
      for (int x = 0; x < kOut; ++x) {
        const int x0 = lo[x];
        const float fx = frac[x];
        const float top = r0[x0] + fx * (r0[x0 + 1] - r0[x0]);
        const float bottom = r1[x0] + fx * (r1[x0 + 1] - r1[x0]);
        const float lo_v = std::min({r0[x0], r0[x0 + 1], r1[x0], r1[x0 + 1]});
        const float hi_v = std::max({r0[x0], r0[x0 + 1], r1[x0], r1[x0 + 1]});
        o[y * kOut + x] = std::clamp(top + fy * (bottom - top), lo_v, hi_v);
      }
    }
  }
  return out;
}

Tensor downscale(const Tensor& images, int res) {
  if (res != 7 && res != 14 && res != 28) throw UsageError("unsupported resolution " + std::to_string(res));
  if (images.rank() < 2) throw DimensionError("downscale expects [...,H,W], got " + shape_to_string(images.shape()));
  const int side = images.dim(-1);
  if (images.dim(-2) != side || (side != 28 && side != 14) || side % res != 0) {
    throw DimensionError("downscale expects [...,28,28] or [...,14,14] divisible by " + std::to_string(res) + ", got " +
                         shape_to_string(images.shape()));
  }
  if (res == side) return images;
  const int window = side / res;
  const float inv = 1.0f / float(window * window);
  Shape out_shape = images.shape();
  out_shape[out_shape.size() - 2] = res;
  out_shape[out_shape.size() - 1] = res;
  Tensor out(out_shape);
  const std::size_t plane = std::size_t(side) * side;
  const std::size_t planes = images.numel() / plane;
  for (std::size_t p = 0; p < planes; ++p) {
    const float* in = images.ptr() + p * plane;
    float* o = out.ptr() + p * res * res;
    for (int y = 0; y < res; ++y) {
      for (int x = 0; x < res; ++x) {
        float acc = 0.0f;
        for (int dy = 0; dy < window; ++dy) {
          for (int dx = 0; dx < window; ++dx) acc += in[(y * window + dy) * side + x * window + dx];
        }
        o[y * res + x] = acc * inv;
      }
    }
  }
  return out;
}

Dataset canonicalize(Dataset ds) {
  ds.images = resize_to_28(ds.images);
  return ds;
}

BatchStream::BatchStream(const Dataset& ds, int batch_size, int res, std::uint64_t shuffle_seed)
    : ds_(&ds), batch_size_(batch_size), res_(res) {
  if (batch_size < 1) throw UsageError("batch size must be positive");
  if (batch_size > ds.size()) {
    throw UsageError("batch size " + std::to_string(batch_size) + " exceeds dataset size " + std::to_string(ds.size()));
  }
  if (res != 7 && res != 14 && res != 28) throw UsageError("unsupported resolution " + std::to_string(res));
  if (ds.resolution() != 28) throw DimensionError("batching requires a dataset canonicalized to 28x28");
  order_.resize(std::size_t(ds.size()));
  for (int i = 0; i < ds.size(); ++i) order_[std::size_t(i)] = i;
  Rng rng(shuffle_seed);
  for (std::size_t i = order_.size(); i > 1; --i) {
    std::uniform_int_distribution<std::size_t> pick(0, i - 1);
    std::swap(order_[i - 1], order_[pick(rng)]);
  }
}

std::optional<Batch> BatchStream::next() {
  if ((cursor_ + 1) * std::size_t(batch_size_) > order_.size()) return std::nullopt;
  constexpr std::size_t kPlane = 28 * 28;
  Tensor images(Shape{batch_size_, 1, 28, 28});
  Batch b;
  b.labels.resize(std::size_t(batch_size_));
  for (int i = 0; i < batch_size_; ++i) {
    const int src = order_[cursor_ * std::size_t(batch_size_) + std::size_t(i)];
    std::copy_n(ds_->images.ptr() + std::size_t(src) * kPlane, kPlane, images.ptr() + std::size_t(i) * kPlane);
    b.labels[std::size_t(i)] = ds_->labels[std::size_t(src)];
  }
  ++cursor_;
  b.images = downscale(images, res_);
  return b;
}

Dataset subset(const Dataset& ds, int begin, int end) {
  if (begin < 0 || end > ds.size() || begin >= end) throw UsageError("invalid subset range");
  const std::size_t plane = ds.images.numel() / std::size_t(ds.size());
  Shape shape = ds.images.shape();
  shape[0] = end - begin;
  Dataset out;
  out.images = Tensor(shape, std::vector<float>(ds.images.ptr() + std::size_t(begin) * plane,
                                                ds.images.ptr() + std::size_t(end) * plane));
  out.labels.assign(ds.labels.begin() + begin, ds.labels.begin() + end);
  out.num_classes = ds.num_classes;
  out.split = ds.split;
  return out;
}

}  // namespace pcgan
