#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "pcgan/tensor.hpp"

namespace pcgan {

enum class Split { train, test };

/// Labeled grayscale images, values in [-1,1], shape [M,1,H,W].
struct Dataset {
  Tensor images;
  std::vector<int> labels;
  int num_classes = 0;
  Split split = Split::train;

  int size() const { return static_cast<int>(labels.size()); }
  int resolution() const { return images.rank() == 4 ? images.dim(3) : 0; }
  /// Throws if labels/images disagree or a label is out of range.
  void validate() const;
};

struct Batch {
  Tensor images;  // [n,1,res,res]
  std::vector<int> labels;
  int resolution() const { return images.dim(3); }
};

/// Raw IDX image payload (unsigned bytes, row-major).
struct IdxImages {
  int count = 0;
  int rows = 0;
  int cols = 0;
  std::vector<std::uint8_t> pixels;
};

inline constexpr std::uint32_t kIdxImageMagic = 0x00000803;
inline constexpr std::uint32_t kIdxLabelMagic = 0x00000801;

IdxImages read_idx_images(const std::filesystem::path& path);
std::vector<std::uint8_t> read_idx_labels(const std::filesystem::path& path);
void write_idx_images(const std::filesystem::path& path, const IdxImages& images);
void write_idx_labels(const std::filesystem::path& path, const std::vector<std::uint8_t>& labels);

/// Byte b maps to b/127.5 - 1.
float byte_to_pixel(std::uint8_t b);
/// Inverse of byte_to_pixel with rounding and saturation.
std::uint8_t pixel_to_byte(float x);

Tensor idx_to_tensor(const IdxImages& images);
IdxImages tensor_to_idx(const Tensor& images);

/// Reads an image/label IDX pair. num_classes = 0 infers max(label)+1.
Dataset load_idx(const std::filesystem::path& image_path, const std::filesystem::path& label_path,
                 int num_classes = 0, Split split = Split::train);
void write_dataset_idx(const Dataset& ds, const std::filesystem::path& image_path,
                       const std::filesystem::path& label_path);

/// Bilinear, corner-aligned 32x32 -> 28x28 over the last two axes; 28x28 input passes through.
Tensor resize_to_28(const Tensor& images);
/// Non-overlapping mean pooling of [...,28,28] (or [...,14,14]) to res in {7,14,28}.
Tensor downscale(const Tensor& images, int res);
/// Resizes a dataset to 28x28 if needed.
Dataset canonicalize(Dataset ds);

/// One epoch of fixed-size batches over a seeded permutation; the trailing
/// partial batch is dropped. Images are downscaled to `res` on emission.
class BatchStream {
 public:
  BatchStream(const Dataset& ds, int batch_size, int res, std::uint64_t shuffle_seed);

  std::size_t size() const noexcept { return order_.size() / std::size_t(batch_size_); }
  std::optional<Batch> next();
  const std::vector<int>& order() const noexcept { return order_; }

 private:
  const Dataset* ds_;
  int batch_size_;
  int res_;
  std::vector<int> order_;
  std::size_t cursor_ = 0;
};

inline BatchStream batches(const Dataset& ds, int batch_size, int res, std::uint64_t shuffle_seed) {
  return BatchStream(ds, batch_size, res, shuffle_seed);
}

/// Rows [begin, end) of a dataset.
Dataset subset(const Dataset& ds, int begin, int end);

}  // namespace pcgan
