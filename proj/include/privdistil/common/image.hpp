#pragma once

#include <torch/torch.h>

#include <cstdint>
#include <filesystem>
#include <vector>

namespace privdistil {

/// A single image with intensities in [0, 1], stored channel-first (C x H x W, float32).
/// Channels are 1 (masks) or 3 (RGB); both spatial sides are at least 16 pixels.
class ImageTensor {
 public:
  static constexpr int64_t kMinSide = 16;

  ImageTensor() = default;
  /// Validates shape and value range; throws ShapeError / DataError.
  explicit ImageTensor(torch::Tensor chw);

  static ImageTensor zeros(int64_t channels, int64_t height, int64_t width);

  int64_t channels() const { return data_.size(0); }
  int64_t height() const { return data_.size(1); }
  int64_t width() const { return data_.size(2); }
  bool empty() const { return !data_.defined(); }

  const torch::Tensor& data() const { return data_; }
  float at(int64_t c, int64_t y, int64_t x) const { return data_.data_ptr<float>()[(c * height() + y) * width() + x]; }

  /// Bitwise equality of shape and contents.
  bool identical(const ImageTensor& other) const;

 private:
  torch::Tensor data_;
};

/// Stacks images into an N x C x H x W batch; all images must share a shape.
torch::Tensor stack_images(const std::vector<ImageTensor>& images);

/// Splits row `i` of an N x C x H x W batch back into an ImageTensor (values clamped to [0,1]).
ImageTensor image_from_batch(const torch::Tensor& batch, int64_t i);

/// 8-bit PNG I/O. Grayscale PNGs load as 1 channel, RGB as 3; values are v/255.
ImageTensor read_png(const std::filesystem::path& path);
void write_png(const std::filesystem::path& path, const ImageTensor& image);

/// Quantises to the 8-bit grid used on disk (round(v*255)/255), so in-memory results can be
/// compared with what a reload would produce.
ImageTensor quantize_8bit(const ImageTensor& image);

}  // namespace privdistil
