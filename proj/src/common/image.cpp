#include "privdistil/common/image.hpp"

#include <png.h>

#include <cmath>
#include <cstring>
#include <fstream>

#include "privdistil/common/error.hpp"

namespace privdistil {

ImageTensor::ImageTensor(torch::Tensor chw) {
  if (chw.dim() != 3) throw ShapeError("image must be C x H x W, got rank " + std::to_string(chw.dim()));
  const int64_t c = chw.size(0);
  if (c != 1 && c != 3) throw ShapeError("image must have 1 or 3 channels, got " + std::to_string(c));
  if (chw.size(1) < kMinSide || chw.size(2) < kMinSide) {
    throw ShapeError("image sides must be >= 16, got " + std::to_string(chw.size(1)) + "x" +
                     std::to_string(chw.size(2)));
  }
  auto t = chw.to(torch::kFloat32).contiguous();
  if (t.numel() > 0) {
    const float lo = t.min().item<float>();
    const float hi = t.max().item<float>();
    if (!(lo >= 0.0F && hi <= 1.0F)) throw DataError("image values must lie in [0,1]");
  }
  data_ = std::move(t);
}

ImageTensor ImageTensor::zeros(int64_t channels, int64_t height, int64_t width) {
  return ImageTensor(torch::zeros({channels, height, width}));
}

bool ImageTensor::identical(const ImageTensor& other) const {
  if (empty() || other.empty()) return empty() && other.empty();
  if (data_.sizes() != other.data_.sizes()) return false;
  return std::memcmp(data_.data_ptr<float>(), other.data_.data_ptr<float>(),
                     static_cast<size_t>(data_.numel()) * sizeof(float)) == 0;
}

torch::Tensor stack_images(const std::vector<ImageTensor>& images) {
  if (images.empty()) throw ShapeError("cannot stack an empty image list");
  std::vector<torch::Tensor> parts;
  parts.reserve(images.size());
  for (const auto& im : images) {
    if (im.data().sizes() != images.front().data().sizes()) throw ShapeError("images in a batch must share a shape");
    parts.push_back(im.data());
  }
  return torch::stack(parts);
}

ImageTensor image_from_batch(const torch::Tensor& batch, int64_t i) {
  return ImageTensor(batch[i].detach().to(torch::kFloat32).clamp(0.0, 1.0).contiguous());
}

namespace {

uint8_t to_u8(float v) {
  const float c = std::min(1.0F, std::max(0.0F, v));
  return static_cast<uint8_t>(std::lround(c * 255.0F));
}

}  // namespace

ImageTensor read_png(const std::filesystem::path& path) {
  png_image img;
  std::memset(&img, 0, sizeof(img));
  img.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_file(&img, path.c_str())) {
    throw DataError("cannot read PNG " + path.string() + ": " + img.message);
  }
  const bool gray = (img.format & PNG_FORMAT_FLAG_COLOR) == 0;
  img.format = gray ? PNG_FORMAT_GRAY : PNG_FORMAT_RGB;
  const int64_t channels = gray ? 1 : 3;
  std::vector<uint8_t> buf(PNG_IMAGE_SIZE(img));
  if (!png_image_finish_read(&img, nullptr, buf.data(), 0, nullptr)) {
    png_image_free(&img);
    throw DataError("cannot decode PNG " + path.string() + ": " + img.message);
  }
  const int64_t h = img.height;
  const int64_t w = img.width;
  auto out = torch::empty({channels, h, w});
  float* dst = out.data_ptr<float>();
  for (int64_t y = 0; y < h; ++y) {
    for (int64_t x = 0; x < w; ++x) {
      for (int64_t c = 0; c < channels; ++c) {
        dst[(c * h + y) * w + x] = static_cast<float>(buf[static_cast<size_t>((y * w + x) * channels + c)]) / 255.0F;
      }
    }
  }
  return ImageTensor(out);
}

void write_png(const std::filesystem::path& path, const ImageTensor& image) {
  const int64_t c = image.channels();
  const int64_t h = image.height();
  const int64_t w = image.width();
  std::vector<uint8_t> buf(static_cast<size_t>(c * h * w));
  const float* src = image.data().data_ptr<float>();
  for (int64_t y = 0; y < h; ++y) {
    for (int64_t x = 0; x < w; ++x) {
      for (int64_t k = 0; k < c; ++k) buf[static_cast<size_t>((y * w + x) * c + k)] = to_u8(src[(k * h + y) * w + x]);
    }
  }
  png_image img;
  std::memset(&img, 0, sizeof(img));
  img.version = PNG_IMAGE_VERSION;
  img.width = static_cast<png_uint_32>(w);
  img.height = static_cast<png_uint_32>(h);
  img.format = c == 1 ? PNG_FORMAT_GRAY : PNG_FORMAT_RGB;
  if (!png_image_write_to_file(&img, path.c_str(), 0, buf.data(), 0, nullptr)) {
    throw DataError("cannot write PNG " + path.string() + ": " + img.message);
  }
}

ImageTensor quantize_8bit(const ImageTensor& image) {
  auto out = image.data().clone();
  float* p = out.data_ptr<float>();
  for (int64_t i = 0; i < out.numel(); ++i) p[i] = static_cast<float>(to_u8(p[i])) / 255.0F;
  return ImageTensor(out);
}

}  // namespace privdistil
