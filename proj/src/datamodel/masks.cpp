#include "privdistil/datamodel/masks.hpp"

#include "privdistil/common/error.hpp"

namespace privdistil::datamodel {

std::string to_string(MaskMode mode) {
  switch (mode) {
    case MaskMode::binary:
      return "binary";
    case MaskMode::typed:
      return "typed";
    case MaskMode::masked_image:
      return "masked_image";
  }
  return "binary";
}

MaskMode parse_mask_mode(const std::string& s) {
  if (s == "binary") return MaskMode::binary;
  if (s == "typed") return MaskMode::typed;
  if (s == "masked_image") return MaskMode::masked_image;
  throw ConfigError("unknown mask mode \"" + s + "\" (expected binary, typed or masked_image)");
}

int64_t mask_channels(MaskMode mode) { return mode == MaskMode::binary ? 1 : 3; }

ImageTensor oracle_mask(const GroundTruth& truth, const ImageTensor& primary, MaskMode mode) {
  const int64_t h = truth.height;
  const int64_t w = truth.width;
  const auto instances = rasterize_instances(truth);
  const int32_t* inst = instances.data_ptr<int32_t>();

  switch (mode) {
    case MaskMode::binary: {
      auto out = torch::zeros({1, h, w});
      float* p = out.data_ptr<float>();
      for (int64_t i = 0; i < h * w; ++i) p[i] = inst[i] > 0 ? 1.0F : 0.0F;
      return ImageTensor(out);
    }
    case MaskMode::typed: {
      auto out = torch::zeros({3, h, w});
      float* p = out.data_ptr<float>();
      for (int64_t i = 0; i < h * w; ++i) {
        if (inst[i] == 0) continue;
        const auto& col = kTypePalette[static_cast<size_t>(truth.nuclei[static_cast<size_t>(inst[i] - 1)].type)];
        p[i] = static_cast<float>(col.r);
        p[h * w + i] = static_cast<float>(col.g);
        p[2 * h * w + i] = static_cast<float>(col.b);
      }
      return ImageTensor(out);
    }
    case MaskMode::masked_image: {
      if (primary.empty() || primary.channels() != 3 || primary.height() != h || primary.width() != w) {
        throw ShapeError("masked_image mode needs an RGB primary image matching the ground truth size");
      }
      auto out = torch::zeros({3, h, w});
      float* p = out.data_ptr<float>();
      const float* src = primary.data().data_ptr<float>();
      constexpr float kFloor = 1.0F / 255.0F;
      for (int64_t i = 0; i < h * w; ++i) {
        if (inst[i] == 0) continue;
        float peak = 0.0F;
        for (int64_t c = 0; c < 3; ++c) {
          p[c * h * w + i] = src[c * h * w + i];
          peak = std::max(peak, src[c * h * w + i]);
        }
        if (peak < kFloor) {
          for (int64_t c = 0; c < 3; ++c) p[c * h * w + i] = kFloor;
        }
      }
      return ImageTensor(out);
    }
  }
  throw ConfigError("unknown mask mode");
}

}  // namespace privdistil::datamodel
