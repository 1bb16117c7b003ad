#pragma once

#include <torch/torch.h>

#include <json.hpp>

#include "privdistil/common/image.hpp"
#include "privdistil/common/rng.hpp"

namespace privdistil::train {

struct AugmentationConfig {
  double crop_scale_min = 0.4;  // area fraction of the square crop
  double crop_scale_max = 1.0;
  double hflip_p = 0.5;
  double vflip_p = 0.5;
  double jitter_p = 0.8;
  double brightness = 0.4;
  double contrast = 0.4;
  double saturation = 0.2;
  double hue = 0.1;  // fraction of a full turn
  double blur_p = 0.5;
  double blur_sigma_min = 0.1;
  double blur_sigma_max = 2.0;
  bool privileged_augment = true;  // crop and flip only

  /// Every transform disabled.
  static AugmentationConfig identity();
  void validate() const;
  bool operator==(const AugmentationConfig&) const = default;
};

/// Independent random view of every image in an N x C x H x W batch: square resized crop,
/// flips, then (when `photometric`) colour jitter in the order brightness, contrast,
/// saturation, hue and Gaussian blur. Saturation and hue are skipped for 1-channel input.
/// Parameters are drawn from `rng` sample by sample, so the result depends only on the
/// input and the generator state.
torch::Tensor augment_batch(const torch::Tensor& batch, const AugmentationConfig& cfg, Rng& rng,
                            bool photometric = true);

ImageTensor augment(const ImageTensor& image, const AugmentationConfig& cfg, Rng& rng, bool photometric = true);

nlohmann::json to_json(const AugmentationConfig& c);
AugmentationConfig augmentation_config_from_json(const nlohmann::json& j, const std::string& path);

}  // namespace privdistil::train
