#pragma once

#include <torch/torch.h>

#include <cstdint>
#include <filesystem>
#include <optional>

#include "privdistil/sslcore/networks.hpp"

namespace privdistil::evalkit {

struct SaliencyMap {
  torch::Tensor map;  // H x W, float64, non-negative
  int64_t target = 0;
};

/// Guided Grad-CAM for `head(net(image))[target]`. The class-activation map weights the
/// last conv activations by their spatially averaged gradients, is rectified, bilinearly
/// upsampled to the input size and scaled to a maximum of 1. It is multiplied by the
/// channel-summed guided-backprop input gradient and rectified again. `image` is C x H x W;
/// `net` should be in inference mode.
SaliencyMap guided_gradcam(sslcore::CamNetwork& net, torch::nn::Linear& head, const torch::Tensor& image,
                           int64_t target);

/// Fraction of attribution mass inside the mask (mask > 0); nullopt when the map has no mass.
std::optional<double> nucleus_focus_score(const torch::Tensor& map, const torch::Tensor& mask);

/// Writes the map scaled to its maximum as an 8-bit grayscale PNG.
void write_saliency_png(const SaliencyMap& map, const std::filesystem::path& path);

}  // namespace privdistil::evalkit
