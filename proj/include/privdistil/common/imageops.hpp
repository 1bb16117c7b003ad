#pragma once

#include <torch/torch.h>

// Batched photometric and filtering operations on B x C x H x W tensors with values in
// [0,1]. Per-sample parameters are 1-D tensors of length B. Every operation clamps its
// result to [0,1] and computes in the dtype of its input.
namespace privdistil::imageops {

/// ITU-R 601 luma; B x 3 x H x W -> B x 1 x H x W.
torch::Tensor rgb_to_gray(const torch::Tensor& rgb);

torch::Tensor rgb_to_hsv(const torch::Tensor& rgb);
torch::Tensor hsv_to_rgb(const torch::Tensor& hsv);

/// x * factor.
torch::Tensor adjust_brightness(const torch::Tensor& x, const torch::Tensor& factor);
/// Blend towards the per-image mean gray level: mean + factor * (x - mean).
torch::Tensor adjust_contrast(const torch::Tensor& x, const torch::Tensor& factor);
/// Blend towards the per-pixel gray image (RGB only).
torch::Tensor adjust_saturation(const torch::Tensor& x, const torch::Tensor& factor);
/// Rotates hue by `turns` (fraction of a full turn, e.g. 0.5 == 180 degrees). RGB only.
torch::Tensor rotate_hue(const torch::Tensor& x, const torch::Tensor& turns);

/// Separable Gaussian blur with reflect padding; kernel radius ceil(3 * max sigma).
/// Samples with sigma <= 0 are passed through unchanged.
torch::Tensor gaussian_blur(const torch::Tensor& x, const torch::Tensor& sigma);

/// Bilinear resample of the square window [y0, y0+side) x [x0, x0+side) (in pixels, per
/// sample) back to the full H x W grid. Used for random resized crops.
torch::Tensor resized_crop(const torch::Tensor& x, const torch::Tensor& x0, const torch::Tensor& y0,
                           const torch::Tensor& side);

}  // namespace privdistil::imageops
