#pragma once

#include <json.hpp>

#include "privdistil/common/image.hpp"

namespace privdistil::datamodel {

/// Photometric domain shift. Applied in the order hue, brightness, contrast, blur.
struct ShiftParams {
  double hue_degrees = 0.0;
  double brightness = 1.0;
  double contrast = 1.0;
  double blur_sigma = 0.0;

  bool is_identity() const { return hue_degrees == 0.0 && brightness == 1.0 && contrast == 1.0 && blur_sigma == 0.0; }
  bool operator==(const ShiftParams&) const = default;
};

/// Label-preserving photometric shift; output clipped to [0,1]. Identity parameters
/// return a bitwise copy. Throws ShapeError for hue shifts on 1-channel images.
ImageTensor apply_domain_shift(const ImageTensor& image, const ShiftParams& params);

/// Same transform over an N x C x H x W batch (computed in float64, returned as float32).
torch::Tensor apply_domain_shift(const torch::Tensor& batch, const ShiftParams& params);

nlohmann::json to_json(const ShiftParams& p);
ShiftParams shift_params_from_json(const nlohmann::json& j);

}  // namespace privdistil::datamodel
