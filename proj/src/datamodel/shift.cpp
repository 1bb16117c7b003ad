#include "privdistil/datamodel/shift.hpp"

#include "privdistil/common/error.hpp"
#include "privdistil/common/imageops.hpp"
#include "privdistil/common/json_reader.hpp"

namespace privdistil::datamodel {

torch::Tensor apply_domain_shift(const torch::Tensor& batch, const ShiftParams& p) {
  if (batch.dim() != 4) throw ShapeError("apply_domain_shift expects an N x C x H x W batch");
  if (p.is_identity()) return batch.clone();
  if (p.hue_degrees != 0.0 && batch.size(1) != 3) throw ShapeError("hue shift requires a 3-channel image");
  const int64_t n = batch.size(0);
  auto opts = torch::TensorOptions().dtype(torch::kFloat64);
  auto x = batch.to(torch::kFloat64);
  if (p.hue_degrees != 0.0) x = imageops::rotate_hue(x, torch::full({n}, p.hue_degrees / 360.0, opts));
  if (p.brightness != 1.0) x = imageops::adjust_brightness(x, torch::full({n}, p.brightness, opts));
  if (p.contrast != 1.0) x = imageops::adjust_contrast(x, torch::full({n}, p.contrast, opts));
  if (p.blur_sigma > 0.0) x = imageops::gaussian_blur(x, torch::full({n}, p.blur_sigma, opts));
  return x.clamp(0.0, 1.0).to(torch::kFloat32).contiguous();
}

ImageTensor apply_domain_shift(const ImageTensor& image, const ShiftParams& params) {
  if (params.is_identity()) return ImageTensor(image.data().clone());
  return ImageTensor(apply_domain_shift(image.data().unsqueeze(0), params).squeeze(0));
}

nlohmann::json to_json(const ShiftParams& p) {
  return {{"hue_degrees", p.hue_degrees}, {"brightness", p.brightness}, {"contrast", p.contrast}, {"blur_sigma", p.blur_sigma}};
}

ShiftParams shift_params_from_json(const nlohmann::json& j) {
  JsonReader r(j, "shift");
  ShiftParams p;
  p.hue_degrees = r.optional<double>("hue_degrees", p.hue_degrees);
  p.brightness = r.optional<double>("brightness", p.brightness);
  p.contrast = r.optional<double>("contrast", p.contrast);
  p.blur_sigma = r.optional<double>("blur_sigma", p.blur_sigma);
  r.finish();
  if (p.brightness < 0.0 || p.contrast < 0.0 || p.blur_sigma < 0.0) {
    throw ConfigError("shift brightness, contrast and blur_sigma must be non-negative");
  }
  return p;
}

}  // namespace privdistil::datamodel
