#include "privdistil/train/augment.hpp"

#include <cmath>

#include "privdistil/common/error.hpp"
#include "privdistil/common/imageops.hpp"
#include "privdistil/common/json_reader.hpp"

namespace privdistil::train {

AugmentationConfig AugmentationConfig::identity() {
  AugmentationConfig c;
  c.crop_scale_min = 1.0;
  c.crop_scale_max = 1.0;
  c.hflip_p = 0.0;
  c.vflip_p = 0.0;
  c.jitter_p = 0.0;
  c.blur_p = 0.0;
  c.privileged_augment = false;
  return c;
}

void AugmentationConfig::validate() const {
  for (double p : {hflip_p, vflip_p, jitter_p, blur_p}) {
    if (p < 0.0 || p > 1.0) throw ConfigError("augmentation probabilities must lie in [0, 1]");
  }
  if (!(crop_scale_min > 0.0) || crop_scale_min > crop_scale_max || crop_scale_max > 1.0) {
    throw ConfigError("augmentation crop scale must satisfy 0 < min <= max <= 1");
  }
  if (brightness < 0.0 || brightness > 1.0 || contrast < 0.0 || contrast > 1.0 || saturation < 0.0 ||
      saturation > 1.0) {
    throw ConfigError("augmentation brightness, contrast and saturation strengths must lie in [0, 1]");
  }
  if (hue < 0.0 || hue > 0.5) throw ConfigError("augmentation hue strength must lie in [0, 0.5]");
  if (blur_sigma_min < 0.0 || blur_sigma_min > blur_sigma_max) {
    throw ConfigError("augmentation blur sigma range must satisfy 0 <= min <= max");
  }
}

torch::Tensor augment_batch(const torch::Tensor& batch, const AugmentationConfig& cfg, Rng& rng, bool photometric) {
  if (batch.dim() != 4) throw ShapeError("augment_batch expects an N x C x H x W batch");
  const int64_t n = batch.size(0);
  const int64_t side_px = std::min(batch.size(2), batch.size(3));
  const bool rgb = batch.size(1) == 3;

  std::vector<double> x0(n), y0(n), side(n), bright(n, 1.0), contr(n, 1.0), sat(n, 1.0), hue(n, 0.0), sigma(n, 0.0);
  std::vector<uint8_t> hflip(n), vflip(n);
  bool any_crop = false, any_hflip = false, any_vflip = false, any_jitter = false, any_blur = false;

  for (int64_t i = 0; i < n; ++i) {
    const double scale = rng.uniform(cfg.crop_scale_min, cfg.crop_scale_max);
    side[i] = std::sqrt(scale) * static_cast<double>(side_px);
    x0[i] = rng.uniform(0.0, static_cast<double>(batch.size(3)) - side[i]);
    y0[i] = rng.uniform(0.0, static_cast<double>(batch.size(2)) - side[i]);
    any_crop = any_crop || scale < 1.0;
    hflip[i] = rng.bernoulli(cfg.hflip_p);
    vflip[i] = rng.bernoulli(cfg.vflip_p);
    any_hflip = any_hflip || hflip[i];
    any_vflip = any_vflip || vflip[i];
    if (!photometric) continue;
    if (rng.bernoulli(cfg.jitter_p)) {
      bright[i] = rng.uniform(1.0 - cfg.brightness, 1.0 + cfg.brightness);
      contr[i] = rng.uniform(1.0 - cfg.contrast, 1.0 + cfg.contrast);
      sat[i] = rng.uniform(1.0 - cfg.saturation, 1.0 + cfg.saturation);
      hue[i] = rng.uniform(-cfg.hue, cfg.hue);
      any_jitter = true;
    }
    if (rng.bernoulli(cfg.blur_p)) {
      sigma[i] = rng.uniform(cfg.blur_sigma_min, cfg.blur_sigma_max);
      any_blur = any_blur || sigma[i] > 0.0;
    }
  }

  auto opts = torch::TensorOptions().dtype(batch.scalar_type());
  auto as_tensor = [&](const std::vector<double>& v) { return torch::tensor(v, torch::kFloat64).to(opts.dtype()); };
  auto as_mask = [&](const std::vector<uint8_t>& v) {
    return torch::tensor(std::vector<int64_t>(v.begin(), v.end()), torch::kLong).to(torch::kBool).view({n, 1, 1, 1});
  };

  auto x = batch;
  if (any_crop) x = imageops::resized_crop(x, as_tensor(x0), as_tensor(y0), as_tensor(side));
  if (any_hflip) x = torch::where(as_mask(hflip), x.flip({3}), x);
  if (any_vflip) x = torch::where(as_mask(vflip), x.flip({2}), x);
  if (any_jitter) {
    x = imageops::adjust_brightness(x, as_tensor(bright));
    x = imageops::adjust_contrast(x, as_tensor(contr));
    if (rgb) {
      x = imageops::adjust_saturation(x, as_tensor(sat));
      x = imageops::rotate_hue(x, as_tensor(hue));
    }
  }
  if (any_blur) x = imageops::gaussian_blur(x, as_tensor(sigma));
  return x.contiguous();
}

ImageTensor augment(const ImageTensor& image, const AugmentationConfig& cfg, Rng& rng, bool photometric) {
  return ImageTensor(augment_batch(image.data().unsqueeze(0), cfg, rng, photometric).squeeze(0));
}

nlohmann::json to_json(const AugmentationConfig& c) {
  return {{"crop_scale", {c.crop_scale_min, c.crop_scale_max}},
          {"hflip_p", c.hflip_p},
          {"vflip_p", c.vflip_p},
          {"jitter_p", c.jitter_p},
          {"brightness", c.brightness},
          {"contrast", c.contrast},
          {"saturation", c.saturation},
          {"hue", c.hue},
          {"blur_p", c.blur_p},
          {"blur_sigma", {c.blur_sigma_min, c.blur_sigma_max}},
          {"privileged_augment", c.privileged_augment}};
}

AugmentationConfig augmentation_config_from_json(const nlohmann::json& j, const std::string& path) {
  JsonReader r(j, path);
  AugmentationConfig c;
  auto range = [&](const std::string& key, double& lo, double& hi) {
    auto v = r.optional<std::vector<double>>(key, {lo, hi});
    if (v.size() != 2) throw ConfigError("field \"" + r.field_path(key) + "\" must be a [min, max] pair");
    lo = v[0];
    hi = v[1];
  };
  range("crop_scale", c.crop_scale_min, c.crop_scale_max);
  c.hflip_p = r.optional<double>("hflip_p", c.hflip_p);
  c.vflip_p = r.optional<double>("vflip_p", c.vflip_p);
  c.jitter_p = r.optional<double>("jitter_p", c.jitter_p);
  c.brightness = r.optional<double>("brightness", c.brightness);
  c.contrast = r.optional<double>("contrast", c.contrast);
  c.saturation = r.optional<double>("saturation", c.saturation);
  c.hue = r.optional<double>("hue", c.hue);
  c.blur_p = r.optional<double>("blur_p", c.blur_p);
  range("blur_sigma", c.blur_sigma_min, c.blur_sigma_max);
  c.privileged_augment = r.optional<bool>("privileged_augment", c.privileged_augment);
  r.finish();
  c.validate();
  return c;
}

}  // namespace privdistil::train
