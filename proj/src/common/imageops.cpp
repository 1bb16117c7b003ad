#include "privdistil/common/imageops.hpp"

#include <cmath>

#include "privdistil/common/error.hpp"

namespace privdistil::imageops {

namespace F = torch::nn::functional;

namespace {

torch::Tensor per_sample(const torch::Tensor& v, const torch::Tensor& like) {
  return v.to(like.dtype()).reshape({-1, 1, 1, 1});
}

void require_rgb(const torch::Tensor& x, const char* op) {
  if (x.dim() != 4 || x.size(1) != 3) throw ShapeError(std::string(op) + " requires a B x 3 x H x W tensor");
}

}  // namespace

torch::Tensor rgb_to_gray(const torch::Tensor& rgb) {
  require_rgb(rgb, "rgb_to_gray");
  return (0.299 * rgb.select(1, 0) + 0.587 * rgb.select(1, 1) + 0.114 * rgb.select(1, 2)).unsqueeze(1);
}

torch::Tensor rgb_to_hsv(const torch::Tensor& rgb) {
  require_rgb(rgb, "rgb_to_hsv");
  auto r = rgb.select(1, 0);
  auto g = rgb.select(1, 1);
  auto b = rgb.select(1, 2);
  auto maxc = std::get<0>(rgb.max(1));
  auto minc = std::get<0>(rgb.min(1));
  auto eqc = maxc == minc;
  auto cr = maxc - minc;
  auto ones = torch::ones_like(maxc);
  auto s = cr / torch::where(eqc, ones, maxc);
  auto crd = torch::where(eqc, ones, cr);
  auto rc = (maxc - r) / crd;
  auto gc = (maxc - g) / crd;
  auto bc = (maxc - b) / crd;
  auto hr = (maxc == r).to(rgb.dtype()) * (bc - gc);
  auto hg = ((maxc == g) & (maxc != r)).to(rgb.dtype()) * (2.0 + rc - bc);
  auto hb = ((maxc != g) & (maxc != r)).to(rgb.dtype()) * (4.0 + gc - rc);
  auto h = (hr + hg + hb) / 6.0 + 1.0;
  h = h - torch::floor(h);
  return torch::stack({h, s, maxc}, 1);
}

torch::Tensor hsv_to_rgb(const torch::Tensor& hsv) {
  auto h = hsv.select(1, 0);
  auto s = hsv.select(1, 1);
  auto v = hsv.select(1, 2);
  auto h6 = h * 6.0;
  auto i = torch::floor(h6);
  auto f = h6 - i;
  auto sector = torch::remainder(i, 6.0).to(torch::kLong);
  auto p = (v * (1.0 - s)).clamp(0.0, 1.0);
  auto q = (v * (1.0 - s * f)).clamp(0.0, 1.0);
  auto t = (v * (1.0 - s * (1.0 - f))).clamp(0.0, 1.0);
  // (r, g, b) per sector 0..5: (v,t,p) (q,v,p) (p,v,t) (p,q,v) (t,p,v) (v,p,q)
  auto pick = [&](const std::array<const torch::Tensor*, 6>& opts) {
    auto out = torch::zeros_like(v);
    for (int64_t k = 0; k < 6; ++k) out = torch::where(sector == k, *opts[static_cast<size_t>(k)], out);
    return out;
  };
  auto r = pick({&v, &q, &p, &p, &t, &v});
  auto g = pick({&t, &v, &v, &q, &p, &p});
  auto b = pick({&p, &p, &t, &v, &v, &q});
  return torch::stack({r, g, b}, 1);
}

torch::Tensor adjust_brightness(const torch::Tensor& x, const torch::Tensor& factor) {
  return (x * per_sample(factor, x)).clamp(0.0, 1.0);
}

torch::Tensor adjust_contrast(const torch::Tensor& x, const torch::Tensor& factor) {
  auto gray = x.size(1) == 3 ? rgb_to_gray(x) : x;
  auto mean = gray.mean({1, 2, 3}, /*keepdim=*/true);
  auto f = per_sample(factor, x);
  return (mean + f * (x - mean)).clamp(0.0, 1.0);
}

torch::Tensor adjust_saturation(const torch::Tensor& x, const torch::Tensor& factor) {
  require_rgb(x, "adjust_saturation");
  auto gray = rgb_to_gray(x);
  auto f = per_sample(factor, x);
  return (gray + f * (x - gray)).clamp(0.0, 1.0);
}

torch::Tensor rotate_hue(const torch::Tensor& x, const torch::Tensor& turns) {
  require_rgb(x, "rotate_hue");
  auto hsv = rgb_to_hsv(x);
  auto h = hsv.select(1, 0) + turns.to(x.dtype()).reshape({-1, 1, 1});
  h = h - torch::floor(h);
  auto rotated = torch::stack({h, hsv.select(1, 1), hsv.select(1, 2)}, 1);
  return hsv_to_rgb(rotated).clamp(0.0, 1.0);
}

torch::Tensor gaussian_blur(const torch::Tensor& x, const torch::Tensor& sigma) {
  const int64_t batch = x.size(0);
  const int64_t channels = x.size(1);
  const double max_sigma = sigma.numel() == 0 ? 0.0 : sigma.max().item<double>();
  if (max_sigma <= 0.0) return x.clone();
  int64_t radius = static_cast<int64_t>(std::ceil(3.0 * max_sigma));
  radius = std::min<int64_t>(radius, std::min(x.size(2), x.size(3)) - 1);
  const int64_t k = 2 * radius + 1;

  auto offs = torch::arange(-radius, radius + 1, x.options()).reshape({1, k});
  auto sg = sigma.to(x.dtype()).reshape({batch, 1});
  auto active = sg > 0;
  auto safe = torch::where(active, sg, torch::ones_like(sg));
  auto kern = torch::exp(-0.5 * (offs / safe).pow(2));
  kern = kern / kern.sum(1, true);
  auto delta = (offs == 0).to(x.dtype()).expand({batch, k});
  kern = torch::where(active.expand({batch, k}), kern, delta);
  // one kernel per (sample, channel) plane
  auto plane_kern = kern.repeat_interleave(channels, 0);

  auto planes = x.reshape({1, batch * channels, x.size(2), x.size(3)});
  planes = F::pad(planes, F::PadFuncOptions({radius, radius, radius, radius}).mode(torch::kReflect));
  planes = F::conv2d(planes, plane_kern.reshape({batch * channels, 1, k, 1}),
                     F::Conv2dFuncOptions().groups(batch * channels));
  planes = F::conv2d(planes, plane_kern.reshape({batch * channels, 1, 1, k}),
                     F::Conv2dFuncOptions().groups(batch * channels));
  auto out = planes.reshape(x.sizes()).clamp(0.0, 1.0);
  // untouched samples are copied verbatim rather than passed through the delta kernel
  auto keep = (~active).reshape({batch, 1, 1, 1});
  return torch::where(keep, x, out);
}

torch::Tensor resized_crop(const torch::Tensor& x, const torch::Tensor& x0, const torch::Tensor& y0,
                           const torch::Tensor& side) {
  const int64_t batch = x.size(0);
  const double h = static_cast<double>(x.size(2));
  const double w = static_cast<double>(x.size(3));
  auto opts = x.options();
  auto s = side.to(x.dtype());
  // affine map from output normalised coords to input normalised coords (align_corners=false)
  auto theta = torch::zeros({batch, 2, 3}, opts);
  theta.select(1, 0).select(1, 0).copy_(s / w);
  theta.select(1, 1).select(1, 1).copy_(s / h);
  theta.select(1, 0).select(1, 2).copy_((2.0 * x0.to(x.dtype()) + s) / w - 1.0);
  theta.select(1, 1).select(1, 2).copy_((2.0 * y0.to(x.dtype()) + s) / h - 1.0);
  auto grid = F::affine_grid(theta, x.sizes(), /*align_corners=*/false);
  return F::grid_sample(x, grid,
                        F::GridSampleFuncOptions().mode(torch::kBilinear).padding_mode(torch::kReflection).align_corners(false))
      .clamp(0.0, 1.0);
}

}  // namespace privdistil::imageops
