#include "privdistil/evalkit/saliency.hpp"

#include "privdistil/common/error.hpp"
#include "privdistil/common/image.hpp"

namespace privdistil::evalkit {

namespace F = torch::nn::functional;

SaliencyMap guided_gradcam(sslcore::CamNetwork& net, torch::nn::Linear& head, const torch::Tensor& image,
                           int64_t target) {
  if (image.dim() != 3) throw ShapeError("guided_gradcam expects a C x H x W image");
  if (target < 0 || target >= head->options.out_features()) throw ArgumentError("target class out of range");
  const int64_t h = image.size(1);
  const int64_t w = image.size(2);
  const auto x = image.unsqueeze(0).detach().to(head->weight.scalar_type());

  // class-activation map from the last conv stage
  auto acts = net.conv_features(x).detach();
  if (acts.dim() != 4) throw ShapeError("network has no convolutional feature map");
  acts.requires_grad_(true);
  auto score = head->forward(net.from_features(acts)).select(1, target).sum();
  auto grads = torch::autograd::grad({score}, {acts}, {}, false, false, true)[0];
  if (!grads.defined()) grads = torch::zeros_like(acts);
  auto weights = grads.mean({2, 3}, true);
  auto cam = torch::relu((weights * acts).sum(1, true)).detach();
  cam = F::interpolate(cam, F::InterpolateFuncOptions()
                                .size(std::vector<int64_t>{h, w})
                                .mode(torch::kBilinear)
                                .align_corners(false));
  const double peak = cam.max().item<double>();
  if (peak > 0) cam = cam / peak;

  // guided backpropagation to the input
  auto xg = x.clone().requires_grad_(true);
  net.set_guided(true);
  torch::Tensor guided;
  try {
    auto gscore = head->forward(net.from_features(net.conv_features(xg))).select(1, target).sum();
    guided = torch::autograd::grad({gscore}, {xg}, {}, false, false, true)[0];
  } catch (...) {
    net.set_guided(false);
    throw;
  }
  net.set_guided(false);
  if (!guided.defined()) guided = torch::zeros_like(xg);

  SaliencyMap out;
  out.target = target;
  out.map = torch::relu(cam * guided.sum(1, true)).squeeze(0).squeeze(0).to(torch::kFloat64).contiguous();
  return out;
}

std::optional<double> nucleus_focus_score(const torch::Tensor& map, const torch::Tensor& mask) {
  if (map.sizes() != mask.sizes()) throw ShapeError("saliency map and mask differ in shape");
  const auto m = map.to(torch::kFloat64);
  if ((m < 0).any().item<bool>()) throw ArgumentError("saliency map must be non-negative");
  const double total = m.sum().item<double>();
  if (!(total > 0)) return std::nullopt;
  const double inside = (m * (mask > 0).to(torch::kFloat64)).sum().item<double>();
  return inside / total;
}

void write_saliency_png(const SaliencyMap& map, const std::filesystem::path& path) {
  auto m = map.map.to(torch::kFloat32);
  const double peak = m.max().item<double>();
  if (peak > 0) m = m / peak;
  write_png(path, ImageTensor(m.clamp(0.0, 1.0).unsqueeze(0)));
}

}  // namespace privdistil::evalkit
