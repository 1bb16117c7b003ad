#include "privdistil/sslcore/networks.hpp"

#include "privdistil/common/error.hpp"
#include "privdistil/common/json_reader.hpp"

namespace privdistil::sslcore {

namespace nn = torch::nn;

namespace {

struct GuidedRelu : torch::autograd::Function<GuidedRelu> {
  static torch::Tensor forward(torch::autograd::AutogradContext* ctx, const torch::Tensor& x) {
    ctx->save_for_backward({x});
    return x.clamp_min(0);
  }
  static torch::autograd::variable_list backward(torch::autograd::AutogradContext* ctx,
                                                 torch::autograd::variable_list grads) {
    const auto x = ctx->get_saved_variables()[0];
    const auto& g = grads[0];
    return {g * ((x > 0) & (g > 0)).to(g.scalar_type())};
  }
};

constexpr int64_t kResnetBlocks[4] = {3, 4, 6, 3};
constexpr int64_t kResnetMid[4] = {64, 128, 256, 512};

}  // namespace

torch::Tensor relu(const torch::Tensor& x, bool guided) { return guided ? GuidedRelu::apply(x) : torch::relu(x); }

void EncoderConfig::validate() const {
  if (in_channels != 1 && in_channels != 3) throw ConfigError("encoder.in_channels must be 1 or 3");
  if (embed_dim < 8) throw ConfigError("encoder.embed_dim must be at least 8");
  if (preset == "small_cnn") {
    if (widths.empty()) throw ConfigError("encoder.widths must not be empty");
    for (auto w : widths) {
      if (w < 1) throw ConfigError("encoder.widths entries must be positive");
    }
  } else if (preset == "resnet50") {
    if (embed_dim != 2048) throw ConfigError("encoder preset resnet50 requires embed_dim 2048");
  } else {
    throw ConfigError("unknown encoder.preset \"" + preset + "\" (expected small_cnn or resnet50)");
  }
}

void ProjectorConfig::validate(int64_t embed_dim) const {
  if (layers < 1) throw ConfigError("projector.layers must be at least 1");
  if (width * 4 < embed_dim) throw ConfigError("projector.width must be at least embed_dim / 4");
}

EncoderImpl::EncoderImpl(EncoderConfig config) : config_(std::move(config)) {
  config_.validate();
  if (config_.preset == "small_cnn") {
    int64_t c = config_.in_channels;
    for (size_t i = 0; i < config_.widths.size(); ++i) {
      const int64_t w = config_.widths[i];
      convs_.push_back(register_module("conv" + std::to_string(i),
                                       nn::Conv2d(nn::Conv2dOptions(c, w, 3).stride(2).padding(1))));
      norms_.push_back(register_module("bn" + std::to_string(i), nn::BatchNorm2d(w)));
      c = w;
    }
    fc_ = register_module("fc", nn::Linear(c, config_.embed_dim));
    return;
  }

  convs_.push_back(register_module(
      "stem", nn::Conv2d(nn::Conv2dOptions(config_.in_channels, 64, 7).stride(2).padding(3).bias(false))));
  norms_.push_back(register_module("stem_bn", nn::BatchNorm2d(64)));
  int64_t c = 64;
  for (int stage = 0; stage < 4; ++stage) {
    const int64_t mid = kResnetMid[stage];
    const int64_t out = mid * 4;
    for (int64_t b = 0; b < kResnetBlocks[stage]; ++b) {
      const int64_t stride = (b == 0 && stage > 0) ? 2 : 1;
      const std::string name = "layer" + std::to_string(stage + 1) + "_" + std::to_string(b);
      Bottleneck blk;
      blk.c1 = register_module(name + "_conv1", nn::Conv2d(nn::Conv2dOptions(c, mid, 1).bias(false)));
      blk.b1 = register_module(name + "_bn1", nn::BatchNorm2d(mid));
      blk.c2 = register_module(name + "_conv2",
                               nn::Conv2d(nn::Conv2dOptions(mid, mid, 3).stride(stride).padding(1).bias(false)));
      blk.b2 = register_module(name + "_bn2", nn::BatchNorm2d(mid));
      blk.c3 = register_module(name + "_conv3", nn::Conv2d(nn::Conv2dOptions(mid, out, 1).bias(false)));
      blk.b3 = register_module(name + "_bn3", nn::BatchNorm2d(out));
      if (b == 0) {
        blk.down = register_module(name + "_down", nn::Conv2d(nn::Conv2dOptions(c, out, 1).stride(stride).bias(false)));
        blk.down_bn = register_module(name + "_down_bn", nn::BatchNorm2d(out));
      }
      blocks_.push_back(blk);
      c = out;
    }
  }
}

torch::Tensor EncoderImpl::resnet_features(const torch::Tensor& x) {
  auto h = relu(norms_[0]->forward(convs_[0]->forward(x)), guided_);
  h = torch::max_pool2d(h, 3, 2, 1);
  for (auto& blk : blocks_) {
    auto y = relu(blk.b1->forward(blk.c1->forward(h)), guided_);
    y = relu(blk.b2->forward(blk.c2->forward(y)), guided_);
    y = blk.b3->forward(blk.c3->forward(y));
    auto skip = blk.down ? blk.down_bn->forward(blk.down->forward(h)) : h;
    h = relu(y + skip, guided_);
  }
  return h;
}

torch::Tensor EncoderImpl::conv_features(const torch::Tensor& x) {
  if (x.dim() != 4 || x.size(0) == 0) throw ShapeError("encoder expects a non-empty N x C x H x W batch");
  if (x.size(1) != config_.in_channels) {
    throw ShapeError("encoder expects " + std::to_string(config_.in_channels) + " input channels, got " +
                     std::to_string(x.size(1)));
  }
  if (config_.preset == "resnet50") return resnet_features(x);
  auto h = x;
  for (size_t i = 0; i < convs_.size(); ++i) h = relu(norms_[i]->forward(convs_[i]->forward(h)), guided_);
  return h;
}

torch::Tensor EncoderImpl::from_features(const torch::Tensor& features) {
  auto pooled = features.mean({2, 3});
  return fc_ ? fc_->forward(pooled) : pooled;
}

torch::Tensor EncoderImpl::forward(const torch::Tensor& x) { return from_features(conv_features(x)); }

ProjectorImpl::ProjectorImpl(int64_t in_dim, ProjectorConfig config) : config_(config) {
  config_.validate(in_dim);
  int64_t c = in_dim;
  for (int64_t i = 0; i < config_.layers; ++i) {
    linears_.push_back(register_module("fc" + std::to_string(i), nn::Linear(c, config_.width)));
    if (config_.batch_norm && i + 1 < config_.layers) {
      norms_.push_back(register_module("bn" + std::to_string(i), nn::BatchNorm1d(config_.width)));
    }
    c = config_.width;
  }
}

torch::Tensor ProjectorImpl::forward(const torch::Tensor& x) {
  auto h = x;
  for (size_t i = 0; i < linears_.size(); ++i) {
    h = linears_[i]->forward(h);
    if (i + 1 < linears_.size()) {
      if (config_.batch_norm) h = norms_[i]->forward(h);
      h = torch::relu(h);
    }
  }
  return h;
}

Tower::Tower(const EncoderConfig& enc, const ProjectorConfig& proj)
    : encoder(enc), projector(enc.embed_dim, proj) {}

std::vector<torch::Tensor> Tower::parameters() const {
  auto p = encoder->parameters();
  auto q = projector->parameters();
  p.insert(p.end(), q.begin(), q.end());
  return p;
}

void Tower::train(bool on) {
  encoder->train(on);
  projector->train(on);
}

void Tower::to(torch::Dtype dtype) {
  encoder->to(dtype);
  projector->to(dtype);
}

nlohmann::json to_json(const EncoderConfig& c) {
  return {{"preset", c.preset}, {"widths", c.widths}, {"in_channels", c.in_channels}, {"embed_dim", c.embed_dim}};
}

nlohmann::json to_json(const ProjectorConfig& c) {
  return {{"layers", c.layers}, {"width", c.width}, {"batch_norm", c.batch_norm}};
}

EncoderConfig encoder_config_from_json(const nlohmann::json& j, const std::string& path) {
  JsonReader r(j, path);
  EncoderConfig c;
  c.preset = r.optional<std::string>("preset", c.preset);
  if (c.preset == "resnet50") c.embed_dim = 2048;
  c.widths = r.optional<std::vector<int64_t>>("widths", c.widths);
  c.in_channels = r.optional<int64_t>("in_channels", c.in_channels);
  c.embed_dim = r.optional<int64_t>("embed_dim", c.embed_dim);
  r.finish();
  c.validate();
  return c;
}

ProjectorConfig projector_config_from_json(const nlohmann::json& j, const std::string& path) {
  JsonReader r(j, path);
  ProjectorConfig c;
  c.layers = r.optional<int64_t>("layers", c.layers);
  c.width = r.optional<int64_t>("width", c.width);
  c.batch_norm = r.optional<bool>("batch_norm", c.batch_norm);
  r.finish();
  return c;
}

}  // namespace privdistil::sslcore
