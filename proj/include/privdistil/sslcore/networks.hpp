#pragma once

#include <torch/torch.h>

#include <cstdint>
#include <string>
#include <vector>

#include <json.hpp>

namespace privdistil::sslcore {

/// Convolutional backbone settings. `small_cnn` stacks one stride-2 3x3 conv + BN + ReLU
/// per entry of `widths`; `resnet50` is the bottleneck ResNet-50 layout and fixes
/// embed_dim to 2048.
struct EncoderConfig {
  std::string preset = "small_cnn";
  std::vector<int64_t> widths{16, 32, 64, 128};
  int64_t in_channels = 3;
  int64_t embed_dim = 128;

  void validate() const;
  bool operator==(const EncoderConfig&) const = default;
};

struct ProjectorConfig {
  int64_t layers = 3;
  int64_t width = 256;
  bool batch_norm = true;

  void validate(int64_t embed_dim) const;
  bool operator==(const ProjectorConfig&) const = default;
};

/// Network that exposes its last convolutional activations, as needed by Grad-CAM.
/// In guided mode every ReLU back-propagates only positive gradients at positive inputs.
class CamNetwork {
 public:
  virtual ~CamNetwork() = default;
  /// N x C x H x W -> N x K x h x w activations of the last conv stage.
  virtual torch::Tensor conv_features(const torch::Tensor& x) = 0;
  /// Activations from conv_features -> N x D representations.
  virtual torch::Tensor from_features(const torch::Tensor& features) = 0;
  virtual void set_guided(bool guided) = 0;
};

/// ReLU whose backward pass is the guided-backprop rule when `guided` is set.
torch::Tensor relu(const torch::Tensor& x, bool guided);

class EncoderImpl : public torch::nn::Module, public CamNetwork {
 public:
  explicit EncoderImpl(EncoderConfig config);

  /// N x C x H x W -> N x embed_dim.
  torch::Tensor forward(const torch::Tensor& x);
  torch::Tensor conv_features(const torch::Tensor& x) override;
  torch::Tensor from_features(const torch::Tensor& features) override;
  void set_guided(bool guided) override { guided_ = guided; }

  const EncoderConfig& config() const { return config_; }
  torch::nn::Linear& fc() { return fc_; }

 private:
  struct Bottleneck {
    torch::nn::Conv2d c1{nullptr}, c2{nullptr}, c3{nullptr};
    torch::nn::BatchNorm2d b1{nullptr}, b2{nullptr}, b3{nullptr};
    torch::nn::Conv2d down{nullptr};
    torch::nn::BatchNorm2d down_bn{nullptr};
  };

  torch::Tensor resnet_features(const torch::Tensor& x);

  EncoderConfig config_;
  bool guided_ = false;
  std::vector<torch::nn::Conv2d> convs_;
  std::vector<torch::nn::BatchNorm2d> norms_;
  std::vector<Bottleneck> blocks_;
  torch::nn::Linear fc_{nullptr};
};
TORCH_MODULE(Encoder);

/// Dense head: Linear (+ BN + ReLU between layers, nothing after the last one).
class ProjectorImpl : public torch::nn::Module {
 public:
  ProjectorImpl(int64_t in_dim, ProjectorConfig config);
  torch::Tensor forward(const torch::Tensor& x);

  const ProjectorConfig& config() const { return config_; }
  std::vector<torch::nn::Linear>& linears() { return linears_; }

 private:
  ProjectorConfig config_;
  std::vector<torch::nn::Linear> linears_;
  std::vector<torch::nn::BatchNorm1d> norms_;
};
TORCH_MODULE(Projector);

/// Encoder plus projector; one tower per distinct input modality. Copies share modules.
struct Tower {
  Encoder encoder{nullptr};
  Projector projector{nullptr};

  Tower() = default;
  Tower(const EncoderConfig& enc, const ProjectorConfig& proj);

  torch::Tensor embed(const torch::Tensor& x) { return projector->forward(encoder->forward(x)); }
  std::vector<torch::Tensor> parameters() const;
  void train(bool on = true);
  void to(torch::Dtype dtype);
};

nlohmann::json to_json(const EncoderConfig& c);
nlohmann::json to_json(const ProjectorConfig& c);
EncoderConfig encoder_config_from_json(const nlohmann::json& j, const std::string& path);
ProjectorConfig projector_config_from_json(const nlohmann::json& j, const std::string& path);

}  // namespace privdistil::sslcore
