#pragma once

#include <torch/torch.h>

#include <cstdint>
#include <filesystem>
#include <memory>
#include <string>
#include <vector>

#include <json.hpp>

#include "privdistil/common/image.hpp"
#include "privdistil/train/checkpoint.hpp"

namespace privdistil::translate {

enum class TranslatorMode { paired, unpaired };

std::string to_string(TranslatorMode m);
TranslatorMode parse_translator_mode(const std::string& s);

struct TranslateConfig {
  TranslatorMode mode = TranslatorMode::paired;
  int64_t width = 32;
  int64_t down_stages = 3;
  int64_t res_blocks = 3;
  double lr = 2e-3;
  double beta1 = 0.5;
  double beta2 = 0.999;
  int64_t steps = 1500;
  int64_t batch_size = 8;
  double lambda_rec = 100.0;
  double lambda_cyc = 10.0;
  double lambda_id = 5.0;
  double lambda_adv = 1.0;
  bool adversarial = false;  // paired mode only; unpaired training is always adversarial
  double held_out_fraction = 0.1;
  uint64_t seed = 0;

  /// Defaults for unpaired (cycle-consistent) training.
  static TranslateConfig unpaired_defaults();
  void validate() const;
  bool operator==(const TranslateConfig&) const = default;
};

/// Encoder-decoder generator: input conv, `down_stages` stride-2 convs, residual blocks,
/// `down_stages` upsampling convs with additive skips from the matching downsampling
/// level, output conv and sigmoid. Instance normalisation keeps outputs per-image.
class GeneratorImpl : public torch::nn::Module {
 public:
  GeneratorImpl(int64_t in_channels, int64_t out_channels, const TranslateConfig& cfg);
  torch::Tensor forward(const torch::Tensor& x);
  torch::nn::Conv2d& output_conv() { return out_; }

 private:
  torch::nn::Conv2d in_{nullptr}, out_{nullptr};
  torch::nn::InstanceNorm2d in_norm_{nullptr};
  std::vector<torch::nn::Conv2d> down_, up_, res_a_, res_b_;
  std::vector<torch::nn::InstanceNorm2d> down_norm_, up_norm_, res_norm_a_, res_norm_b_;
};
TORCH_MODULE(Generator);

/// Patch-level least-squares discriminator; outputs one score per receptive-field patch.
class DiscriminatorImpl : public torch::nn::Module {
 public:
  DiscriminatorImpl(int64_t in_channels, int64_t width);
  torch::Tensor forward(const torch::Tensor& x);

 private:
  torch::nn::Conv2d c1_{nullptr}, c2_{nullptr}, c3_{nullptr};
  torch::nn::InstanceNorm2d n2_{nullptr};
};
TORCH_MODULE(Discriminator);

struct TranslatorStep {
  int64_t step = 0;
  double generator = 0.0;
  double discriminator = 0.0;
  double reconstruction = 0.0;  // paired L1
  double cycle = 0.0;           // unpaired, both directions
  double identity = 0.0;
};

/// Trained generator(s). Paired: one generator (plus disc_b when adversarial). Unpaired:
/// a->b and b->a generators plus one discriminator per domain.
struct TranslatorParams {
  TranslateConfig config;
  int64_t in_channels = 3;
  int64_t out_channels = 1;
  int64_t height = 0;
  int64_t width = 0;
  Generator generator{nullptr};
  Generator reverse{nullptr};
  Discriminator disc_a{nullptr};
  Discriminator disc_b{nullptr};
  std::vector<TranslatorStep> history;
  double held_out_mae = -1.0;  // paired mode; -1 when not measured

  /// Throws NumericError naming the first non-finite tensor.
  void check_finite() const;
};

/// Builds initialised (untrained) translator networks.
TranslatorParams init_translator(const TranslateConfig& cfg, int64_t in_channels, int64_t out_channels,
                                 int64_t height, int64_t width);

/// Supervised image-to-image training with L1 reconstruction (plus optional adversarial
/// term). A seeded held_out_fraction of pairs (at least one) is excluded from training
/// and used to report held_out_mae.
TranslatorParams train_paired_translator(const torch::Tensor& primary, const torch::Tensor& privileged,
                                         const TranslateConfig& cfg);

/// Cycle-consistent training between two unaligned image sets. Batches from each domain
/// are drawn independently. The identity term is used only when both domains have the
/// same channel count.
TranslatorParams train_unpaired_translator(const torch::Tensor& domain_a, const torch::Tensor& domain_b,
                                           const TranslateConfig& cfg);

/// Forward generator applied to one image (inference mode, no side effects).
ImageTensor translate(const TranslatorParams& params, const ImageTensor& image);
/// Batched form; N x C x H x W -> N x C' x H x W.
torch::Tensor translate_batch(const TranslatorParams& params, const torch::Tensor& batch);

train::Checkpoint translator_to_checkpoint(const TranslatorParams& params);
TranslatorParams translator_from_checkpoint(const train::Checkpoint& ck);
void save_translator(const TranslatorParams& params, const std::filesystem::path& path);
TranslatorParams load_translator(const std::filesystem::path& path);

nlohmann::json to_json(const TranslateConfig& c);
TranslateConfig translate_config_from_json(const nlohmann::json& j, const std::string& path);

}  // namespace privdistil::translate
