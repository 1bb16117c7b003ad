#pragma once

#include <torch/torch.h>

#include <cstdint>
#include <vector>

#include <json.hpp>

#include "privdistil/datamodel/shift.hpp"
#include "privdistil/sslcore/networks.hpp"

namespace privdistil::evalkit {

struct ProbeConfig {
  int64_t epochs = 20;
  double lr = 1e-3;
  int64_t batch_size = 64;
  uint64_t seed = 0;

  void validate() const;
  bool operator==(const ProbeConfig&) const = default;
};

struct ProbeResult {
  double accuracy = 0.0;
  std::vector<double> per_class;               // recall per class; NaN for classes with no support
  std::vector<int64_t> support;                // test samples per class
  std::vector<std::vector<int64_t>> confusion;  // [true][predicted]
};

/// Representations of a frozen encoder (inference mode, no gradient), in chunks.
torch::Tensor extract_features(sslcore::Encoder& encoder, const torch::Tensor& images);

/// Single dense softmax layer trained with Adam on features standardised by the training
/// statistics. The standardisation is folded into the returned layer, which therefore
/// acts on raw features. Throws ArgumentError if a class has no training sample.
torch::nn::Linear fit_probe(const torch::Tensor& features, const torch::Tensor& labels, int64_t class_count,
                            const ProbeConfig& cfg);

ProbeResult evaluate_head(torch::nn::Linear& head, const torch::Tensor& features, const torch::Tensor& labels,
                          int64_t class_count);

/// Builds the result (accuracy, per-class recall, confusion) from predictions.
ProbeResult score_predictions(const torch::Tensor& predicted, const torch::Tensor& labels, int64_t class_count);

struct LinearProbe {
  torch::nn::Linear head{nullptr};
  ProbeResult test;
};

/// Fits a probe on frozen-encoder features of the training images and scores it on the
/// test images. The encoder's weights are not modified.
LinearProbe linear_probe(sslcore::Encoder& encoder, const torch::Tensor& train_images, const torch::Tensor& train_labels,
                         const torch::Tensor& test_images, const torch::Tensor& test_labels, int64_t class_count,
                         const ProbeConfig& cfg);

struct OodResult {
  ProbeResult in_distribution;
  ProbeResult shifted;
  double drop = 0.0;  // in-distribution accuracy minus shifted accuracy
};

/// Scores an already trained probe on the test images before and after a domain shift.
OodResult ood_eval(sslcore::Encoder& encoder, torch::nn::Linear& head, const torch::Tensor& test_images,
                   const torch::Tensor& test_labels, int64_t class_count, const datamodel::ShiftParams& shift);

/// Photometric shift used for out-of-distribution evaluation: hue +25 degrees, brightness
/// x0.8, contrast x1.2, blur sigma 0.8.
datamodel::ShiftParams ood_shift_preset();

nlohmann::json to_json(const ProbeResult& r);
nlohmann::json to_json(const ProbeConfig& c);
ProbeConfig probe_config_from_json(const nlohmann::json& j, const std::string& path);

}  // namespace privdistil::evalkit
