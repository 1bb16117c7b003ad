#include "privdistil/evalkit/probe.hpp"

#include <cmath>
#include <limits>

#include "privdistil/common/error.hpp"
#include "privdistil/common/json_reader.hpp"
#include "privdistil/common/rng.hpp"

namespace privdistil::evalkit {

void ProbeConfig::validate() const {
  if (epochs < 0) throw ConfigError("probe epochs must be non-negative");
  if (!(lr > 0)) throw ConfigError("probe lr must be positive");
  if (batch_size < 1) throw ConfigError("probe batch_size must be at least 1");
}

torch::Tensor extract_features(sslcore::Encoder& encoder, const torch::Tensor& images) {
  torch::NoGradGuard no_grad;
  const bool was_training = encoder->is_training();
  encoder->eval();
  std::vector<torch::Tensor> chunks;
  for (int64_t i = 0; i < images.size(0); i += 256) {
    chunks.push_back(encoder->forward(images.slice(0, i, std::min(images.size(0), i + 256))));
  }
  encoder->train(was_training);
  return torch::cat(chunks);
}

torch::nn::Linear fit_probe(const torch::Tensor& features, const torch::Tensor& labels, int64_t class_count,
                            const ProbeConfig& cfg) {
  cfg.validate();
  if (features.dim() != 2 || features.size(0) != labels.size(0)) throw ShapeError("probe features and labels disagree");
  const auto counts = torch::bincount(labels, {}, class_count);
  if (counts.size(0) != class_count) throw ArgumentError("probe labels exceed the class count");
  for (int64_t k = 0; k < class_count; ++k) {
    if (counts[k].item<int64_t>() == 0) throw ArgumentError("class " + std::to_string(k) + " is absent from the probe training split");
  }

  const auto x = features.detach().to(torch::kFloat32);
  const auto mu = x.mean(0);
  const auto sd = x.std(0) + 1e-6;
  const auto z = (x - mu) / sd;

  torch::manual_seed(cfg.seed);
  torch::nn::Linear head(x.size(1), class_count);
  torch::optim::Adam opt(head->parameters(), torch::optim::AdamOptions(cfg.lr));
  Rng rng = Rng(cfg.seed).derive("probe");
  const int64_t n = x.size(0);
  for (int64_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    const auto perm = torch::tensor(rng.permutation(n), torch::kLong);
    for (int64_t i = 0; i < n; i += cfg.batch_size) {
      auto idx = perm.slice(0, i, std::min(n, i + cfg.batch_size));
      auto loss = torch::nn::functional::cross_entropy(head->forward(z.index_select(0, idx)), labels.index_select(0, idx));
      opt.zero_grad();
      loss.backward();
      opt.step();
    }
  }

  torch::NoGradGuard no_grad;
  auto w = head->weight / sd.unsqueeze(0);
  auto b = head->bias - torch::mv(w, mu);
  head->weight.copy_(w);
  head->bias.copy_(b);
  head->eval();
  return head;
}

ProbeResult score_predictions(const torch::Tensor& predicted, const torch::Tensor& labels, int64_t class_count) {
  ProbeResult r;
  r.confusion.assign(class_count, std::vector<int64_t>(class_count, 0));
  r.support.assign(class_count, 0);
  const auto p = predicted.to(torch::kLong).contiguous();
  const auto y = labels.to(torch::kLong).contiguous();
  const int64_t* pp = p.data_ptr<int64_t>();
  const int64_t* yp = y.data_ptr<int64_t>();
  int64_t correct = 0;
  for (int64_t i = 0; i < y.numel(); ++i) {
    if (yp[i] < 0 || yp[i] >= class_count || pp[i] < 0 || pp[i] >= class_count) {
      throw ArgumentError("label or prediction outside [0, class_count)");
    }
    ++r.confusion[yp[i]][pp[i]];
    ++r.support[yp[i]];
    correct += yp[i] == pp[i];
  }
  r.accuracy = y.numel() > 0 ? static_cast<double>(correct) / static_cast<double>(y.numel()) : 0.0;
  for (int64_t k = 0; k < class_count; ++k) {
    r.per_class.push_back(r.support[k] > 0 ? static_cast<double>(r.confusion[k][k]) / static_cast<double>(r.support[k])
                                           : std::numeric_limits<double>::quiet_NaN());
  }
  return r;
}

ProbeResult evaluate_head(torch::nn::Linear& head, const torch::Tensor& features, const torch::Tensor& labels,
                          int64_t class_count) {
  torch::NoGradGuard no_grad;
  return score_predictions(head->forward(features.to(torch::kFloat32)).argmax(1), labels, class_count);
}

LinearProbe linear_probe(sslcore::Encoder& encoder, const torch::Tensor& train_images, const torch::Tensor& train_labels,
                         const torch::Tensor& test_images, const torch::Tensor& test_labels, int64_t class_count,
                         const ProbeConfig& cfg) {
  LinearProbe out;
  out.head = fit_probe(extract_features(encoder, train_images), train_labels, class_count, cfg);
  out.test = evaluate_head(out.head, extract_features(encoder, test_images), test_labels, class_count);
  return out;
}

OodResult ood_eval(sslcore::Encoder& encoder, torch::nn::Linear& head, const torch::Tensor& test_images,
                   const torch::Tensor& test_labels, int64_t class_count, const datamodel::ShiftParams& shift) {
  OodResult r;
  r.in_distribution = evaluate_head(head, extract_features(encoder, test_images), test_labels, class_count);
  const auto shifted = datamodel::apply_domain_shift(test_images, shift);
  r.shifted = evaluate_head(head, extract_features(encoder, shifted), test_labels, class_count);
  r.drop = r.in_distribution.accuracy - r.shifted.accuracy;
  return r;
}

datamodel::ShiftParams ood_shift_preset() { return {25.0, 0.8, 1.2, 0.8}; }

nlohmann::json to_json(const ProbeResult& r) {
  nlohmann::json per_class = nlohmann::json::array();
  for (double v : r.per_class) per_class.push_back(std::isnan(v) ? nlohmann::json(nullptr) : nlohmann::json(v));
  return {{"accuracy", r.accuracy}, {"per_class", per_class}, {"support", r.support}, {"confusion", r.confusion}};
}

nlohmann::json to_json(const ProbeConfig& c) {
  return {{"epochs", c.epochs}, {"lr", c.lr}, {"batch_size", c.batch_size}, {"seed", c.seed}};
}

ProbeConfig probe_config_from_json(const nlohmann::json& j, const std::string& path) {
  JsonReader r(j, path);
  ProbeConfig c;
  c.epochs = r.optional<int64_t>("epochs", c.epochs);
  c.lr = r.optional<double>("lr", c.lr);
  c.batch_size = r.optional<int64_t>("batch_size", c.batch_size);
  c.seed = r.optional<uint64_t>("seed", c.seed);
  r.finish();
  c.validate();
  return c;
}

}  // namespace privdistil::evalkit
