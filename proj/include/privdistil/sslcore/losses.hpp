#pragma once

#include <torch/torch.h>

#include <string>
#include <vector>

#include <json.hpp>

#include "privdistil/sslcore/networks.hpp"

namespace privdistil::sslcore {

struct VicregParams {
  double lambda_inv = 25.0;
  double mu_var = 25.0;
  double nu_cov = 1.0;
  double gamma = 1.0;
  double eps = 1e-4;
  bool operator==(const VicregParams&) const = default;
};

struct InfoNceParams {
  double tau = 0.1;
  bool operator==(const InfoNceParams&) const = default;
};

struct LossKind {
  enum class Type { vicreg, infonce };
  Type type = Type::vicreg;
  VicregParams vicreg;
  InfoNceParams infonce;

  static LossKind make_vicreg(VicregParams p = {}) { return {Type::vicreg, p, {}}; }
  static LossKind make_infonce(InfoNceParams p = {}) { return {Type::infonce, {}, p}; }

  std::string name() const { return type == Type::vicreg ? "vicreg" : "infonce"; }
  void validate() const;
  bool operator==(const LossKind&) const = default;
};

struct LossComponent {
  std::string name;
  double weight = 1.0;
  torch::Tensor value;  // scalar
};

/// Loss of one branch pair. `total` is the weighted sum of `components`.
struct PairLoss {
  std::string label;  // e.g. "v1-v2", "v1-priv"
  torch::Tensor total;
  std::vector<LossComponent> components;

  /// sum(weight * value), recomputed in double from the components.
  double recomposed() const;
};

/// Objective value plus per-pair breakdown; `total` is the sum of the pair totals and
/// carries the autograd graph.
struct LossBreakdown {
  torch::Tensor total;
  std::vector<PairLoss> pairs;

  double total_value() const { return total.item<double>(); }
  double recomposed() const;
  const PairLoss& pair(const std::string& label) const;
};

/// invariance = mean squared difference over all entries;
/// variance = mean_d relu(gamma - sqrt(var_d + eps)), averaged over the two branches;
/// covariance = sum of squared off-diagonal covariances / D, summed over both branches.
/// Variances and covariances use the unbiased (N - 1) estimator.
/// total = lambda_inv * invariance + mu_var * variance + nu_cov * covariance.
PairLoss vicreg_loss(const torch::Tensor& za, const torch::Tensor& zb, const VicregParams& p,
                     const std::string& label = "a-b");

/// Symmetric InfoNCE with cosine-similarity logits / tau. Components "a_to_b" and
/// "b_to_a" (mean cross-entropy per direction) each carry weight 0.5.
PairLoss infonce_loss(const torch::Tensor& za, const torch::Tensor& zb, const InfoNceParams& p,
                      const std::string& label = "a-b");

PairLoss pair_loss(const torch::Tensor& za, const torch::Tensor& zb, const LossKind& kind, const std::string& label);

/// Two-branch objective. For the unprivileged variant `a` and `b` are the same tower.
LossBreakdown siamese_objective(const torch::Tensor& branch_a, const torch::Tensor& branch_b, Tower& a, Tower& b,
                                const LossKind& kind, const std::string& label = "v1-v2");

/// L(z1, z2) + L(z1, zp) + L(z2, zp); the two views go through `primary`, the privileged
/// batch through `privileged`.
LossBreakdown trident_objective(const torch::Tensor& view1, const torch::Tensor& view2,
                                const torch::Tensor& privileged_batch, Tower& primary, Tower& privileged,
                                const LossKind& kind);

/// Cross-entropy of a dense softmax head on encoder representations.
LossBreakdown supervised_objective(const torch::Tensor& images, const torch::Tensor& labels, Encoder& encoder,
                                   torch::nn::Linear& head);

nlohmann::json to_json(const LossKind& k);
LossKind loss_kind_from_json(const nlohmann::json& j, const std::string& path);

}  // namespace privdistil::sslcore
