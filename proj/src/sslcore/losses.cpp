#include "privdistil/sslcore/losses.hpp"

#include "privdistil/common/error.hpp"
#include "privdistil/common/json_reader.hpp"

namespace privdistil::sslcore {

namespace F = torch::nn::functional;

void LossKind::validate() const {
  if (type == Type::vicreg) {
    if (vicreg.lambda_inv < 0 || vicreg.mu_var < 0 || vicreg.nu_cov < 0) {
      throw ConfigError("vicreg coefficients must be non-negative");
    }
    if (!(vicreg.gamma > 0)) throw ConfigError("vicreg gamma must be positive");
    if (!(vicreg.eps > 0)) throw ConfigError("vicreg eps must be positive");
  } else if (!(infonce.tau > 0)) {
    throw ConfigError("infonce tau must be positive");
  }
}

double PairLoss::recomposed() const {
  double s = 0.0;
  for (const auto& c : components) s += c.weight * c.value.item<double>();
  return s;
}

double LossBreakdown::recomposed() const {
  double s = 0.0;
  for (const auto& p : pairs) s += p.recomposed();
  return s;
}

const PairLoss& LossBreakdown::pair(const std::string& label) const {
  for (const auto& p : pairs) {
    if (p.label == label) return p;
  }
  throw ArgumentError("no loss pair labelled \"" + label + "\"");
}

namespace {

void check_pair(const torch::Tensor& za, const torch::Tensor& zb) {
  if (za.dim() != 2 || zb.dim() != 2) throw ShapeError("embeddings must be N x D matrices");
  if (za.sizes() != zb.sizes()) throw ShapeError("embedding batches differ in shape");
  if (za.size(0) < 2) throw ArgumentError("loss needs at least 2 rows per batch");
}

}  // namespace

PairLoss vicreg_loss(const torch::Tensor& za, const torch::Tensor& zb, const VicregParams& p,
                     const std::string& label) {
  check_pair(za, zb);
  const double n = static_cast<double>(za.size(0));
  const double d = static_cast<double>(za.size(1));

  auto inv = F::mse_loss(za, zb);
  auto stats = [&](const torch::Tensor& z) {
    auto zc = z - z.mean(0, true);
    auto var = (zc * zc).sum(0) / (n - 1);
    auto hinge = torch::relu(p.gamma - torch::sqrt(var + p.eps)).mean();
    auto cov = torch::mm(zc.t(), zc) / (n - 1);
    auto off = cov - torch::diag(torch::diag(cov));
    return std::make_pair(hinge, (off * off).sum() / d);
  };
  auto [va, ca] = stats(za);
  auto [vb, cb] = stats(zb);
  auto var = 0.5 * (va + vb);
  auto cov = ca + cb;

  PairLoss out;
  out.label = label;
  out.total = p.lambda_inv * inv + p.mu_var * var + p.nu_cov * cov;
  out.components = {{"invariance", p.lambda_inv, inv}, {"variance", p.mu_var, var}, {"covariance", p.nu_cov, cov}};
  return out;
}

PairLoss infonce_loss(const torch::Tensor& za, const torch::Tensor& zb, const InfoNceParams& p,
                      const std::string& label) {
  check_pair(za, zb);
  auto na = za.norm(2, 1, true);
  auto nb = zb.norm(2, 1, true);
  if ((na == 0).any().item<bool>() || (nb == 0).any().item<bool>()) {
    throw ArgumentError("InfoNCE is undefined for zero-norm embedding rows");
  }
  auto logits = torch::mm(za / na, (zb / nb).t()) / p.tau;
  auto target = torch::arange(za.size(0), torch::kLong);
  auto ab = F::cross_entropy(logits, target);
  auto ba = F::cross_entropy(logits.t(), target);

  PairLoss out;
  out.label = label;
  out.total = 0.5 * (ab + ba);
  out.components = {{"a_to_b", 0.5, ab}, {"b_to_a", 0.5, ba}};
  return out;
}

PairLoss pair_loss(const torch::Tensor& za, const torch::Tensor& zb, const LossKind& kind, const std::string& label) {
  return kind.type == LossKind::Type::vicreg ? vicreg_loss(za, zb, kind.vicreg, label)
                                             : infonce_loss(za, zb, kind.infonce, label);
}

LossBreakdown siamese_objective(const torch::Tensor& branch_a, const torch::Tensor& branch_b, Tower& a, Tower& b,
                                const LossKind& kind, const std::string& label) {
  if (branch_a.size(0) != branch_b.size(0)) throw ShapeError("siamese branches have different batch sizes");
  LossBreakdown out;
  out.pairs.push_back(pair_loss(a.embed(branch_a), b.embed(branch_b), kind, label));
  out.total = out.pairs[0].total;
  return out;
}

LossBreakdown trident_objective(const torch::Tensor& view1, const torch::Tensor& view2,
                                const torch::Tensor& privileged_batch, Tower& primary, Tower& privileged,
                                const LossKind& kind) {
  if (!privileged_batch.defined()) throw ArgumentError("trident objective needs a privileged batch");
  if (view1.size(0) != view2.size(0) || view1.size(0) != privileged_batch.size(0)) {
    throw ShapeError("trident branches have different batch sizes");
  }
  auto z1 = primary.embed(view1);
  auto z2 = primary.embed(view2);
  auto zp = privileged.embed(privileged_batch);
  LossBreakdown out;
  out.pairs.push_back(pair_loss(z1, z2, kind, "v1-v2"));
  out.pairs.push_back(pair_loss(z1, zp, kind, "v1-priv"));
  out.pairs.push_back(pair_loss(z2, zp, kind, "v2-priv"));
  out.total = out.pairs[0].total + out.pairs[1].total + out.pairs[2].total;
  return out;
}

LossBreakdown supervised_objective(const torch::Tensor& images, const torch::Tensor& labels, Encoder& encoder,
                                   torch::nn::Linear& head) {
  if (images.size(0) != labels.size(0)) throw ShapeError("image and label counts differ");
  auto ce = F::cross_entropy(head->forward(encoder->forward(images)), labels);
  LossBreakdown out;
  out.pairs.push_back({"supervised", ce, {{"cross_entropy", 1.0, ce}}});
  out.total = ce;
  return out;
}

nlohmann::json to_json(const LossKind& k) {
  if (k.type == LossKind::Type::vicreg) {
    return {{"kind", "vicreg"},
            {"lambda_inv", k.vicreg.lambda_inv},
            {"mu_var", k.vicreg.mu_var},
            {"nu_cov", k.vicreg.nu_cov},
            {"gamma", k.vicreg.gamma},
            {"eps", k.vicreg.eps}};
  }
  return {{"kind", "infonce"}, {"tau", k.infonce.tau}};
}

LossKind loss_kind_from_json(const nlohmann::json& j, const std::string& path) {
  JsonReader r(j, path);
  const auto kind = r.required<std::string>("kind");
  LossKind k;
  if (kind == "vicreg") {
    k.type = LossKind::Type::vicreg;
    k.vicreg.lambda_inv = r.optional<double>("lambda_inv", k.vicreg.lambda_inv);
    k.vicreg.mu_var = r.optional<double>("mu_var", k.vicreg.mu_var);
    k.vicreg.nu_cov = r.optional<double>("nu_cov", k.vicreg.nu_cov);
    k.vicreg.gamma = r.optional<double>("gamma", k.vicreg.gamma);
    k.vicreg.eps = r.optional<double>("eps", k.vicreg.eps);
  } else if (kind == "infonce") {
    k.type = LossKind::Type::infonce;
    k.infonce.tau = r.optional<double>("tau", k.infonce.tau);
  } else {
    throw ConfigError("field \"" + r.field_path("kind") + "\" must be vicreg or infonce");
  }
  r.finish();
  k.validate();
  return k;
}

}  // namespace privdistil::sslcore
