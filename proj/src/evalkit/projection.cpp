#include "privdistil/evalkit/projection.hpp"

#include <cmath>
#include <limits>
#include <map>

#include "privdistil/common/error.hpp"

namespace privdistil::evalkit {

Projection2D project_2d(const torch::Tensor& embeddings, const std::vector<int64_t>& labels, const std::string& method) {
  if (method != "pca") throw ConfigError("unknown projection method \"" + method + "\" (only pca is built in)");
  if (embeddings.dim() != 2) throw ShapeError("project_2d expects an N x D matrix");
  const int64_t n = embeddings.size(0);
  if (n < 3) throw ArgumentError("project_2d needs at least 3 points");
  if (!labels.empty() && static_cast<int64_t>(labels.size()) != n) throw ShapeError("labels and embeddings differ in length");

  const auto x = embeddings.detach().to(torch::kFloat64);
  const auto xc = x - x.mean(0, true);
  if (xc.abs().max().item<double>() == 0.0) throw ArgumentError("project_2d: embedding matrix has rank 0");
  auto [u, s, vh] = torch::linalg_svd(xc, false);
  auto axes = vh.slice(0, 0, std::min<int64_t>(2, vh.size(0))).t().contiguous();  // D x r
  for (int64_t j = 0; j < axes.size(1); ++j) {
    auto col = axes.select(1, j);
    const int64_t arg = col.abs().argmax().item<int64_t>();
    if (col[arg].item<double>() < 0) col.neg_();
  }
  auto coords = torch::mm(xc, axes);
  if (coords.size(1) < 2) coords = torch::cat({coords, torch::zeros({n, 2 - coords.size(1)}, coords.options())}, 1);

  Projection2D p;
  p.coords = coords.contiguous();
  p.method = method;
  p.labels = labels;
  return p;
}

double silhouette_score(const torch::Tensor& points, const std::vector<int64_t>& labels) {
  const int64_t n = points.size(0);
  if (static_cast<int64_t>(labels.size()) != n) throw ShapeError("points and labels differ in length");
  const auto dist = torch::cdist(points.to(torch::kFloat64), points.to(torch::kFloat64)).contiguous();
  const double* pd = dist.data_ptr<double>();
  std::map<int64_t, int64_t> sizes;
  for (auto y : labels) ++sizes[y];
  if (sizes.size() < 2) throw ArgumentError("silhouette needs at least two clusters");
  double total = 0.0;
  for (int64_t i = 0; i < n; ++i) {
    std::map<int64_t, double> sum;
    for (int64_t j = 0; j < n; ++j) {
      if (j != i) sum[labels[j]] += pd[i * n + j];
    }
    const int64_t own = sizes[labels[i]];
    if (own <= 1) continue;  // singleton clusters score 0
    const double a = sum[labels[i]] / static_cast<double>(own - 1);
    double b = std::numeric_limits<double>::infinity();
    for (const auto& [label, size] : sizes) {
      if (label != labels[i]) b = std::min(b, sum[label] / static_cast<double>(size));
    }
    const double scale = std::max(a, b);
    if (scale > 0) total += (b - a) / scale;
  }
  return total / static_cast<double>(n);
}

}  // namespace privdistil::evalkit
