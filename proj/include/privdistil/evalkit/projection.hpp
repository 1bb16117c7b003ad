#pragma once

#include <torch/torch.h>

#include <cstdint>
#include <string>
#include <vector>

namespace privdistil::evalkit {

struct Projection2D {
  torch::Tensor coords;  // N x 2, float64
  std::string method;
  std::vector<int64_t> labels;
};

/// Deterministic 2-D embedding. Only "pca" is built in: centred data projected on the two
/// leading principal axes, each axis signed so that its largest-magnitude loading is
/// positive. Throws ArgumentError for N < 3 or a rank-0 (constant) matrix.
Projection2D project_2d(const torch::Tensor& embeddings, const std::vector<int64_t>& labels,
                        const std::string& method = "pca");

/// Mean silhouette coefficient with Euclidean distances.
double silhouette_score(const torch::Tensor& points, const std::vector<int64_t>& labels);

}  // namespace privdistil::evalkit
