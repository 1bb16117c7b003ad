#pragma once

#include <torch/torch.h>

#include <cstdint>
#include <utility>
#include <vector>

namespace privdistil::evalkit {

inline constexpr int64_t kMaxMatchedClusters = 6;

/// Best cluster-to-label mapping by exhaustive search over all k! permutations.
/// `permutation[c]` is the label assigned to cluster c; ties keep the lexicographically
/// first permutation. Throws ArgumentError for k > 6.
std::pair<double, std::vector<int64_t>> match_clusters(const std::vector<int64_t>& assignment,
                                                       const std::vector<int64_t>& labels, int64_t k);

struct KMeansConfig {
  int64_t restarts = 10;
  int64_t max_iterations = 300;
  uint64_t seed = 0;
};

struct ClusterResult {
  int64_t k = 2;
  std::vector<int64_t> assignment;
  double accuracy = 0.0;
  std::vector<int64_t> permutation;
  double inertia = 0.0;
  bool degenerate = false;
};

/// Lloyd iterations from seeded farthest-point initialisations (random first centre,
/// then repeatedly the point farthest from its nearest centre) until assignments stop
/// changing; the restart with the lowest inertia wins.
ClusterResult kmeans(const torch::Tensor& features, int64_t k, const KMeansConfig& cfg = {});

/// k-means followed by match_clusters against `labels` (values in [0, k)). When all rows
/// are identical the result is flagged degenerate and its accuracy is the largest class prior.
ClusterResult kmeans_eval(const torch::Tensor& features, const std::vector<int64_t>& labels, int64_t k,
                          const KMeansConfig& cfg = {});

}  // namespace privdistil::evalkit
