#include "privdistil/evalkit/clustering.hpp"

#include <algorithm>
#include <limits>
#include <numeric>

#include "privdistil/common/error.hpp"
#include "privdistil/common/rng.hpp"

namespace privdistil::evalkit {

std::pair<double, std::vector<int64_t>> match_clusters(const std::vector<int64_t>& assignment,
                                                       const std::vector<int64_t>& labels, int64_t k) {
  if (k < 1 || k > kMaxMatchedClusters) {
    throw ArgumentError("match_clusters supports 1 <= k <= " + std::to_string(kMaxMatchedClusters));
  }
  if (assignment.size() != labels.size()) throw ShapeError("assignment and labels differ in length");
  if (assignment.empty()) throw ArgumentError("match_clusters needs at least one sample");
  std::vector<std::vector<int64_t>> counts(k, std::vector<int64_t>(k, 0));
  for (size_t i = 0; i < labels.size(); ++i) {
    if (assignment[i] < 0 || assignment[i] >= k || labels[i] < 0 || labels[i] >= k) {
      throw ArgumentError("cluster ids and labels must lie in [0, k)");
    }
    ++counts[assignment[i]][labels[i]];
  }
  std::vector<int64_t> perm(k);
  std::iota(perm.begin(), perm.end(), 0);
  std::vector<int64_t> best = perm;
  int64_t best_hits = -1;
  do {
    int64_t hits = 0;
    for (int64_t c = 0; c < k; ++c) hits += counts[c][perm[c]];
    if (hits > best_hits) {
      best_hits = hits;
      best = perm;
    }
  } while (std::next_permutation(perm.begin(), perm.end()));
  return {static_cast<double>(best_hits) / static_cast<double>(labels.size()), best};
}

namespace {

double sq_dist(const double* a, const double* b, int64_t d) {
  double s = 0.0;
  for (int64_t j = 0; j < d; ++j) {
    const double t = a[j] - b[j];
    s += t * t;
  }
  return s;
}

}  // namespace

ClusterResult kmeans(const torch::Tensor& features, int64_t k, const KMeansConfig& cfg) {
  if (features.dim() != 2) throw ShapeError("kmeans expects an N x D matrix");
  const int64_t n = features.size(0);
  const int64_t d = features.size(1);
  if (k < 2) throw ArgumentError("kmeans needs k >= 2");
  if (n < k) throw ArgumentError("kmeans needs at least k samples");
  if (cfg.restarts < 1) throw ArgumentError("kmeans needs at least one restart");
  const auto x = features.detach().to(torch::kFloat64).contiguous();
  const double* px = x.data_ptr<double>();
  auto row = [&](int64_t i) { return px + i * d; };

  ClusterResult best;
  best.k = k;
  best.inertia = std::numeric_limits<double>::infinity();
  Rng rng = Rng(cfg.seed).derive("kmeans");

  for (int64_t restart = 0; restart < cfg.restarts; ++restart) {
    std::vector<double> centres;
    auto add_centre = [&](int64_t i) { centres.insert(centres.end(), row(i), row(i) + d); };
    add_centre(static_cast<int64_t>(rng.uniform_index(static_cast<uint64_t>(n))));
    std::vector<double> nearest(n, std::numeric_limits<double>::infinity());
    for (int64_t c = 1; c < k; ++c) {
      int64_t far = 0;
      for (int64_t i = 0; i < n; ++i) {
        nearest[i] = std::min(nearest[i], sq_dist(row(i), centres.data() + (c - 1) * d, d));
        if (nearest[i] > nearest[far]) far = i;
      }
      add_centre(far);
    }

    std::vector<int64_t> assign(n, -1);
    double inertia = 0.0;
    for (int64_t iter = 0; iter < cfg.max_iterations; ++iter) {
      bool changed = false;
      inertia = 0.0;
      for (int64_t i = 0; i < n; ++i) {
        int64_t arg = 0;
        double dist = sq_dist(row(i), centres.data(), d);
        for (int64_t c = 1; c < k; ++c) {
          const double dc = sq_dist(row(i), centres.data() + c * d, d);
          if (dc < dist) {
            dist = dc;
            arg = c;
          }
        }
        inertia += dist;
        if (assign[i] != arg) {
          assign[i] = arg;
          changed = true;
        }
      }
      if (!changed) break;
      std::vector<double> sums(k * d, 0.0);
      std::vector<int64_t> sizes(k, 0);
      for (int64_t i = 0; i < n; ++i) {
        ++sizes[assign[i]];
        for (int64_t j = 0; j < d; ++j) sums[assign[i] * d + j] += row(i)[j];
      }
      for (int64_t c = 0; c < k; ++c) {
        if (sizes[c] == 0) continue;  // empty cluster keeps its centre
        for (int64_t j = 0; j < d; ++j) centres[c * d + j] = sums[c * d + j] / static_cast<double>(sizes[c]);
      }
    }
    if (inertia < best.inertia) {
      best.inertia = inertia;
      best.assignment = assign;
    }
  }
  return best;
}

ClusterResult kmeans_eval(const torch::Tensor& features, const std::vector<int64_t>& labels, int64_t k,
                          const KMeansConfig& cfg) {
  if (features.size(0) != static_cast<int64_t>(labels.size())) throw ShapeError("features and labels differ in length");
  const auto x = features.detach().to(torch::kFloat64);
  if ((x - x[0]).abs().max().item<double>() == 0.0) {
    ClusterResult r;
    r.k = k;
    r.degenerate = true;
    r.assignment.assign(labels.size(), 0);
    std::vector<int64_t> counts(k, 0);
    for (auto y : labels) {
      if (y < 0 || y >= k) throw ArgumentError("labels must lie in [0, k)");
      ++counts[y];
    }
    r.accuracy = static_cast<double>(*std::max_element(counts.begin(), counts.end())) / static_cast<double>(labels.size());
    r.permutation.resize(k);
    std::iota(r.permutation.begin(), r.permutation.end(), 0);
    return r;
  }
  auto r = kmeans(x, k, cfg);
  std::tie(r.accuracy, r.permutation) = match_clusters(r.assignment, labels, k);
  return r;
}

}  // namespace privdistil::evalkit
