#include <gtest/gtest.h>

#include <cmath>

#include "oracles.hpp"
#include "privdistil/common/error.hpp"
#include "privdistil/common/rng.hpp"
#include "privdistil/evalkit/clustering.hpp"
#include "privdistil/evalkit/probe.hpp"
#include "privdistil/evalkit/projection.hpp"
#include "privdistil/evalkit/results.hpp"
#include "privdistil/evalkit/saliency.hpp"
#include "tempdir.hpp"

using namespace privdistil;
using namespace privdistil::evalkit;

TEST(MatchClusters, AgreesWithExhaustiveSearch) {
  Rng rng(8);
  for (int trial = 0; trial < 200; ++trial) {
    const int64_t k = 1 + trial % kMaxMatchedClusters;
    const size_t n = 1 + static_cast<size_t>(trial % 17);
    std::vector<int64_t> a(n), y(n);
    for (size_t i = 0; i < n; ++i) {
      a[i] = rng.uniform_int(0, k - 1);
      y[i] = rng.uniform_int(0, k - 1);
    }
    const auto got = match_clusters(a, y, k);
    const auto want = oracle::best_permutation(a, y, k);
    EXPECT_EQ(got.first, want.first);
    EXPECT_EQ(got.second, want.second);
  }
}

TEST(MatchClusters, SwappedLabelsArePerfectlyMatched) {
  const auto r = match_clusters({0, 0, 1, 1}, {1, 1, 0, 0}, 2);
  EXPECT_EQ(r.first, 1.0);
  EXPECT_EQ(r.second, (std::vector<int64_t>{1, 0}));
}

TEST(MatchClusters, RejectsBadInput) {
  EXPECT_THROW(match_clusters({0}, {0}, 7), ArgumentError);
  EXPECT_THROW(match_clusters({0, 1}, {0}, 2), ShapeError);
  EXPECT_THROW(match_clusters({0, 2}, {0, 1}, 2), ArgumentError);
}

TEST(KMeans, SeparatedBlobsAreRecovered) {
  torch::manual_seed(4);
  auto a = torch::randn({30, 3}, torch::kFloat64) * 0.1;
  auto b = torch::randn({20, 3}, torch::kFloat64) * 0.1 + 5.0;
  std::vector<int64_t> labels(30, 0);
  labels.resize(50, 1);
  const auto r = kmeans_eval(torch::cat({a, b}), labels, 2);
  EXPECT_EQ(r.accuracy, 1.0);
  EXPECT_FALSE(r.degenerate);
  EXPECT_GT(r.inertia, 0.0);
}

TEST(KMeans, DeterministicForSeedAndInertiaMatchesAssignment) {
  torch::manual_seed(5);
  auto x = torch::randn({40, 4}, torch::kFloat64);
  const auto a = kmeans(x, 3, {5, 100, 7});
  const auto b = kmeans(x, 3, {5, 100, 7});
  EXPECT_EQ(a.assignment, b.assignment);
  double inertia = 0.0;
  for (int64_t c = 0; c < 3; ++c) {
    std::vector<int64_t> rows;
    for (size_t i = 0; i < a.assignment.size(); ++i) {
      if (a.assignment[i] == c) rows.push_back(static_cast<int64_t>(i));
    }
    if (rows.empty()) continue;
    auto pts = x.index_select(0, torch::tensor(rows));
    inertia += (pts - pts.mean(0, true)).pow(2).sum().item<double>();
  }
  EXPECT_NEAR(a.inertia, inertia, 1e-9 * inertia);
}

TEST(KMeans, IdenticalRowsAreDegenerate) {
  const auto r = kmeans_eval(torch::ones({10, 2}, torch::kFloat64), {0, 0, 0, 1, 1, 1, 1, 1, 1, 1}, 2);
  EXPECT_TRUE(r.degenerate);
  EXPECT_EQ(r.accuracy, 0.7);
  EXPECT_THROW(kmeans(torch::ones({1, 2}), 2), ArgumentError);
}

TEST(Probe, ScorePredictionsBuildsConfusionAndRecall) {
  const auto r = score_predictions(torch::tensor({0, 1, 1, 2}), torch::tensor({0, 1, 0, 0}), 3);
  EXPECT_EQ(r.accuracy, 0.5);
  EXPECT_EQ(r.support, (std::vector<int64_t>{3, 1, 0}));
  EXPECT_NEAR(r.per_class[0], 1.0 / 3.0, 1e-15);
  EXPECT_EQ(r.per_class[1], 1.0);
  EXPECT_TRUE(std::isnan(r.per_class[2]));
  EXPECT_EQ(r.confusion[0], (std::vector<int64_t>{1, 1, 1}));
}

TEST(Probe, SeparableFeaturesAreClassifiedPerfectly) {
  auto labels = torch::arange(300, torch::kLong) % 3;
  const ProbeConfig cfg{50, 1e-2, 64, 0};
  const auto one_hot = torch::eye(3).index_select(0, labels);
  auto head = fit_probe(one_hot, labels, 3, cfg);
  EXPECT_EQ(evaluate_head(head, one_hot, labels, 3).accuracy, 1.0);

  // far from the origin and badly scaled: exercises the folded standardisation
  torch::manual_seed(6);
  auto centres = torch::tensor({{4.0, 0.0}, {0.0, 4.0}, {-4.0, -4.0}}, torch::kFloat32) * 100.0;
  auto feats = centres.index_select(0, labels) + torch::randn({300, 2}) * 10.0 + 1000.0;
  head = fit_probe(feats, labels, 3, cfg);
  EXPECT_EQ(evaluate_head(head, feats, labels, 3).accuracy, 1.0);
  EXPECT_THROW(fit_probe(feats.slice(0, 0, 2), labels.slice(0, 0, 2), 3, {}), ArgumentError);
}

TEST(Probe, LinearProbeLeavesTheEncoderUnchanged) {
  torch::manual_seed(7);
  sslcore::EncoderConfig cfg;
  cfg.widths = {4};
  cfg.embed_dim = 8;
  sslcore::Encoder enc(cfg);
  enc->eval();
  std::vector<torch::Tensor> before;
  for (const auto& p : enc->parameters()) before.push_back(p.clone());
  auto x = torch::rand({12, 3, 16, 16});
  auto y = torch::arange(12, torch::kLong) % 2;
  auto probe = linear_probe(enc, x, y, x, y, 2, {3, 1e-2, 4, 0});
  const auto params = enc->parameters();
  for (size_t i = 0; i < params.size(); ++i) EXPECT_TRUE(torch::equal(params[i], before[i]));
  const auto ood = ood_eval(enc, probe.head, x, y, 2, ood_shift_preset());
  EXPECT_NEAR(ood.drop, ood.in_distribution.accuracy - ood.shifted.accuracy, 1e-15);
  EXPECT_EQ(ood.in_distribution.accuracy, probe.test.accuracy);
}

TEST(Probe, ShiftPresetAndConfigJson) {
  const auto p = ood_shift_preset();
  EXPECT_EQ(p.hue_degrees, 25.0);
  EXPECT_EQ(p.brightness, 0.8);
  EXPECT_EQ(p.contrast, 1.2);
  EXPECT_EQ(p.blur_sigma, 0.8);
  const ProbeConfig c{5, 0.01, 32, 9};
  EXPECT_EQ(probe_config_from_json(to_json(c), "probe"), c);
  EXPECT_THROW(probe_config_from_json({{"lr", 0.0}}, "probe"), ConfigError);
}

TEST(Projection, PcaMatchesEigenvectorsOfTheCovariance) {
  torch::manual_seed(9);
  auto x = torch::randn({50, 4}, torch::kFloat64) * torch::tensor({5.0, 2.0, 0.5, 0.1}, torch::kFloat64);
  const auto p = project_2d(x, {});
  ASSERT_EQ(p.coords.sizes(), (std::vector<int64_t>{50, 2}));
  auto xc = x - x.mean(0, true);
  auto [evals, evecs] = torch::linalg_eigh(xc.t().mm(xc));
  for (int64_t j = 0; j < 2; ++j) {
    auto v = evecs.select(1, 3 - j);
    const auto idx = v.abs().argmax().item<int64_t>();
    if (v[idx].item<double>() < 0) v = -v;
    EXPECT_TRUE(torch::allclose(p.coords.select(1, j), xc.mv(v), 1e-8, 1e-8));
  }
  EXPECT_THROW(project_2d(torch::ones({5, 3}), {}), ArgumentError);
  EXPECT_THROW(project_2d(x, {}, "tsne"), ConfigError);
}

TEST(Projection, RankOneInputIsZeroPadded) {
  auto x = torch::arange(6, torch::kFloat64).unsqueeze(1).repeat({1, 3});
  const auto p = project_2d(x, {});
  EXPECT_TRUE(torch::allclose(p.coords.select(1, 1), torch::zeros({6}, torch::kFloat64), 0, 1e-9));
}

TEST(Projection, SilhouetteOfAHandCase) {
  // two points per cluster on a line: {0, 1} and {4, 5}
  auto pts = torch::tensor({{0.0}, {1.0}, {4.0}, {5.0}}, torch::kFloat64);
  const double s0 = 1.0 - 1.0 / 4.5;  // a = 1, b = mean(4, 5)
  const double s1 = 1.0 - 1.0 / 3.5;  // a = 1, b = mean(3, 4)
  EXPECT_NEAR(silhouette_score(pts, {0, 0, 1, 1}), (s0 + s1 + s1 + s0) / 4.0, 1e-12);
  EXPECT_THROW(silhouette_score(pts, {0, 0, 0, 0}), ArgumentError);
}

TEST(Results, CsvRoundTripIsExact) {
  testutil::TempDir dir;
  std::vector<ResultRow> rows{{"a", "trident", "vicreg", "oracle_binary", 0, "probe_acc", 0.1 + 0.2},
                              {"b", "siamese_unprivileged", "infonce", "none", 2, "ood_drop", 1.0 / 3.0}};
  write_results_csv(rows, dir / "r.csv");
  EXPECT_EQ(read_results_csv(dir / "r.csv"), rows);
  rows[0].method = "x,y";
  EXPECT_THROW(write_results_csv(rows, dir / "r.csv"), ArgumentError);
}

TEST(Results, MarkdownSummaryBoldsTheBestGroup) {
  std::vector<ResultRow> rows{
      {"t", "trident", "vicreg", "oracle", 0, "probe_acc", 0.9},     {"t", "trident", "vicreg", "oracle", 1, "probe_acc", 0.8},
      {"u", "siamese_unprivileged", "vicreg", "none", 0, "probe_acc", 0.7},
      {"t", "trident", "vicreg", "oracle", 0, "ood_drop", 0.05},     {"u", "siamese_unprivileged", "vicreg", "none", 0, "ood_drop", 0.02},
      {"t", "trident", "vicreg", "oracle", 0, "class_acc/tumour", 1.0}};
  const auto md = markdown_summary(rows);
  EXPECT_NE(md.find("**0.8500 (0.0707)**"), std::string::npos) << md;
  EXPECT_NE(md.find("**0.0200 (0.0000)**"), std::string::npos) << md;
  EXPECT_NE(md.find("| tumour |"), std::string::npos) << md;
  EXPECT_TRUE(lower_is_better("ood_drop"));
  EXPECT_FALSE(lower_is_better("probe_acc"));
  EXPECT_THROW(markdown_summary({}), ArgumentError);
}

TEST(Saliency, FocusScoreOfAUniformMapIsTheMaskFraction) {
  auto map = torch::ones({8, 8}, torch::kFloat64);
  auto mask = torch::zeros({8, 8});
  mask.slice(0, 0, 4).slice(1, 0, 4).fill_(1.0);
  EXPECT_EQ(*nucleus_focus_score(map, mask), 0.25);
  EXPECT_FALSE(nucleus_focus_score(torch::zeros({8, 8}), mask).has_value());
  EXPECT_THROW(nucleus_focus_score(-map, mask), ArgumentError);
  EXPECT_THROW(nucleus_focus_score(map, torch::zeros({4, 4})), ShapeError);
}

TEST(Saliency, GuidedGradcamMatchesTheAnalyticPointwiseNetwork) {
  torch::manual_seed(10);
  for (int trial = 0; trial < 5; ++trial) {
    oracle::PointwiseCam net(torch::randn({4, 3}, torch::kFloat64));
    torch::nn::Linear head(4, 2);
    head->to(torch::kFloat64);
    auto x = torch::rand({3, 8, 8}, torch::kFloat64);
    const int64_t target = trial % 2;
    const auto got = guided_gradcam(net, head, x, target);
    const auto want = net.expected_map(x, head->weight[target].detach().contiguous());
    EXPECT_TRUE(torch::allclose(got.map, want, 0, 1e-12)) << trial;
    EXPECT_GE(got.map.min().item<double>(), 0.0);
  }
}

TEST(Saliency, EncoderMapHasInputSizeAndPngWrites) {
  testutil::TempDir dir;
  sslcore::EncoderConfig cfg;
  cfg.widths = {4, 8};
  cfg.embed_dim = 8;
  sslcore::Encoder enc(cfg);
  enc->eval();
  torch::nn::Linear head(8, 3);
  const auto m = guided_gradcam(*enc, head, torch::rand({3, 32, 32}), 2);
  EXPECT_EQ(m.map.sizes(), (std::vector<int64_t>{32, 32}));
  EXPECT_EQ(m.map.scalar_type(), torch::kFloat64);
  write_saliency_png(m, dir / "s.png");
  EXPECT_EQ(read_png(dir / "s.png").channels(), 1);
  EXPECT_THROW(guided_gradcam(*enc, head, torch::rand({3, 32, 32}), 3), ArgumentError);
}

TEST(Probe, ShuffledLabelsGiveChanceAccuracy) {
  // class-structured features, labels permuted independently of them
  double sum = 0.0;
  for (uint64_t seed = 0; seed < 3; ++seed) {
    torch::manual_seed(seed);
    const auto structure = torch::arange(4000, torch::kLong) % 4;
    const auto feats = torch::randn({4000, 4}) * 3.0 + torch::eye(4).index_select(0, structure) * 10.0;
    Rng rng(seed);
    const auto labels = structure.index_select(0, torch::tensor(rng.permutation(4000), torch::kLong));
    auto head = fit_probe(feats.slice(0, 0, 2000), labels.slice(0, 0, 2000), 4, {20, 1e-3, 64, seed});
    sum += evaluate_head(head, feats.slice(0, 2000), labels.slice(0, 2000), 4).accuracy;
  }
  EXPECT_NEAR(sum / 3.0, 0.25, 0.03);
}

TEST(Ood, IdentityShiftHasZeroDropAndBlackoutIsChance) {
  torch::manual_seed(3);
  sslcore::EncoderConfig cfg;
  cfg.widths = {4, 8};
  cfg.embed_dim = 8;
  sslcore::Encoder enc(cfg);
  enc->eval();
  // two classes separated by brightness, which an untrained encoder still sees
  auto labels = torch::arange(60, torch::kLong) % 2;
  auto x = (torch::rand({60, 3, 16, 16}) * 0.3 + labels.to(torch::kFloat32).view({60, 1, 1, 1}) * 0.6).contiguous();
  auto probe = linear_probe(enc, x, labels, x, labels, 2, {30, 1e-2, 16, 0});
  const auto same = ood_eval(enc, probe.head, x, labels, 2, datamodel::ShiftParams{});
  EXPECT_EQ(same.drop, 0.0);
  EXPECT_EQ(same.shifted.accuracy, same.in_distribution.accuracy);
  datamodel::ShiftParams black;
  black.brightness = 0.0;
  const auto dark = ood_eval(enc, probe.head, x, labels, 2, black);
  EXPECT_LE(dark.shifted.accuracy, 0.5 + 0.05);
}

TEST(Saliency, ZeroHeadRowGivesAnEmptyMapAndMapsAreNonNegative) {
  torch::manual_seed(14);
  sslcore::EncoderConfig cfg;
  cfg.widths = {4, 8};
  cfg.embed_dim = 8;
  sslcore::Encoder enc(cfg);
  enc->eval();
  torch::nn::Linear head(8, 3);
  for (int trial = 0; trial < 5; ++trial) {
    const auto m = guided_gradcam(*enc, head, torch::rand({3, 16, 16}), trial % 3);
    EXPECT_GE(m.map.min().item<double>(), 0.0);
  }
  {
    torch::NoGradGuard ng;
    head->weight[1].zero_();
  }
  EXPECT_EQ(guided_gradcam(*enc, head, torch::rand({3, 16, 16}), 1).map.count_nonzero().item<int64_t>(), 0);
}

TEST(Saliency, AttributionEntirelyInsideTheMaskScoresOne) {
  auto map = torch::zeros({8, 8}, torch::kFloat64);
  map.slice(0, 2, 5).slice(1, 2, 5) = torch::rand({3, 3}, torch::kFloat64) + 0.1;
  auto mask = torch::zeros({8, 8});
  mask.slice(0, 1, 6).slice(1, 1, 6) = 1.0;
  EXPECT_EQ(nucleus_focus_score(map, mask).value(), 1.0);
  EXPECT_FALSE(nucleus_focus_score(torch::zeros({8, 8}, torch::kFloat64), mask).has_value());
}

TEST(Projection, TwoDimensionalInputIsAnIsometry) {
  torch::manual_seed(15);
  auto x = torch::randn({20, 2}, torch::kFloat64) * torch::tensor({3.0, 1.0}, torch::kFloat64);
  x[7] = x[3];
  const auto p = project_2d(x, std::vector<int64_t>(20, 0));
  EXPECT_TRUE(torch::allclose(torch::cdist(p.coords, p.coords), torch::cdist(x, x), 0, 1e-6));
  EXPECT_TRUE(torch::equal(p.coords[7], p.coords[3]));
}

TEST(Projection, SeparatedBlobsHaveAHighSilhouette) {
  torch::manual_seed(16);
  std::vector<int64_t> labels(60);
  for (size_t i = 0; i < labels.size(); ++i) labels[i] = static_cast<int64_t>(i % 2);
  const auto y = torch::tensor(labels, torch::kLong).to(torch::kFloat64).unsqueeze(1);
  const auto x = torch::randn({60, 16}, torch::kFloat64) + y * 12.0;
  const auto p = project_2d(x, labels);
  EXPECT_GT(silhouette_score(p.coords, labels), 0.5);
}
