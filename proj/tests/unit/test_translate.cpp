#include <gtest/gtest.h>

#include <fstream>

#include "privdistil/common/error.hpp"
#include "privdistil/datamodel/masks.hpp"
#include "privdistil/datamodel/procgen.hpp"
#include "privdistil/translate/synthesize.hpp"
#include "privdistil/translate/translator.hpp"
#include "tempdir.hpp"

using namespace privdistil;
using namespace privdistil::translate;

namespace {

TranslateConfig tiny(TranslatorMode mode) {
  auto c = mode == TranslatorMode::paired ? TranslateConfig{} : TranslateConfig::unpaired_defaults();
  c.width = 6;
  c.down_stages = 1;
  c.res_blocks = 1;
  c.steps = 60;
  c.batch_size = 4;
  return c;
}

datamodel::DatasetManifest tiny_dataset(const std::filesystem::path& dir) {
  auto cfg = datamodel::default_procgen_config();
  cfg.image_size = 32;
  return datamodel::gen_procedural_dataset(cfg, {6, 2, 2}, dir);
}

}  // namespace

TEST(TranslateConfig, ValidationAndJson) {
  auto c = TranslateConfig::unpaired_defaults();
  EXPECT_NO_THROW(c.validate());
  c.lambda_cyc = 0;
  EXPECT_THROW(c.validate(), ConfigError);
  EXPECT_THROW(parse_translator_mode("cyclic"), ConfigError);
  const auto d = tiny(TranslatorMode::paired);
  EXPECT_EQ(translate_config_from_json(to_json(d), "t"), d);
}

TEST(Translator, GeneratorShapesAndRange) {
  auto p = init_translator(tiny(TranslatorMode::paired), 3, 1, 32, 32);
  const auto y = translate_batch(p, torch::rand({5, 3, 32, 32}));
  EXPECT_EQ(y.sizes(), (std::vector<int64_t>{5, 1, 32, 32}));
  EXPECT_GE(y.min().item<float>(), 0.0F);
  EXPECT_LE(y.max().item<float>(), 1.0F);
  EXPECT_THROW(translate_batch(p, torch::rand({1, 3, 16, 16})), ShapeError);
  EXPECT_THROW(init_translator(tiny(TranslatorMode::paired), 3, 1, 31, 32), ShapeError);
}

TEST(Translator, PairedTrainingReducesReconstructionError) {
  torch::manual_seed(1);
  auto x = torch::rand({12, 3, 16, 16});
  auto y = (x.mean(1, true) > 0.5).to(torch::kFloat32);
  auto cfg = tiny(TranslatorMode::paired);
  cfg.steps = 150;
  const auto p = train_paired_translator(x, y, cfg);
  ASSERT_EQ(p.history.size(), 150U);
  double first = 0.0, last = 0.0;
  for (int i = 0; i < 10; ++i) {
    first += p.history[static_cast<size_t>(i)].reconstruction;
    last += p.history[p.history.size() - 1 - static_cast<size_t>(i)].reconstruction;
  }
  EXPECT_LT(last, 0.7 * first);
  EXPECT_GE(p.held_out_mae, 0.0);
  EXPECT_LE(p.held_out_mae, 1.0);
  EXPECT_FALSE(p.disc_b);
}

TEST(Translator, PairedTrainingIsDeterministic) {
  auto x = torch::rand({6, 3, 16, 16});
  auto y = torch::rand({6, 1, 16, 16});
  auto cfg = tiny(TranslatorMode::paired);
  cfg.steps = 5;
  cfg.adversarial = true;
  const auto a = train_paired_translator(x, y, cfg);
  const auto b = train_paired_translator(x, y, cfg);
  EXPECT_TRUE(torch::equal(translate_batch(a, x), translate_batch(b, x)));
  EXPECT_TRUE(a.disc_b);
  EXPECT_EQ(a.history.back().generator, b.history.back().generator);
}

TEST(Translator, UnpairedTrainingSkipsIdentityAcrossChannelCounts) {
  auto cfg = tiny(TranslatorMode::unpaired);
  cfg.steps = 4;
  const auto p = train_unpaired_translator(torch::rand({5, 3, 16, 16}), torch::rand({7, 1, 16, 16}), cfg);
  ASSERT_EQ(p.history.size(), 4U);
  for (const auto& s : p.history) {
    EXPECT_EQ(s.identity, 0.0);
    EXPECT_GT(s.cycle, 0.0);
  }
  const auto q = train_unpaired_translator(torch::rand({5, 3, 16, 16}), torch::rand({7, 3, 16, 16}), cfg);
  EXPECT_GT(q.history.front().identity, 0.0);
  EXPECT_THROW(train_paired_translator(torch::rand({4, 3, 16, 16}), torch::rand({4, 1, 16, 16}), cfg), ConfigError);
}

TEST(Translator, CheckpointRoundTripReproducesOutputsBitwise) {
  testutil::TempDir dir;
  auto cfg = tiny(TranslatorMode::unpaired);
  cfg.steps = 2;
  const auto p = train_unpaired_translator(torch::rand({4, 3, 16, 16}), torch::rand({4, 1, 16, 16}), cfg);
  save_translator(p, dir / "t.pdck");
  const auto q = load_translator(dir / "t.pdck");
  auto x = torch::rand({3, 3, 16, 16});
  EXPECT_TRUE(torch::equal(translate_batch(p, x), translate_batch(q, x)));
  EXPECT_EQ(q.config, p.config);
  EXPECT_EQ(q.out_channels, 1);
  EXPECT_TRUE(q.reverse);
}

TEST(Synthesize, OraclePairsMatchGroundTruthMasks) {
  testutil::TempDir dir;
  const auto m = tiny_dataset(dir.path());
  const auto paired = synthesize_pairs(m, PairSource::oracle(), datamodel::MaskMode::binary);
  ASSERT_TRUE(paired.privileged);
  EXPECT_EQ(paired.privileged->name, "oracle_binary");
  EXPECT_EQ(paired.privileged->channels, 1);
  EXPECT_TRUE(paired.has_privileged());
  for (size_t i = 0; i < paired.records.size(); ++i) {
    const auto& r = paired.records[i];
    EXPECT_EQ(*r.privileged_path, privileged_path_for(r.primary_path));
    EXPECT_EQ(r.id, m.records[i].id);
    const auto s = datamodel::load_sample(paired, i);
    const auto gt = datamodel::load_ground_truth(datamodel::ground_truth_path(m.resolve(r.primary_path)));
    EXPECT_TRUE(s.privileged->identical(datamodel::oracle_mask(gt, s.primary, datamodel::MaskMode::binary)));
  }
}

TEST(Synthesize, NoiseIsSeededPerIdAndChangesTheMask) {
  testutil::TempDir dir;
  const auto m = tiny_dataset(dir.path());
  const auto clean = synthesize_pairs(m, PairSource::oracle(), datamodel::MaskMode::binary);
  const auto c0 = *datamodel::load_sample(clean, 0).privileged;
  const auto noisy = synthesize_pairs(m, PairSource::oracle(), datamodel::MaskMode::binary, {0.1, 3});
  EXPECT_EQ(noisy.privileged->name, "oracle_binary_noisy");
  const auto n0 = *datamodel::load_sample(noisy, 0).privileged;
  const double diff = (n0.data() - c0.data()).abs().mean().item<double>();
  EXPECT_GT(diff, 0.02);
  EXPECT_LT(diff, 0.1);
  synthesize_pairs(m, PairSource::oracle(), datamodel::MaskMode::binary, {0.1, 3});
  EXPECT_TRUE(datamodel::load_sample(noisy, 0).privileged->identical(n0));
}

TEST(Synthesize, TranslatorAndImportedSources) {
  testutil::TempDir dir;
  const auto m = tiny_dataset(dir.path());
  auto cfg = tiny(TranslatorMode::paired);
  cfg.steps = 1;
  auto params = std::make_shared<const TranslatorParams>(init_translator(cfg, 3, 1, 32, 32));
  const auto t = synthesize_pairs(m, PairSource::from_translator(params), datamodel::MaskMode::binary);
  EXPECT_EQ(t.privileged->name, "translated");

  std::filesystem::create_directories(dir / "imp");
  EXPECT_THROW(synthesize_pairs(m, PairSource::imported(dir / "imp"), datamodel::MaskMode::binary), DataError);
  for (const auto& r : m.records) write_png(dir / "imp" / (r.id + ".png"), ImageTensor::zeros(3, 32, 32));
  const auto imp = synthesize_pairs(m, PairSource::imported(dir / "imp"), datamodel::MaskMode::binary);
  EXPECT_EQ(imp.privileged->name, "imported");
  EXPECT_EQ(imp.privileged->channels, 3);
  EXPECT_THROW(synthesize_pairs(m, PairSource::imported(dir / "nope"), datamodel::MaskMode::binary), DataError);
}

TEST(Translator, ZeroStepsLeavesTheInitialisation) {
  auto cfg = tiny(TranslatorMode::paired);
  cfg.steps = 0;
  const auto x = torch::rand({6, 3, 16, 16});
  const auto y = torch::rand({6, 1, 16, 16});
  const auto trained = train_paired_translator(x, y, cfg);
  const auto init = init_translator(cfg, 3, 1, 16, 16);
  const auto a = trained.generator->parameters(), b = init.generator->parameters();
  ASSERT_EQ(a.size(), b.size());
  for (size_t i = 0; i < a.size(); ++i) EXPECT_TRUE(torch::equal(a[i], b[i]));
  EXPECT_TRUE(trained.history.empty());
}

TEST(Translator, SinglePairMemorisationLossIsNonIncreasing) {
  torch::manual_seed(13);
  const auto x = torch::rand({1, 3, 16, 16}).expand({8, 3, 16, 16}).contiguous();
  const auto y = (x.mean(1, true) > 0.5).to(torch::kFloat32);
  auto cfg = tiny(TranslatorMode::paired);
  cfg.steps = 300;
  cfg.held_out_fraction = 0.0;
  const auto p = train_paired_translator(x, y, cfg);
  std::vector<double> windows;
  for (size_t w = 0; w + 50 <= p.history.size(); w += 50) {
    double sum = 0.0;
    for (size_t i = w; i < w + 50; ++i) sum += p.history[i].reconstruction;
    windows.push_back(sum / 50.0);
  }
  ASSERT_EQ(windows.size(), 6U);
  for (size_t i = 1; i < windows.size(); ++i) EXPECT_LE(windows[i], windows[i - 1]) << i;
}

TEST(Translator, IdentityPressureKeepsImagesUnchanged) {
  torch::manual_seed(17);
  // smooth images: upsampled 4x4 noise
  namespace F = torch::nn::functional;
  const auto x = F::interpolate(torch::rand({16, 3, 4, 4}), F::InterpolateFuncOptions()
                                                                 .size(std::vector<int64_t>{16, 16})
                                                                 .mode(torch::kBilinear)
                                                                 .align_corners(false));
  auto cfg = tiny(TranslatorMode::unpaired);
  cfg.steps = 1000;
  cfg.lambda_id = 50.0;
  const auto p = train_unpaired_translator(x, x, cfg);
  EXPECT_LT((translate_batch(p, x) - x).abs().mean().item<double>(), 0.1);
}

TEST(Translator, TranslationIsPure) {
  const auto p = init_translator(tiny(TranslatorMode::paired), 3, 1, 16, 16);
  const ImageTensor img(torch::rand({3, 16, 16}));
  EXPECT_TRUE(translate::translate(p, img).identical(translate::translate(p, img)));
}

TEST(Translator, ZeroOutputLayerGivesTheSquashingMidpoint) {
  auto p = init_translator(tiny(TranslatorMode::paired), 3, 1, 16, 16);
  {
    torch::NoGradGuard ng;
    p.generator->output_conv()->weight.zero_();
    p.generator->output_conv()->bias.zero_();
  }
  const auto y = translate_batch(p, torch::rand({3, 3, 16, 16}));
  EXPECT_TRUE(torch::equal(y, torch::full_like(y, 0.5F)));
}

TEST(Synthesize, OracleSourcePreservesRecordsAndIsByteStable) {
  testutil::TempDir dir;
  const auto m = tiny_dataset(dir.path());
  const auto first = synthesize_pairs(m, PairSource::oracle(), datamodel::MaskMode::binary);
  ASSERT_EQ(first.records.size(), m.records.size());
  std::vector<std::string> bytes;
  auto slurp = [](const std::filesystem::path& p) {
    std::ifstream in(p, std::ios::binary);
    return std::string(std::istreambuf_iterator<char>(in), {});
  };
  for (size_t i = 0; i < m.records.size(); ++i) {
    EXPECT_EQ(first.records[i].id, m.records[i].id);
    EXPECT_EQ(first.records[i].label, m.records[i].label);
    EXPECT_EQ(first.records[i].split, m.records[i].split);
    bytes.push_back(slurp(first.resolve(*first.records[i].privileged_path)));
  }
  const auto second = synthesize_pairs(m, PairSource::oracle(), datamodel::MaskMode::binary);
  for (size_t i = 0; i < m.records.size(); ++i) {
    EXPECT_EQ(slurp(second.resolve(*second.records[i].privileged_path)), bytes[i]);
  }
}

TEST(Synthesize, MaskedImageModeIsConsistentWithThePrimary) {
  testutil::TempDir dir;
  const auto m = synthesize_pairs(tiny_dataset(dir.path()), PairSource::oracle(), datamodel::MaskMode::masked_image);
  for (size_t i = 0; i < m.records.size(); ++i) {
    const auto s = datamodel::load_sample(m, i);
    const auto gt = datamodel::load_ground_truth(datamodel::ground_truth_path(m.resolve(m.records[i].primary_path)));
    const auto fg = datamodel::rasterize_instances(gt).gt(0).unsqueeze(0).to(torch::kFloat32);
    const auto priv = s.privileged->data();
    EXPECT_EQ((priv * (1 - fg)).count_nonzero().item<int64_t>(), 0);
    // inside nuclei the primary is copied, up to the 8-bit floor for black pixels
    const auto inside = (priv - s.primary.data()) * fg;
    EXPECT_LE(inside.abs().max().item<float>(), 1.0F / 255.0F + 1e-6F);
  }
}
