// Acceptance run: prints one PASS/FAIL line per criterion and exits non-zero if any fails.
#include <torch/torch.h>

#include <chrono>
#include <cmath>
#include <ctime>
#include <filesystem>
#include <functional>
#include <iomanip>
#include <iostream>
#include <limits>
#include <map>
#include <numeric>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "oracles.hpp"
#include "privdistil/common/rng.hpp"
#include "privdistil/datamodel/manifest.hpp"
#include "privdistil/datamodel/masks.hpp"
#include "privdistil/datamodel/procgen.hpp"
#include "privdistil/evalkit/clustering.hpp"
#include "privdistil/evalkit/probe.hpp"
#include "privdistil/evalkit/saliency.hpp"
#include "privdistil/sslcore/losses.hpp"
#include "privdistil/train/checkpoint.hpp"
#include "privdistil/train/schedule.hpp"
#include "privdistil/train/trainer.hpp"
#include "privdistil/translate/synthesize.hpp"
#include "privdistil/translate/translator.hpp"

namespace fs = std::filesystem;
using namespace privdistil;

namespace {

constexpr int64_t kClasses = 4;
constexpr int64_t kSaliencySamples = 32;

struct Verdict {
  bool pass = false;
  std::string detail;
};

std::string fmt(double v, int precision = 4) {
  std::ostringstream s;
  s << std::fixed << std::setprecision(precision) << v;
  return s.str();
}

std::string sci(double v) {
  std::ostringstream s;
  s << std::scientific << std::setprecision(2) << v;
  return s.str();
}

double cpu_seconds() { return static_cast<double>(std::clock()) / CLOCKS_PER_SEC; }

double mean(const std::vector<double>& v) { return std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size()); }

void note(const std::string& s) { std::cout << "# " << s << std::endl; }

// ---------------------------------------------------------------- AC-1

Verdict ac1() {
  const double t0 = cpu_seconds();
  Rng rng(2024);
  double worst = 0.0;
  for (int b = 0; b < 200; ++b) {
    const int64_t n = 2 + static_cast<int64_t>(rng.uniform_index(7));
    const int64_t d = 1 + static_cast<int64_t>(rng.uniform_index(4));
    torch::manual_seed(static_cast<uint64_t>(b));
    auto za = torch::randn({n, d}, torch::kFloat64);
    auto zb = torch::randn({n, d}, torch::kFloat64) * 0.5 + za * 0.5;
    sslcore::VicregParams vp;
    const auto v = sslcore::vicreg_loss(za, zb, vp);
    const auto vo = oracle::vicreg(oracle::to_matrix(za), oracle::to_matrix(zb), vp.lambda_inv, vp.mu_var, vp.nu_cov,
                                   vp.gamma, vp.eps);
    worst = std::max(worst, std::abs(v.total.item<double>() - vo.total));
    const double tau = 0.05 + 0.95 * rng.uniform();
    const auto c = sslcore::infonce_loss(za, zb, {tau});
    const auto co = oracle::infonce(oracle::to_matrix(za), oracle::to_matrix(zb), tau);
    worst = std::max(worst, std::abs(c.total.item<double>() - co.total));
  }
  const auto eye = torch::eye(2, torch::kFloat64);
  const double hand = sslcore::infonce_loss(eye, eye, {1.0}).total.item<double>();
  const double seconds = cpu_seconds() - t0;
  const bool pass = worst <= 1e-6 && std::abs(hand - 0.3133) <= 1e-4 && seconds < 10.0;
  return {pass, "max |err| " + sci(worst) + " over 200 batches, hand case " + fmt(hand) + ", " + fmt(seconds, 2) + " s"};
}

// ---------------------------------------------------------------- AC-2

sslcore::Tower tiny_tower(int64_t channels) {
  sslcore::EncoderConfig enc;
  enc.widths = {4, 6};
  enc.in_channels = channels;
  enc.embed_dim = 8;
  sslcore::ProjectorConfig proj;
  proj.layers = 2;
  proj.width = 8;
  sslcore::Tower t(enc, proj);
  t.to(torch::kFloat64);
  t.train(true);
  return t;
}

Verdict ac2() {
  const double t0 = cpu_seconds();
  torch::manual_seed(7);
  const int64_t n = 6;
  auto v1 = torch::rand({n, 3, 8, 8}, torch::kFloat64);
  auto v2 = (v1 + 0.1 * torch::randn_like(v1)).clamp(0, 1);
  auto priv = torch::rand({n, 1, 8, 8}, torch::kFloat64);
  auto labels = torch::tensor({0, 1, 2, 3, 0, 1}, torch::kLong);

  double worst = 0.0;
  int64_t largest = 0;
  std::vector<std::string> parts;
  auto record = [&](const std::string& name, const oracle::GradientCheck& g) {
    const double e = std::max(g.global, g.per_tensor);
    worst = std::max(worst, e);
    largest = std::max(largest, g.parameters);
    parts.push_back(name + " " + sci(e));
  };

  for (const auto& kind : {sslcore::LossKind::make_vicreg(), sslcore::LossKind::make_infonce()}) {
    auto primary = tiny_tower(3);
    record("siamese/" + kind.name(), oracle::check_gradients(primary.parameters(), [&] {
             return sslcore::siamese_objective(v1, v2, primary, primary, kind).total;
           }));
    auto p2 = tiny_tower(3);
    auto pt = tiny_tower(1);
    auto params = p2.parameters();
    for (const auto& p : pt.parameters()) params.push_back(p);
    record("siamese-priv/" + kind.name(), oracle::check_gradients(params, [&] {
             return sslcore::siamese_objective(v1, priv, p2, pt, kind, "v1-priv").total;
           }));
    record("trident/" + kind.name(), oracle::check_gradients(params, [&] {
             return sslcore::trident_objective(v1, v2, priv, p2, pt, kind).total;
           }));
  }
  sslcore::EncoderConfig enc;
  enc.widths = {4, 6};
  enc.embed_dim = 8;
  sslcore::Encoder encoder(enc);
  torch::nn::Linear head(8, kClasses);
  encoder->to(torch::kFloat64);
  head->to(torch::kFloat64);
  auto params = encoder->parameters();
  for (const auto& p : head->parameters()) params.push_back(p);
  record("supervised", oracle::check_gradients(params, [&] {
           return sslcore::supervised_objective(v1, labels, encoder, head).total;
         }));

  const double seconds = cpu_seconds() - t0;
  std::string detail = "worst rel. err " + sci(worst) + ", largest net " + std::to_string(largest) + " params, " +
                       fmt(seconds, 1) + " s [";
  for (size_t i = 0; i < parts.size(); ++i) detail += (i ? "; " : "") + parts[i];
  detail += "]";
  return {worst < 1e-3 && largest <= 10000 && seconds < 120.0, detail};
}

// ---------------------------------------------------------------- experiments

struct TestSet {
  datamodel::LabelledImages test;
  std::vector<torch::Tensor> masks;  // binary nucleus masks of the first kSaliencySamples images
};

struct ModelEval {
  double probe = 0.0;
  double drop = 0.0;
  double kmeans = 0.0;
  double focus = 0.0;
};

datamodel::DatasetManifest make_dataset(const fs::path& dir) {
  if (fs::exists(dir)) fs::remove_all(dir);
  return datamodel::gen_procedural_dataset(datamodel::default_procgen_config(), {}, dir);
}

TestSet load_test(const datamodel::DatasetManifest& m) {
  TestSet t;
  t.test = datamodel::load_split(m, datamodel::Split::test, false);
  std::map<std::string, size_t> record_of;
  for (size_t i = 0; i < m.records.size(); ++i) record_of[m.records[i].id] = i;
  for (int64_t i = 0; i < std::min<int64_t>(kSaliencySamples, t.test.size()); ++i) {
    const auto& rec = m.records[record_of.at(t.test.ids[static_cast<size_t>(i)])];
    const auto truth = datamodel::load_ground_truth(datamodel::ground_truth_path(m.resolve(rec.primary_path)));
    t.masks.push_back(datamodel::oracle_mask(truth, ImageTensor(t.test.primary[i]), datamodel::MaskMode::binary).data()[0]);
  }
  return t;
}

ModelEval evaluate(const train::Checkpoint& ck, const datamodel::LabelledImages& train_set, const TestSet& ts,
                   uint64_t seed) {
  ModelEval out;
  auto enc = train::load_primary_encoder(ck);
  evalkit::ProbeConfig pc;
  pc.seed = seed;
  auto probe = evalkit::linear_probe(enc, train_set.primary, train_set.labels, ts.test.primary, ts.test.labels, kClasses, pc);
  out.probe = probe.test.accuracy;
  out.drop = evalkit::ood_eval(enc, probe.head, ts.test.primary, ts.test.labels, kClasses, evalkit::ood_shift_preset()).drop;

  const auto sel = (ts.test.labels == 0).logical_or(ts.test.labels == 1).nonzero().squeeze(1);
  const auto feats = evalkit::extract_features(enc, ts.test.primary.index_select(0, sel));
  const auto yl = ts.test.labels.index_select(0, sel).contiguous();
  std::vector<int64_t> y(yl.data_ptr<int64_t>(), yl.data_ptr<int64_t>() + yl.numel());
  out.kmeans = evalkit::kmeans_eval(feats, y, 2).accuracy;

  double sum = 0.0;
  int64_t counted = 0;
  for (size_t i = 0; i < ts.masks.size(); ++i) {
    const auto idx = static_cast<int64_t>(i);
    const auto map = evalkit::guided_gradcam(*enc, probe.head, ts.test.primary[idx], ts.test.labels[idx].item<int64_t>());
    if (const auto s = evalkit::nucleus_focus_score(map.map, ts.masks[i])) {
      sum += *s;
      ++counted;
    }
  }
  out.focus = counted > 0 ? sum / static_cast<double>(counted) : std::nan("");
  return out;
}

struct Runs {
  std::vector<ModelEval> evals;
  double cpu = 0.0;
  std::vector<double> field(double ModelEval::*f) const {
    std::vector<double> v;
    for (const auto& e : evals) v.push_back(e.*f);
    return v;
  }
};

Runs run_seeds(const std::string& label, train::MethodKind method, const sslcore::LossKind& loss,
               const datamodel::LabelledImages& train_set, const datamodel::LabelledImages& probe_train,
               const TestSet& ts, int seeds) {
  Runs r;
  for (int s = 0; s < seeds; ++s) {
    const double t0 = cpu_seconds();
    const auto seed = static_cast<uint64_t>(s);
    const auto cfg = train::desk_train_config(method, loss, seed);
    const auto res = train::train_ssl(train_set, kClasses, cfg);
    const auto e = evaluate(res.checkpoint, probe_train, ts, seed);
    const double dt = cpu_seconds() - t0;
    r.cpu += dt;
    r.evals.push_back(e);
    note(label + " " + loss.name() + " seed " + std::to_string(s) + ": probe " + fmt(e.probe) + " drop " + fmt(e.drop) +
         " kmeans " + fmt(e.kmeans) + " focus " + fmt(e.focus) + " (" + fmt(dt, 0) + " s)");
  }
  return r;
}

// ---------------------------------------------------------------- AC-5 matching oracle

bool match_clusters_exact() {
  Rng rng(55);
  for (int trial = 0; trial < 200; ++trial) {
    const int64_t k = 2 + static_cast<int64_t>(rng.uniform_index(5));
    const int64_t n = 1 + static_cast<int64_t>(rng.uniform_index(40));
    std::vector<int64_t> a(static_cast<size_t>(n)), y(static_cast<size_t>(n));
    for (int64_t i = 0; i < n; ++i) {
      a[static_cast<size_t>(i)] = static_cast<int64_t>(rng.uniform_index(static_cast<uint64_t>(k)));
      y[static_cast<size_t>(i)] = static_cast<int64_t>(rng.uniform_index(static_cast<uint64_t>(k)));
    }
    const auto got = evalkit::match_clusters(a, y, k);
    const auto want = oracle::best_permutation(a, y, k);
    if (got.first != want.first || got.second != want.second) return false;
  }
  return true;
}

// ---------------------------------------------------------------- AC-8

Verdict ac8(const datamodel::LabelledImages& train_set, const TestSet& ts) {
  torch::set_num_threads(1);
  at::globalContext().setDeterministicAlgorithms(true, false);
  auto cfg = train::desk_train_config(train::MethodKind::trident, sslcore::LossKind::make_vicreg(), 3);
  train::TrainOptions opt;
  opt.max_steps = 50;
  const auto a = train::train_ssl(train_set, kClasses, cfg, opt);
  const auto b = train::train_ssl(train_set, kClasses, cfg, opt);
  const bool logs_equal = a.log.steps.size() == 50 && a.log.steps == b.log.steps;

  const auto bytes = train::serialize_checkpoint(a.checkpoint);
  const auto back = train::deserialize_checkpoint(bytes);
  auto e1 = train::load_primary_encoder(a.checkpoint);
  auto e2 = train::load_primary_encoder(back);
  const auto batch = ts.test.primary.slice(0, 0, 64);
  const bool embeddings_equal = torch::equal(evalkit::extract_features(e1, batch), evalkit::extract_features(e2, batch));

  const int64_t per_epoch = train_set.size() / 64;
  const int64_t total = 100 * per_epoch, warmup = 10 * per_epoch;
  const double l0 = train::lr_at(0, total, warmup, 1e-4);
  const double lw = train::lr_at(warmup, total, warmup, 1e-4);
  const double lt = train::lr_at(total, total, warmup, 1e-4);
  const bool lr_exact = l0 == 0.0 && lw == 1e-4 && lt == 0.0;

  return {logs_equal && embeddings_equal && lr_exact,
          std::string("50-step logs ") + (logs_equal ? "bit-identical" : "DIFFER") + ", round-trip embeddings " +
              (embeddings_equal ? "bitwise equal" : "DIFFER") + ", lr_at(0|warmup|end) = " + sci(l0) + "|" + sci(lw) +
              "|" + sci(lt)};
}

// ---------------------------------------------------------------- AC-9 (exact parts)

std::pair<double, double> saliency_oracles() {
  torch::manual_seed(91);
  double worst = 0.0;
  for (int trial = 0; trial < 10; ++trial) {
    oracle::PointwiseCam net(torch::randn({5, 3}, torch::kFloat64));
    torch::nn::Linear head(5, 3);
    head->to(torch::kFloat64);
    const auto x = torch::rand({3, 12, 12}, torch::kFloat64);
    const int64_t target = trial % 3;
    const auto got = evalkit::guided_gradcam(net, head, x, target);
    const auto want = net.expected_map(x, head->weight[target].detach().contiguous());
    worst = std::max(worst, (got.map - want).abs().max().item<double>());
  }
  auto mask = torch::zeros({8, 8});
  mask.slice(0, 0, 4).slice(1, 0, 4) = 1.0;
  const double uniform = evalkit::nucleus_focus_score(torch::ones({8, 8}, torch::kFloat64), mask).value_or(-1.0);
  return {worst, uniform};
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"privdistil acceptance run"};
  std::string work = (fs::temp_directory_path() / "privdistil_acceptance").string();
  std::string only;
  int seeds = 3;
  app.add_option("--work-dir", work, "scratch directory for generated data");
  app.add_option("--only", only, "comma-separated subset, e.g. AC-1,AC-8");
  app.add_option("--seeds", seeds, "seeds per configuration")->check(CLI::Range(1, 10));
  CLI11_PARSE(app, argc, argv);

  std::set<std::string> wanted;
  std::stringstream ss(only);
  for (std::string t; std::getline(ss, t, ',');) wanted.insert(t);
  auto want = [&](const std::string& id) { return wanted.empty() || wanted.count(id) > 0; };

  torch::set_num_threads(1);
  std::map<std::string, Verdict> verdicts;
  const fs::path root(work);
  fs::create_directories(root);

  if (want("AC-1")) verdicts["AC-1"] = ac1();
  if (want("AC-2")) verdicts["AC-2"] = ac2();

  const bool experiments = want("AC-3") || want("AC-4") || want("AC-5") || want("AC-6") || want("AC-7") ||
                           want("AC-8") || want("AC-9");
  if (experiments) {
    note("generating the procedural dataset");
    const auto base = make_dataset(root / "oracle");
    const auto oracle_m = translate::synthesize_pairs(base, translate::PairSource::oracle(), datamodel::MaskMode::binary);
    const auto oracle_train = datamodel::load_split(oracle_m, datamodel::Split::train, true);
    const auto ts = load_test(oracle_m);
    const auto vicreg = sslcore::LossKind::make_vicreg();
    const auto infonce = sslcore::LossKind::make_infonce();
    const auto unpriv = train::MethodKind::siamese_unprivileged;
    const auto trident = train::MethodKind::trident;

    if (want("AC-8")) verdicts["AC-8"] = ac8(oracle_train, ts);

    std::map<std::string, Runs> unpriv_runs, oracle_runs;
    const bool need_main = want("AC-3") || want("AC-4") || want("AC-5") || want("AC-6") || want("AC-9");
    if (need_main) {
      for (const auto& loss : {vicreg, infonce}) {
        unpriv_runs[loss.name()] = run_seeds("unprivileged", unpriv, loss, oracle_train, oracle_train, ts, seeds);
        if (want("AC-3") || want("AC-4") || want("AC-5") || want("AC-9")) {
          oracle_runs[loss.name()] = run_seeds("trident/oracle", trident, loss, oracle_train, oracle_train, ts, seeds);
        }
      }
    }

    if (want("AC-3")) {
      bool pass = true;
      std::string detail;
      for (const auto& loss : {vicreg, infonce}) {
        const auto& u = unpriv_runs.at(loss.name());
        const auto& t = oracle_runs.at(loss.name());
        const double mu = mean(u.field(&ModelEval::probe)), mt = mean(t.field(&ModelEval::probe));
        const double cpu_min = (u.cpu + t.cpu) / 60.0;
        pass = pass && mt - mu >= 0.05 && cpu_min < 30.0;
        detail += (detail.empty() ? "" : "; ") + loss.name() + " trident " + fmt(mt) + " vs unprivileged " + fmt(mu) +
                  " (+" + fmt(100 * (mt - mu), 2) + " pts, " + fmt(cpu_min, 1) + " CPU min)";
      }
      verdicts["AC-3"] = {pass, detail};
    }

    // directional criteria must hold for each loss
    auto per_loss = [&](double ModelEval::*f, bool higher_is_better, double margin, const std::string& what) {
      Verdict v{true, ""};
      for (const auto& [loss, u] : unpriv_runs) {
        const double mu = mean(u.field(f)), mt = mean(oracle_runs.at(loss).field(f));
        const double gain = higher_is_better ? mt - mu : mu - mt;
        v.pass = v.pass && gain >= margin;
        v.detail += (v.detail.empty() ? "" : "; ") + loss + " " + what + " trident " + fmt(mt) + " vs unprivileged " +
                    fmt(mu) + " (margin " + fmt(100 * gain, 2) + " pts)";
      }
      return v;
    };

    if (want("AC-4")) verdicts["AC-4"] = per_loss(&ModelEval::drop, false, 0.03, "OOD drop");

    if (want("AC-5")) {
      auto v = per_loss(&ModelEval::kmeans, true, 0.08, "k-means");
      const bool exact = match_clusters_exact();
      v.pass = v.pass && exact;
      v.detail += std::string("; match_clusters ") + (exact ? "equals" : "DIFFERS FROM") + " exhaustive search on 200 cases";
      verdicts["AC-5"] = v;
    }

    if (want("AC-9")) {
      const auto [cam_err, uniform] = saliency_oracles();
      auto v = per_loss(&ModelEval::focus, true, std::numeric_limits<double>::min(), "mean focus");
      v.pass = v.pass && cam_err <= 1e-5 && uniform == 0.25;
      v.detail = "guided Grad-CAM max |err| " + sci(cam_err) + ", uniform-map score " + fmt(uniform, 6) + "; " + v.detail;
      verdicts["AC-9"] = v;
    }

    std::vector<double> translated_vicreg_probe;
    if (want("AC-6") || want("AC-7")) {
      note("training the paired translator");
      auto tcfg = datamodel::default_procgen_config();
      tcfg.seed = mix64(tcfg.seed ^ fnv1a64("translator"));
      auto tm = datamodel::gen_procedural_dataset(tcfg, {500, 1, 1}, root / "translator_data");
      tm = translate::synthesize_pairs(tm, translate::PairSource::oracle(), datamodel::MaskMode::binary);
      const auto pairs = datamodel::load_split(tm, datamodel::Split::train, true);
      const double t0 = cpu_seconds();
      auto params = std::make_shared<translate::TranslatorParams>(
          translate::train_paired_translator(pairs.primary, pairs.privileged, translate::TranslateConfig{}));
      note("translator held-out MAE " + fmt(params->held_out_mae) + " (" + fmt(cpu_seconds() - t0, 0) + " s)");

      const auto translated_m = translate::synthesize_pairs(make_dataset(root / "translated"),
                                                            translate::PairSource::from_translator(params),
                                                            datamodel::MaskMode::binary);
      const auto translated_train = datamodel::load_split(translated_m, datamodel::Split::train, true);
      const double test_mae = (translated_train.privileged - oracle_train.privileged).abs().mean().item<double>();
      note("translator MAE against oracle masks on the experiment train split " + fmt(test_mae));

      translate::SynthesizeOptions noise;
      noise.noise_sigma = 0.1;
      const auto noisy_m = translate::synthesize_pairs(make_dataset(root / "noisy"), translate::PairSource::oracle(),
                                                       datamodel::MaskMode::binary, noise);
      const auto noisy_train = datamodel::load_split(noisy_m, datamodel::Split::train, true);

      bool pass = params->held_out_mae < 0.05;
      std::string detail = "translator held-out MAE " + fmt(params->held_out_mae);
      for (const auto& loss : {vicreg, infonce}) {
        if (!want("AC-6") && loss == infonce) continue;
        const auto tr = run_seeds("trident/translated", trident, loss, translated_train, oracle_train, ts, seeds);
        if (loss == vicreg) translated_vicreg_probe = tr.field(&ModelEval::probe);
        if (!want("AC-6")) continue;
        const auto nz = run_seeds("trident/noisy", trident, loss, noisy_train, oracle_train, ts, seeds);
        const double mu = mean(unpriv_runs.at(loss.name()).field(&ModelEval::probe));
        const double mtr = mean(tr.field(&ModelEval::probe)), mnz = mean(nz.field(&ModelEval::probe));
        pass = pass && mtr - mu >= 0.05 && mnz - mu >= 0.05;
        detail += "; " + loss.name() + " translated " + fmt(mtr) + ", noisy " + fmt(mnz) + " vs unprivileged " + fmt(mu);
      }
      if (want("AC-6")) verdicts["AC-6"] = {pass, detail};
    }

    if (want("AC-7")) {
      std::vector<int64_t> first(200);
      std::iota(first.begin(), first.end(), 0);
      const auto small = oracle_train.subset(first);
      const auto sp = run_seeds("siamese-privileged/200", train::MethodKind::siamese_privileged, vicreg, small,
                                oracle_train, ts, seeds);
      const double ms = mean(sp.field(&ModelEval::probe)), mt = mean(translated_vicreg_probe);
      verdicts["AC-7"] = {mt - ms >= 0.05, "trident on 2000 synthetic pairs " + fmt(mt) +
                                               " vs privileged siamese on 200 authentic pairs " + fmt(ms) + " (+" +
                                               fmt(100 * (mt - ms), 2) + " pts)"};
    }
  }

  bool all = true;
  for (int i = 1; i <= 9; ++i) {
    const std::string id = "AC-" + std::to_string(i);
    const auto it = verdicts.find(id);
    if (it == verdicts.end()) continue;
    all = all && it->second.pass;
    std::cout << id << ' ' << (it->second.pass ? "PASS" : "FAIL") << "  " << it->second.detail << std::endl;
  }
  return all ? 0 : 1;
}
