#include "privdistil/cli/commands.hpp"

#include <CLI11.hpp>

#include <fstream>
#include <map>
#include <ostream>

#include "privdistil/common/error.hpp"
#include "privdistil/common/rng.hpp"
#include "privdistil/evalkit/clustering.hpp"
#include "privdistil/evalkit/results.hpp"
#include "privdistil/evalkit/saliency.hpp"
#include "privdistil/train/checkpoint.hpp"

namespace privdistil::cli {

using nlohmann::json;
namespace fs = std::filesystem;

namespace {

void write_json(const json& j, const fs::path& path) {
  fs::create_directories(path.parent_path());
  const auto tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary);
    if (!out) throw DataError("cannot write " + path.string());
    out << j.dump(2) << '\n';
    if (!out) throw DataError("cannot write " + path.string());
  }
  fs::rename(tmp, path);
}

json read_json(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot read " + path.string());
  json j = json::parse(in, nullptr, false);
  if (j.is_discarded()) throw DataError(path.string() + " is not valid JSON");
  return j;
}

std::vector<const RunSpec*> selected_runs(const ExperimentConfig& cfg, const CommandOptions& opt) {
  std::vector<const RunSpec*> out;
  if (opt.run_id) {
    out.push_back(&cfg.run(*opt.run_id));
  } else {
    for (const auto& r : cfg.runs) out.push_back(&r);
  }
  if (out.empty()) throw ConfigError("no runs configured under train.runs");
  return out;
}

std::vector<uint64_t> selected_seeds(const ExperimentConfig& cfg, const CommandOptions& opt) {
  if (opt.seed) return {*opt.seed};
  return cfg.seeds;
}

datamodel::DatasetManifest manifest_for(const ExperimentConfig& cfg, bool privileged) {
  const auto path = privileged ? cfg.paired_manifest() : cfg.primary_manifest();
  if (!fs::exists(path)) {
    throw DataError("missing " + path.string() + "; run " + (privileged ? "synth" : "procgen") + " first");
  }
  return datamodel::load_manifest(path);
}

/// Registry entry of an already trained run whose hash still matches the config.
RegistryEntry trained_entry(const ExperimentConfig& cfg, const RunRegistry& reg, const RunSpec& run, uint64_t seed) {
  const auto entry = reg.find(run.run_id, seed);
  const auto where = "run " + run.run_id + " seed " + std::to_string(seed);
  if (!entry || !fs::exists(reg.checkpoint_path(run.run_id, seed))) {
    throw DataError("no checkpoint for " + where + "; run train first");
  }
  if (entry->config_hash != run_config_hash(cfg, run, seed)) {
    throw ConfigError("config of " + where + " changed since it was trained (hash " + entry->config_hash + ")");
  }
  return *entry;
}

std::string privileged_label(const ExperimentConfig& cfg, const RunSpec& run) {
  if (!train::needs_privileged(run.train.method)) return "none";
  std::string s = translate::to_string(cfg.synthesize.source) + "_" + datamodel::to_string(cfg.synthesize.mode);
  if (cfg.synthesize.noise_sigma > 0.0) s += "_noisy";
  return s;
}

torch::Tensor select_rows(const torch::Tensor& t, const std::vector<int64_t>& rows) {
  return t.index_select(0, torch::tensor(rows, torch::kLong));
}

}  // namespace

datamodel::DatasetManifest cmd_procgen(const ExperimentConfig& cfg, const CommandOptions& opt, std::ostream& log) {
  const auto out = opt.out.value_or(cfg.data_dir());
  auto m = datamodel::gen_procedural_dataset(cfg.procgen, cfg.counts, out);
  std::map<std::string, std::vector<int64_t>> counts;
  for (const auto& r : m.records) {
    auto& c = counts[datamodel::to_string(r.split)];
    c.resize(static_cast<size_t>(m.class_count()), 0);
    ++c[static_cast<size_t>(r.label)];
  }
  log << "wrote " << m.records.size() << " images to " << out.string() << '\n';
  for (const auto& [split, c] : counts) {
    log << "  " << split << ':';
    for (size_t k = 0; k < c.size(); ++k) log << ' ' << m.class_names[k] << '=' << c[k];
    log << '\n';
  }
  return m;
}

void cmd_train_translator(const ExperimentConfig& cfg, const CommandOptions& opt, std::ostream& log) {
  const auto& s = cfg.synthesize;
  auto pc = cfg.procgen;
  pc.seed = mix64(cfg.procgen.seed ^ fnv1a64("translator"));
  const auto dir = cfg.work_dir / "translator_data";
  auto m = datamodel::gen_procedural_dataset(pc, {s.translator_pairs, 1, 1}, dir);
  m = translate::synthesize_pairs(m, translate::PairSource::oracle(), s.mode);
  save_manifest(m, dir / "paired.csv");
  const auto data = datamodel::load_split(m, datamodel::Split::train, true);

  translate::TranslatorParams params;
  if (s.translator.mode == translate::TranslatorMode::paired) {
    params = translate::train_paired_translator(data.primary, data.privileged, s.translator);
  } else {
    Rng rng = Rng(s.translator.seed).derive("unpaired_order");
    const auto order = rng.permutation(data.size());
    params = translate::train_unpaired_translator(data.primary, select_rows(data.privileged, order), s.translator);
  }
  const auto path = opt.out.value_or(s.translator_checkpoint.value_or(cfg.default_translator_path()));
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  translate::save_translator(params, path);
  log << "trained " << translate::to_string(s.translator.mode) << " translator on " << data.size() << " images";
  if (params.held_out_mae >= 0.0) log << ", held-out MAE " << params.held_out_mae;
  log << "\nsaved " << path.string() << '\n';
}

datamodel::DatasetManifest cmd_synth(const ExperimentConfig& cfg, const CommandOptions& opt, std::ostream& log) {
  const auto& s = cfg.synthesize;
  const auto m = manifest_for(cfg, false);
  translate::PairSource source;
  switch (s.source) {
    case translate::PairSource::Kind::oracle:
      source = translate::PairSource::oracle();
      break;
    case translate::PairSource::Kind::translator: {
      if (!s.translator_checkpoint) {
        throw ConfigError("field \"synthesize.translator_checkpoint\" is required for source translator");
      }
      const auto path = *s.translator_checkpoint;
      if (!fs::exists(path)) throw DataError("missing translator " + path.string() + "; run train-translator first");
      source = translate::PairSource::from_translator(
          std::make_shared<const translate::TranslatorParams>(translate::load_translator(path)));
      break;
    }
    case translate::PairSource::Kind::imported:
      if (!s.imported_dir) throw ConfigError("field \"synthesize.imported_dir\" is required for source imported");
      source = translate::PairSource::imported(*s.imported_dir);
      break;
  }
  auto paired = translate::synthesize_pairs(m, source, s.mode, {s.noise_sigma, cfg.procgen.seed});
  const auto out = opt.out.value_or(cfg.paired_manifest());
  save_manifest(paired, out);
  json prov = {{"source", translate::to_string(s.source)},
               {"mode", datamodel::to_string(s.mode)},
               {"noise_sigma", s.noise_sigma},
               {"privileged", paired.privileged ? paired.privileged->name : ""}};
  if (s.source == translate::PairSource::Kind::translator) {
    prov["translator_checkpoint"] = s.translator_checkpoint->string();
  }
  if (s.imported_dir) prov["imported_dir"] = s.imported_dir->string();
  auto prov_path = out;
  prov_path.replace_extension(".provenance.json");
  write_json(prov, prov_path);
  log << "synthesized " << paired.records.size() << " privileged images (" << prov["privileged"].get<std::string>()
      << ")\nwrote " << out.string() << '\n';
  return paired;
}

void cmd_train(const ExperimentConfig& cfg, const CommandOptions& opt, std::ostream& log) {
  RunRegistry reg(cfg.registry_dir());
  for (const auto* run : selected_runs(cfg, opt)) {
    for (uint64_t seed : selected_seeds(cfg, opt)) {
      const auto hash = run_config_hash(cfg, *run, seed);
      const auto where = "run " + run->run_id + " seed " + std::to_string(seed);
      const auto existing = reg.find(run->run_id, seed);
      if (existing && existing->config_hash != hash) {
        throw ConfigError("config of " + where + " changed since it was trained (hash " + existing->config_hash +
                          ", now " + hash + "); use a new run_id");
      }
      if (existing && fs::exists(reg.checkpoint_path(run->run_id, seed))) {
        log << where << ": up to date\n";
        continue;
      }
      auto tc = run->train;
      tc.seed = seed;
      const bool priv = train::needs_privileged(tc.method);
      const auto m = manifest_for(cfg, priv);
      const auto data = datamodel::load_split(m, datamodel::Split::train, priv);
      const auto val = datamodel::load_split(m, datamodel::Split::val, priv);
      train::TrainOptions topt;
      topt.val = &val;
      log << where << ": training " << train::to_string(tc.method) << " (" << tc.loss.name() << ") on " << data.size()
          << " images" << std::endl;
      const auto result = tc.method == train::MethodKind::supervised
                              ? train::train_supervised(data, m.class_count(), tc, topt)
                              : train::train_ssl(data, m.class_count(), tc, topt);
      const auto dir = reg.run_dir(run->run_id, seed);
      fs::create_directories(dir);
      train::save_checkpoint(result.checkpoint, reg.checkpoint_path(run->run_id, seed));
      write_json(result.log.to_json(), dir / "train_log.json");
      write_json({{"run_id", run->run_id}, {"seed", seed}, {"config_hash", hash}, {"train", train::to_json(tc)}},
                 dir / "config.json");
      reg.upsert({run->run_id, seed, hash, "trained"});
      const auto& epochs = result.log.epochs;
      if (!epochs.empty()) log << where << ": final train loss " << epochs.back().train_loss << '\n';
    }
  }
}

void cmd_eval(const ExperimentConfig& cfg, const CommandOptions& opt, std::ostream& log) {
  RunRegistry reg(cfg.registry_dir());
  const auto m = manifest_for(cfg, false);
  const auto train_split = datamodel::load_split(m, datamodel::Split::train, false);
  const auto test = datamodel::load_split(m, datamodel::Split::test, false);
  const auto& ev = cfg.evaluate;
  for (int64_t c : ev.kmeans_classes) {
    if (c < 0 || c >= m.class_count()) throw ConfigError("field \"evaluate.kmeans_classes\" names an unknown class");
  }
  std::vector<int64_t> km_rows;
  std::vector<int64_t> km_labels;
  const auto test_labels = test.labels.accessor<int64_t, 1>();
  for (int64_t i = 0; i < test.size(); ++i) {
    const auto it = std::find(ev.kmeans_classes.begin(), ev.kmeans_classes.end(), test_labels[i]);
    if (it == ev.kmeans_classes.end()) continue;
    km_rows.push_back(i);
    km_labels.push_back(it - ev.kmeans_classes.begin());
  }

  for (const auto* run : selected_runs(cfg, opt)) {
    for (uint64_t seed : selected_seeds(cfg, opt)) {
      auto entry = trained_entry(cfg, reg, *run, seed);
      const auto ck = train::load_checkpoint(reg.checkpoint_path(run->run_id, seed));
      auto encoder = train::load_primary_encoder(ck);
      auto pcfg = ev.probe;
      pcfg.seed = seed;
      auto probe = evalkit::linear_probe(encoder, train_split.primary, train_split.labels, test.primary, test.labels,
                                         m.class_count(), pcfg);
      const auto ood = evalkit::ood_eval(encoder, probe.head, test.primary, test.labels, m.class_count(), ev.shift);

      auto feats = evalkit::extract_features(encoder, select_rows(test.primary, km_rows));
      if (ev.kmeans_features == "projector") {
        if (run->train.method == train::MethodKind::supervised) {
          throw ConfigError("evaluate.kmeans_features = projector needs a self-supervised run");
        }
        auto proj = train::load_primary_projector(ck);
        torch::NoGradGuard ng;
        feats = proj->forward(feats);
      }
      const auto km = evalkit::kmeans_eval(feats, km_labels, ev.k, {10, 300, seed});

      train::Checkpoint probe_ck;
      probe_ck.config = {{"class_count", m.class_count()}, {"in_features", probe.head->options.in_features()}};
      train::add_module_state(probe_ck, *probe.head, "head.");
      train::save_checkpoint(probe_ck, reg.probe_path(run->run_id, seed));

      json shifted = evalkit::to_json(ood.shifted);
      json out = {{"run",
                   {{"run_id", run->run_id},
                    {"method", train::to_string(run->train.method)},
                    {"loss", run->train.method == train::MethodKind::supervised ? "cross_entropy" : run->train.loss.name()},
                    {"privileged", privileged_label(cfg, *run)},
                    {"seed", seed},
                    {"config_hash", entry.config_hash}}},
                  {"class_names", m.class_names},
                  {"probe", evalkit::to_json(probe.test)},
                  {"ood", {{"shift", datamodel::to_json(ev.shift)}, {"shifted", shifted}, {"drop", ood.drop}}},
                  {"kmeans",
                   {{"classes", ev.kmeans_classes},
                    {"features", ev.kmeans_features},
                    {"accuracy", km.accuracy},
                    {"permutation", km.permutation},
                    {"degenerate", km.degenerate}}}};
      write_json(out, reg.eval_path(run->run_id, seed));
      entry.status = "evaluated";
      reg.upsert(entry);
      log << "run " << run->run_id << " seed " << seed << ": probe " << probe.test.accuracy << ", shifted "
          << ood.shifted.accuracy << ", drop " << ood.drop << ", k-means " << km.accuracy << '\n';
    }
  }
}

void cmd_saliency(const ExperimentConfig& cfg, const CommandOptions& opt, std::ostream& log) {
  RunRegistry reg(cfg.registry_dir());
  const auto m = manifest_for(cfg, false);
  const auto test = datamodel::load_split(m, datamodel::Split::test, false);
  std::map<std::string, size_t> record_of;
  for (size_t i = 0; i < m.records.size(); ++i) record_of[m.records[i].id] = i;
  const int64_t n = std::min(cfg.evaluate.saliency_samples, test.size());

  for (const auto* run : selected_runs(cfg, opt)) {
    for (uint64_t seed : selected_seeds(cfg, opt)) {
      trained_entry(cfg, reg, *run, seed);
      const auto probe_path = reg.probe_path(run->run_id, seed);
      if (!fs::exists(probe_path)) {
        throw DataError("no probe for run " + run->run_id + " seed " + std::to_string(seed) + "; run eval first");
      }
      auto encoder = train::load_primary_encoder(train::load_checkpoint(reg.checkpoint_path(run->run_id, seed)));
      const auto probe_ck = train::load_checkpoint(probe_path);
      torch::nn::Linear head(probe_ck.config.at("in_features").get<int64_t>(),
                             probe_ck.config.at("class_count").get<int64_t>());
      train::load_module_state(probe_ck, *head, "head.");
      head->eval();

      const auto dir = reg.saliency_dir(run->run_id, seed);
      fs::create_directories(dir);
      json scores = json::object();
      double sum = 0.0;
      int64_t counted = 0;
      for (int64_t i = 0; i < n; ++i) {
        const auto& id = test.ids[static_cast<size_t>(i)];
        const auto& rec = m.records[record_of.at(id)];
        const auto map = evalkit::guided_gradcam(*encoder, head, test.primary[i], test.labels[i].item<int64_t>());
        evalkit::write_saliency_png(map, dir / (id + ".png"));
        const auto truth = datamodel::load_ground_truth(datamodel::ground_truth_path(m.resolve(rec.primary_path)));
        const auto mask = datamodel::oracle_mask(truth, ImageTensor(test.primary[i]), datamodel::MaskMode::binary);
        const auto score = evalkit::nucleus_focus_score(map.map, mask.data()[0]);
        scores[id] = score ? json(*score) : json(nullptr);
        if (score) {
          sum += *score;
          ++counted;
        }
      }
      const double mean = counted > 0 ? sum / static_cast<double>(counted) : std::nan("");
      write_json({{"samples", n}, {"scored", counted}, {"mean_focus", counted > 0 ? json(mean) : json(nullptr)},
                  {"scores", scores}},
                 reg.run_dir(run->run_id, seed) / "saliency.json");
      log << "run " << run->run_id << " seed " << seed << ": " << n << " maps, mean focus " << mean << '\n';
    }
  }
}

void cmd_report(const ExperimentConfig& cfg, const CommandOptions& opt, std::ostream& log) {
  RunRegistry reg(cfg.registry_dir());
  std::vector<evalkit::ResultRow> rows;
  for (const auto& e : reg.entries()) {
    if (opt.run_id && e.run_id != *opt.run_id) continue;
    if (opt.seed && e.seed != *opt.seed) continue;
    const auto eval_path = reg.eval_path(e.run_id, e.seed);
    if (!fs::exists(eval_path)) continue;
    const auto ev = read_json(eval_path);
    const auto& run = ev.at("run");
    evalkit::ResultRow base{e.run_id, run.at("method"), run.at("loss"), run.at("privileged"), e.seed, "", 0.0};
    auto add = [&](const std::string& metric, double value) {
      auto r = base;
      r.metric = metric;
      r.value = value;
      rows.push_back(r);
    };
    add("probe_acc", ev.at("probe").at("accuracy").get<double>());
    add("ood_acc", ev.at("ood").at("shifted").at("accuracy").get<double>());
    add("ood_drop", ev.at("ood").at("drop").get<double>());
    add("kmeans_acc", ev.at("kmeans").at("accuracy").get<double>());
    const auto names = ev.at("class_names").get<std::vector<std::string>>();
    const auto& per_class = ev.at("probe").at("per_class");
    for (size_t k = 0; k < names.size() && k < per_class.size(); ++k) {
      if (per_class[k].is_number()) add("class_acc/" + names[k], per_class[k].get<double>());
    }
    const auto sal = reg.run_dir(e.run_id, e.seed) / "saliency.json";
    if (fs::exists(sal)) {
      const auto sj = read_json(sal);
      if (sj.at("mean_focus").is_number()) add("focus_score", sj.at("mean_focus").get<double>());
    }
  }
  if (rows.empty()) throw DataError("registry " + reg.root().string() + " has no evaluated runs; run eval first");
  fs::create_directories(cfg.report.csv.parent_path());
  fs::create_directories(cfg.report.markdown.parent_path());
  evalkit::write_results_csv(rows, cfg.report.csv);
  std::ofstream md(cfg.report.markdown, std::ios::binary);
  if (!md) throw DataError("cannot write " + cfg.report.markdown.string());
  md << evalkit::markdown_summary(rows);
  log << "wrote " << rows.size() << " rows to " << cfg.report.csv.string() << " and " << cfg.report.markdown.string()
      << '\n';
}

int run_cli(int argc, char** argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Privileged-modality distillation experiments"};
  app.require_subcommand(1);
  std::string config_path;
  std::string run_id;
  uint64_t seed = 0;
  std::string out_path;
  bool strict = false;

  using Handler = void (*)(const ExperimentConfig&, const CommandOptions&, std::ostream&);
  const std::vector<std::tuple<std::string, std::string, Handler>> verbs{
      {"procgen", "generate the procedural dataset",
       [](const ExperimentConfig& c, const CommandOptions& o, std::ostream& l) { cmd_procgen(c, o, l); }},
      {"train-translator", "train the primary-to-privileged translator", cmd_train_translator},
      {"synth", "synthesize privileged images for the dataset",
       [](const ExperimentConfig& c, const CommandOptions& o, std::ostream& l) { cmd_synth(c, o, l); }},
      {"train", "train the configured runs for every seed", cmd_train},
      {"eval", "linear probe, shifted probe and k-means for trained runs", cmd_eval},
      {"saliency", "guided Grad-CAM maps and focus scores", cmd_saliency},
      {"report", "aggregate evaluated runs into CSV and Markdown", cmd_report},
  };
  std::map<CLI::App*, Handler> handlers;
  std::map<CLI::App*, CLI::Option*> seed_opts;
  std::map<CLI::App*, CLI::Option*> run_opts;
  std::map<CLI::App*, CLI::Option*> out_opts;
  for (const auto& [name, desc, handler] : verbs) {
    auto* sub = app.add_subcommand(name, desc);
    sub->add_option("--config", config_path, "experiment config (JSON)")->required();
    run_opts[sub] = sub->add_option("--run-id", run_id, "restrict to one run");
    seed_opts[sub] = sub->add_option("--seed", seed, "restrict to one seed");
    out_opts[sub] = sub->add_option("--out", out_path, "output path override");
    sub->add_flag("--strict-deterministic", strict, "single-threaded deterministic kernels");
    handlers[sub] = handler;
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kExitOk : kExitConfig;
  }

  CLI::App* sub = app.get_subcommands().front();
  CommandOptions opt;
  if (run_opts[sub]->count() > 0) opt.run_id = run_id;
  if (seed_opts[sub]->count() > 0) opt.seed = seed;
  if (out_opts[sub]->count() > 0) opt.out = out_path;
  try {
    if (strict) {
      torch::set_num_threads(1);
      at::globalContext().setDeterministicAlgorithms(true, false);
    }
    const auto cfg = load_experiment_config(config_path, privdistil_environment());
    handlers[sub](cfg, opt, out);
    return kExitOk;
  } catch (const ConfigError& e) {
    err << "config error: " << e.what() << '\n';
    return kExitConfig;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return kExitRuntime;
  }
}

}  // namespace privdistil::cli
