#include "privdistil/cli/config.hpp"

#include <cstdio>
#include <cstring>
#include <fstream>
#include <set>

#include "privdistil/common/error.hpp"
#include "privdistil/common/json_reader.hpp"
#include "privdistil/common/rng.hpp"

extern char** environ;

namespace privdistil::cli {

using nlohmann::json;

const RunSpec& ExperimentConfig::run(const std::string& run_id) const {
  for (const auto& r : runs) {
    if (r.run_id == run_id) return r;
  }
  throw ConfigError("no run with run_id \"" + run_id + "\" in train.runs");
}

namespace {

constexpr const char* kEnvPrefix = "PRIVDISTIL_";
const std::set<std::string> kSections{"procgen", "synthesize", "train", "evaluate", "report", "global"};

std::string lower(std::string s) {
  for (auto& c : s) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  return s;
}

std::filesystem::path resolve(const std::filesystem::path& base, const std::filesystem::path& p) {
  return p.is_absolute() ? p : base / p;
}

translate::PairSource::Kind parse_source(const std::string& s) {
  if (s == "oracle") return translate::PairSource::Kind::oracle;
  if (s == "translator") return translate::PairSource::Kind::translator;
  if (s == "imported") return translate::PairSource::Kind::imported;
  throw ConfigError("field \"synthesize.source\" must be oracle, translator or imported");
}

SynthesizeSection parse_synthesize(const json& j, const std::filesystem::path& base) {
  JsonReader r(j, "synthesize");
  SynthesizeSection s;
  s.source = parse_source(r.optional<std::string>("source", "oracle"));
  s.mode = datamodel::parse_mask_mode(r.optional<std::string>("mode", "binary"));
  if (r.has("translator_checkpoint")) {
    s.translator_checkpoint = resolve(base, r.required<std::string>("translator_checkpoint"));
  }
  if (r.has("imported_dir")) s.imported_dir = resolve(base, r.required<std::string>("imported_dir"));
  s.noise_sigma = r.optional<double>("noise_sigma", s.noise_sigma);
  if (s.noise_sigma < 0) throw ConfigError("field \"synthesize.noise_sigma\" must be non-negative");
  if (r.has("translator")) s.translator = translate::translate_config_from_json(r.raw("translator"), "synthesize.translator");
  s.translator_pairs = r.optional<int64_t>("translator_pairs", s.translator_pairs);
  if (s.translator_pairs < 2) throw ConfigError("field \"synthesize.translator_pairs\" must be at least 2");
  r.finish();
  return s;
}

std::vector<RunSpec> parse_train(const json& j) {
  JsonReader r(j, "train");
  json defaults = json::object();
  if (r.has("defaults")) {
    defaults = r.raw("defaults");
    if (!defaults.is_object()) throw ConfigError("field \"train.defaults\" must be an object");
  }
  std::vector<RunSpec> runs;
  std::set<std::string> ids;
  if (r.has("runs")) {
    const auto& arr = r.raw("runs");
    if (!arr.is_array()) throw ConfigError("field \"train.runs\" must be an array");
    for (size_t i = 0; i < arr.size(); ++i) {
      const std::string where = "train.runs[" + std::to_string(i) + "]";
      if (!arr[i].is_object()) throw ConfigError("field \"" + where + "\" must be an object");
      json merged = defaults;
      merged.update(arr[i]);
      if (!merged.contains("run_id") || !merged["run_id"].is_string()) {
        throw ConfigError("missing required field \"" + where + ".run_id\"");
      }
      RunSpec spec;
      spec.run_id = merged["run_id"].get<std::string>();
      if (spec.run_id.empty() || spec.run_id.find_first_of("/\\,. ") != std::string::npos) {
        throw ConfigError("field \"" + where + ".run_id\" must be a non-empty name without separators");
      }
      if (!ids.insert(spec.run_id).second) throw ConfigError("duplicate run_id \"" + spec.run_id + "\" in train.runs");
      merged.erase("run_id");
      spec.train = train::train_config_from_json(merged, where);
      runs.push_back(std::move(spec));
    }
  }
  r.finish();
  return runs;
}

EvaluateSection parse_evaluate(const json& j) {
  JsonReader r(j, "evaluate");
  EvaluateSection e;
  e.shift = evalkit::ood_shift_preset();
  if (r.has("probe")) e.probe = evalkit::probe_config_from_json(r.raw("probe"), "evaluate.probe");
  if (r.has("shift")) e.shift = datamodel::shift_params_from_json(r.raw("shift"));
  e.k = r.optional<int64_t>("k", e.k);
  e.kmeans_classes = r.optional<std::vector<int64_t>>("kmeans_classes", e.kmeans_classes);
  e.kmeans_features = r.optional<std::string>("kmeans_features", e.kmeans_features);
  e.saliency_samples = r.optional<int64_t>("saliency_samples", e.saliency_samples);
  r.finish();
  if (e.k < 2 || e.k > 6) throw ConfigError("field \"evaluate.k\" must lie in [2, 6]");
  if (static_cast<int64_t>(e.kmeans_classes.size()) != e.k) {
    throw ConfigError("field \"evaluate.kmeans_classes\" must list exactly k classes");
  }
  if (e.kmeans_features != "encoder" && e.kmeans_features != "projector") {
    throw ConfigError("field \"evaluate.kmeans_features\" must be encoder or projector");
  }
  if (e.saliency_samples < 1) throw ConfigError("field \"evaluate.saliency_samples\" must be positive");
  return e;
}

}  // namespace

void apply_env_overrides(json& doc, const std::map<std::string, std::string>& env) {
  if (!doc.is_object()) throw ConfigError("config root must be an object");
  for (const auto& [name, value] : env) {
    if (name.rfind(kEnvPrefix, 0) != 0) continue;
    const std::string rest = name.substr(std::strlen(kEnvPrefix));
    const auto sep = rest.find('_');
    const std::string section = lower(rest.substr(0, sep));
    if (sep == std::string::npos || sep + 1 >= rest.size() || !kSections.count(section)) {
      throw ConfigError("environment override " + name + " does not name a known section and key");
    }
    const std::string key = lower(rest.substr(sep + 1));
    json parsed = json::parse(value, nullptr, false);
    if (parsed.is_discarded()) parsed = value;
    if (section == "global") {
      doc[key] = parsed;
    } else if (section == "train") {
      doc["train"]["defaults"][key] = parsed;
    } else {
      doc[section][key] = parsed;
    }
  }
}

std::map<std::string, std::string> privdistil_environment() {
  std::map<std::string, std::string> out;
  for (char** e = environ; e && *e; ++e) {
    const std::string entry(*e);
    if (entry.rfind(kEnvPrefix, 0) != 0) continue;
    const auto eq = entry.find('=');
    if (eq == std::string::npos) continue;
    out[entry.substr(0, eq)] = entry.substr(eq + 1);
  }
  return out;
}

ExperimentConfig parse_experiment_config(const json& doc, const std::filesystem::path& base_dir) {
  JsonReader r(doc, "");
  ExperimentConfig cfg;
  cfg.raw = doc;
  cfg.work_dir = resolve(base_dir, r.optional<std::string>("work_dir", "work"));
  cfg.seeds = r.optional<std::vector<uint64_t>>("seeds", cfg.seeds);
  if (cfg.seeds.empty()) throw ConfigError("field \"seeds\" must not be empty");
  if (std::set<uint64_t>(cfg.seeds.begin(), cfg.seeds.end()).size() != cfg.seeds.size()) {
    throw ConfigError("field \"seeds\" has duplicates");
  }

  json procgen = r.raw("procgen");
  if (!procgen.is_object()) throw ConfigError("field \"procgen\" must be an object");
  if (procgen.contains("counts")) {
    JsonReader c(procgen["counts"], "procgen.counts");
    cfg.counts.train = c.required<int64_t>("train");
    cfg.counts.val = c.required<int64_t>("val");
    cfg.counts.test = c.required<int64_t>("test");
    c.finish();
    procgen.erase("counts");
  }
  cfg.procgen = datamodel::procgen_config_from_json(procgen);

  if (r.has("synthesize")) cfg.synthesize = parse_synthesize(r.raw("synthesize"), base_dir);
  if (r.has("train")) cfg.runs = parse_train(r.raw("train"));
  cfg.evaluate.shift = evalkit::ood_shift_preset();
  if (r.has("evaluate")) cfg.evaluate = parse_evaluate(r.raw("evaluate"));
  if (r.has("report")) {
    JsonReader rr(r.raw("report"), "report");
    cfg.report.csv = rr.optional<std::string>("csv", cfg.report.csv.string());
    cfg.report.markdown = rr.optional<std::string>("markdown", cfg.report.markdown.string());
    rr.finish();
  }
  cfg.report.csv = resolve(cfg.work_dir, cfg.report.csv);
  cfg.report.markdown = resolve(cfg.work_dir, cfg.report.markdown);
  r.finish();
  return cfg;
}

ExperimentConfig load_experiment_config(const std::filesystem::path& path,
                                        const std::map<std::string, std::string>& env) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read config " + path.string());
  json doc = json::parse(in, nullptr, false);
  if (doc.is_discarded()) throw ConfigError("config " + path.string() + " is not valid JSON");
  apply_env_overrides(doc, env);
  return parse_experiment_config(doc, std::filesystem::absolute(path).parent_path());
}

std::string run_config_hash(const ExperimentConfig& cfg, const RunSpec& run, uint64_t seed) {
  auto tc = run.train;
  tc.seed = seed;
  json j = {{"procgen", datamodel::to_json(cfg.procgen)},
            {"counts", {cfg.counts.train, cfg.counts.val, cfg.counts.test}},
            {"train", train::to_json(tc)}};
  if (train::needs_privileged(tc.method)) {
    const auto& s = cfg.synthesize;
    j["synthesize"] = {{"source", translate::to_string(s.source)},
                       {"mode", datamodel::to_string(s.mode)},
                       {"noise_sigma", s.noise_sigma},
                       {"translator_checkpoint", s.translator_checkpoint ? s.translator_checkpoint->string() : ""},
                       {"imported_dir", s.imported_dir ? s.imported_dir->string() : ""}};
  }
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(fnv1a64(j.dump())));
  return buf;
}

}  // namespace privdistil::cli
