#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "privdistil/datamodel/masks.hpp"
#include "privdistil/datamodel/procgen.hpp"
#include "privdistil/datamodel/shift.hpp"
#include "privdistil/evalkit/probe.hpp"
#include "privdistil/train/trainer.hpp"
#include "privdistil/translate/synthesize.hpp"
#include "privdistil/translate/translator.hpp"

namespace privdistil::cli {

struct SynthesizeSection {
  translate::PairSource::Kind source = translate::PairSource::Kind::oracle;
  datamodel::MaskMode mode = datamodel::MaskMode::binary;
  std::optional<std::filesystem::path> translator_checkpoint;
  std::optional<std::filesystem::path> imported_dir;
  double noise_sigma = 0.0;
  translate::TranslateConfig translator;
  int64_t translator_pairs = 500;  // size of the separately generated translator training set
};

struct RunSpec {
  std::string run_id;
  train::TrainConfig train;  // seed is replaced per entry of the global seed list
};

struct EvaluateSection {
  evalkit::ProbeConfig probe;
  datamodel::ShiftParams shift;
  int64_t k = 2;
  std::vector<int64_t> kmeans_classes{0, 1};
  std::string kmeans_features = "encoder";  // or "projector"
  int64_t saliency_samples = 32;
};

struct ReportSection {
  std::filesystem::path csv = "results.csv";
  std::filesystem::path markdown = "results.md";
};

/// Whole experiment. Relative paths resolve against the directory of the config file.
struct ExperimentConfig {
  std::filesystem::path work_dir = "work";
  std::vector<uint64_t> seeds{0};
  datamodel::ProcGenConfig procgen;
  datamodel::SplitCounts counts;
  SynthesizeSection synthesize;
  std::vector<RunSpec> runs;
  EvaluateSection evaluate;
  ReportSection report;
  nlohmann::json raw;  // validated document after environment overrides

  const RunSpec& run(const std::string& run_id) const;
  std::filesystem::path data_dir() const { return work_dir / "data"; }
  std::filesystem::path primary_manifest() const { return data_dir() / "manifest.csv"; }
  std::filesystem::path paired_manifest() const { return data_dir() / "paired.csv"; }
  std::filesystem::path registry_dir() const { return work_dir / "registry"; }
  std::filesystem::path default_translator_path() const { return work_dir / "translator.pdck"; }
};

/// Applies PRIVDISTIL_<SECTION>_<KEY> variables from `env` to `doc`. Sections are procgen,
/// synthesize, train (written to train.defaults), evaluate, report and global (top-level
/// keys). Values are parsed as JSON when possible and used as strings otherwise.
void apply_env_overrides(nlohmann::json& doc, const std::map<std::string, std::string>& env);

/// Current process environment restricted to PRIVDISTIL_* variables.
std::map<std::string, std::string> privdistil_environment();

/// Validates the whole document; every error is a ConfigError naming the offending field.
ExperimentConfig parse_experiment_config(const nlohmann::json& doc, const std::filesystem::path& base_dir);

ExperimentConfig load_experiment_config(const std::filesystem::path& path,
                                        const std::map<std::string, std::string>& env);

/// Stable 16-hex-digit hash of everything that determines a run's trained weights.
std::string run_config_hash(const ExperimentConfig& cfg, const RunSpec& run, uint64_t seed);

}  // namespace privdistil::cli
