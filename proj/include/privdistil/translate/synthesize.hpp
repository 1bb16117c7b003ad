#pragma once

#include <filesystem>
#include <memory>
#include <string>

#include "privdistil/datamodel/manifest.hpp"
#include "privdistil/datamodel/masks.hpp"
#include "privdistil/translate/translator.hpp"

namespace privdistil::translate {

/// Where privileged images come from.
struct PairSource {
  enum class Kind { oracle, translator, imported };
  Kind kind = Kind::oracle;
  std::shared_ptr<const TranslatorParams> translator;
  std::filesystem::path directory;  // imported: one <id>.png per primary id

  static PairSource oracle() { return {}; }
  static PairSource from_translator(std::shared_ptr<const TranslatorParams> params);
  static PairSource imported(std::filesystem::path dir);
};

std::string to_string(PairSource::Kind k);

struct SynthesizeOptions {
  /// Additive Gaussian noise applied to every privileged image before writing (clipped to
  /// [0,1]); drawn from a per-id stream of `noise_seed`.
  double noise_sigma = 0.0;
  uint64_t noise_seed = 0;
};

/// Writes `<id>.priv.png` next to every primary image and returns the manifest with
/// privileged paths filled in. Record order, ids, labels and splits are unchanged.
datamodel::DatasetManifest synthesize_pairs(const datamodel::DatasetManifest& manifest, const PairSource& source,
                                            datamodel::MaskMode mode, const SynthesizeOptions& options = {});

/// `<dir>/<stem>.priv.png` for a primary image path.
std::filesystem::path privileged_path_for(const std::filesystem::path& primary_path);

}  // namespace privdistil::translate
