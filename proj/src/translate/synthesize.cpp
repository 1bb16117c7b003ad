#include "privdistil/translate/synthesize.hpp"

#include "privdistil/common/error.hpp"
#include "privdistil/common/rng.hpp"
#include "privdistil/datamodel/procgen.hpp"

namespace privdistil::translate {

using datamodel::DatasetManifest;

PairSource PairSource::from_translator(std::shared_ptr<const TranslatorParams> params) {
  if (!params) throw ConfigError("translator pair source needs translator parameters");
  PairSource s;
  s.kind = Kind::translator;
  s.translator = std::move(params);
  return s;
}

PairSource PairSource::imported(std::filesystem::path dir) {
  PairSource s;
  s.kind = Kind::imported;
  s.directory = std::move(dir);
  return s;
}

std::string to_string(PairSource::Kind k) {
  switch (k) {
    case PairSource::Kind::oracle:
      return "oracle";
    case PairSource::Kind::translator:
      return "translator";
    case PairSource::Kind::imported:
      return "imported";
  }
  return "oracle";
}

std::filesystem::path privileged_path_for(const std::filesystem::path& primary_path) {
  auto p = primary_path;
  p.replace_extension(".priv.png");
  return p;
}

namespace {

ImageTensor add_noise(const ImageTensor& img, double sigma, Rng rng) {
  auto noisy = img.data().clone();
  float* p = noisy.data_ptr<float>();
  for (int64_t i = 0; i < noisy.numel(); ++i) {
    p[i] = static_cast<float>(std::clamp(static_cast<double>(p[i]) + sigma * rng.normal(), 0.0, 1.0));
  }
  return ImageTensor(noisy);
}

}  // namespace

DatasetManifest synthesize_pairs(const DatasetManifest& manifest, const PairSource& source, datamodel::MaskMode mode,
                                 const SynthesizeOptions& options) {
  if (source.kind == PairSource::Kind::translator && !source.translator) {
    throw ConfigError("translator pair source without translator parameters");
  }
  if (source.kind == PairSource::Kind::imported && !std::filesystem::is_directory(source.directory)) {
    throw DataError("imported privileged directory " + source.directory.string() + " does not exist");
  }
  if (options.noise_sigma < 0) throw ConfigError("noise sigma must be non-negative");

  DatasetManifest out = manifest;
  int64_t channels = -1;
  for (auto& rec : out.records) {
    const auto primary_file = manifest.resolve(rec.primary_path);
    const auto primary = read_png(primary_file);
    ImageTensor priv;
    switch (source.kind) {
      case PairSource::Kind::oracle: {
        const auto gt = datamodel::load_ground_truth(datamodel::ground_truth_path(primary_file));
        priv = datamodel::oracle_mask(gt, primary, mode);
        break;
      }
      case PairSource::Kind::translator:
        priv = translate(*source.translator, primary);
        break;
      case PairSource::Kind::imported: {
        const auto file = source.directory / (rec.id + ".png");
        if (!std::filesystem::exists(file)) throw DataError("imported directory has no image for id \"" + rec.id + "\"");
        priv = read_png(file);
        if (priv.height() != primary.height() || priv.width() != primary.width()) {
          throw ShapeError("imported image for \"" + rec.id + "\" differs in size from its primary");
        }
        break;
      }
    }
    if (options.noise_sigma > 0) priv = add_noise(priv, options.noise_sigma, Rng(options.noise_seed).derive(rec.id));
    if (channels < 0) channels = priv.channels();
    if (priv.channels() != channels) throw ShapeError("privileged images have inconsistent channel counts");

    const auto rel = privileged_path_for(rec.primary_path);
    write_png(manifest.resolve(rel), priv);
    rec.privileged_path = rel;
  }

  std::string name;
  switch (source.kind) {
    case PairSource::Kind::oracle:
      name = "oracle_" + datamodel::to_string(mode);
      break;
    case PairSource::Kind::translator:
      name = "translated";
      break;
    case PairSource::Kind::imported:
      name = "imported";
      break;
  }
  if (options.noise_sigma > 0) name += "_noisy";
  out.privileged = datamodel::ModalityDescriptor{name, channels < 0 ? datamodel::mask_channels(mode) : channels};
  return out;
}

}  // namespace privdistil::translate
