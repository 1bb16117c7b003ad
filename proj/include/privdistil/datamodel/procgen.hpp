#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <json.hpp>

#include "privdistil/common/image.hpp"
#include "privdistil/common/rng.hpp"
#include "privdistil/datamodel/manifest.hpp"

namespace privdistil::datamodel {

struct Rgb {
  double r = 0.0;
  double g = 0.0;
  double b = 0.0;
  bool operator==(const Rgb&) const = default;
};

struct BackgroundParams {
  Rgb base_color{0.92, 0.68, 0.80};
  double noise_scale = 8.0;  // lattice spacing of the value noise, px
  double noise_amplitude = 0.25;
  int fiber_count = 4;
  bool operator==(const BackgroundParams&) const = default;
};

struct NucleusParams {
  double density = 3.0;  // nuclei per 1000 px^2
  double mean_radius = 2.5;
  double radius_jitter = 0.1;  // relative half-width of the uniform radius spread
  double eccentricity = 0.3;
  std::vector<double> type_weights{1.0};  // sampling weights over nucleus types
  bool operator==(const NucleusParams&) const = default;
};

struct ClassSpec {
  std::string name;
  BackgroundParams background;
  NucleusParams nuclei;
  bool operator==(const ClassSpec&) const = default;
};

/// Image-level nuisance shared by all classes: stain variation, non-nuclear fragments
/// drawn in the nuclear stain, and sensor noise.
struct ClutterParams {
  Rgb nucleus_color{0.35, 0.20, 0.55};
  Rgb fiber_color{0.70, 0.35, 0.60};
  double stain_jitter = 0.04;    // per-image std of the background colour
  double nucleus_jitter = 0.03;  // per-image std of the nuclear stain colour
  int debris_min = 0;
  int debris_max = 30;
  double pixel_noise = 0.02;
  bool operator==(const ClutterParams&) const = default;
};

struct ProcGenConfig {
  int64_t image_size = 64;
  std::vector<ClassSpec> classes;
  ClutterParams clutter;
  uint64_t seed = 0;

  int64_t class_count() const { return static_cast<int64_t>(classes.size()); }
  /// Throws ConfigError when an invariant is violated.
  void validate() const;
  bool operator==(const ProcGenConfig&) const = default;
};

/// Desk-scale default: 64x64 px, four classes. Classes 0 and 1 share a background and
/// differ only in nucleus density and size; classes 2 and 3 each have their own background
/// and nuclear morphology.
ProcGenConfig default_procgen_config();

/// Number of distinct nucleus types (palette entries for typed masks).
inline constexpr int kNucleusTypeCount = 5;

struct Nucleus {
  double cx = 0.0;
  double cy = 0.0;
  double radius_major = 0.0;
  double radius_minor = 0.0;
  double angle = 0.0;  // radians, major axis measured from +x towards +y
  int type = 0;
  bool operator==(const Nucleus&) const = default;
};

/// Nucleus list of one image, in painting order (later nuclei overwrite earlier ones).
struct GroundTruth {
  int64_t width = 0;
  int64_t height = 0;
  std::vector<Nucleus> nuclei;
  bool operator==(const GroundTruth&) const = default;
};

nlohmann::json to_json(const GroundTruth& gt);
GroundTruth ground_truth_from_json(const nlohmann::json& j);
void save_ground_truth(const GroundTruth& gt, const std::filesystem::path& path);
GroundTruth load_ground_truth(const std::filesystem::path& path);
/// `<stem>.gt.json` next to a primary image path.
std::filesystem::path ground_truth_path(const std::filesystem::path& primary_path);

/// Sub-pixel samples per axis used for nucleus coverage.
inline constexpr int kCoverageSamples = 4;

/// Fraction of pixel (x, y) covered by a nucleus, on the kCoverageSamples^2 sample grid.
double nucleus_coverage(const Nucleus& n, int64_t x, int64_t y);

/// Instance map (H x W, int32): 0 for background, otherwise 1 + index of the last nucleus
/// covering at least half of the pixel.
torch::Tensor rasterize_instances(const GroundTruth& gt);

struct RenderedSample {
  ImageTensor image;
  GroundTruth truth;
};

/// Renders one image of class `label`. Pure function of (config, label, rng state).
RenderedSample render_sample(const ProcGenConfig& config, int64_t label, Rng& rng);

struct SplitCounts {
  int64_t train = 2000;
  int64_t val = 400;
  int64_t test = 400;
};

/// Writes `<out>/images/<id>.png`, `<id>.gt.json`, `manifest.csv` and its metadata.
/// Labels cycle through the classes so per-class counts differ by at most one.
DatasetManifest gen_procedural_dataset(const ProcGenConfig& config, const SplitCounts& counts,
                                       const std::filesystem::path& out_dir);

/// Summary statistics of a ground-truth nucleus list.
struct NucleusStats {
  double density = 0.0;      // per 1000 px^2
  double mean_radius = 0.0;  // geometric mean of the semi-axes, averaged over nuclei
};
NucleusStats nucleus_stats(const GroundTruth& gt);

nlohmann::json to_json(const ProcGenConfig& config);
ProcGenConfig procgen_config_from_json(const nlohmann::json& j);

}  // namespace privdistil::datamodel
