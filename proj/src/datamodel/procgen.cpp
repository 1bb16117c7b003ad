#include "privdistil/datamodel/procgen.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numbers>

#include "privdistil/common/error.hpp"
#include "privdistil/common/json_reader.hpp"

namespace privdistil::datamodel {

using nlohmann::json;

void ProcGenConfig::validate() const {
  if (image_size < ImageTensor::kMinSide) throw ConfigError("procgen.image_size must be >= 16");
  if (classes.size() < 2) throw ConfigError("procgen.classes must define at least two classes");
  for (size_t k = 0; k < classes.size(); ++k) {
    const auto& c = classes[k];
    const std::string where = "procgen.classes[" + std::to_string(k) + "]";
    if (c.nuclei.density < 0.0) throw ConfigError(where + ".nuclei.density must be >= 0");
    if (!(c.nuclei.mean_radius > 0.0)) throw ConfigError(where + ".nuclei.mean_radius must be > 0");
    if (c.nuclei.radius_jitter < 0.0 || c.nuclei.radius_jitter >= 1.0) {
      throw ConfigError(where + ".nuclei.radius_jitter must lie in [0,1)");
    }
    if (c.nuclei.eccentricity < 0.0 || c.nuclei.eccentricity >= 1.0) {
      throw ConfigError(where + ".nuclei.eccentricity must lie in [0,1)");
    }
    if (c.nuclei.type_weights.empty() || c.nuclei.type_weights.size() > kNucleusTypeCount) {
      throw ConfigError(where + ".nuclei.type_weights must have 1.." + std::to_string(kNucleusTypeCount) + " entries");
    }
    double total = 0.0;
    for (double w : c.nuclei.type_weights) {
      if (w < 0.0) throw ConfigError(where + ".nuclei.type_weights must be non-negative");
      total += w;
    }
    if (!(total > 0.0)) throw ConfigError(where + ".nuclei.type_weights must not all be zero");
    if (!(c.background.noise_scale > 0.0)) throw ConfigError(where + ".background.noise_scale must be > 0");
    if (c.background.fiber_count < 0) throw ConfigError(where + ".background.fiber_count must be >= 0");
  }
  if (clutter.debris_min < 0 || clutter.debris_max < clutter.debris_min) {
    throw ConfigError("procgen.clutter debris range is invalid");
  }
  // Some pair of classes must be separable only through their nuclei.
  bool nucleus_only_pair = false;
  for (size_t i = 0; i < classes.size() && !nucleus_only_pair; ++i) {
    for (size_t j = i + 1; j < classes.size(); ++j) {
      if (classes[i].background == classes[j].background && !(classes[i].nuclei == classes[j].nuclei)) {
        nucleus_only_pair = true;
        break;
      }
    }
  }
  if (!nucleus_only_pair) {
    throw ConfigError("procgen.classes needs two classes with identical background and different nuclei");
  }
}

ProcGenConfig default_procgen_config() {
  ProcGenConfig cfg;
  const BackgroundParams shared{{0.92, 0.68, 0.80}, 8.0, 0.25, 4};
  cfg.classes = {
      {"stroma", shared, {2.5, 2.4, 0.1, 0.3, {0.05, 0.05, 0.8, 0.05, 0.05}}},
      {"muscle", shared, {4.5, 2.8, 0.1, 0.3, {0.05, 0.05, 0.8, 0.05, 0.05}}},
      {"lymphocytes", {{0.92, 0.68, 0.80}, 4.0, 0.30, 1}, {6.0, 2.0, 0.1, 0.2, {0.05, 0.85, 0.05, 0.05, 0.0}}},
      {"tumour", {{0.92, 0.68, 0.80}, 16.0, 0.20, 8}, {1.5, 3.4, 0.1, 0.7, {0.85, 0.05, 0.0, 0.05, 0.05}}},
  };
  return cfg;
}

// ---------------------------------------------------------------------------------------
// ground truth

json to_json(const GroundTruth& gt) {
  json nuclei = json::array();
  for (size_t i = 0; i < gt.nuclei.size(); ++i) {
    const auto& n = gt.nuclei[i];
    nuclei.push_back({{"id", i + 1},
                      {"center", {n.cx, n.cy}},
                      {"radii", {n.radius_major, n.radius_minor}},
                      {"angle", n.angle},
                      {"type", n.type}});
  }
  return {{"width", gt.width}, {"height", gt.height}, {"nuclei", nuclei}};
}

GroundTruth ground_truth_from_json(const json& j) {
  try {
    GroundTruth gt;
    gt.width = j.at("width").get<int64_t>();
    gt.height = j.at("height").get<int64_t>();
    for (const auto& n : j.at("nuclei")) {
      Nucleus nu;
      nu.cx = n.at("center").at(0).get<double>();
      nu.cy = n.at("center").at(1).get<double>();
      nu.radius_major = n.at("radii").at(0).get<double>();
      nu.radius_minor = n.at("radii").at(1).get<double>();
      nu.angle = n.at("angle").get<double>();
      nu.type = n.at("type").get<int>();
      if (nu.type < 0 || nu.type >= kNucleusTypeCount) throw DataError("nucleus type out of range");
      gt.nuclei.push_back(nu);
    }
    return gt;
  } catch (const json::exception& e) {
    throw DataError(std::string("malformed ground truth: ") + e.what());
  }
}

void save_ground_truth(const GroundTruth& gt, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write " + path.string());
  out << to_json(gt).dump() << '\n';
  if (!out) throw DataError("cannot write " + path.string());
}

GroundTruth load_ground_truth(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("missing ground truth " + path.string());
  try {
    return ground_truth_from_json(json::parse(in));
  } catch (const json::parse_error& e) {
    throw DataError("malformed ground truth " + path.string() + ": " + e.what());
  }
}

std::filesystem::path ground_truth_path(const std::filesystem::path& primary_path) {
  auto p = primary_path;
  p.replace_extension(".gt.json");
  return p;
}

double nucleus_coverage(const Nucleus& n, int64_t x, int64_t y) {
  const double ct = std::cos(n.angle);
  const double st = std::sin(n.angle);
  const double ia = 1.0 / (n.radius_major * n.radius_major);
  const double ib = 1.0 / (n.radius_minor * n.radius_minor);
  int inside = 0;
  for (int sy = 0; sy < kCoverageSamples; ++sy) {
    const double dy = static_cast<double>(y) + (sy + 0.5) / kCoverageSamples - n.cy;
    for (int sx = 0; sx < kCoverageSamples; ++sx) {
      const double dx = static_cast<double>(x) + (sx + 0.5) / kCoverageSamples - n.cx;
      const double u = dx * ct + dy * st;
      const double v = -dx * st + dy * ct;
      if (u * u * ia + v * v * ib <= 1.0) ++inside;
    }
  }
  return static_cast<double>(inside) / (kCoverageSamples * kCoverageSamples);
}

namespace {

struct Box {
  int64_t x0, x1, y0, y1;  // half-open
};

Box bounding_box(const Nucleus& n, int64_t width, int64_t height) {
  const auto r = static_cast<int64_t>(std::ceil(std::max(n.radius_major, n.radius_minor))) + 1;
  const auto cx = static_cast<int64_t>(std::floor(n.cx));
  const auto cy = static_cast<int64_t>(std::floor(n.cy));
  return {std::max<int64_t>(0, cx - r), std::min(width, cx + r + 1), std::max<int64_t>(0, cy - r),
          std::min(height, cy + r + 1)};
}

/// Planar float64 RGB canvas.
struct Canvas {
  int64_t size;
  std::vector<double> px;  // 3 * size * size, channel-major

  explicit Canvas(int64_t s) : size(s), px(static_cast<size_t>(3 * s * s), 0.0) {}
  double& at(int c, int64_t y, int64_t x) { return px[static_cast<size_t>((c * size + y) * size + x)]; }

  void blend(int64_t y, int64_t x, double alpha, const Rgb& color) {
    const std::array<double, 3> col{color.r, color.g, color.b};
    for (int c = 0; c < 3; ++c) at(c, y, x) = at(c, y, x) * (1.0 - alpha) + alpha * col[static_cast<size_t>(c)];
  }
};

std::vector<double> value_noise(Rng& rng, int64_t size, double scale) {
  const auto g = static_cast<int64_t>(std::floor(static_cast<double>(size) / scale)) + 2;
  std::vector<double> lattice(static_cast<size_t>(g * g));
  for (auto& v : lattice) v = rng.uniform();
  auto node = [&](int64_t i, int64_t j) { return lattice[static_cast<size_t>(std::min(i, g - 1) * g + std::min(j, g - 1))]; };
  std::vector<double> out(static_cast<size_t>(size * size));
  for (int64_t y = 0; y < size; ++y) {
    const double ty = static_cast<double>(y) / scale;
    const auto iy = static_cast<int64_t>(std::floor(ty));
    double fy = ty - static_cast<double>(iy);
    fy = fy * fy * (3.0 - 2.0 * fy);
    for (int64_t x = 0; x < size; ++x) {
      const double tx = static_cast<double>(x) / scale;
      const auto ix = static_cast<int64_t>(std::floor(tx));
      double fx = tx - static_cast<double>(ix);
      fx = fx * fx * (3.0 - 2.0 * fx);
      const double top = node(iy, ix) * (1.0 - fx) + node(iy, ix + 1) * fx;
      const double bot = node(iy + 1, ix) * (1.0 - fx) + node(iy + 1, ix + 1) * fx;
      out[static_cast<size_t>(y * size + x)] = top * (1.0 - fy) + bot * fy;
    }
  }
  return out;
}

Rgb jitter(const Rgb& base, double sigma, Rng& rng) {
  return {base.r + rng.normal(0.0, sigma), base.g + rng.normal(0.0, sigma), base.b + rng.normal(0.0, sigma)};
}

int sample_type(const std::vector<double>& weights, Rng& rng) {
  double total = 0.0;
  for (double w : weights) total += w;
  double u = rng.uniform() * total;
  for (size_t t = 0; t < weights.size(); ++t) {
    if (u < weights[t]) return static_cast<int>(t);
    u -= weights[t];
  }
  return static_cast<int>(weights.size()) - 1;
}

void paint_ellipse(Canvas& canvas, const Nucleus& n, double opacity, const Rgb& color) {
  const Box b = bounding_box(n, canvas.size, canvas.size);
  for (int64_t y = b.y0; y < b.y1; ++y) {
    for (int64_t x = b.x0; x < b.x1; ++x) {
      const double cov = nucleus_coverage(n, x, y);
      if (cov > 0.0) canvas.blend(y, x, cov * opacity, color);
    }
  }
}

}  // namespace

torch::Tensor rasterize_instances(const GroundTruth& gt) {
  auto out = torch::zeros({gt.height, gt.width}, torch::kInt32);
  auto* p = out.data_ptr<int32_t>();
  for (size_t i = 0; i < gt.nuclei.size(); ++i) {
    const Box b = bounding_box(gt.nuclei[i], gt.width, gt.height);
    for (int64_t y = b.y0; y < b.y1; ++y) {
      for (int64_t x = b.x0; x < b.x1; ++x) {
        if (nucleus_coverage(gt.nuclei[i], x, y) >= 0.5) p[y * gt.width + x] = static_cast<int32_t>(i + 1);
      }
    }
  }
  return out;
}

RenderedSample render_sample(const ProcGenConfig& config, int64_t label, Rng& rng) {
  if (label < 0 || label >= config.class_count()) throw ConfigError("label out of range for procgen config");
  const auto& spec = config.classes[static_cast<size_t>(label)];
  const auto& clutter = config.clutter;
  const int64_t s = config.image_size;
  Canvas canvas(s);

  // stained background with smooth texture
  const Rgb bg = jitter(spec.background.base_color, clutter.stain_jitter, rng);
  const auto noise = value_noise(rng, s, spec.background.noise_scale);
  const std::array<double, 3> bgc{bg.r, bg.g, bg.b};
  for (int c = 0; c < 3; ++c) {
    for (int64_t i = 0; i < s * s; ++i) {
      canvas.px[static_cast<size_t>(c * s * s + i)] =
          bgc[static_cast<size_t>(c)] * (1.0 - spec.background.noise_amplitude * noise[static_cast<size_t>(i)]);
    }
  }

  for (int f = 0; f < spec.background.fiber_count; ++f) {
    const double th = rng.uniform(0.0, std::numbers::pi);
    const double fx = rng.uniform(0.0, static_cast<double>(s));
    const double fy = rng.uniform(0.0, static_cast<double>(s));
    const double w = rng.uniform(1.0, 3.0);
    const double strength = rng.uniform(0.2, 0.5);
    const double sn = std::sin(th);
    const double cs = std::cos(th);
    for (int64_t y = 0; y < s; ++y) {
      for (int64_t x = 0; x < s; ++x) {
        const double d = std::abs((static_cast<double>(x) + 0.5 - fx) * sn - (static_cast<double>(y) + 0.5 - fy) * cs);
        const double a = std::clamp(1.0 - d / w, 0.0, 1.0) * strength;
        if (a > 0.0) canvas.blend(y, x, a, clutter.fiber_color);
      }
    }
  }

  const Rgb stain = jitter(clutter.nucleus_color, clutter.nucleus_jitter, rng);

  // thin fragments in the nuclear stain; not part of the ground truth
  const auto debris = rng.uniform_int(clutter.debris_min, clutter.debris_max);
  for (int64_t d = 0; d < debris; ++d) {
    Nucleus frag;
    frag.cx = rng.uniform(0.0, static_cast<double>(s));
    frag.cy = rng.uniform(0.0, static_cast<double>(s));
    frag.radius_major = rng.uniform(3.0, 5.0);
    frag.radius_minor = rng.uniform(0.7, 1.1);
    frag.angle = rng.uniform(0.0, std::numbers::pi);
    const double opacity = rng.uniform(0.7, 1.0);
    paint_ellipse(canvas, frag, opacity, stain);
  }

  GroundTruth truth;
  truth.width = s;
  truth.height = s;
  const auto& np = spec.nuclei;
  const auto count = rng.poisson(np.density * static_cast<double>(s * s) / 1000.0);
  const double squash = std::sqrt(std::sqrt(1.0 - np.eccentricity * np.eccentricity));
  for (int64_t k = 0; k < count; ++k) {
    Nucleus n;
    n.cx = rng.uniform(0.0, static_cast<double>(s));
    n.cy = rng.uniform(0.0, static_cast<double>(s));
    const double r = np.mean_radius * rng.uniform(1.0 - np.radius_jitter, 1.0 + np.radius_jitter);
    n.radius_major = r / squash;
    n.radius_minor = r * squash;
    n.angle = rng.uniform(0.0, std::numbers::pi);
    n.type = sample_type(np.type_weights, rng);
    paint_ellipse(canvas, n, 1.0, stain);
    truth.nuclei.push_back(n);
  }

  auto out = torch::empty({3, s, s});
  float* dst = out.data_ptr<float>();
  for (int64_t i = 0; i < 3 * s * s; ++i) {
    const double v = canvas.px[static_cast<size_t>(i)] + rng.normal(0.0, clutter.pixel_noise);
    dst[i] = static_cast<float>(std::clamp(v, 0.0, 1.0));
  }
  return {ImageTensor(out), std::move(truth)};
}

NucleusStats nucleus_stats(const GroundTruth& gt) {
  NucleusStats st;
  const double area = static_cast<double>(gt.width * gt.height);
  st.density = area > 0.0 ? 1000.0 * static_cast<double>(gt.nuclei.size()) / area : 0.0;
  if (!gt.nuclei.empty()) {
    double sum = 0.0;
    for (const auto& n : gt.nuclei) sum += std::sqrt(n.radius_major * n.radius_minor);
    st.mean_radius = sum / static_cast<double>(gt.nuclei.size());
  }
  return st;
}

DatasetManifest gen_procedural_dataset(const ProcGenConfig& config, const SplitCounts& counts,
                                       const std::filesystem::path& out_dir) {
  config.validate();
  if (counts.train < 1 || counts.val < 1 || counts.test < 1) throw ConfigError("every split needs at least one sample");
  std::error_code ec;
  std::filesystem::create_directories(out_dir / "images", ec);
  if (ec) throw DataError("cannot create output directory " + out_dir.string() + ": " + ec.message());

  DatasetManifest manifest;
  manifest.root = out_dir;
  for (const auto& c : config.classes) manifest.class_names.push_back(c.name);
  manifest.primary = {"he_rgb", 3};

  const Rng master(config.seed);
  const std::array<std::pair<Split, int64_t>, 3> splits{{{Split::train, counts.train}, {Split::val, counts.val}, {Split::test, counts.test}}};
  for (const auto& [split, n] : splits) {
    const Rng split_rng = master.derive(to_string(split));
    for (int64_t i = 0; i < n; ++i) {
      char id[64];
      std::snprintf(id, sizeof(id), "%s_%06lld", to_string(split).c_str(), static_cast<long long>(i));
      const int64_t label = i % config.class_count();
      Rng rng = split_rng.derive(static_cast<uint64_t>(i));
      const auto rendered = render_sample(config, label, rng);
      const std::filesystem::path rel = std::filesystem::path("images") / (std::string(id) + ".png");
      write_png(out_dir / rel, rendered.image);
      save_ground_truth(rendered.truth, out_dir / ground_truth_path(rel));
      manifest.records.push_back({id, rel, std::nullopt, label, split});
    }
  }
  save_manifest(manifest, out_dir / "manifest.csv");
  {
    std::ofstream cfg_out(out_dir / "procgen.json", std::ios::binary);
    cfg_out << to_json(config).dump(2) << '\n';
  }
  return manifest;
}

// ---------------------------------------------------------------------------------------
// config serialisation

namespace {

json rgb_json(const Rgb& c) { return json::array({c.r, c.g, c.b}); }

Rgb rgb_from(const json& j, const std::string& path) {
  if (!j.is_array() || j.size() != 3) throw ConfigError("field \"" + path + "\" must be an [r,g,b] array");
  for (const auto& v : j) {
    if (!v.is_number()) throw ConfigError("field \"" + path + "\" must be an [r,g,b] array");
  }
  return {j[0].get<double>(), j[1].get<double>(), j[2].get<double>()};
}

}  // namespace

json to_json(const ProcGenConfig& config) {
  json classes = json::array();
  for (const auto& c : config.classes) {
    classes.push_back({{"name", c.name},
                       {"background",
                        {{"base_color", rgb_json(c.background.base_color)},
                         {"noise_scale", c.background.noise_scale},
                         {"noise_amplitude", c.background.noise_amplitude},
                         {"fiber_count", c.background.fiber_count}}},
                       {"nuclei",
                        {{"density", c.nuclei.density},
                         {"mean_radius", c.nuclei.mean_radius},
                         {"radius_jitter", c.nuclei.radius_jitter},
                         {"eccentricity", c.nuclei.eccentricity},
                         {"type_weights", c.nuclei.type_weights}}}});
  }
  const auto& cl = config.clutter;
  return {{"image_size", config.image_size},
          {"seed", config.seed},
          {"classes", classes},
          {"clutter",
           {{"nucleus_color", rgb_json(cl.nucleus_color)},
            {"fiber_color", rgb_json(cl.fiber_color)},
            {"stain_jitter", cl.stain_jitter},
            {"nucleus_jitter", cl.nucleus_jitter},
            {"debris_min", cl.debris_min},
            {"debris_max", cl.debris_max},
            {"pixel_noise", cl.pixel_noise}}}};
}

ProcGenConfig procgen_config_from_json(const json& j) {
  JsonReader r(j, "procgen");
  ProcGenConfig cfg;
  cfg.image_size = r.required<int64_t>("image_size");
  cfg.seed = r.optional<uint64_t>("seed", 0);
  if (r.has("classes")) {
    const auto& arr = r.raw("classes");
    if (!arr.is_array()) throw ConfigError("field \"procgen.classes\" must be an array");
    for (size_t k = 0; k < arr.size(); ++k) {
      JsonReader cr(arr[k], "procgen.classes[" + std::to_string(k) + "]");
      ClassSpec spec;
      spec.name = cr.optional<std::string>("name", "class_" + std::to_string(k));
      {
        auto br = cr.child("background");
        if (br.has("base_color")) spec.background.base_color = rgb_from(br.raw("base_color"), br.field_path("base_color"));
        spec.background.noise_scale = br.optional<double>("noise_scale", spec.background.noise_scale);
        spec.background.noise_amplitude = br.optional<double>("noise_amplitude", spec.background.noise_amplitude);
        spec.background.fiber_count = br.optional<int>("fiber_count", spec.background.fiber_count);
        br.finish();
      }
      {
        auto nr = cr.child("nuclei");
        spec.nuclei.density = nr.required<double>("density");
        spec.nuclei.mean_radius = nr.required<double>("mean_radius");
        spec.nuclei.radius_jitter = nr.optional<double>("radius_jitter", spec.nuclei.radius_jitter);
        spec.nuclei.eccentricity = nr.optional<double>("eccentricity", spec.nuclei.eccentricity);
        spec.nuclei.type_weights = nr.optional<std::vector<double>>("type_weights", spec.nuclei.type_weights);
        nr.finish();
      }
      cr.finish();
      cfg.classes.push_back(std::move(spec));
    }
  } else {
    cfg.classes = default_procgen_config().classes;
  }
  if (r.has("clutter")) {
    auto cr = r.child("clutter");
    auto& cl = cfg.clutter;
    if (cr.has("nucleus_color")) cl.nucleus_color = rgb_from(cr.raw("nucleus_color"), cr.field_path("nucleus_color"));
    if (cr.has("fiber_color")) cl.fiber_color = rgb_from(cr.raw("fiber_color"), cr.field_path("fiber_color"));
    cl.stain_jitter = cr.optional<double>("stain_jitter", cl.stain_jitter);
    cl.nucleus_jitter = cr.optional<double>("nucleus_jitter", cl.nucleus_jitter);
    cl.debris_min = cr.optional<int>("debris_min", cl.debris_min);
    cl.debris_max = cr.optional<int>("debris_max", cl.debris_max);
    cl.pixel_noise = cr.optional<double>("pixel_noise", cl.pixel_noise);
    cr.finish();
  }
  r.finish();
  return cfg;
}

}  // namespace privdistil::datamodel
