#include "privdistil/datamodel/manifest.hpp"

#include <fstream>
#include <set>
#include <sstream>

#include <json.hpp>

#include "privdistil/common/error.hpp"

namespace privdistil::datamodel {

using nlohmann::json;

std::string to_string(Split split) {
  switch (split) {
    case Split::train:
      return "train";
    case Split::val:
      return "val";
    case Split::test:
      return "test";
  }
  return "train";
}

Split parse_split(const std::string& s) {
  if (s == "train") return Split::train;
  if (s == "val") return Split::val;
  if (s == "test") return Split::test;
  throw DataError("unknown split \"" + s + "\"");
}

bool DatasetManifest::has_privileged() const {
  if (records.empty()) return false;
  for (const auto& r : records) {
    if (!r.privileged_path) return false;
  }
  return true;
}

void DatasetManifest::validate() const {
  std::set<std::string> ids;
  for (const auto& r : records) {
    if (r.id.empty()) throw DataError("manifest record with empty id");
    if (!ids.insert(r.id).second) throw DataError("duplicate id \"" + r.id + "\" in manifest");
    if (r.primary_path.empty()) throw DataError("record \"" + r.id + "\" has an empty primary_path");
    if (r.label < 0 || (!class_names.empty() && r.label >= class_count())) {
      throw DataError("record \"" + r.id + "\" has label " + std::to_string(r.label) + " outside the class list");
    }
  }
}

std::filesystem::path metadata_path(const std::filesystem::path& manifest_csv) {
  auto p = manifest_csv;
  p.replace_extension(".meta.json");
  return p;
}

namespace {

void check_field(const std::string& field, const std::string& id) {
  if (field.find_first_of(",\"\n\r") != std::string::npos) {
    throw DataError("manifest field for \"" + id + "\" contains a comma, quote or newline");
  }
}

std::vector<std::string> split_row(const std::string& line) {
  std::vector<std::string> out;
  std::string cur;
  for (char c : line) {
    if (c == ',') {
      out.push_back(cur);
      cur.clear();
    } else {
      cur.push_back(c);
    }
  }
  out.push_back(cur);
  return out;
}

json modality_json(const ModalityDescriptor& m) { return {{"name", m.name}, {"channels", m.channels}}; }

ModalityDescriptor modality_from(const json& j) { return {j.at("name").get<std::string>(), j.at("channels").get<int64_t>()}; }

}  // namespace

void save_manifest(const DatasetManifest& manifest, const std::filesystem::path& path) {
  manifest.validate();
  std::ostringstream csv;
  csv << kManifestHeader << '\n';
  for (const auto& r : manifest.records) {
    const std::string prim = r.primary_path.generic_string();
    const std::string priv = r.privileged_path ? r.privileged_path->generic_string() : std::string();
    check_field(r.id, r.id);
    check_field(prim, r.id);
    check_field(priv, r.id);
    csv << r.id << ',' << prim << ',' << priv << ',' << r.label << ',' << to_string(r.split) << '\n';
  }
  {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw DataError("cannot write manifest " + path.string());
    out << csv.str();
    if (!out) throw DataError("cannot write manifest " + path.string());
  }
  json meta = {{"class_names", manifest.class_names}, {"primary", modality_json(manifest.primary)}};
  meta["privileged"] = manifest.privileged ? modality_json(*manifest.privileged) : json(nullptr);
  std::ofstream out(metadata_path(path), std::ios::binary);
  if (!out) throw DataError("cannot write manifest metadata " + metadata_path(path).string());
  out << meta.dump(2) << '\n';
}

DatasetManifest load_manifest(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot read manifest " + path.string());
  DatasetManifest m;
  m.root = path.parent_path();

  std::string line;
  if (!std::getline(in, line)) throw DataError("manifest " + path.string() + " is empty");
  if (!line.empty() && line.back() == '\r') line.pop_back();
  if (line != kManifestHeader) throw DataError("manifest header must be \"" + std::string(kManifestHeader) + "\"");

  size_t lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    const auto cols = split_row(line);
    const std::string where = path.filename().string() + ":" + std::to_string(lineno);
    if (cols.size() != 5) throw DataError(where + ": expected 5 columns, got " + std::to_string(cols.size()));
    ManifestRecord r;
    r.id = cols[0];
    r.primary_path = cols[1];
    if (!cols[2].empty()) r.privileged_path = std::filesystem::path(cols[2]);
    try {
      size_t used = 0;
      r.label = std::stoll(cols[3], &used);
      if (used != cols[3].size()) throw std::invalid_argument("trailing characters");
    } catch (const std::exception&) {
      throw DataError(where + ": label \"" + cols[3] + "\" is not an integer");
    }
    try {
      r.split = parse_split(cols[4]);
    } catch (const DataError& e) {
      throw DataError(where + ": " + e.what());
    }
    if (r.id.empty() || cols[1].empty()) throw DataError(where + ": id and primary_path must be non-empty");
    m.records.push_back(std::move(r));
  }

  const auto meta_file = metadata_path(path);
  if (std::filesystem::exists(meta_file)) {
    std::ifstream mi(meta_file, std::ios::binary);
    try {
      const json meta = json::parse(mi);
      m.class_names = meta.at("class_names").get<std::vector<std::string>>();
      m.primary = modality_from(meta.at("primary"));
      if (meta.contains("privileged") && !meta.at("privileged").is_null()) m.privileged = modality_from(meta.at("privileged"));
    } catch (const json::exception& e) {
      throw DataError("malformed manifest metadata " + meta_file.string() + ": " + e.what());
    }
  } else {
    // external datasets may ship without metadata; derive class names from labels
    int64_t max_label = -1;
    for (const auto& r : m.records) max_label = std::max(max_label, r.label);
    for (int64_t k = 0; k <= max_label; ++k) m.class_names.push_back("class_" + std::to_string(k));
  }

  m.validate();
  for (const auto& r : m.records) {
    if (!std::filesystem::exists(m.resolve(r.primary_path))) {
      throw DataError("record \"" + r.id + "\": missing file " + m.resolve(r.primary_path).string());
    }
    if (r.privileged_path && !std::filesystem::exists(m.resolve(*r.privileged_path))) {
      throw DataError("record \"" + r.id + "\": missing file " + m.resolve(*r.privileged_path).string());
    }
  }
  return m;
}

Sample load_sample(const DatasetManifest& manifest, size_t index) {
  const auto& r = manifest.records.at(index);
  Sample s;
  s.id = r.id;
  s.primary = read_png(manifest.resolve(r.primary_path));
  if (r.privileged_path) {
    s.privileged = read_png(manifest.resolve(*r.privileged_path));
    if (s.privileged->height() != s.primary.height() || s.privileged->width() != s.primary.width()) {
      throw ShapeError("record \"" + r.id + "\": privileged image size differs from primary");
    }
  }
  s.label = r.label;
  s.split = r.split;
  return s;
}

LabelledImages LabelledImages::subset(const std::vector<int64_t>& indices) const {
  LabelledImages out;
  auto idx = torch::tensor(indices, torch::kLong);
  for (int64_t i : indices) out.ids.push_back(ids.at(static_cast<size_t>(i)));
  out.primary = primary.index_select(0, idx);
  if (privileged.defined()) out.privileged = privileged.index_select(0, idx);
  out.labels = labels.index_select(0, idx);
  return out;
}

LabelledImages load_split(const DatasetManifest& manifest, Split split, bool require_privileged) {
  std::vector<ImageTensor> prim;
  std::vector<ImageTensor> priv;
  std::vector<int64_t> labels;
  LabelledImages out;
  bool any_priv = false;
  bool all_priv = true;
  for (size_t i = 0; i < manifest.records.size(); ++i) {
    const auto& r = manifest.records[i];
    if (r.split != split) continue;
    auto s = load_sample(manifest, i);
    out.ids.push_back(s.id);
    prim.push_back(std::move(s.primary));
    labels.push_back(s.label);
    if (s.privileged) {
      any_priv = true;
      priv.push_back(std::move(*s.privileged));
    } else {
      all_priv = false;
    }
  }
  if (prim.empty()) throw DataError("split \"" + to_string(split) + "\" is empty");
  if (require_privileged && !all_priv) {
    throw DataError("split \"" + to_string(split) + "\" has records without a privileged image");
  }
  out.primary = stack_images(prim);
  if (any_priv && all_priv) out.privileged = stack_images(priv);
  out.labels = torch::tensor(labels, torch::kLong);
  return out;
}

}  // namespace privdistil::datamodel
