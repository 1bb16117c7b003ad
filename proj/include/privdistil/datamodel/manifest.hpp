#pragma once

#include <torch/torch.h>

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "privdistil/common/image.hpp"

namespace privdistil::datamodel {

enum class Split { train, val, test };

std::string to_string(Split split);
Split parse_split(const std::string& s);  // throws DataError

struct ModalityDescriptor {
  std::string name;
  int64_t channels = 3;
  bool operator==(const ModalityDescriptor&) const = default;
};

struct ManifestRecord {
  std::string id;
  std::filesystem::path primary_path;  // relative to the manifest root
  std::optional<std::filesystem::path> privileged_path;
  int64_t label = 0;
  Split split = Split::train;
  bool operator==(const ManifestRecord&) const = default;
};

/// On-disk dataset: `manifest.csv` (id,primary_path,privileged_path,label,split) plus a
/// `manifest.meta.json` sidecar with class names and modality descriptors.
struct DatasetManifest {
  std::filesystem::path root;
  std::vector<ManifestRecord> records;
  std::vector<std::string> class_names;
  ModalityDescriptor primary{"he_rgb", 3};
  std::optional<ModalityDescriptor> privileged;

  int64_t class_count() const { return static_cast<int64_t>(class_names.size()); }
  std::filesystem::path resolve(const std::filesystem::path& rel) const { return root / rel; }
  std::filesystem::path manifest_path() const { return root / "manifest.csv"; }
  bool has_privileged() const;

  /// Ids unique, labels in range, paths non-empty. Does not touch the filesystem.
  void validate() const;
  bool operator==(const DatasetManifest&) const = default;
};

inline constexpr const char* kManifestHeader = "id,primary_path,privileged_path,label,split";

/// Writes the CSV to `path` and the metadata sidecar next to it. The manifest's root
/// becomes `path`'s directory.
void save_manifest(const DatasetManifest& manifest, const std::filesystem::path& path);
/// Throws DataError on duplicate ids, malformed rows, or referenced files that do not exist.
DatasetManifest load_manifest(const std::filesystem::path& path);
std::filesystem::path metadata_path(const std::filesystem::path& manifest_csv);

struct Sample {
  std::string id;
  ImageTensor primary;
  std::optional<ImageTensor> privileged;
  int64_t label = 0;
  Split split = Split::train;
  std::optional<std::string> shift_tag;
};

Sample load_sample(const DatasetManifest& manifest, size_t index);

/// Images of one split stacked for training and evaluation.
struct LabelledImages {
  std::vector<std::string> ids;
  torch::Tensor primary;     // N x C x H x W, float32
  torch::Tensor privileged;  // undefined when the split has no privileged images
  torch::Tensor labels;      // N, int64

  int64_t size() const { return labels.defined() ? labels.size(0) : 0; }
  bool has_privileged() const { return privileged.defined(); }
  /// Rows at `indices`, in that order.
  LabelledImages subset(const std::vector<int64_t>& indices) const;
};

LabelledImages load_split(const DatasetManifest& manifest, Split split, bool require_privileged = false);

}  // namespace privdistil::datamodel
