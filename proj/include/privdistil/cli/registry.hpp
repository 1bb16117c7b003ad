#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

namespace privdistil::cli {

struct RegistryEntry {
  std::string run_id;
  uint64_t seed = 0;
  std::string config_hash;
  std::string status;  // "trained" or "evaluated"
  bool operator==(const RegistryEntry&) const = default;
};

/// Directory of completed runs: `<root>/runs/<run_id>/seed_<n>/` holds the artefacts and
/// `<root>/index.csv` lists the entries. Index updates are written to a temporary file
/// and renamed into place.
class RunRegistry {
 public:
  explicit RunRegistry(std::filesystem::path root);

  const std::filesystem::path& root() const { return root_; }
  std::filesystem::path run_dir(const std::string& run_id, uint64_t seed) const;
  std::filesystem::path checkpoint_path(const std::string& run_id, uint64_t seed) const;
  std::filesystem::path probe_path(const std::string& run_id, uint64_t seed) const;
  std::filesystem::path eval_path(const std::string& run_id, uint64_t seed) const;
  std::filesystem::path saliency_dir(const std::string& run_id, uint64_t seed) const;

  std::vector<RegistryEntry> entries() const;
  std::optional<RegistryEntry> find(const std::string& run_id, uint64_t seed) const;
  /// Inserts or replaces the entry with the same (run_id, seed).
  void upsert(const RegistryEntry& entry);

 private:
  std::filesystem::path index_path() const { return root_ / "index.csv"; }
  void write_index(const std::vector<RegistryEntry>& entries) const;

  std::filesystem::path root_;
};

}  // namespace privdistil::cli
