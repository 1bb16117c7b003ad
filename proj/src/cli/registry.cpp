#include "privdistil/cli/registry.hpp"

#include <algorithm>
#include <fstream>
#include <sstream>

#include "privdistil/common/error.hpp"

namespace privdistil::cli {

namespace {
constexpr const char* kIndexHeader = "run_id,seed,config_hash,status";
}

RunRegistry::RunRegistry(std::filesystem::path root) : root_(std::move(root)) {}

std::filesystem::path RunRegistry::run_dir(const std::string& run_id, uint64_t seed) const {
  return root_ / "runs" / run_id / ("seed_" + std::to_string(seed));
}

std::filesystem::path RunRegistry::checkpoint_path(const std::string& run_id, uint64_t seed) const {
  return run_dir(run_id, seed) / "checkpoint.pdck";
}

std::filesystem::path RunRegistry::probe_path(const std::string& run_id, uint64_t seed) const {
  return run_dir(run_id, seed) / "probe.pdck";
}

std::filesystem::path RunRegistry::eval_path(const std::string& run_id, uint64_t seed) const {
  return run_dir(run_id, seed) / "eval.json";
}

std::filesystem::path RunRegistry::saliency_dir(const std::string& run_id, uint64_t seed) const {
  return run_dir(run_id, seed) / "saliency";
}

std::vector<RegistryEntry> RunRegistry::entries() const {
  std::vector<RegistryEntry> out;
  std::ifstream in(index_path());
  if (!in) return out;
  std::string line;
  if (!std::getline(in, line) || line != kIndexHeader) throw DataError("registry index has an unexpected header");
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::stringstream ss(line);
    RegistryEntry e;
    std::string seed;
    if (!std::getline(ss, e.run_id, ',') || !std::getline(ss, seed, ',') || !std::getline(ss, e.config_hash, ',') ||
        !std::getline(ss, e.status, ',')) {
      throw DataError("malformed registry index row: " + line);
    }
    try {
      e.seed = std::stoull(seed);
    } catch (const std::exception&) {
      throw DataError("malformed registry index row: " + line);
    }
    out.push_back(e);
  }
  return out;
}

std::optional<RegistryEntry> RunRegistry::find(const std::string& run_id, uint64_t seed) const {
  for (const auto& e : entries()) {
    if (e.run_id == run_id && e.seed == seed) return e;
  }
  return std::nullopt;
}

void RunRegistry::upsert(const RegistryEntry& entry) {
  auto all = entries();
  auto it = std::find_if(all.begin(), all.end(),
                         [&](const RegistryEntry& e) { return e.run_id == entry.run_id && e.seed == entry.seed; });
  if (it != all.end()) {
    *it = entry;
  } else {
    all.push_back(entry);
  }
  write_index(all);
}

void RunRegistry::write_index(const std::vector<RegistryEntry>& entries) const {
  std::filesystem::create_directories(root_);
  const auto tmp = index_path().string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary);
    if (!out) throw DataError("cannot write registry index in " + root_.string());
    out << kIndexHeader << '\n';
    for (const auto& e : entries) out << e.run_id << ',' << e.seed << ',' << e.config_hash << ',' << e.status << '\n';
    if (!out) throw DataError("cannot write registry index in " + root_.string());
  }
  std::filesystem::rename(tmp, index_path());
}

}  // namespace privdistil::cli
