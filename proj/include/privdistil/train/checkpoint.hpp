#pragma once

#include <torch/torch.h>

#include <cstdint>
#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

namespace privdistil::train {

inline constexpr uint32_t kCheckpointVersion = 1;

/// Named float32 tensors plus the configuration that produced them.
struct Checkpoint {
  uint32_t version = kCheckpointVersion;
  std::vector<std::pair<std::string, torch::Tensor>> tensors;
  nlohmann::json config = nlohmann::json::object();
  int64_t epoch = 0;
  nlohmann::json metrics = nlohmann::json::object();

  bool has(const std::string& name) const;
  const torch::Tensor& at(const std::string& name) const;
};

/// Binary layout: "PDCK", u32 version, u32 tensor count, then per tensor u16 name length,
/// name bytes, u8 rank, u32 dims, float32 values; finally a u32-length-prefixed JSON blob
/// {"config", "epoch", "metrics"}. All integers and floats little-endian.
void save_checkpoint(const Checkpoint& ck, const std::filesystem::path& path);
std::vector<uint8_t> serialize_checkpoint(const Checkpoint& ck);

/// Throws CorruptionError on bad magic, unsupported version or truncation.
Checkpoint load_checkpoint(const std::filesystem::path& path);
Checkpoint deserialize_checkpoint(const std::vector<uint8_t>& bytes);

/// Appends every parameter and buffer of `module` as `<prefix><name>`.
void add_module_state(Checkpoint& ck, const torch::nn::Module& module, const std::string& prefix);

/// Copies tensors named `<prefix>*` into `module`. Every module parameter and buffer must
/// be present; a checkpoint name under `prefix` that the module does not have is an error.
void load_module_state(const Checkpoint& ck, torch::nn::Module& module, const std::string& prefix);

}  // namespace privdistil::train
