#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "privdistil/datamodel/manifest.hpp"
#include "privdistil/sslcore/losses.hpp"
#include "privdistil/sslcore/networks.hpp"
#include "privdistil/train/augment.hpp"
#include "privdistil/train/checkpoint.hpp"

namespace privdistil::train {

enum class MethodKind { siamese_unprivileged, siamese_privileged, trident, supervised };

std::string to_string(MethodKind m);
MethodKind parse_method(const std::string& s);  // throws ConfigError
bool needs_privileged(MethodKind m);

struct TrainConfig {
  MethodKind method = MethodKind::trident;
  sslcore::LossKind loss;
  int64_t epochs = 100;
  double peak_lr = 1e-4;
  int64_t warmup_epochs = 10;
  int64_t batch_size = 64;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double weight_decay = 1e-6;
  AugmentationConfig augmentation;
  sslcore::EncoderConfig encoder;
  sslcore::ProjectorConfig projector;
  uint64_t seed = 0;

  void validate() const;
  bool operator==(const TrainConfig&) const = default;
};

/// Short-budget recipe used at desk scale: 20 epochs, peak lr 1e-3, 2 warmup epochs.
TrainConfig desk_train_config(MethodKind method, const sslcore::LossKind& loss, uint64_t seed);

struct StepRecord {
  int64_t step = 0;
  int64_t epoch = 0;
  double lr = 0.0;
  double total = 0.0;
  std::map<std::string, double> components;  // "<pair>/<component>"
  bool operator==(const StepRecord&) const = default;
};

struct EpochRecord {
  int64_t epoch = 0;
  double train_loss = 0.0;
  std::optional<double> val_metric;  // validation loss (SSL) or accuracy (supervised)
  bool operator==(const EpochRecord&) const = default;
};

struct TrainLog {
  std::vector<StepRecord> steps;
  std::vector<EpochRecord> epochs;
  nlohmann::json to_json() const;
};

struct TrainResult {
  Checkpoint checkpoint;
  TrainLog log;
};

struct TrainOptions {
  const datamodel::LabelledImages* val = nullptr;
  /// Stop after this many optimizer steps (the log and checkpoint reflect the partial run).
  std::optional<int64_t> max_steps;
  /// Called after every epoch with the epoch index and a checkpoint of the current state.
  std::function<void(int64_t, const Checkpoint&)> on_epoch;
};

/// Self-supervised training of the method in `cfg` on `data` (which must carry privileged
/// images for siamese_privileged and trident). Batches partition a seed-determined
/// permutation of each epoch; the remainder is dropped, except that the batch size is
/// capped at the dataset size. Throws NumericError with the step on a non-finite loss.
TrainResult train_ssl(const datamodel::LabelledImages& data, int64_t class_count, const TrainConfig& cfg,
                      const TrainOptions& options = {});
TrainResult train_ssl(const datamodel::DatasetManifest& manifest, const TrainConfig& cfg);

/// Encoder + single dense softmax head trained with cross-entropy on one augmented view.
TrainResult train_supervised(const datamodel::LabelledImages& data, int64_t class_count, const TrainConfig& cfg,
                             const TrainOptions& options = {});
TrainResult train_supervised(const datamodel::DatasetManifest& manifest, const TrainConfig& cfg);

/// Untrained models of a run, in checkpoint form (equal to the result of a 0-epoch run).
Checkpoint initial_checkpoint(const TrainConfig& cfg, int64_t primary_channels, int64_t privileged_channels,
                              int64_t class_count);

/// Rebuilds the primary encoder from a checkpoint, loading only "primary.encoder." tensors.
sslcore::Encoder load_primary_encoder(const Checkpoint& ck);

/// Rebuilds the primary projector from "primary.projector." tensors (SSL runs only).
sslcore::Projector load_primary_projector(const Checkpoint& ck);

/// Checkpoint "head." tensors as a Linear layer (supervised runs only).
torch::nn::Linear load_supervised_head(const Checkpoint& ck);

nlohmann::json to_json(const TrainConfig& c);
TrainConfig train_config_from_json(const nlohmann::json& j, const std::string& path);

}  // namespace privdistil::train
