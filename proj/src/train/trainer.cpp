#include "privdistil/train/trainer.hpp"

#include <cmath>

#include "privdistil/common/error.hpp"
#include "privdistil/common/json_reader.hpp"
#include "privdistil/common/rng.hpp"
#include "privdistil/train/schedule.hpp"

namespace privdistil::train {

using datamodel::LabelledImages;
using sslcore::Tower;

std::string to_string(MethodKind m) {
  switch (m) {
    case MethodKind::siamese_unprivileged:
      return "siamese_unprivileged";
    case MethodKind::siamese_privileged:
      return "siamese_privileged";
    case MethodKind::trident:
      return "trident";
    case MethodKind::supervised:
      return "supervised";
  }
  return "trident";
}

MethodKind parse_method(const std::string& s) {
  if (s == "siamese_unprivileged") return MethodKind::siamese_unprivileged;
  if (s == "siamese_privileged") return MethodKind::siamese_privileged;
  if (s == "trident") return MethodKind::trident;
  if (s == "supervised") return MethodKind::supervised;
  throw ConfigError("unknown method \"" + s +
                    "\" (expected siamese_unprivileged, siamese_privileged, trident or supervised)");
}

bool needs_privileged(MethodKind m) { return m == MethodKind::siamese_privileged || m == MethodKind::trident; }

void TrainConfig::validate() const {
  if (epochs < 0) throw ConfigError("train.epochs must be non-negative");
  if (warmup_epochs < 0 || (epochs > 0 && warmup_epochs >= epochs)) {
    throw ConfigError("train.warmup_epochs must be smaller than train.epochs");
  }
  if (batch_size < 2) throw ConfigError("train.batch_size must be at least 2");
  if (!(peak_lr >= 0.0)) throw ConfigError("train.peak_lr must be non-negative");
  if (beta1 < 0.0 || beta1 >= 1.0 || beta2 < 0.0 || beta2 >= 1.0) throw ConfigError("train betas must lie in [0, 1)");
  if (weight_decay < 0.0) throw ConfigError("train.weight_decay must be non-negative");
  loss.validate();
  augmentation.validate();
  encoder.validate();
  projector.validate(encoder.embed_dim);
}

TrainConfig desk_train_config(MethodKind method, const sslcore::LossKind& loss, uint64_t seed) {
  TrainConfig c;
  c.method = method;
  c.loss = loss;
  c.epochs = 20;
  c.peak_lr = 1e-3;
  c.warmup_epochs = 2;
  c.seed = seed;
  return c;
}

nlohmann::json TrainLog::to_json() const {
  nlohmann::json steps_json = nlohmann::json::array();
  for (const auto& s : steps) {
    steps_json.push_back({{"step", s.step}, {"epoch", s.epoch}, {"lr", s.lr}, {"total", s.total}, {"components", s.components}});
  }
  nlohmann::json epochs_json = nlohmann::json::array();
  for (const auto& e : epochs) {
    nlohmann::json j = {{"epoch", e.epoch}, {"train_loss", e.train_loss}};
    j["val_metric"] = e.val_metric ? nlohmann::json(*e.val_metric) : nlohmann::json(nullptr);
    epochs_json.push_back(j);
  }
  return {{"steps", steps_json}, {"epochs", epochs_json}};
}

namespace {

struct Models {
  TrainConfig cfg;
  int64_t primary_channels = 3;
  int64_t privileged_channels = 0;
  int64_t class_count = 0;
  Tower primary;
  Tower privileged;
  torch::nn::Linear head{nullptr};

  std::vector<torch::Tensor> parameters() const {
    std::vector<torch::Tensor> p;
    if (cfg.method == MethodKind::supervised) {
      p = primary.encoder->parameters();
      auto h = head->parameters();
      p.insert(p.end(), h.begin(), h.end());
      return p;
    }
    p = primary.parameters();
    if (needs_privileged(cfg.method)) {
      auto q = privileged.parameters();
      p.insert(p.end(), q.begin(), q.end());
    }
    return p;
  }

  void train(bool on) {
    primary.encoder->train(on);
    if (primary.projector) primary.projector->train(on);
    if (privileged.encoder) privileged.train(on);
    if (head) head->train(on);
  }
};

Models build_models(TrainConfig cfg, int64_t primary_channels, int64_t privileged_channels, int64_t class_count) {
  cfg.encoder.in_channels = primary_channels;
  cfg.validate();
  if (needs_privileged(cfg.method) && privileged_channels <= 0) {
    throw ArgumentError("method " + to_string(cfg.method) + " needs privileged images");
  }
  if (cfg.method == MethodKind::supervised && class_count < 2) {
    throw ArgumentError("supervised training needs at least 2 classes");
  }
  torch::manual_seed(cfg.seed);
  Models m;
  m.cfg = cfg;
  m.primary_channels = primary_channels;
  m.privileged_channels = needs_privileged(cfg.method) ? privileged_channels : 0;
  m.class_count = class_count;
  if (cfg.method == MethodKind::supervised) {
    m.primary.encoder = sslcore::Encoder(cfg.encoder);
    m.head = torch::nn::Linear(cfg.encoder.embed_dim, class_count);
    return m;
  }
  m.primary = Tower(cfg.encoder, cfg.projector);
  if (needs_privileged(cfg.method)) {
    auto enc = cfg.encoder;
    enc.in_channels = privileged_channels;
    m.privileged = Tower(enc, cfg.projector);
  }
  return m;
}

Checkpoint snapshot(const Models& m, int64_t epoch, const nlohmann::json& metrics) {
  Checkpoint ck;
  ck.config = {{"train", to_json(m.cfg)},
               {"primary_channels", m.primary_channels},
               {"privileged_channels", m.privileged_channels},
               {"class_count", m.class_count}};
  ck.epoch = epoch;
  ck.metrics = metrics;
  add_module_state(ck, *m.primary.encoder, "primary.encoder.");
  if (m.primary.projector) add_module_state(ck, *m.primary.projector, "primary.projector.");
  if (m.privileged.encoder) {
    add_module_state(ck, *m.privileged.encoder, "privileged.encoder.");
    add_module_state(ck, *m.privileged.projector, "privileged.projector.");
  }
  if (m.head) add_module_state(ck, *m.head, "head.");
  return ck;
}

sslcore::LossBreakdown ssl_step_loss(Models& m, const torch::Tensor& x, const torch::Tensor& priv, Rng& rng) {
  const auto& aug = m.cfg.augmentation;
  auto privileged_view = [&]() { return aug.privileged_augment ? augment_batch(priv, aug, rng, false) : priv; };
  switch (m.cfg.method) {
    case MethodKind::siamese_unprivileged: {
      auto v1 = augment_batch(x, aug, rng);
      auto v2 = augment_batch(x, aug, rng);
      return sslcore::siamese_objective(v1, v2, m.primary, m.primary, m.cfg.loss);
    }
    case MethodKind::siamese_privileged: {
      auto v1 = augment_batch(x, aug, rng);
      auto p = privileged_view();
      return sslcore::siamese_objective(v1, p, m.primary, m.privileged, m.cfg.loss, "v1-priv");
    }
    case MethodKind::trident: {
      auto v1 = augment_batch(x, aug, rng);
      auto v2 = augment_batch(x, aug, rng);
      auto p = privileged_view();
      return sslcore::trident_objective(v1, v2, p, m.primary, m.privileged, m.cfg.loss);
    }
    case MethodKind::supervised:
      break;
  }
  throw ArgumentError("supervised method passed to the self-supervised trainer");
}

StepRecord make_record(int64_t step, int64_t epoch, double lr, const sslcore::LossBreakdown& loss) {
  StepRecord r{step, epoch, lr, loss.total_value(), {}};
  for (const auto& p : loss.pairs) {
    for (const auto& c : p.components) r.components[p.label + "/" + c.name] = c.value.item<double>();
  }
  return r;
}

double accuracy(Models& m, const torch::Tensor& images, const torch::Tensor& labels) {
  torch::NoGradGuard no_grad;
  m.train(false);
  int64_t correct = 0;
  for (int64_t i = 0; i < images.size(0); i += 256) {
    const int64_t j = std::min(images.size(0), i + 256);
    auto pred = m.head->forward(m.primary.encoder->forward(images.slice(0, i, j))).argmax(1);
    correct += pred.eq(labels.slice(0, i, j)).sum().item<int64_t>();
  }
  m.train(true);
  return static_cast<double>(correct) / static_cast<double>(images.size(0));
}

double ssl_val_loss(Models& m, const LabelledImages& val) {
  torch::NoGradGuard no_grad;
  m.train(false);
  Rng rng = Rng(m.cfg.seed).derive("validation");
  const int64_t bs = std::min<int64_t>(m.cfg.batch_size, val.size());
  double sum = 0.0;
  int64_t batches = 0;
  for (int64_t i = 0; i + bs <= val.size(); i += bs) {
    auto priv = val.has_privileged() ? val.privileged.slice(0, i, i + bs) : torch::Tensor();
    sum += ssl_step_loss(m, val.primary.slice(0, i, i + bs), priv, rng).total_value();
    ++batches;
  }
  m.train(true);
  return batches > 0 ? sum / static_cast<double>(batches) : 0.0;
}

TrainResult run(const LabelledImages& data, int64_t class_count, const TrainConfig& cfg, const TrainOptions& options) {
  const bool supervised = cfg.method == MethodKind::supervised;
  if (data.size() == 0) throw ArgumentError("training split is empty");
  if (needs_privileged(cfg.method) && !data.has_privileged()) {
    throw ArgumentError("method " + to_string(cfg.method) + " needs a dataset with privileged images");
  }
  const int64_t priv_channels = data.has_privileged() ? data.privileged.size(1) : 0;
  Models m = build_models(cfg, data.primary.size(1), priv_channels, class_count);
  m.train(true);

  TrainResult result;
  const int64_t n = data.size();
  const int64_t bs = std::min(cfg.batch_size, n);
  const int64_t per_epoch = n / bs;
  const int64_t total = cfg.epochs * per_epoch;
  const int64_t warmup = cfg.warmup_epochs * per_epoch;
  if (total == 0) {
    result.checkpoint = snapshot(m, 0, {{"steps", 0}});
    return result;
  }

  torch::optim::AdamW opt(m.parameters(), torch::optim::AdamWOptions(cfg.peak_lr)
                                              .betas({cfg.beta1, cfg.beta2})
                                              .weight_decay(cfg.weight_decay));
  Rng batch_rng = Rng(cfg.seed).derive("batches");
  Rng aug_rng = Rng(cfg.seed).derive("augment");

  int64_t step = 0;
  bool stop = false;
  for (int64_t epoch = 0; epoch < cfg.epochs && !stop; ++epoch) {
    const auto perm = batch_rng.permutation(n);
    double epoch_loss = 0.0;
    int64_t epoch_steps = 0;
    for (int64_t b = 0; b < per_epoch; ++b) {
      if (options.max_steps && step >= *options.max_steps) {
        stop = true;
        break;
      }
      auto idx = torch::tensor(std::vector<int64_t>(perm.begin() + b * bs, perm.begin() + (b + 1) * bs), torch::kLong);
      const double lr = lr_at(step, total, warmup, cfg.peak_lr);
      for (auto& group : opt.param_groups()) static_cast<torch::optim::AdamWOptions&>(group.options()).lr(lr);

      auto x = data.primary.index_select(0, idx);
      sslcore::LossBreakdown loss;
      if (supervised) {
        auto view = augment_batch(x, cfg.augmentation, aug_rng);
        loss = sslcore::supervised_objective(view, data.labels.index_select(0, idx), m.primary.encoder, m.head);
      } else {
        auto priv = data.has_privileged() ? data.privileged.index_select(0, idx) : torch::Tensor();
        loss = ssl_step_loss(m, x, priv, aug_rng);
      }
      const double value = loss.total_value();
      if (!std::isfinite(value)) throw NumericError("non-finite training loss", step);

      opt.zero_grad();
      loss.total.backward();
      opt.step();

      result.log.steps.push_back(make_record(step, epoch, lr, loss));
      epoch_loss += value;
      ++epoch_steps;
      ++step;
    }
    if (epoch_steps == 0) break;
    EpochRecord rec{epoch, epoch_loss / static_cast<double>(epoch_steps), std::nullopt};
    if (options.val && options.val->size() > 0) {
      rec.val_metric = supervised ? accuracy(m, options.val->primary, options.val->labels) : ssl_val_loss(m, *options.val);
    }
    result.log.epochs.push_back(rec);
    if (options.on_epoch) options.on_epoch(epoch, snapshot(m, epoch + 1, {{"train_loss", rec.train_loss}}));
  }

  m.train(false);
  const double final_loss = result.log.epochs.empty() ? 0.0 : result.log.epochs.back().train_loss;
  result.checkpoint = snapshot(m, static_cast<int64_t>(result.log.epochs.size()), {{"steps", step}, {"final_loss", final_loss}});
  return result;
}

int64_t class_count_of(const datamodel::DatasetManifest& manifest) { return manifest.class_count(); }

}  // namespace

TrainResult train_ssl(const LabelledImages& data, int64_t class_count, const TrainConfig& cfg,
                      const TrainOptions& options) {
  if (cfg.method == MethodKind::supervised) throw ArgumentError("use train_supervised for the supervised method");
  return run(data, class_count, cfg, options);
}

TrainResult train_ssl(const datamodel::DatasetManifest& manifest, const TrainConfig& cfg) {
  const auto data = datamodel::load_split(manifest, datamodel::Split::train, needs_privileged(cfg.method));
  return train_ssl(data, class_count_of(manifest), cfg);
}

TrainResult train_supervised(const LabelledImages& data, int64_t class_count, const TrainConfig& cfg,
                             const TrainOptions& options) {
  if (cfg.method != MethodKind::supervised) throw ArgumentError("train_supervised needs method supervised");
  return run(data, class_count, cfg, options);
}

TrainResult train_supervised(const datamodel::DatasetManifest& manifest, const TrainConfig& cfg) {
  const auto data = datamodel::load_split(manifest, datamodel::Split::train);
  return train_supervised(data, class_count_of(manifest), cfg);
}

Checkpoint initial_checkpoint(const TrainConfig& cfg, int64_t primary_channels, int64_t privileged_channels,
                              int64_t class_count) {
  Models m = build_models(cfg, primary_channels, privileged_channels, class_count);
  return snapshot(m, 0, {{"steps", 0}});
}

sslcore::Encoder load_primary_encoder(const Checkpoint& ck) {
  auto cfg = train_config_from_json(ck.config.at("train"), "train");
  sslcore::Encoder enc(cfg.encoder);
  load_module_state(ck, *enc, "primary.encoder.");
  enc->eval();
  return enc;
}

sslcore::Projector load_primary_projector(const Checkpoint& ck) {
  auto cfg = train_config_from_json(ck.config.at("train"), "train");
  if (cfg.method == MethodKind::supervised) throw ArgumentError("supervised checkpoints have no projector");
  sslcore::Projector proj(cfg.encoder.embed_dim, cfg.projector);
  load_module_state(ck, *proj, "primary.projector.");
  proj->eval();
  return proj;
}

torch::nn::Linear load_supervised_head(const Checkpoint& ck) {
  auto cfg = train_config_from_json(ck.config.at("train"), "train");
  if (cfg.method != MethodKind::supervised) throw ArgumentError("checkpoint is not from a supervised run");
  torch::nn::Linear head(cfg.encoder.embed_dim, ck.config.at("class_count").get<int64_t>());
  load_module_state(ck, *head, "head.");
  head->eval();
  return head;
}

nlohmann::json to_json(const TrainConfig& c) {
  return {{"method", to_string(c.method)},
          {"loss", sslcore::to_json(c.loss)},
          {"epochs", c.epochs},
          {"peak_lr", c.peak_lr},
          {"warmup_epochs", c.warmup_epochs},
          {"batch_size", c.batch_size},
          {"beta1", c.beta1},
          {"beta2", c.beta2},
          {"weight_decay", c.weight_decay},
          {"augmentation", to_json(c.augmentation)},
          {"encoder", sslcore::to_json(c.encoder)},
          {"projector", sslcore::to_json(c.projector)},
          {"seed", c.seed}};
}

TrainConfig train_config_from_json(const nlohmann::json& j, const std::string& path) {
  JsonReader r(j, path);
  TrainConfig c;
  c.method = parse_method(r.required<std::string>("method"));
  if (r.has("loss")) c.loss = sslcore::loss_kind_from_json(r.raw("loss"), r.field_path("loss"));
  c.epochs = r.optional<int64_t>("epochs", c.epochs);
  c.peak_lr = r.optional<double>("peak_lr", c.peak_lr);
  c.warmup_epochs = r.optional<int64_t>("warmup_epochs", c.warmup_epochs);
  c.batch_size = r.optional<int64_t>("batch_size", c.batch_size);
  c.beta1 = r.optional<double>("beta1", c.beta1);
  c.beta2 = r.optional<double>("beta2", c.beta2);
  c.weight_decay = r.optional<double>("weight_decay", c.weight_decay);
  if (r.has("augmentation")) {
    c.augmentation = augmentation_config_from_json(r.raw("augmentation"), r.field_path("augmentation"));
  }
  if (r.has("encoder")) c.encoder = sslcore::encoder_config_from_json(r.raw("encoder"), r.field_path("encoder"));
  if (r.has("projector")) {
    c.projector = sslcore::projector_config_from_json(r.raw("projector"), r.field_path("projector"));
  }
  c.seed = r.optional<uint64_t>("seed", c.seed);
  r.finish();
  c.validate();
  return c;
}

}  // namespace privdistil::train
