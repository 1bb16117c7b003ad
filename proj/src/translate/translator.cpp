#include "privdistil/translate/translator.hpp"

#include <cmath>

#include "privdistil/common/error.hpp"
#include "privdistil/common/json_reader.hpp"
#include "privdistil/common/rng.hpp"

namespace privdistil::translate {

namespace nn = torch::nn;

std::string to_string(TranslatorMode m) { return m == TranslatorMode::paired ? "paired" : "unpaired"; }

TranslatorMode parse_translator_mode(const std::string& s) {
  if (s == "paired") return TranslatorMode::paired;
  if (s == "unpaired") return TranslatorMode::unpaired;
  throw ConfigError("unknown translator mode \"" + s + "\" (expected paired or unpaired)");
}

TranslateConfig TranslateConfig::unpaired_defaults() {
  TranslateConfig c;
  c.mode = TranslatorMode::unpaired;
  c.adversarial = true;
  c.lr = 2e-4;
  c.steps = 2000;
  c.batch_size = 4;
  return c;
}

void TranslateConfig::validate() const {
  if (width < 1 || down_stages < 0 || res_blocks < 0) throw ConfigError("translator widths and depths must be positive");
  if (!(lr > 0)) throw ConfigError("translator lr must be positive");
  if (steps < 0) throw ConfigError("translator steps must be non-negative");
  if (batch_size < 1) throw ConfigError("translator batch_size must be at least 1");
  if (lambda_rec < 0 || lambda_cyc < 0 || lambda_id < 0 || lambda_adv < 0) {
    throw ConfigError("translator loss weights must be non-negative");
  }
  if (mode == TranslatorMode::unpaired && !(lambda_adv > 0 && lambda_cyc > 0)) {
    throw ConfigError("unpaired translation requires lambda_adv > 0 and lambda_cyc > 0");
  }
  if (held_out_fraction < 0 || held_out_fraction >= 1) throw ConfigError("held_out_fraction must lie in [0, 1)");
}

namespace {

nn::InstanceNorm2d inorm(int64_t c) { return nn::InstanceNorm2d(nn::InstanceNorm2dOptions(c).affine(true)); }

nn::Conv2d conv(int64_t in, int64_t out, int64_t k, int64_t stride, int64_t pad) {
  return nn::Conv2d(nn::Conv2dOptions(in, out, k).stride(stride).padding(pad));
}

}  // namespace

GeneratorImpl::GeneratorImpl(int64_t in_channels, int64_t out_channels, const TranslateConfig& cfg) {
  const int64_t w = cfg.width;
  in_ = register_module("in", conv(in_channels, w, 3, 1, 1));
  in_norm_ = register_module("in_norm", inorm(w));
  for (int64_t i = 0; i < cfg.down_stages; ++i) {
    down_.push_back(register_module("down" + std::to_string(i), conv(w, w, 4, 2, 1)));
    down_norm_.push_back(register_module("down" + std::to_string(i) + "_norm", inorm(w)));
  }
  for (int64_t i = 0; i < cfg.res_blocks; ++i) {
    res_a_.push_back(register_module("res" + std::to_string(i) + "_a", conv(w, w, 3, 1, 1)));
    res_norm_a_.push_back(register_module("res" + std::to_string(i) + "_a_norm", inorm(w)));
    res_b_.push_back(register_module("res" + std::to_string(i) + "_b", conv(w, w, 3, 1, 1)));
    res_norm_b_.push_back(register_module("res" + std::to_string(i) + "_b_norm", inorm(w)));
  }
  for (int64_t i = 0; i < cfg.down_stages; ++i) {
    up_.push_back(register_module("up" + std::to_string(i), conv(w, w, 3, 1, 1)));
    up_norm_.push_back(register_module("up" + std::to_string(i) + "_norm", inorm(w)));
  }
  out_ = register_module("out", conv(w, out_channels, 3, 1, 1));
}

torch::Tensor GeneratorImpl::forward(const torch::Tensor& x) {
  auto h = torch::relu(in_norm_->forward(in_->forward(x)));
  std::vector<torch::Tensor> skips{h};
  for (size_t i = 0; i < down_.size(); ++i) {
    h = torch::relu(down_norm_[i]->forward(down_[i]->forward(h)));
    skips.push_back(h);
  }
  for (size_t i = 0; i < res_a_.size(); ++i) {
    auto r = torch::relu(res_norm_a_[i]->forward(res_a_[i]->forward(h)));
    h = h + res_norm_b_[i]->forward(res_b_[i]->forward(r));
  }
  for (size_t i = 0; i < up_.size(); ++i) {
    h = torch::upsample_nearest2d(h, std::vector<int64_t>{h.size(2) * 2, h.size(3) * 2});
    h = torch::relu(up_norm_[i]->forward(up_[i]->forward(h))) + skips[skips.size() - 2 - i];
  }
  return torch::sigmoid(out_->forward(h));
}

DiscriminatorImpl::DiscriminatorImpl(int64_t in_channels, int64_t width) {
  c1_ = register_module("c1", conv(in_channels, width, 4, 2, 1));
  c2_ = register_module("c2", conv(width, width * 2, 4, 2, 1));
  n2_ = register_module("n2", inorm(width * 2));
  c3_ = register_module("c3", conv(width * 2, 1, 3, 1, 1));
}

torch::Tensor DiscriminatorImpl::forward(const torch::Tensor& x) {
  auto h = torch::leaky_relu(c1_->forward(x), 0.2);
  h = torch::leaky_relu(n2_->forward(c2_->forward(h)), 0.2);
  return c3_->forward(h);
}

void TranslatorParams::check_finite() const {
  auto check = [](const nn::Module& m, const std::string& tag) {
    for (const auto& p : m.named_parameters(true)) {
      if (!torch::isfinite(p.value()).all().item<bool>()) {
        throw NumericError("non-finite weight " + tag + "." + p.key(), -1);
      }
    }
  };
  if (generator) check(*generator, "generator");
  if (reverse) check(*reverse, "reverse");
  if (disc_a) check(*disc_a, "disc_a");
  if (disc_b) check(*disc_b, "disc_b");
}

TranslatorParams init_translator(const TranslateConfig& cfg, int64_t in_channels, int64_t out_channels,
                                 int64_t height, int64_t width) {
  cfg.validate();
  const int64_t factor = int64_t{1} << cfg.down_stages;
  if (height % factor != 0 || width % factor != 0) {
    throw ShapeError("translator image size must be divisible by " + std::to_string(factor));
  }
  torch::manual_seed(cfg.seed);
  TranslatorParams p;
  p.config = cfg;
  p.in_channels = in_channels;
  p.out_channels = out_channels;
  p.height = height;
  p.width = width;
  p.generator = Generator(in_channels, out_channels, cfg);
  if (cfg.mode == TranslatorMode::unpaired) {
    p.reverse = Generator(out_channels, in_channels, cfg);
    p.disc_a = Discriminator(in_channels, cfg.width);
    p.disc_b = Discriminator(out_channels, cfg.width);
  } else if (cfg.adversarial) {
    p.disc_b = Discriminator(out_channels, cfg.width);
  }
  return p;
}

namespace {

torch::Tensor lsgan(const torch::Tensor& scores, double target) { return (scores - target).pow(2).mean(); }

std::vector<torch::Tensor> params_of(std::initializer_list<const nn::Module*> modules) {
  std::vector<torch::Tensor> out;
  for (const auto* m : modules) {
    if (!m) continue;
    auto p = m->parameters();
    out.insert(out.end(), p.begin(), p.end());
  }
  return out;
}

torch::optim::Adam make_adam(std::vector<torch::Tensor> params, const TranslateConfig& cfg) {
  return torch::optim::Adam(std::move(params), torch::optim::AdamOptions(cfg.lr).betas({cfg.beta1, cfg.beta2}));
}

/// Cycles through seeded permutations of [0, n), reshuffling after each pass.
class BatchSampler {
 public:
  BatchSampler(int64_t n, Rng rng) : n_(n), rng_(rng) {}
  torch::Tensor next(int64_t batch) {
    std::vector<int64_t> idx;
    for (int64_t i = 0; i < batch; ++i) {
      if (pos_ >= order_.size()) {
        order_ = rng_.permutation(n_);
        pos_ = 0;
      }
      idx.push_back(order_[pos_++]);
    }
    return torch::tensor(idx, torch::kLong);
  }

 private:
  int64_t n_;
  Rng rng_;
  std::vector<int64_t> order_;
  size_t pos_ = 0;
};

void check_images(const torch::Tensor& t, const char* what) {
  if (t.dim() != 4 || t.size(0) == 0) throw ArgumentError(std::string(what) + " must be a non-empty N x C x H x W batch");
}

void check_loss(double v, int64_t step) {
  if (!std::isfinite(v)) throw NumericError("non-finite translator loss", step);
}

double mean_abs_error(const TranslatorParams& p, const torch::Tensor& x, const torch::Tensor& y) {
  return (translate_batch(p, x) - y).abs().mean().item<double>();
}

}  // namespace

TranslatorParams train_paired_translator(const torch::Tensor& primary, const torch::Tensor& privileged,
                                         const TranslateConfig& cfg) {
  if (cfg.mode != TranslatorMode::paired) throw ConfigError("train_paired_translator needs mode paired");
  check_images(primary, "primary");
  check_images(privileged, "privileged");
  if (primary.size(0) != privileged.size(0)) throw ShapeError("primary and privileged counts differ");
  if (primary.size(0) < 2) throw ArgumentError("paired translation needs at least 2 pairs");
  if (primary.size(2) != privileged.size(2) || primary.size(3) != privileged.size(3)) {
    throw ShapeError("primary and privileged images differ in size");
  }

  auto p = init_translator(cfg, primary.size(1), privileged.size(1), primary.size(2), primary.size(3));
  const int64_t n = primary.size(0);
  const int64_t held = std::max<int64_t>(1, static_cast<int64_t>(std::llround(cfg.held_out_fraction * n)));
  const auto perm = Rng(cfg.seed).derive("held_out").permutation(n);
  auto held_idx = torch::tensor(std::vector<int64_t>(perm.begin(), perm.begin() + held), torch::kLong);
  auto train_idx = torch::tensor(std::vector<int64_t>(perm.begin() + held, perm.end()), torch::kLong);
  auto xa = primary.index_select(0, train_idx);
  auto xb = privileged.index_select(0, train_idx);

  auto g_opt = make_adam(params_of({p.generator.get()}), cfg);
  std::unique_ptr<torch::optim::Adam> d_opt;
  if (p.disc_b) d_opt = std::make_unique<torch::optim::Adam>(make_adam(params_of({p.disc_b.get()}), cfg));
  BatchSampler sampler(xa.size(0), Rng(cfg.seed).derive("batches"));
  const int64_t bs = std::min(cfg.batch_size, xa.size(0));

  for (int64_t step = 0; step < cfg.steps; ++step) {
    auto idx = sampler.next(bs);
    auto a = xa.index_select(0, idx);
    auto b = xb.index_select(0, idx);
    TranslatorStep rec{step, 0, 0, 0, 0, 0};

    auto fake = p.generator->forward(a);
    auto rec_loss = (fake - b).abs().mean();
    auto g_loss = cfg.lambda_rec * rec_loss;
    if (p.disc_b) g_loss = g_loss + cfg.lambda_adv * lsgan(p.disc_b->forward(fake), 1.0);
    rec.reconstruction = rec_loss.item<double>();
    rec.generator = g_loss.item<double>();
    check_loss(rec.generator, step);
    g_opt.zero_grad();
    g_loss.backward();
    g_opt.step();

    if (p.disc_b) {
      auto d_loss = 0.5 * (lsgan(p.disc_b->forward(b), 1.0) + lsgan(p.disc_b->forward(fake.detach()), 0.0));
      rec.discriminator = d_loss.item<double>();
      check_loss(rec.discriminator, step);
      d_opt->zero_grad();
      d_loss.backward();
      d_opt->step();
    }
    p.history.push_back(rec);
  }
  p.check_finite();
  p.held_out_mae = mean_abs_error(p, primary.index_select(0, held_idx), privileged.index_select(0, held_idx));
  return p;
}

TranslatorParams train_unpaired_translator(const torch::Tensor& domain_a, const torch::Tensor& domain_b,
                                           const TranslateConfig& cfg) {
  if (cfg.mode != TranslatorMode::unpaired) throw ConfigError("train_unpaired_translator needs mode unpaired");
  check_images(domain_a, "domain_a");
  check_images(domain_b, "domain_b");
  if (domain_a.size(2) != domain_b.size(2) || domain_a.size(3) != domain_b.size(3)) {
    throw ShapeError("domains differ in image size");
  }
  auto p = init_translator(cfg, domain_a.size(1), domain_b.size(1), domain_a.size(2), domain_a.size(3));
  const bool use_identity = cfg.lambda_id > 0 && domain_a.size(1) == domain_b.size(1);

  auto g_opt = make_adam(params_of({p.generator.get(), p.reverse.get()}), cfg);
  auto d_opt = make_adam(params_of({p.disc_a.get(), p.disc_b.get()}), cfg);
  BatchSampler sample_a(domain_a.size(0), Rng(cfg.seed).derive("domain_a"));
  BatchSampler sample_b(domain_b.size(0), Rng(cfg.seed).derive("domain_b"));

  for (int64_t step = 0; step < cfg.steps; ++step) {
    auto a = domain_a.index_select(0, sample_a.next(std::min(cfg.batch_size, domain_a.size(0))));
    auto b = domain_b.index_select(0, sample_b.next(std::min(cfg.batch_size, domain_b.size(0))));
    TranslatorStep rec{step, 0, 0, 0, 0, 0};

    auto fake_b = p.generator->forward(a);
    auto fake_a = p.reverse->forward(b);
    auto adv = lsgan(p.disc_b->forward(fake_b), 1.0) + lsgan(p.disc_a->forward(fake_a), 1.0);
    auto cyc = (p.reverse->forward(fake_b) - a).abs().mean() + (p.generator->forward(fake_a) - b).abs().mean();
    auto g_loss = cfg.lambda_adv * adv + cfg.lambda_cyc * cyc;
    if (use_identity) {
      auto idt = (p.generator->forward(b) - b).abs().mean() + (p.reverse->forward(a) - a).abs().mean();
      g_loss = g_loss + cfg.lambda_id * idt;
      rec.identity = idt.item<double>();
    }
    rec.cycle = cyc.item<double>();
    rec.generator = g_loss.item<double>();
    check_loss(rec.generator, step);
    g_opt.zero_grad();
    g_loss.backward();
    g_opt.step();

    auto d_loss = 0.5 * (lsgan(p.disc_b->forward(b), 1.0) + lsgan(p.disc_b->forward(fake_b.detach()), 0.0)) +
                  0.5 * (lsgan(p.disc_a->forward(a), 1.0) + lsgan(p.disc_a->forward(fake_a.detach()), 0.0));
    rec.discriminator = d_loss.item<double>();
    check_loss(rec.discriminator, step);
    d_opt.zero_grad();
    d_loss.backward();
    d_opt.step();
    p.history.push_back(rec);
  }
  p.check_finite();
  return p;
}

torch::Tensor translate_batch(const TranslatorParams& params, const torch::Tensor& batch) {
  if (batch.dim() != 4) throw ShapeError("translate expects an N x C x H x W batch");
  if (batch.size(1) != params.in_channels || batch.size(2) != params.height || batch.size(3) != params.width) {
    throw ShapeError("translator was trained on " + std::to_string(params.in_channels) + " x " +
                     std::to_string(params.height) + " x " + std::to_string(params.width) + " inputs");
  }
  torch::NoGradGuard no_grad;
  // Instance normalisation has no running statistics, so train/eval mode does not matter
  // and the forward pass is a pure function of (params, batch).
  auto generator = params.generator;
  std::vector<torch::Tensor> out;
  for (int64_t i = 0; i < batch.size(0); i += 64) {
    out.push_back(generator->forward(batch.slice(0, i, std::min(batch.size(0), i + 64))));
  }
  return torch::cat(out).clamp(0.0, 1.0).contiguous();
}

ImageTensor translate(const TranslatorParams& params, const ImageTensor& image) {
  return ImageTensor(translate_batch(params, image.data().unsqueeze(0)).squeeze(0));
}

train::Checkpoint translator_to_checkpoint(const TranslatorParams& p) {
  train::Checkpoint ck;
  ck.config = {{"translator", to_json(p.config)},
               {"in_channels", p.in_channels},
               {"out_channels", p.out_channels},
               {"height", p.height},
               {"width", p.width}};
  ck.epoch = static_cast<int64_t>(p.history.size());
  ck.metrics = {{"held_out_mae", p.held_out_mae}};
  if (!p.history.empty()) {
    const auto& last = p.history.back();
    ck.metrics["final_generator"] = last.generator;
    ck.metrics["final_discriminator"] = last.discriminator;
    ck.metrics["final_reconstruction"] = last.reconstruction;
    ck.metrics["final_cycle"] = last.cycle;
  }
  train::add_module_state(ck, *p.generator, "generator.");
  if (p.reverse) train::add_module_state(ck, *p.reverse, "reverse.");
  if (p.disc_a) train::add_module_state(ck, *p.disc_a, "disc_a.");
  if (p.disc_b) train::add_module_state(ck, *p.disc_b, "disc_b.");
  return ck;
}

TranslatorParams translator_from_checkpoint(const train::Checkpoint& ck) {
  if (!ck.config.contains("translator")) throw CorruptionError("checkpoint does not hold a translator");
  const auto cfg = translate_config_from_json(ck.config.at("translator"), "translator");
  auto p = init_translator(cfg, ck.config.at("in_channels").get<int64_t>(), ck.config.at("out_channels").get<int64_t>(),
                           ck.config.at("height").get<int64_t>(), ck.config.at("width").get<int64_t>());
  train::load_module_state(ck, *p.generator, "generator.");
  if (p.reverse) train::load_module_state(ck, *p.reverse, "reverse.");
  if (p.disc_a) train::load_module_state(ck, *p.disc_a, "disc_a.");
  if (p.disc_b) train::load_module_state(ck, *p.disc_b, "disc_b.");
  p.held_out_mae = ck.metrics.value("held_out_mae", -1.0);
  return p;
}

void save_translator(const TranslatorParams& params, const std::filesystem::path& path) {
  train::save_checkpoint(translator_to_checkpoint(params), path);
}

TranslatorParams load_translator(const std::filesystem::path& path) {
  return translator_from_checkpoint(train::load_checkpoint(path));
}

nlohmann::json to_json(const TranslateConfig& c) {
  return {{"mode", to_string(c.mode)},
          {"width", c.width},
          {"down_stages", c.down_stages},
          {"res_blocks", c.res_blocks},
          {"lr", c.lr},
          {"beta1", c.beta1},
          {"beta2", c.beta2},
          {"steps", c.steps},
          {"batch_size", c.batch_size},
          {"lambda_rec", c.lambda_rec},
          {"lambda_cyc", c.lambda_cyc},
          {"lambda_id", c.lambda_id},
          {"lambda_adv", c.lambda_adv},
          {"adversarial", c.adversarial},
          {"held_out_fraction", c.held_out_fraction},
          {"seed", c.seed}};
}

TranslateConfig translate_config_from_json(const nlohmann::json& j, const std::string& path) {
  JsonReader r(j, path);
  const auto mode = parse_translator_mode(r.optional<std::string>("mode", "paired"));
  TranslateConfig c = mode == TranslatorMode::unpaired ? TranslateConfig::unpaired_defaults() : TranslateConfig{};
  c.width = r.optional<int64_t>("width", c.width);
  c.down_stages = r.optional<int64_t>("down_stages", c.down_stages);
  c.res_blocks = r.optional<int64_t>("res_blocks", c.res_blocks);
  c.lr = r.optional<double>("lr", c.lr);
  c.beta1 = r.optional<double>("beta1", c.beta1);
  c.beta2 = r.optional<double>("beta2", c.beta2);
  c.steps = r.optional<int64_t>("steps", c.steps);
  c.batch_size = r.optional<int64_t>("batch_size", c.batch_size);
  c.lambda_rec = r.optional<double>("lambda_rec", c.lambda_rec);
  c.lambda_cyc = r.optional<double>("lambda_cyc", c.lambda_cyc);
  c.lambda_id = r.optional<double>("lambda_id", c.lambda_id);
  c.lambda_adv = r.optional<double>("lambda_adv", c.lambda_adv);
  c.adversarial = r.optional<bool>("adversarial", c.adversarial);
  c.held_out_fraction = r.optional<double>("held_out_fraction", c.held_out_fraction);
  c.seed = r.optional<uint64_t>("seed", c.seed);
  r.finish();
  c.validate();
  return c;
}

}  // namespace privdistil::translate
