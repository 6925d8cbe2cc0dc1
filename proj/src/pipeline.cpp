#include "mmfuse/pipeline.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <numbers>
#include <random>
#include <sstream>

#include "mmfuse/errors.hpp"

namespace mmfuse::pipeline {
namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point start) {
  return std::chrono::duration<double>(Clock::now() - start).count();
}

void reject_unknown_keys(const nlohmann::json& j, const nlohmann::json& defaults,
                         const std::string& section) {
  for (const auto& [key, _] : j.items()) {
    if (!defaults.contains(key)) {
      throw ConfigError("unknown " + section + " key '" + key + "'");
    }
  }
}

std::string to_string(LrSchedule s) {
  return s == LrSchedule::kCosine ? "cosine" : "constant";
}

LrSchedule schedule_from_string(const std::string& s) {
  if (s == "cosine") return LrSchedule::kCosine;
  if (s == "constant") return LrSchedule::kConstant;
  throw ConfigError("unknown lr_schedule '" + s + "' (expected cosine or constant)");
}

void require_same_size(const std::vector<GrayImage>& images) {
  for (const auto& img : images) {
    if (img.height() != images.front().height() || img.width() != images.front().width()) {
      throw ShapeError("training images must share one size; found " +
                       std::to_string(images.front().height()) + "x" +
                       std::to_string(images.front().width()) + " and " +
                       std::to_string(img.height()) + "x" + std::to_string(img.width()));
    }
  }
}

Tensor stack_images(const std::vector<GrayImage>& images,
                    const std::vector<std::size_t>& ids) {
  std::vector<Tensor> parts;
  parts.reserve(ids.size());
  for (std::size_t i : ids) parts.push_back(images[i].to_tensor());
  return stack_batch(parts);
}

std::vector<std::vector<std::size_t>> make_batches(std::vector<std::size_t> ids,
                                                   int batch_size) {
  std::vector<std::vector<std::size_t>> out;
  for (std::size_t i = 0; i < ids.size(); i += batch_size) {
    out.emplace_back(ids.begin() + i,
                     ids.begin() + std::min(ids.size(), i + batch_size));
  }
  return out;
}

// Epoch shuffles depend only on (seed, epoch), so a resumed run replays the
// same order as an uninterrupted one.
std::vector<std::size_t> epoch_order(std::vector<std::size_t> ids, std::uint64_t seed,
                                     int epoch) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(epoch)};
  std::mt19937_64 rng(seq);
  std::shuffle(ids.begin(), ids.end(), rng);
  return ids;
}

std::string join_ids(const std::vector<std::size_t>& ids) {
  std::string s;
  for (std::size_t i : ids) s += (s.empty() ? "" : ",") + std::to_string(i);
  return s;
}

std::string slug(const std::string& name) {
  std::string s;
  for (char c : name) {
    if (std::isalnum(static_cast<unsigned char>(c))) {
      s += static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
    } else if (!s.empty() && s.back() != '_') {
      s += '_';
    }
  }
  while (!s.empty() && s.back() == '_') s.pop_back();
  return s;
}

constexpr const char* kStateKind = "training_state";

}  // namespace

// --- configuration ------------------------------------------------------------

void TrainConfig::validate() const {
  if (epochs < 1) throw ConfigError("epochs must be >= 1");
  if (!(initial_lr > 0.0)) throw ConfigError("initial_lr must be positive");
  if (!(final_lr >= 0.0 && final_lr <= initial_lr)) {
    throw ConfigError("final_lr must lie in [0, initial_lr]");
  }
  if (batch_size < 1) throw ConfigError("batch_size must be >= 1");
  if (!(optimizer.beta1 >= 0.0 && optimizer.beta1 < 1.0) ||
      !(optimizer.beta2 >= 0.0 && optimizer.beta2 < 1.0) || !(optimizer.epsilon > 0.0)) {
    throw ConfigError("Adam needs betas in [0, 1) and a positive epsilon");
  }
  if (!(validation_fraction >= 0.0 && validation_fraction < 1.0)) {
    throw ConfigError("validation_fraction must lie in [0, 1)");
  }
  if (max_steps < 0) throw ConfigError("max_steps must be >= 0");
  loss.validate();
  effective_encoder().validate();
}

nn::EncoderConfig TrainConfig::effective_encoder() const {
  nn::EncoderConfig e = encoder;
  e.use_drgo = ablation.use_drgo;
  return e;
}

void to_json(nlohmann::json& j, const TrainConfig& c) {
  j = {{"epochs", c.epochs},
       {"initial_lr", c.initial_lr},
       {"final_lr", c.final_lr},
       {"lr_schedule", to_string(c.lr_schedule)},
       {"batch_size", c.batch_size},
       {"optimizer",
        {{"beta1", c.optimizer.beta1},
         {"beta2", c.optimizer.beta2},
         {"epsilon", c.optimizer.epsilon}}},
       {"loss", c.loss},
       {"encoder", c.effective_encoder()},
       {"seed", c.seed},
       {"ablation",
        {{"use_drgo", c.ablation.use_drgo}, {"use_grad_loss", c.ablation.use_grad_loss}}},
       {"validation_fraction", c.validation_fraction},
       {"max_steps", c.max_steps}};
}

void from_json(const nlohmann::json& j, TrainConfig& c) {
  const TrainConfig d;
  const nlohmann::json dj = d;
  reject_unknown_keys(j, dj, "train config");
  c.epochs = j.value("epochs", d.epochs);
  c.initial_lr = j.value("initial_lr", d.initial_lr);
  c.final_lr = j.value("final_lr", d.final_lr);
  c.lr_schedule = schedule_from_string(j.value("lr_schedule", to_string(d.lr_schedule)));
  c.batch_size = j.value("batch_size", d.batch_size);
  c.optimizer = d.optimizer;
  if (j.contains("optimizer")) {
    const auto& o = j.at("optimizer");
    reject_unknown_keys(o, dj.at("optimizer"), "optimizer");
    c.optimizer.beta1 = o.value("beta1", d.optimizer.beta1);
    c.optimizer.beta2 = o.value("beta2", d.optimizer.beta2);
    c.optimizer.epsilon = o.value("epsilon", d.optimizer.epsilon);
  }
  c.loss = j.contains("loss") ? j.at("loss").get<loss::LossConfig>() : d.loss;
  c.encoder = j.contains("encoder") ? j.at("encoder").get<nn::EncoderConfig>() : d.encoder;
  c.seed = j.value("seed", d.seed);
  c.ablation = d.ablation;
  if (j.contains("ablation")) {
    const auto& a = j.at("ablation");
    reject_unknown_keys(a, dj.at("ablation"), "ablation");
    c.ablation.use_drgo = a.value("use_drgo", d.ablation.use_drgo);
    c.ablation.use_grad_loss = a.value("use_grad_loss", d.ablation.use_grad_loss);
  } else if (j.contains("encoder")) {
    c.ablation.use_drgo = c.encoder.use_drgo;
  }
  if (j.contains("encoder") && j.at("encoder").contains("use_drgo") &&
      c.encoder.use_drgo != c.ablation.use_drgo) {
    throw ConfigError("encoder.use_drgo contradicts ablation.use_drgo");
  }
  c.validation_fraction = j.value("validation_fraction", d.validation_fraction);
  c.max_steps = j.value("max_steps", d.max_steps);
}

TrainConfig load_train_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot read config " + path.string());
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError("malformed config " + path.string() + ": " + e.what());
  }
  TrainConfig c = j.get<TrainConfig>();
  c.validate();
  return c;
}

TrainConfig harvard_preset() { return TrainConfig{}; }

TrainConfig brats_preset() {
  TrainConfig c;
  c.epochs = 25;
  c.lr_schedule = LrSchedule::kConstant;
  c.final_lr = c.initial_lr;
  return c;
}

double learning_rate(const TrainConfig& cfg, int epoch) {
  if (cfg.lr_schedule == LrSchedule::kConstant) return cfg.initial_lr;
  const double t = static_cast<double>(epoch) / cfg.epochs;
  return cfg.final_lr +
         0.5 * (cfg.initial_lr - cfg.final_lr) * (1.0 + std::cos(std::numbers::pi * t));
}

// --- optimizer --------------------------------------------------------------------

void Adam::step(nn::ParameterSet& params, double lr) {
  ++t_;
  const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
  const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
  for (auto& [name, var] : params.entries()) {
    if (!var.requires_grad() || var.grad().empty()) continue;
    Tensor& p = var.mutable_value();
    const Tensor& g = var.grad();
    auto [mit, m_new] = m_.try_emplace(name, p.shape());
    auto [vit, v_new] = v_.try_emplace(name, p.shape());
    double* m = mit->second.data();
    double* v = vit->second.data();
    for (std::size_t i = 0; i < p.size(); ++i) {
      m[i] = cfg_.beta1 * m[i] + (1.0 - cfg_.beta1) * g[i];
      v[i] = cfg_.beta2 * v[i] + (1.0 - cfg_.beta2) * g[i] * g[i];
      p[i] -= lr * (m[i] / bc1) / (std::sqrt(v[i] / bc2) + cfg_.epsilon);
    }
  }
}

void Adam::save(io::Archive& archive) const {
  archive.meta["adam_steps"] = t_;
  for (const auto& [name, t] : m_) archive.tensors.emplace_back("adam.m/" + name, t);
  for (const auto& [name, t] : v_) archive.tensors.emplace_back("adam.v/" + name, t);
}

void Adam::load(const io::Archive& archive, const nn::ParameterSet& params) {
  t_ = archive.meta.value("adam_steps", std::int64_t{0});
  m_.clear();
  v_.clear();
  for (const auto& [name, t] : archive.tensors) {
    const bool is_m = name.rfind("adam.m/", 0) == 0;
    const bool is_v = name.rfind("adam.v/", 0) == 0;
    if (!is_m && !is_v) continue;
    const std::string param = name.substr(7);
    const ag::Var* p = params.find(param);
    if (!p || p->shape() != t.shape()) {
      throw ConfigError("optimizer state for unknown or reshaped parameter '" + param + "'");
    }
    (is_m ? m_ : v_)[param] = t;
  }
}

// --- training ---------------------------------------------------------------------

void to_json(nlohmann::json& j, const StepRecord& r) {
  j = {{"epoch", r.epoch},     {"step", r.step},         {"lr", r.lr},
       {"total", r.total},     {"pixel", r.pixel},       {"gradient", r.gradient},
       {"perceptual", r.perceptual}};
}

void from_json(const nlohmann::json& j, StepRecord& r) {
  j.at("epoch").get_to(r.epoch);
  j.at("step").get_to(r.step);
  j.at("lr").get_to(r.lr);
  j.at("total").get_to(r.total);
  j.at("pixel").get_to(r.pixel);
  j.at("gradient").get_to(r.gradient);
  j.at("perceptual").get_to(r.perceptual);
}

void to_json(nlohmann::json& j, const EpochRecord& r) {
  j = {{"epoch", r.epoch}, {"lr", r.lr}, {"train_loss", r.train_loss}, {"seconds", r.seconds}};
  j["validation_loss"] =
      r.validation_loss ? nlohmann::json(*r.validation_loss) : nlohmann::json(nullptr);
}

void from_json(const nlohmann::json& j, EpochRecord& r) {
  j.at("epoch").get_to(r.epoch);
  j.at("lr").get_to(r.lr);
  j.at("train_loss").get_to(r.train_loss);
  j.at("seconds").get_to(r.seconds);
  r.validation_loss.reset();
  if (!j.at("validation_loss").is_null()) r.validation_loss = j.at("validation_loss").get<double>();
}

TrainResult train_stage1(const TrainConfig& cfg, const std::vector<GrayImage>& images,
                         const TrainOptions& options) {
  cfg.validate();
  if (images.empty()) throw InputError("training set is empty");
  require_same_size(images);
  const auto start = Clock::now();

  std::vector<std::size_t> train_ids;
  std::vector<std::size_t> val_ids;
  const auto n = images.size();
  const auto n_val = static_cast<std::size_t>(std::floor(cfg.validation_fraction * n));
  if (n_val > 0 && n_val < n) {
    const auto split = imaging::split_indices(n, n_val, cfg.seed);
    train_ids = split.train;
    val_ids = split.test;
  } else {
    for (std::size_t i = 0; i < n; ++i) train_ids.push_back(i);
  }

  nn::Autoencoder model(cfg.effective_encoder(), cfg.seed);
  model.check_input_shape(Shape{1, 1, images.front().height(), images.front().width()});
  const auto extractor = loss::PerceptualExtractor::from_config(cfg.loss);
  Adam adam(cfg.optimizer);

  TrainResult result;
  result.extractor = extractor.description();
  result.train_images = train_ids.size();
  result.validation_images = val_ids.size();
  double best_val = std::numeric_limits<double>::infinity();
  int first_epoch = 0;

  const nlohmann::json cfg_json = cfg;
  if (options.resume_from) {
    const io::Archive state = io::read_archive(*options.resume_from);
    if (state.meta.value("kind", std::string()) != kStateKind) {
      throw ConfigError(options.resume_from->string() + " is not a training state");
    }
    if (state.meta.at("train_config") != cfg_json) {
      const auto diff = config_diff(state.meta.at("train_config"), cfg_json);
      std::string keys;
      for (const auto& k : diff) keys += (keys.empty() ? "" : ", ") + k;
      throw ConfigError("cannot resume with a different config (differs in: " + keys + ")");
    }
    model.load_weights(io::weights_from_archive(state));
    adam.load(state, model.parameters());
    first_epoch = state.meta.at("epochs_completed").get<int>();
    result.steps = state.meta.at("steps").get<std::vector<StepRecord>>();
    result.epochs = state.meta.at("epochs").get<std::vector<EpochRecord>>();
    best_val = state.meta.value("best_validation_loss", best_val);
    const auto best_path = options.resume_from->parent_path() / "best.mmf";
    if (std::filesystem::exists(best_path)) result.best = io::load_checkpoint(best_path);
  }
  if (!options.checkpoint_dir.empty()) {
    std::filesystem::create_directories(options.checkpoint_dir);
  }

  int step = static_cast<int>(result.steps.size());
  bool step_budget_spent = cfg.max_steps > 0 && step >= cfg.max_steps;
  for (int epoch = first_epoch; epoch < cfg.epochs && !step_budget_spent; ++epoch) {
    const auto epoch_start = Clock::now();
    const double lr = learning_rate(cfg, epoch);
    double loss_sum = 0.0;
    int batches = 0;
    for (const auto& ids : make_batches(epoch_order(train_ids, cfg.seed, epoch), cfg.batch_size)) {
      if (cfg.max_steps > 0 && step >= cfg.max_steps) {
        step_budget_spent = true;
        break;
      }
      model.parameters().zero_grad();
      const ag::Var x(stack_images(images, ids));
      const auto terms = loss::reconstruction_loss(cfg.loss, extractor, x, model.reconstruct(x),
                                                   cfg.ablation.use_grad_loss);
      const double total = terms.total.value().item();
      if (!std::isfinite(total)) {
        char buf[256];
        std::snprintf(buf, sizeof(buf),
                      "non-finite loss at epoch %d step %d (pixel %g, gradient %g, "
                      "perceptual %g); batch image ids [",
                      epoch, step, terms.pixel, terms.gradient, terms.perceptual);
        throw NumericalError(buf + join_ids(ids) + "]");
      }
      terms.total.backward();
      adam.step(model.parameters(), lr);
      result.steps.push_back(
          {epoch, step, lr, total, terms.pixel, terms.gradient, terms.perceptual});
      loss_sum += total;
      ++batches;
      ++step;
    }
    if (batches == 0) break;

    EpochRecord record{epoch, lr, loss_sum / batches, std::nullopt, 0.0};
    if (!val_ids.empty()) {
      ag::NoGradGuard guard;
      double val_sum = 0.0;
      for (const auto& ids : make_batches(val_ids, cfg.batch_size)) {
        const ag::Var x(stack_images(images, ids));
        const auto terms = loss::reconstruction_loss(cfg.loss, extractor, x, model.reconstruct(x),
                                                     cfg.ablation.use_grad_loss);
        val_sum += terms.total.value().item() * static_cast<double>(ids.size());
      }
      record.validation_loss = val_sum / static_cast<double>(val_ids.size());
      if (*record.validation_loss < best_val) {
        best_val = *record.validation_loss;
        result.best = model.weights();
        if (!options.checkpoint_dir.empty()) {
          io::save_checkpoint(options.checkpoint_dir / "best.mmf", *result.best);
        }
      }
    }
    record.seconds = seconds_since(epoch_start);
    result.epochs.push_back(record);
    if (options.on_epoch) options.on_epoch(record);

    if (!options.checkpoint_dir.empty()) {
      io::Archive state = io::model_archive(model.weights());
      state.meta["kind"] = kStateKind;
      state.meta["train_config"] = cfg_json;
      state.meta["epochs_completed"] = epoch + 1;
      state.meta["steps"] = result.steps;
      state.meta["epochs"] = result.epochs;
      if (std::isfinite(best_val)) state.meta["best_validation_loss"] = best_val;
      for (auto& [name, t] : state.tensors) name = "model/" + name;
      adam.save(state);
      io::write_archive(options.checkpoint_dir / "last.mmf", state);
    }
    if (options.stop_after_epochs && epoch + 1 >= *options.stop_after_epochs) break;
  }

  result.weights = model.weights();
  result.seconds = seconds_since(start);
  return result;
}

TrainResult train_stage1(const TrainConfig& cfg, const PairedDataset& data,
                         const TrainOptions& options) {
  data.validate();
  return train_stage1(cfg, imaging::training_planes(data), options);
}

std::vector<double> reconstruction_psnr(const nn::Autoencoder& model,
                                        const std::vector<GrayImage>& images) {
  std::vector<double> out;
  ag::NoGradGuard guard;
  for (const auto& img : images) {
    const auto rec = GrayImage::from_tensor_clamped(
        model.reconstruct(ag::Var(img.to_tensor())).value());
    out.push_back(metrics::psnr(img, rec));
  }
  return out;
}

// --- stage 2 ----------------------------------------------------------------------

GrayImage luminance(const SourceImage& img) {
  if (const auto* g = std::get_if<GrayImage>(&img)) return *g;
  return imaging::rgb_to_ycbcr(std::get<imaging::ColorImage>(img)).y;
}

FuseOutput fuse_pair(const nn::Autoencoder& model, const GrayImage& a,
                     const SourceImage& b, const fusion::FusionStrategy& strategy,
                     bool keep_latents) {
  if (a.height() != imaging::height_of(b) || a.width() != imaging::width_of(b)) {
    throw ShapeError("pair members differ in size: " + std::to_string(a.height()) + "x" +
                     std::to_string(a.width()) + " vs " +
                     std::to_string(imaging::height_of(b)) + "x" +
                     std::to_string(imaging::width_of(b)));
  }
  FuseOutput out;
  auto fuse_gray = [&](const GrayImage& gb) {
    Tensor la = model.encode_image(a);
    Tensor lb = model.encode_image(gb);
    Tensor lf = strategy.fuse(la, lb);
    GrayImage fused = model.decode_to_image(lf);
    if (keep_latents) {
      out.latent_a = std::move(la);
      out.latent_b = std::move(lb);
      out.latent_fused = std::move(lf);
    }
    return fused;
  };

  if (const auto* gb = std::get_if<GrayImage>(&b)) {
    out.fused = fuse_gray(*gb);
    return out;
  }
  out.used_color_path = true;
  const auto ycc = imaging::rgb_to_ycbcr(std::get<imaging::ColorImage>(b));
  imaging::YCbCrImage fused{fuse_gray(ycc.y), ycc.cb, ycc.cr};
  out.fused = imaging::ycbcr_to_rgb(fused);
  out.fused_ycbcr = std::move(fused);
  return out;
}

std::map<std::string, metrics::MetricReport> evaluate(
    const nn::Autoencoder& model, const PairedDataset& test,
    const std::vector<std::string>& strategies, const fusion::StrategyRegistry& registry,
    const metrics::RunMetadata& run, const std::optional<std::filesystem::path>& dump_dir) {
  if (strategies.empty()) throw ConfigError("evaluate needs at least one strategy");
  test.validate();
  std::map<std::string, metrics::MetricReport> reports;
  for (const auto& name : strategies) {
    const auto strategy = registry.create(name);
    metrics::MetricReport report;
    report.run = run;
    report.run.strategy = name;
    std::filesystem::path dir;
    if (dump_dir) {
      dir = *dump_dir / name;
      std::filesystem::create_directories(dir);
    }
    for (const auto& pair : test.pairs) {
      const FuseOutput out = fuse_pair(model, pair.a, pair.b, *strategy);
      report.per_pair[pair.id] =
          metrics::fusion_metrics(pair.a, luminance(pair.b), luminance(out.fused));
      if (dump_dir) {
        const auto path = dir / (pair.id + ".png");
        std::visit([&](const auto& img) { imaging::write_png(path, img); }, out.fused);
      }
    }
    reports[name] = std::move(report);
  }
  return reports;
}

BenchmarkReport benchmark_fusion_time(const nn::Autoencoder& model, const PairedDataset& pairs,
                                      const fusion::FusionStrategy& strategy, int warmup,
                                      int min_iterations) {
  if (pairs.pairs.empty()) throw InputError("benchmark needs at least one pair");
  if (warmup < 0 || min_iterations < 1) {
    throw ConfigError("benchmark needs warmup >= 0 and min_iterations >= 1");
  }
  BenchmarkReport report;
  report.strategy = strategy.name();
  report.param_count = model.param_count();
  report.warmup = warmup;
  const std::size_t timed = std::max<std::size_t>(min_iterations, pairs.pairs.size());
  for (std::size_t i = 0; i < static_cast<std::size_t>(warmup) + timed; ++i) {
    const auto& pair = pairs.pairs[i % pairs.pairs.size()];
    const auto t0 = Clock::now();
    const FuseOutput out = fuse_pair(model, pair.a, pair.b, strategy);
    const double dt = seconds_since(t0);
    if (i >= static_cast<std::size_t>(warmup)) report.seconds.push_back(dt);
  }
  report.time = metrics::mean_std(report.seconds);
  return report;
}

std::string format_benchmark(const BenchmarkReport& r) {
  char buf[256];
  std::snprintf(buf, sizeof(buf),
                "%-10s %s\n%-10s %.2f\n%-10s %s\n", "", "Ours", "Params(M)",
                static_cast<double>(r.param_count) / 1e6, "Time(s)",
                metrics::format_mean_std(r.time, 4).c_str());
  return buf;
}

void to_json(nlohmann::json& j, const BenchmarkReport& r) {
  j = {{"strategy", r.strategy},
       {"param_count", r.param_count},
       {"params_m", static_cast<double>(r.param_count) / 1e6},
       {"warmup_iterations", r.warmup},
       {"timed_iterations", r.seconds.size()},
       {"seconds", r.seconds},
       {"mean_seconds", r.time.mean},
       {"std_seconds", r.time.std},
       {"formatted", metrics::format_mean_std(r.time, 4)}};
}

// --- ablation ---------------------------------------------------------------------

std::vector<AblationArm> ablation_arms(const TrainConfig& base) {
  std::vector<AblationArm> arms;
  const std::pair<const char*, AblationFlags> specs[] = {
      {"Base Model", {false, false}},
      {"Base Model+L_grad", {false, true}},
      {"Base Model+L_grad+DRGO", {true, true}}};
  for (const auto& [name, flags] : specs) {
    TrainConfig c = base;
    c.ablation = flags;
    arms.push_back({name, c});
  }
  return arms;
}

std::vector<std::string> config_diff(const nlohmann::json& a, const nlohmann::json& b) {
  std::vector<std::string> out;
  std::function<void(const nlohmann::json&, const nlohmann::json&, const std::string&)> walk =
      [&](const nlohmann::json& x, const nlohmann::json& y, const std::string& prefix) {
        if (x.is_object() && y.is_object()) {
          std::vector<std::string> keys;
          for (const auto& [k, _] : x.items()) keys.push_back(k);
          for (const auto& [k, _] : y.items()) {
            if (!x.contains(k)) keys.push_back(k);
          }
          for (const auto& k : keys) {
            const std::string path = prefix.empty() ? k : prefix + "." + k;
            if (!x.contains(k) || !y.contains(k)) {
              out.push_back(path);
            } else {
              walk(x.at(k), y.at(k), path);
            }
          }
        } else if (x != y) {
          out.push_back(prefix);
        }
      };
  walk(a, b, "");
  return out;
}

std::vector<AblationRow> ablate(const TrainConfig& base,
                                const std::vector<GrayImage>& train_images,
                                const PairedDataset& test, const std::string& strategy,
                                const std::filesystem::path& checkpoint_root) {
  const fusion::StrategyRegistry registry;
  const auto arms = ablation_arms(base);
  const nlohmann::json reference = arms.front().config;
  std::vector<AblationRow> rows;
  for (const auto& arm : arms) {
    TrainOptions options;
    if (!checkpoint_root.empty()) options.checkpoint_dir = checkpoint_root / slug(arm.name);
    TrainResult trained = train_stage1(arm.config, train_images, options);
    const nn::Autoencoder model(trained.best ? *trained.best : trained.weights);
    metrics::RunMetadata run{arm.config.seed, strategy, arm.name};
    auto reports = evaluate(model, test, {strategy}, registry, run);
    rows.push_back({arm.name, config_diff(reference, nlohmann::json(arm.config)),
                    std::move(reports.at(strategy)), std::move(trained.steps)});
  }
  return rows;
}

std::string format_ablation(const std::vector<AblationRow>& rows) {
  std::ostringstream os;
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%-24s", "Method");
  os << buf;
  for (const char* h : {"PSNR", "SSIM", "FMI", "FSIM", "Entropy"}) {
    std::snprintf(buf, sizeof(buf), " %-16s", h);
    os << buf;
  }
  os << '\n';
  for (const auto& row : rows) {
    std::snprintf(buf, sizeof(buf), "%-24s", row.arm.c_str());
    os << buf;
    const auto agg = row.report.aggregate();
    for (const auto& name : metrics::MetricRecord::names()) {
      std::snprintf(buf, sizeof(buf), " %-16s",
                    metrics::format_mean_std(agg.at(name)).c_str());
      os << buf;
    }
    os << '\n';
  }
  return os.str();
}

// --- provenance ---------------------------------------------------------------------

void to_json(nlohmann::json& j, const RunManifest& m) {
  j = {{"command", m.command},
       {"config", m.config},
       {"dataset_manifest_hash", m.dataset_manifest_hash},
       {"checkpoint_path", m.checkpoint_path},
       {"report_path", m.report_path},
       {"timings_seconds", m.timings_seconds},
       {"seed", m.seed},
       {"extractor", m.extractor},
       {"deterministic", m.deterministic},
       {"extra", m.extra}};
}

void write_json(const std::filesystem::path& path, const nlohmann::json& value) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  const auto tmp = std::filesystem::path(path).concat(".tmp");
  {
    std::ofstream out(tmp);
    if (!out) throw IoError("cannot write " + tmp.string());
    out << value.dump(2) << '\n';
    if (!out) throw IoError("failed writing " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

void write_run_manifest(const std::filesystem::path& path, const RunManifest& m) {
  write_json(path, nlohmann::json(m));
}

}  // namespace mmfuse::pipeline
