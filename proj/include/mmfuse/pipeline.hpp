#pragma once

// Two-stage workflow: reconstruction training of the autoencoder, latent
// fusion of co-registered pairs, evaluation, ablation and timing.

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"
#include "mmfuse/checkpoint.hpp"
#include "mmfuse/dataset.hpp"
#include "mmfuse/fusion.hpp"
#include "mmfuse/losses.hpp"
#include "mmfuse/metrics.hpp"
#include "mmfuse/network.hpp"

namespace mmfuse::pipeline {

using imaging::GrayImage;
using imaging::PairedDataset;
using imaging::SourceImage;

enum class LrSchedule { kCosine, kConstant };

struct AdamConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

struct AblationFlags {
  bool use_drgo = true;
  bool use_grad_loss = true;
  bool operator==(const AblationFlags&) const = default;
};

struct TrainConfig {
  int epochs = 100;
  double initial_lr = 1e-4;
  double final_lr = 3e-7;
  LrSchedule lr_schedule = LrSchedule::kCosine;
  int batch_size = 4;
  AdamConfig optimizer;
  loss::LossConfig loss;
  nn::EncoderConfig encoder;
  std::uint64_t seed = 42;
  AblationFlags ablation;
  /// Fraction of training images held out for best-checkpoint selection.
  double validation_fraction = 0.1;
  /// Stops after this many optimizer steps in total; 0 means no limit.
  int max_steps = 0;

  /// Throws ConfigError when a field is out of range.
  void validate() const;
  /// Encoder config with the DRGO ablation flag applied.
  nn::EncoderConfig effective_encoder() const;
};

void to_json(nlohmann::json& j, const TrainConfig& c);
/// Missing keys keep their defaults; unknown keys are rejected.
void from_json(const nlohmann::json& j, TrainConfig& c);

TrainConfig load_train_config(const std::filesystem::path& path);

/// 100 epochs, cosine decay 1e-4 to 3e-7, batch 4.
TrainConfig harvard_preset();
/// 25 epochs at a constant 1e-4, batch 4.
TrainConfig brats_preset();

/// Learning rate for a 0-based epoch. Cosine:
///   final + (initial - final) (1 + cos(pi epoch / epochs)) / 2
double learning_rate(const TrainConfig& cfg, int epoch);

/// Adam with bias correction. Moments are keyed by parameter name.
class Adam {
 public:
  explicit Adam(AdamConfig cfg) : cfg_(cfg) {}

  void step(nn::ParameterSet& params, double lr);
  std::int64_t steps() const { return t_; }

  /// Stores moments as "adam.m/<name>" and "adam.v/<name>".
  void save(io::Archive& archive) const;
  void load(const io::Archive& archive, const nn::ParameterSet& params);

 private:
  AdamConfig cfg_;
  std::int64_t t_ = 0;
  std::map<std::string, Tensor> m_;
  std::map<std::string, Tensor> v_;
};

struct StepRecord {
  int epoch = 0;
  int step = 0;
  double lr = 0.0;
  double total = 0.0;
  double pixel = 0.0;
  double gradient = 0.0;
  double perceptual = 0.0;
};

struct EpochRecord {
  int epoch = 0;
  double lr = 0.0;
  double train_loss = 0.0;
  std::optional<double> validation_loss;
  double seconds = 0.0;
};

void to_json(nlohmann::json& j, const StepRecord& r);
void from_json(const nlohmann::json& j, StepRecord& r);
void to_json(nlohmann::json& j, const EpochRecord& r);
void from_json(const nlohmann::json& j, EpochRecord& r);

struct TrainOptions {
  /// Where last.mmf (full training state) and best.mmf are written; empty
  /// disables checkpointing.
  std::filesystem::path checkpoint_dir;
  /// Training state to continue from.
  std::optional<std::filesystem::path> resume_from;
  /// Stops after this many completed epochs (simulates an interruption).
  std::optional<int> stop_after_epochs;
  std::function<void(const EpochRecord&)> on_epoch;
};

struct TrainResult {
  nn::ModelWeights weights;  // final weights
  std::optional<nn::ModelWeights> best;  // lowest validation loss, if any
  std::vector<StepRecord> steps;
  std::vector<EpochRecord> epochs;
  std::string extractor;
  std::size_t train_images = 0;
  std::size_t validation_images = 0;
  double seconds = 0.0;
};

/// Optimizes the reconstruction objective over single images. All images
/// must share one size. Deterministic for a fixed config.
TrainResult train_stage1(const TrainConfig& cfg, const std::vector<GrayImage>& images,
                         const TrainOptions& options = {});

/// Training on both modalities of every pair (color sources contribute Y).
TrainResult train_stage1(const TrainConfig& cfg, const PairedDataset& data,
                         const TrainOptions& options = {});

/// PSNR of the model's reconstruction of each image.
std::vector<double> reconstruction_psnr(const nn::Autoencoder& model,
                                        const std::vector<GrayImage>& images);

// --- stage 2 -------------------------------------------------------------------

struct FuseOutput {
  SourceImage fused;
  /// Set when the color path ran: the fused luminance with the color
  /// source's own chroma planes.
  std::optional<imaging::YCbCrImage> fused_ycbcr;
  bool used_color_path = false;
  std::optional<Tensor> latent_a;
  std::optional<Tensor> latent_b;
  std::optional<Tensor> latent_fused;
};

/// Encodes both sources, fuses the latents and decodes. A color source is
/// fused through its Y plane and recolored with its original chroma.
FuseOutput fuse_pair(const nn::Autoencoder& model, const GrayImage& a,
                     const SourceImage& b, const fusion::FusionStrategy& strategy,
                     bool keep_latents = false);

/// Grayscale view used for metrics: the image itself, or the Y plane.
GrayImage luminance(const SourceImage& img);

/// One report per strategy name. Fused images are written as PNG into
/// `dump_dir/<strategy>/<pair id>.png` when `dump_dir` is set.
std::map<std::string, metrics::MetricReport> evaluate(
    const nn::Autoencoder& model, const PairedDataset& test,
    const std::vector<std::string>& strategies,
    const fusion::StrategyRegistry& registry, const metrics::RunMetadata& run,
    const std::optional<std::filesystem::path>& dump_dir = std::nullopt);

struct BenchmarkReport {
  std::string strategy;
  std::size_t param_count = 0;
  int warmup = 0;
  std::vector<double> seconds;  // timed iterations only
  metrics::MeanStd time;
};

/// Times fuse_pair per pair after `warmup` untimed iterations. Pairs are
/// cycled until at least `min_iterations` timings are collected.
BenchmarkReport benchmark_fusion_time(const nn::Autoencoder& model,
                                      const PairedDataset& pairs,
                                      const fusion::FusionStrategy& strategy,
                                      int warmup = 3, int min_iterations = 10);

/// Two-row table: "Params(M)" and "Time(s)".
std::string format_benchmark(const BenchmarkReport& report);
void to_json(nlohmann::json& j, const BenchmarkReport& r);

// --- ablation --------------------------------------------------------------------

struct AblationArm {
  std::string name;
  TrainConfig config;
};

/// Base (no DRGO, no gradient loss), Base+L_grad, Base+L_grad+DRGO.
std::vector<AblationArm> ablation_arms(const TrainConfig& base);

/// Dotted key paths whose values differ between two JSON documents.
std::vector<std::string> config_diff(const nlohmann::json& a, const nlohmann::json& b);

struct AblationRow {
  std::string arm;
  std::vector<std::string> config_diff;  // relative to the first arm
  metrics::MetricReport report;
  std::vector<StepRecord> steps;
};

std::vector<AblationRow> ablate(const TrainConfig& base,
                                const std::vector<GrayImage>& train_images,
                                const PairedDataset& test, const std::string& strategy,
                                const std::filesystem::path& checkpoint_root = {});

std::string format_ablation(const std::vector<AblationRow>& rows);

// --- provenance -------------------------------------------------------------------

struct RunManifest {
  std::string command;
  nlohmann::json config;
  std::string dataset_manifest_hash;
  std::string checkpoint_path;
  std::string report_path;
  std::map<std::string, double> timings_seconds;
  std::uint64_t seed = 0;
  std::string extractor;
  bool deterministic = true;
  nlohmann::json extra = nlohmann::json::object();
};

void to_json(nlohmann::json& j, const RunManifest& m);
void write_run_manifest(const std::filesystem::path& path, const RunManifest& m);

/// Writes `value` as indented JSON, atomically.
void write_json(const std::filesystem::path& path, const nlohmann::json& value);

}  // namespace mmfuse::pipeline
