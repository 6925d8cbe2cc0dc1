// mmfuse: command-line front end for training, fusion, evaluation,
// benchmarking and ablation.

#include <cstdio>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "mmfuse/checkpoint.hpp"
#include "mmfuse/dataset.hpp"
#include "mmfuse/errors.hpp"
#include "mmfuse/fusion.hpp"
#include "mmfuse/metrics.hpp"
#include "mmfuse/pipeline.hpp"

namespace fs = std::filesystem;
using namespace mmfuse;
using nlohmann::json;

namespace {

struct GlobalOptions {
  std::string config;
  std::string preset;
  std::optional<std::uint64_t> seed;
  std::string device = "cpu";
  fs::path out_dir = "runs";
};

pipeline::TrainConfig resolve_config(const GlobalOptions& g) {
  if (g.device != "cpu") {
    throw ConfigError("device '" + g.device + "' is not available; only cpu is supported");
  }
  pipeline::TrainConfig cfg;
  if (!g.config.empty()) {
    cfg = pipeline::load_train_config(g.config);
  } else if (g.preset == "brats") {
    cfg = pipeline::brats_preset();
  } else if (g.preset.empty() || g.preset == "harvard") {
    cfg = pipeline::harvard_preset();
  } else {
    throw ConfigError("unknown preset '" + g.preset + "' (expected harvard or brats)");
  }
  if (g.seed) cfg.seed = *g.seed;
  cfg.validate();
  return cfg;
}

fs::path default_manifest(const GlobalOptions& g, const std::string& given) {
  return given.empty() ? g.out_dir / "dataset.json" : fs::path(given);
}

std::string checkpoint_id(const fs::path& path) {
  return path.filename().string() + "@" +
         io::read_archive(path).meta.value("config_hash", std::string("?"));
}

void print_report_table(const std::map<std::string, metrics::MetricReport>& reports) {
  std::printf("%-16s %-16s %-16s %-16s %-16s %-16s\n", "Strategy", "PSNR", "SSIM", "FMI",
              "FSIM", "EN");
  for (const auto& [name, report] : reports) {
    const auto agg = report.aggregate();
    std::printf("%-16s", name.c_str());
    for (const auto& m : metrics::MetricRecord::names()) {
      std::printf(" %-16s", metrics::format_mean_std(agg.at(m)).c_str());
    }
    std::printf("\n");
  }
}

// --- prepare-data -------------------------------------------------------------

struct PrepareOptions {
  std::string root;
  std::string modality_a = "mri";
  std::string modality_b = "ct";
  std::size_t holdout = 0;
  int synthetic = 0;
  int size = 64;
  bool color = false;
  std::string nifti_a;
  std::string nifti_b;
  double min_nonzero = 0.1;
};

void write_slice_pairs(const PrepareOptions& o, const fs::path& root) {
  const auto va = imaging::read_nifti(o.nifti_a);
  const auto vb = imaging::read_nifti(o.nifti_b);
  if (va.depth != vb.depth || va.height != vb.height || va.width != vb.width) {
    throw ShapeError("NIfTI volumes are not co-registered (grid sizes differ)");
  }
  fs::create_directories(root / o.modality_a);
  fs::create_directories(root / o.modality_b);
  const std::size_t plane = static_cast<std::size_t>(va.height) * va.width;
  int kept = 0;
  for (int z = 0; z < va.depth; ++z) {
    std::size_t nonzero = 0;
    std::vector<double> a(plane);
    std::vector<double> b(plane);
    for (int y = 0; y < va.height; ++y) {
      for (int x = 0; x < va.width; ++x) {
        const std::size_t i = static_cast<std::size_t>(y) * va.width + x;
        a[i] = va.at(z, y, x);
        b[i] = vb.at(z, y, x);
        nonzero += a[i] != 0.0;
      }
    }
    // Slices are selected on the first modality so both members stay paired.
    if (static_cast<double>(nonzero) < o.min_nonzero * static_cast<double>(plane) - 1e-9) continue;
    char id[32];
    std::snprintf(id, sizeof(id), "slice_%04d.png", z);
    imaging::write_png(root / o.modality_a / id, imaging::GrayImage(va.height, va.width, a), 16);
    imaging::write_png(root / o.modality_b / id, imaging::GrayImage(vb.height, vb.width, b), 16);
    ++kept;
  }
  std::printf("kept %d of %d axial slices\n", kept, va.depth);
}

int run_prepare(const GlobalOptions& g, const PrepareOptions& o) {
  const std::uint64_t seed = g.seed.value_or(42);
  fs::path root = o.root.empty() ? g.out_dir / "data" : fs::path(o.root);
  std::string mod_b = o.modality_b;
  if (o.synthetic > 0) {
    if (o.color && mod_b == "ct") mod_b = "spect";
    fs::create_directories(root / o.modality_a);
    fs::create_directories(root / mod_b);
    for (int i = 0; i < o.synthetic; ++i) {
      const auto pair = imaging::synthetic_pair(o.size, seed * 1000003ULL + i, o.color);
      char id[32];
      std::snprintf(id, sizeof(id), "pair_%04d.png", i);
      imaging::write_png(root / o.modality_a / id, pair.a, 16);
      std::visit([&](const auto& img) { imaging::write_png(root / mod_b / id, img, 16); }, pair.b);
    }
  } else if (!o.nifti_a.empty() || !o.nifti_b.empty()) {
    if (o.nifti_a.empty() || o.nifti_b.empty()) {
      throw ConfigError("--nifti-a and --nifti-b must be given together");
    }
    write_slice_pairs(o, root);
  } else if (o.root.empty()) {
    throw ConfigError("prepare-data needs --root, --synthetic or --nifti-a/--nifti-b");
  }
  const auto records = imaging::scan_pairs(root, o.modality_a, mod_b);
  const std::size_t holdout =
      o.holdout > 0 ? o.holdout : std::max<std::size_t>(1, records.size() / 5);
  const auto manifest = imaging::build_manifest(root, o.modality_a, mod_b, holdout, seed);
  fs::create_directories(g.out_dir);
  imaging::write_manifest(g.out_dir / "dataset.json", manifest);
  std::printf("wrote %s: %zu pairs (%zu test), hash %s\n",
              (g.out_dir / "dataset.json").string().c_str(), manifest.pairs.size(),
              manifest.records(imaging::Split::kTest).size(),
              imaging::manifest_hash(manifest).c_str());
  return 0;
}

// --- train ------------------------------------------------------------------------

int run_train(const GlobalOptions& g, const std::string& manifest_arg,
              const std::string& resume) {
  const auto cfg = resolve_config(g);
  const auto manifest = imaging::read_manifest(default_manifest(g, manifest_arg));
  const auto train = imaging::load_split(manifest, imaging::Split::kTrain);
  if (train.pairs.empty()) throw InputError("train split is empty");

  pipeline::TrainOptions options;
  options.checkpoint_dir = g.out_dir / "checkpoints";
  if (!resume.empty()) options.resume_from = fs::path(resume);
  options.on_epoch = [&](const pipeline::EpochRecord& r) {
    std::printf("epoch %3d/%d  lr %.3g  train %.5f", r.epoch + 1, cfg.epochs, r.lr, r.train_loss);
    if (r.validation_loss) std::printf("  val %.5f", *r.validation_loss);
    std::printf("  (%.1fs)\n", r.seconds);
    std::fflush(stdout);
  };
  const auto result = pipeline::train_stage1(cfg, train, options);

  const fs::path model_path = g.out_dir / "model.mmf";
  io::save_checkpoint(model_path, result.best ? *result.best : result.weights);
  pipeline::write_json(g.out_dir / "train_log.json",
                       {{"steps", result.steps}, {"epochs", result.epochs}});

  pipeline::RunManifest m;
  m.command = "train";
  m.config = cfg;
  m.dataset_manifest_hash = imaging::manifest_hash(manifest);
  m.checkpoint_path = model_path.string();
  m.timings_seconds["train"] = result.seconds;
  m.seed = cfg.seed;
  m.extractor = result.extractor;
  m.extra = {{"train_images", result.train_images},
             {"validation_images", result.validation_images},
             {"selected", result.best ? "best_validation" : "final"}};
  pipeline::write_run_manifest(g.out_dir / "run_manifest.json", m);
  std::printf("saved %s (%s extractor)\n", model_path.string().c_str(), result.extractor.c_str());
  return 0;
}

// --- fuse ---------------------------------------------------------------------------

int run_fuse(const GlobalOptions& g, const std::string& checkpoint, const std::string& path_a,
             const std::string& path_b, const std::string& strategy_name,
             const std::string& output, bool dump_latents) {
  resolve_config(g);
  const nn::Autoencoder model(io::load_checkpoint(checkpoint));
  const fusion::StrategyRegistry registry;
  const auto strategy = registry.create(strategy_name);
  auto a = imaging::read_png(path_a);
  if (!std::holds_alternative<imaging::GrayImage>(a)) {
    throw InputError("first source must be single-channel: " + path_a);
  }
  const auto out = pipeline::fuse_pair(model, std::get<imaging::GrayImage>(a),
                                       imaging::read_png(path_b), *strategy, dump_latents);
  const fs::path out_path = output.empty() ? g.out_dir / "fused.png" : fs::path(output);
  if (out_path.has_parent_path()) fs::create_directories(out_path.parent_path());
  std::visit([&](const auto& img) { imaging::write_png(out_path, img, 16); }, out.fused);
  if (dump_latents) {
    io::Archive latents;
    latents.meta = {{"kind", "latents"}, {"strategy", strategy_name}};
    latents.tensors = {{"latent_a", *out.latent_a},
                       {"latent_b", *out.latent_b},
                       {"latent_fused", *out.latent_fused}};
    io::write_archive(fs::path(out_path).replace_extension(".latents.mmf"), latents);
  }
  std::printf("wrote %s (%s path)\n", out_path.string().c_str(),
              out.used_color_path ? "color" : "grayscale");
  return 0;
}

// --- evaluate -----------------------------------------------------------------------

int run_evaluate(const GlobalOptions& g, const std::string& checkpoint,
                 const std::string& manifest_arg, const std::vector<std::string>& strategies,
                 int runs, bool dump_images) {
  const auto cfg = resolve_config(g);
  const nn::Autoencoder model(io::load_checkpoint(checkpoint));
  const auto manifest = imaging::read_manifest(default_manifest(g, manifest_arg));
  const fusion::StrategyRegistry registry;
  fs::create_directories(g.out_dir);

  std::vector<imaging::PairedDataset> test_sets;
  std::vector<std::uint64_t> seeds;
  if (runs <= 1) {
    test_sets.push_back(imaging::load_split(manifest, imaging::Split::kTest));
    seeds.push_back(manifest.seed);
  } else {
    // Distinct test sets per run: re-split all pairs with consecutive seeds.
    imaging::PairedDataset all = imaging::load_split(manifest, imaging::Split::kTrain);
    auto test = imaging::load_split(manifest, imaging::Split::kTest);
    for (auto& p : test.pairs) all.pairs.push_back(std::move(p));
    std::sort(all.pairs.begin(), all.pairs.end(),
              [](const auto& x, const auto& y) { return x.id < y.id; });
    for (int r = 0; r < runs; ++r) {
      seeds.push_back(cfg.seed + static_cast<std::uint64_t>(r));
      test_sets.push_back(
          imaging::split_dataset(all, manifest.holdout_count, seeds.back()).second);
    }
  }

  const std::string ckpt_id = checkpoint_id(checkpoint);
  std::map<std::string, std::vector<metrics::MetricReport>> by_strategy;
  json out = json::object();
  for (std::size_t r = 0; r < test_sets.size(); ++r) {
    std::optional<fs::path> dump;
    if (dump_images) dump = g.out_dir / "fused" / ("run" + std::to_string(r));
    const auto reports = pipeline::evaluate(model, test_sets[r], strategies, registry,
                                            {seeds[r], "", ckpt_id}, dump);
    for (const auto& [name, report] : reports) {
      by_strategy[name].push_back(report);
      const std::string stem = "report_" + name + "_run" + std::to_string(r);
      pipeline::write_json(g.out_dir / (stem + ".json"), report);
      metrics::write_csv(g.out_dir / (stem + ".csv"), report);
    }
    std::printf("run %zu (seed %llu, %zu pairs)\n", r, static_cast<unsigned long long>(seeds[r]),
                test_sets[r].pairs.size());
    print_report_table(reports);
  }
  for (const auto& [name, reps] : by_strategy) {
    const auto summary = metrics::combine_runs(reps);
    json s = json::object();
    for (const auto& [metric, ms] : summary.across_runs) {
      s[metric] = {{"mean", ms.mean}, {"std", ms.std}, {"formatted", metrics::format_mean_std(ms)}};
    }
    out[name] = s;
  }
  pipeline::write_json(g.out_dir / "evaluation_summary.json", out);

  pipeline::RunManifest m;
  m.command = "evaluate";
  m.config = cfg;
  m.dataset_manifest_hash = imaging::manifest_hash(manifest);
  m.checkpoint_path = checkpoint;
  m.report_path = (g.out_dir / "evaluation_summary.json").string();
  m.seed = cfg.seed;
  m.extra = {{"strategies", strategies}, {"runs", test_sets.size()}};
  pipeline::write_run_manifest(g.out_dir / "run_manifest.json", m);
  return 0;
}

// --- benchmark ----------------------------------------------------------------------

int run_benchmark(const GlobalOptions& g, const std::string& checkpoint,
                  const std::string& manifest_arg, const std::string& strategy_name, int warmup,
                  int iterations) {
  resolve_config(g);
  const nn::Autoencoder model(io::load_checkpoint(checkpoint));
  const auto manifest = imaging::read_manifest(default_manifest(g, manifest_arg));
  const auto pairs = imaging::load_split(manifest, imaging::Split::kTest);
  const fusion::StrategyRegistry registry;
  const auto strategy = registry.create(strategy_name);
  const auto report = pipeline::benchmark_fusion_time(model, pairs, *strategy, warmup, iterations);
  std::printf("%s", pipeline::format_benchmark(report).c_str());
  pipeline::write_json(g.out_dir / "benchmark.json", report);
  return 0;
}

// --- ablate ---------------------------------------------------------------------------

int run_ablate(const GlobalOptions& g, const std::string& manifest_arg,
               const std::string& strategy) {
  const auto cfg = resolve_config(g);
  const auto manifest = imaging::read_manifest(default_manifest(g, manifest_arg));
  const auto train = imaging::load_split(manifest, imaging::Split::kTrain);
  const auto test = imaging::load_split(manifest, imaging::Split::kTest);
  const auto rows = pipeline::ablate(cfg, imaging::training_planes(train), test, strategy,
                                     g.out_dir / "ablation");
  std::printf("%s", pipeline::format_ablation(rows).c_str());
  json out = json::array();
  for (const auto& row : rows) {
    out.push_back({{"arm", row.arm},
                   {"config_diff", row.config_diff},
                   {"report", row.report},
                   {"final_loss", row.steps.empty() ? 0.0 : row.steps.back().total}});
  }
  pipeline::write_json(g.out_dir / "ablation.json", out);
  pipeline::RunManifest m;
  m.command = "ablate";
  m.config = cfg;
  m.dataset_manifest_hash = imaging::manifest_hash(manifest);
  m.report_path = (g.out_dir / "ablation.json").string();
  m.seed = cfg.seed;
  pipeline::write_run_manifest(g.out_dir / "run_manifest.json", m);
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Two-stage multimodal medical image fusion"};
  app.require_subcommand(1);
  GlobalOptions g;
  std::uint64_t seed = 0;
  app.add_option("--config", g.config, "Training config (JSON)")->check(CLI::ExistingFile);
  app.add_option("--preset", g.preset, "Built-in config preset: harvard or brats");
  auto* seed_opt = app.add_option("--seed", seed, "Random seed override");
  app.add_option("--device", g.device, "Compute device (cpu)");
  app.add_option("--out-dir", g.out_dir, "Output directory");

  PrepareOptions prep;
  auto* prepare = app.add_subcommand("prepare-data", "Build a dataset manifest");
  prepare->add_option("--root", prep.root, "Dataset root with one directory per modality");
  prepare->add_option("--modality-a", prep.modality_a, "Directory of the grayscale modality");
  prepare->add_option("--modality-b", prep.modality_b, "Directory of the second modality");
  prepare->add_option("--holdout", prep.holdout, "Number of test pairs (default 20%)");
  prepare->add_option("--synthetic", prep.synthetic, "Generate this many phantom pairs");
  prepare->add_option("--size", prep.size, "Synthetic image size");
  prepare->add_flag("--color", prep.color, "Synthetic second modality is RGB");
  prepare->add_option("--nifti-a", prep.nifti_a, "Volume of the first modality");
  prepare->add_option("--nifti-b", prep.nifti_b, "Co-registered volume of the second modality");
  prepare->add_option("--min-nonzero", prep.min_nonzero, "Minimum nonzero fraction per slice");

  std::string manifest;
  std::string resume;
  auto* train = app.add_subcommand("train", "Stage-1 reconstruction training");
  train->add_option("--manifest", manifest, "Dataset manifest (default <out-dir>/dataset.json)");
  train->add_option("--resume", resume, "Training state (last.mmf) to continue from");

  std::string checkpoint;
  std::string path_a;
  std::string path_b;
  std::string strategy = "sfnn-max";
  std::string output;
  bool dump_latents = false;
  auto* fuse = app.add_subcommand("fuse", "Fuse one co-registered pair");
  fuse->add_option("--checkpoint", checkpoint, "Model checkpoint")->required();
  fuse->add_option("--a", path_a, "Grayscale source image")->required();
  fuse->add_option("--b", path_b, "Second source image (gray or RGB)")->required();
  fuse->add_option("--strategy", strategy, "Fusion strategy");
  fuse->add_option("--output", output, "Output PNG");
  fuse->add_flag("--dump-latents", dump_latents, "Also write the latent maps");

  std::vector<std::string> strategies{"sfnn-max", "sfnn-mean", "sfnn-sum"};
  int runs = 1;
  bool dump_images = false;
  auto* evaluate = app.add_subcommand("evaluate", "Fuse the test split and compute metrics");
  evaluate->add_option("--checkpoint", checkpoint, "Model checkpoint")->required();
  evaluate->add_option("--manifest", manifest, "Dataset manifest");
  evaluate->add_option("--strategies", strategies, "Fusion strategies")->delimiter(',');
  evaluate->add_option("--runs", runs, "Number of runs with distinct test sets");
  evaluate->add_flag("--dump-images", dump_images, "Write fused images");

  int warmup = 3;
  int iterations = 10;
  auto* bench = app.add_subcommand("benchmark", "Per-pair fusion time");
  bench->add_option("--checkpoint", checkpoint, "Model checkpoint")->required();
  bench->add_option("--manifest", manifest, "Dataset manifest");
  bench->add_option("--strategy", strategy, "Fusion strategy");
  bench->add_option("--warmup", warmup, "Untimed warm-up iterations");
  bench->add_option("--iterations", iterations, "Minimum timed iterations");

  auto* ablate = app.add_subcommand("ablate", "Train and evaluate the three ablation arms");
  ablate->add_option("--manifest", manifest, "Dataset manifest");
  ablate->add_option("--strategy", strategy, "Fusion strategy");

  CLI11_PARSE(app, argc, argv);
  if (*seed_opt) g.seed = seed;

  try {
    if (*prepare) return run_prepare(g, prep);
    if (*train) return run_train(g, manifest, resume);
    if (*fuse) return run_fuse(g, checkpoint, path_a, path_b, strategy, output, dump_latents);
    if (*evaluate) return run_evaluate(g, checkpoint, manifest, strategies, runs, dump_images);
    if (*bench) return run_benchmark(g, checkpoint, manifest, strategy, warmup, iterations);
    if (*ablate) return run_ablate(g, manifest, strategy);
  } catch (const std::invalid_argument& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 2;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
  return 0;
}
