// Acceptance run: one PASS/FAIL line per criterion. Tolerances and limits
// are pinned below. Exits nonzero if any criterion fails.

#include <Eigen/Dense>
#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <limits>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "mmfuse/fusion.hpp"
#include "mmfuse/losses.hpp"
#include "mmfuse/metrics.hpp"
#include "mmfuse/network.hpp"
#include "mmfuse/pipeline.hpp"
#include "oracles.hpp"
#include "test_support.hpp"

using namespace mmfuse;
using imaging::ColorImage;
using imaging::GrayImage;

namespace {

constexpr double kFusionOracleTol = 1e-6;
constexpr double kFusionOracleSeconds = 5.0;
constexpr double kNuclearNormTol = 1e-6;
constexpr double kInvariantTol = 1e-6;
constexpr double kGradEps = 1e-3;
constexpr double kGradMinMagnitude = 1e-6;
constexpr double kGradRelTol = 1e-2;
constexpr double kGradSeconds = 30.0;
constexpr std::size_t kMinParams = 300000;
constexpr std::size_t kMaxParams = 800000;
constexpr double kOverfitPsnr = 30.0;
constexpr double kOverfitSeconds = 300.0;
constexpr int kOverfitImages = 8;
constexpr int kOverfitSteps = 200;
constexpr double kSsimIdentityTol = 1e-6;
constexpr double kFsimIdentityTol = 1e-3;
constexpr double kEntropyTol = 1e-6;
constexpr double kStepDriftTol = 1e-6;

const fusion::Reduction kAllKinds[] = {fusion::Reduction::kMax, fusion::Reduction::kMean,
                                       fusion::Reduction::kSum, fusion::Reduction::kIdentity};

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

struct Outcome {
  bool pass = true;
  std::string detail;
};

int failures = 0;

void report(int id, const std::string& title, const std::function<Outcome()>& run) {
  const auto t0 = Clock::now();
  Outcome o;
  try {
    o = run();
  } catch (const std::exception& e) {
    o = {false, std::string("exception: ") + e.what()};
  }
  if (!o.pass) ++failures;
  std::printf("[%s] criterion %d: %s (%s; %.1fs)\n", o.pass ? "PASS" : "FAIL", id, title.c_str(),
              o.detail.c_str(), seconds_since(t0));
  std::fflush(stdout);
}

std::string fmt(const char* f, double a, double b = 0.0, double c = 0.0) {
  char buf[256];
  std::snprintf(buf, sizeof(buf), f, a, b, c);
  return buf;
}

double max_abs_diff(const Tensor& a, const Tensor& b) {
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

double nuclear_norm_of(const Eigen::MatrixXd& m) {
  const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> r = m;
  return fusion::nuclear_norm(r.data(), static_cast<int>(r.rows()), static_cast<int>(r.cols()));
}

// --- criteria -------------------------------------------------------------------

Outcome fusion_oracle() {
  const auto t0 = Clock::now();
  double worst = 0.0;
  for (std::uint64_t k = 0; k < 200; ++k) {
    const Tensor fa = testing::random_tensor({1, 2, 4, 4}, 10000 + k, -3.0, 3.0);
    const Tensor fb = testing::random_tensor({1, 2, 4, 4}, 20000 + k, -3.0, 3.0);
    for (auto phi : kAllKinds) {
      worst = std::max(worst, max_abs_diff(fusion::fuse(fa, fb, phi), testing::oracle_fuse(fa, fb, phi)));
    }
  }
  const double dt = seconds_since(t0);
  return {worst <= kFusionOracleTol && dt < kFusionOracleSeconds,
          fmt("200 pairs x 4 kinds, max |diff| %.2e, %.2fs", worst, dt)};
}

Outcome nuclear_norm_oracle() {
  std::mt19937_64 rng(77);
  std::uniform_real_distribution<double> dist(-3.0, 3.0);
  double worst_oracle = 0.0;
  double worst_unitary = 0.0;
  for (int n : {2, 3}) {
    for (int k = 0; k < 100; ++k) {
      Eigen::MatrixXd m(n, n);
      Eigen::MatrixXd r(n, n);
      for (int i = 0; i < n; ++i)
        for (int j = 0; j < n; ++j) {
          m(i, j) = dist(rng);
          r(i, j) = dist(rng);
        }
      // 2×2: (s1 + s2)^2 = ||M||_F^2 + 2 |det M|; 3×3: eigenvalues of MᵀM.
      const double want = n == 2 ? std::sqrt(m.squaredNorm() + 2.0 * std::abs(m.determinant()))
                                 : testing::eigen_nuclear_norm(m);
      const double got = nuclear_norm_of(m);
      worst_oracle = std::max(worst_oracle, std::abs(got - want));
      const Eigen::MatrixXd q = Eigen::HouseholderQR<Eigen::MatrixXd>(r).householderQ();
      worst_unitary = std::max(worst_unitary, std::abs(nuclear_norm_of(q * m) - got));
    }
  }
  return {worst_oracle <= kNuclearNormTol && worst_unitary <= kNuclearNormTol,
          fmt("200 matrices, oracle max |diff| %.2e, unitary max |diff| %.2e", worst_oracle,
              worst_unitary)};
}

Outcome weight_invariants() {
  double worst_sum = 0.0;
  double min_weight = std::numeric_limits<double>::infinity();
  double worst_swap = 0.0;
  double worst_idem = 0.0;
  for (std::uint64_t k = 0; k < 100; ++k) {
    const int c = 1 + static_cast<int>(k % 8);
    const Tensor fa = testing::random_tensor({1, c, 6, 5}, 30000 + k, -4.0, 4.0);
    const Tensor fb = testing::random_tensor({1, c, 6, 5}, 40000 + k, -4.0, 4.0);
    for (auto phi : kAllKinds) {
      const auto w = fusion::sfnn_weights(fa, fb, phi);
      const auto r = fusion::sfnn_weights(fb, fa, phi);
      for (std::size_t i = 0; i < w.w_a.size(); ++i) {
        worst_sum = std::max(worst_sum, std::abs(w.w_a[i] + w.w_b[i] - 1.0));
        min_weight = std::min({min_weight, w.w_a[i], w.w_b[i]});
        worst_swap = std::max({worst_swap, std::abs(w.w_a[i] - r.w_b[i]), std::abs(w.w_b[i] - r.w_a[i])});
      }
      worst_idem = std::max(worst_idem, max_abs_diff(fusion::fuse(fa, fa, phi), fa));
    }
  }
  const bool ok = worst_sum <= kInvariantTol && min_weight >= 0.0 && worst_swap <= kInvariantTol &&
                  worst_idem <= kInvariantTol;
  char buf[256];
  std::snprintf(buf, sizeof(buf),
                "|Wa+Wb-1| %.1e, min W %.3f, swap %.1e, fuse(F,F)-F %.1e", worst_sum, min_weight,
                worst_swap, worst_idem);
  return {ok, buf};
}

Outcome gradient_check() {
  const auto t0 = Clock::now();
  using ag::Var;
  Var w1(testing::random_tensor({4, 1, 3, 3}, 50, -0.5, 0.5), true);
  Var b1(testing::random_tensor({1, 4, 1, 1}, 51, -0.1, 0.1), true);
  Var w2(testing::random_tensor({1, 4, 3, 3}, 52, -0.5, 0.5), true);
  Var b2(testing::random_tensor({1, 1, 1, 1}, 53, -0.1, 0.1), true);
  const Var x(testing::random_tensor({1, 1, 8, 8}, 54, 0.0, 1.0));
  const loss::LossConfig cfg;  // lambda_grad = lambda_perp = 0.5
  const auto extractor = loss::PerceptualExtractor::from_config(cfg);
  // The toy model's hidden activation is smooth so that eps-sized steps do
  // not cross activation kinks.
  const auto objective = [&] {
    const Var h = ag::sigmoid(ag::conv2d(x, w1, b1, 1, 1));
    return loss::reconstruction_loss(cfg, extractor, x, ag::conv2d(h, w2, b2, 1, 1)).total;
  };
  const auto r = testing::check_gradients(objective, {w1, b1, w2, b2}, kGradEps, kGradMinMagnitude);
  const double dt = seconds_since(t0);
  const bool ok = cfg.lambda_grad == 0.5 && cfg.lambda_perp == 0.5 && r.checked > 0 &&
                  r.worst_relative < kGradRelTol && dt < kGradSeconds;
  return {ok, fmt("%.0f parameters checked, worst relative error %.2e, %.2fs",
                  static_cast<double>(r.checked), r.worst_relative, dt)};
}

Outcome shape_contract() {
  const nn::Autoencoder model(nn::EncoderConfig{}, 42);
  std::string sizes;
  bool preserved = true;
  {
    ag::NoGradGuard guard;
    for (int n : {32, 64, 128, 256}) {
      const Tensor z = model.encode(ag::Var(Tensor(Shape{1, 1, n, n}, 0.5))).value();
      const bool ok = z.h() == n && z.w() == n;
      preserved = preserved && ok;
      sizes += (sizes.empty() ? "" : ",") + std::to_string(n) + (ok ? "ok" : "BAD");
    }
  }
  const std::size_t params = model.param_count();
  const std::size_t layers = model.decoder().layers.size();
  const bool ok = preserved && layers == 3 && params >= kMinParams && params <= kMaxParams;
  char buf[256];
  std::snprintf(buf, sizeof(buf), "H×W %s; decoder %zu convs; %zu params (%.2fM)", sizes.c_str(),
                layers, params, params / 1e6);
  return {ok, buf};
}

// The overfit model is shared by criteria 6 and 8.
struct OverfitRun {
  std::vector<GrayImage> images;
  std::optional<nn::Autoencoder> model;
  double seconds = 0.0;
  std::size_t steps = 0;
};

pipeline::TrainConfig overfit_config() {
  pipeline::TrainConfig cfg;
  cfg.initial_lr = 1.5e-3;
  cfg.final_lr = 1.5e-3;
  cfg.lr_schedule = pipeline::LrSchedule::kConstant;
  cfg.batch_size = 4;
  cfg.validation_fraction = 0.0;
  cfg.max_steps = kOverfitSteps;
  cfg.epochs = kOverfitSteps;  // the step cap ends training first
  return cfg;
}

OverfitRun& overfit() {
  static OverfitRun run = [] {
    OverfitRun r;
    for (int i = 0; i < kOverfitImages; ++i) r.images.push_back(imaging::synthetic_pair(32, 100 + i, false).a);
    const auto result = pipeline::train_stage1(overfit_config(), r.images);
    r.model.emplace(result.weights);
    r.seconds = result.seconds;
    r.steps = result.steps.size();
    return r;
  }();
  return run;
}

Outcome overfit_smoke() {
  auto& run = overfit();
  const auto p = pipeline::reconstruction_psnr(*run.model, run.images);
  const auto ms = metrics::mean_std(p);
  const double lo = *std::min_element(p.begin(), p.end());
  const bool ok = run.steps == static_cast<std::size_t>(kOverfitSteps) && ms.mean >= kOverfitPsnr &&
                  run.seconds < kOverfitSeconds;
  char buf[256];
  std::snprintf(buf, sizeof(buf), "%zu steps on %d images: mean PSNR %.2f dB (min %.2f), train %.0fs",
                run.steps, kOverfitImages, ms.mean, lo, run.seconds);
  return {ok, buf};
}

Outcome metric_identities() {
  const GrayImage x = testing::phantom(64);
  std::vector<std::string> failed;
  auto need = [&](bool c, const char* what) {
    if (!c) failed.push_back(what);
  };
  need(metrics::psnr(x, x) == metrics::kPsnrCap, "psnr cap");
  need(std::abs(metrics::ssim(x, x) - 1.0) <= kSsimIdentityTol, "ssim identity");
  need(std::abs(metrics::fsim(x, x) - 1.0) <= kFsimIdentityTol, "fsim identity");
  need(metrics::entropy(testing::constant_image(16, 16, 0.3)) == 0.0, "entropy constant");
  std::vector<double> levels(256);
  for (int i = 0; i < 256; ++i) levels[i] = i / 255.0;
  need(std::abs(metrics::entropy(GrayImage(16, 16, levels)) - 8.0) <= kEntropyTol, "entropy uniform");
  double prev_psnr = metrics::kPsnrCap;
  for (double a : {0.02, 0.05, 0.1, 0.2}) {
    const double p = metrics::psnr(x, testing::add_noise(x, a, 17));
    need(p < prev_psnr, "psnr noise ordering");
    prev_psnr = p;
  }
  double prev_fsim = 1.0 + 1e-12;
  for (double sigma : {0.8, 1.5, 3.0}) {
    const double f = metrics::fsim(x, testing::blur(x, sigma));
    need(f < prev_fsim, "fsim blur ordering");
    prev_fsim = f;
  }
  std::string detail = failed.empty() ? "cap, identities, entropy bounds, orderings hold" : "failed:";
  for (const auto& f : failed) detail += " " + f;
  return {failed.empty(), detail};
}

Outcome pipeline_round_trip() {
  auto& run = overfit();
  const fusion::StrategyRegistry registry;
  double sum = 0.0;
  double lo = std::numeric_limits<double>::infinity();
  for (const auto& name : registry.names()) {
    const auto strategy = registry.create(name);
    for (const auto& x : run.images) {
      const auto out = pipeline::fuse_pair(*run.model, x, x, *strategy);
      const double p = metrics::psnr(x, std::get<GrayImage>(out.fused));
      sum += p;
      lo = std::min(lo, p);
    }
  }
  const double mean = sum / (registry.names().size() * run.images.size());

  bool color_ok = true;
  for (int i = 0; i < 3; ++i) {
    const auto pair = imaging::synthetic_pair(32, 900 + i, true);
    const auto out = pipeline::fuse_pair(*run.model, pair.a, pair.b, fusion::SfnnStrategy(fusion::Reduction::kMax));
    const auto& rgb = std::get<ColorImage>(out.fused);
    const auto src = imaging::rgb_to_ycbcr(std::get<ColorImage>(pair.b));
    color_ok = color_ok && out.used_color_path && out.fused_ycbcr && out.fused_ycbcr->cb == src.cb &&
               out.fused_ycbcr->cr == src.cr;
    for (double v : rgb.rgb()) color_ok = color_ok && v >= 0.0 && v <= 1.0;
  }
  char buf[256];
  std::snprintf(buf, sizeof(buf), "fuse(x,x) mean PSNR %.2f dB (min %.2f) over 4 kinds; color path %s",
                mean, lo, color_ok ? "valid, chroma exact" : "INVALID");
  return {mean >= kOverfitPsnr && color_ok, buf};
}

Outcome reproducibility() {
  std::vector<GrayImage> images;
  for (int i = 0; i < 8; ++i) images.push_back(imaging::synthetic_pair(32, 500 + i, false).a);
  pipeline::TrainConfig cfg;
  cfg.epochs = 3;
  cfg.max_steps = 6;
  cfg.initial_lr = 1e-3;
  cfg.validation_fraction = 0.25;
  const auto a = pipeline::train_stage1(cfg, images);
  const auto b = pipeline::train_stage1(cfg, images);
  double drift = a.steps.size() == b.steps.size() ? 0.0 : std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < std::min(a.steps.size(), b.steps.size()); ++i) {
    drift = std::max(drift, std::abs(a.steps[i].total - b.steps[i].total));
  }

  imaging::PairedDataset test;
  for (int i = 0; i < 3; ++i) {
    auto p = imaging::synthetic_pair(32, 600 + i, i == 2);
    test.pairs.push_back({"pair" + std::to_string(i), p.a, p.b});
  }
  const fusion::StrategyRegistry registry;
  const std::vector<std::string> kinds{"sfnn-max", "sfnn-mean", "sfnn-sum"};
  const nn::Autoencoder ma(a.weights);
  const nn::Autoencoder mb(b.weights);
  const auto ra = pipeline::evaluate(ma, test, kinds, registry, {cfg.seed, "", "a"});
  const auto rb = pipeline::evaluate(mb, test, kinds, registry, {cfg.seed, "", "b"});
  bool same = ra.size() == rb.size();
  for (const auto& [name, rep] : ra) same = same && rb.count(name) && rb.at(name).per_pair == rep.per_pair;
  char buf[256];
  std::snprintf(buf, sizeof(buf), "%zu steps, max per-step drift %.1e; metric reports %s", a.steps.size(),
                drift, same ? "identical" : "DIFFER");
  return {drift <= kStepDriftTol && same, buf};
}

Outcome benchmark_harness() {
  const nn::Autoencoder model(nn::EncoderConfig{}, 42);
  imaging::PairedDataset pairs;
  for (int i = 0; i < 3; ++i) {
    auto p = imaging::synthetic_pair(32, 800 + i, false);
    pairs.pairs.push_back({"pair" + std::to_string(i), p.a, p.b});
  }
  const int warmup = 3;
  const int iterations = 10;
  const auto r = pipeline::benchmark_fusion_time(model, pairs, fusion::SfnnStrategy(fusion::Reduction::kMax),
                                                 warmup, iterations);
  const std::string table = pipeline::format_benchmark(r);
  const bool ok = r.seconds.size() == static_cast<std::size_t>(iterations) && r.warmup == warmup &&
                  r.param_count == model.param_count() && r.time.mean > 0.0 &&
                  table.find("Params(M)") != std::string::npos &&
                  table.find("Time(s)") != std::string::npos && table.find("±") != std::string::npos;
  char buf[256];
  std::snprintf(buf, sizeof(buf), "%d warm-up excluded, %zu timed, Params(M) %.2f, Time(s) %s", r.warmup,
                r.seconds.size(), r.param_count / 1e6, metrics::format_mean_std(r.time, 4).c_str());
  return {ok, buf};
}

}  // namespace

int main() {
  report(1, "fusion matches the straight-line oracle", fusion_oracle);
  report(2, "nuclear norm matches closed-form and eigen oracles", nuclear_norm_oracle);
  report(3, "fusion weight invariants", weight_invariants);
  report(4, "total loss gradient check", gradient_check);
  report(5, "shape and parameter contract", shape_contract);
  report(6, "overfit smoke test", overfit_smoke);
  report(7, "metric identities and orderings", metric_identities);
  report(8, "pipeline round trip", pipeline_round_trip);
  report(9, "reproducibility", reproducibility);
  report(10, "benchmark harness", benchmark_harness);
  std::printf("%d of 10 criteria failed\n", failures);
  return failures == 0 ? 0 : 1;
}
