#pragma once

// Fusion quality metrics on [0, 1] grayscale planes, and their aggregation
// into per-pair and mean ± std reports.

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "json.hpp"
#include "mmfuse/imaging.hpp"

namespace mmfuse::metrics {

using imaging::GrayImage;

/// Returned by psnr when the two images are identical.
inline constexpr double kPsnrCap = 100.0;

/// 10 log10(1 / MSE) for unit peak; kPsnrCap when MSE is zero.
double psnr(const GrayImage& reference, const GrayImage& test);

/// Mean SSIM over the valid region of an 11×11 Gaussian window (sigma 1.5),
/// k1 = 0.01, k2 = 0.03, dynamic range 1.
double ssim(const GrayImage& a, const GrayImage& b);

/// Shannon entropy in bits of the 256-bin histogram of round(255 v).
double entropy(const GrayImage& img);

/// Feature mutual information on Sobel gradient-magnitude features:
///   I(A;F) / (H(A) + H(F)) + I(B;F) / (H(B) + H(F))
/// with 256-bin min-max quantized joint histograms. Ranges over [0, 1];
/// equals 1 when all three images coincide and carry any structure.
double fmi(const GrayImage& source_a, const GrayImage& source_b,
           const GrayImage& fused);

/// Feature similarity index (phase congruency and gradient magnitude).
double fsim(const GrayImage& a, const GrayImage& b);

/// Phase congruency map of a plane in [0, 255] units (4 scales, 4
/// orientations, log-Gabor filters). Exposed for tests.
imaging::Plane phase_congruency(const imaging::Plane& img);

struct MetricRecord {
  double psnr = 0.0;
  double ssim = 0.0;
  double fmi = 0.0;
  double fsim = 0.0;
  double en = 0.0;

  static const std::vector<std::string>& names();
  double get(const std::string& name) const;
  bool operator==(const MetricRecord&) const = default;
};

/// PSNR, SSIM and FSIM against each source averaged; FMI on both sources;
/// EN on the fused image alone.
MetricRecord fusion_metrics(const GrayImage& source_a, const GrayImage& source_b,
                            const GrayImage& fused);

struct MeanStd {
  double mean = 0.0;
  double std = 0.0;  // population standard deviation
};

/// Population mean and standard deviation; empty input gives {0, 0}.
MeanStd mean_std(const std::vector<double>& values);

/// "16.830±0.490"
std::string format_mean_std(const MeanStd& m, int decimals = 3);

struct RunMetadata {
  std::uint64_t seed = 0;
  std::string strategy;
  std::string checkpoint_id;
};

struct MetricReport {
  std::map<std::string, MetricRecord> per_pair;  // sorted by pair id
  RunMetadata run;

  /// Mean ± std of each metric over per_pair.
  std::map<std::string, MeanStd> aggregate() const;
};

/// Multi-run summary: the per-run means, and their mean ± std across runs.
struct MultiRunSummary {
  std::vector<std::map<std::string, MeanStd>> per_run;
  std::map<std::string, MeanStd> across_runs;
};
MultiRunSummary combine_runs(const std::vector<MetricReport>& runs);

void to_json(nlohmann::json& j, const MetricRecord& r);
void from_json(const nlohmann::json& j, MetricRecord& r);
void to_json(nlohmann::json& j, const MetricReport& r);
void from_json(const nlohmann::json& j, MetricReport& r);

/// One row per pair, header "pair_id,psnr,ssim,fmi,fsim,en".
void write_csv(const std::filesystem::path& path, const MetricReport& report);

}  // namespace mmfuse::metrics
