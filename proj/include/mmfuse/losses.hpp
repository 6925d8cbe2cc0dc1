#pragma once

// Stage-1 reconstruction objective:
//   total = pixel + lambda_grad * gradient + lambda_perp * perceptual
// All terms are means over batch and pixels.

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "json.hpp"
#include "mmfuse/autograd.hpp"

namespace mmfuse::loss {

using ag::Var;

enum class GradientOperator { kSobel, kForwardDifference };

struct LossConfig {
  double lambda_grad = 0.5;
  double lambda_perp = 0.5;
  std::vector<std::string> perceptual_layers{"relu4_3"};
  GradientOperator gradient_operator = GradientOperator::kSobel;
  /// Pretrained extractor archive; empty selects the seeded fallback.
  std::string extractor_weights;
  /// Channel divisor for the fallback extractor (1 = full VGG16 widths).
  int extractor_width_divisor = 8;
  std::uint64_t extractor_seed = 1234;

  void validate() const;
};

void to_json(nlohmann::json& j, const LossConfig& c);
void from_json(const nlohmann::json& j, LossConfig& c);

/// mean((x - x_hat)^2)
Var pixel_loss(const Var& x, const Var& x_hat);

/// mean((Gx x - Gx x_hat)^2) + mean((Gy x - Gy x_hat)^2)
Var gradient_loss(const Var& x, const Var& x_hat,
                  GradientOperator op = GradientOperator::kSobel);

/// Horizontal/vertical derivative operator used by gradient_loss.
Var image_gradient_x(const Var& x, GradientOperator op);
Var image_gradient_y(const Var& x, GradientOperator op);

/// Frozen VGG16-style feature stack up to relu4_3. Gray input is replicated
/// to three channels and normalized with the ImageNet statistics.
class PerceptualExtractor {
 public:
  /// Seeded random weights; `width_divisor` scales every stage's width.
  static PerceptualExtractor random(int width_divisor, std::uint64_t seed);
  /// Loads `conv{s}_{i}.weight/.bias` tensors from a tensor archive.
  static PerceptualExtractor load(const std::filesystem::path& path);
  /// Pretrained file if configured and present, else the fallback.
  static PerceptualExtractor from_config(const LossConfig& cfg);

  static const std::vector<std::string>& layer_names();

  bool pretrained() const { return pretrained_; }
  std::string description() const;

  /// Activations for each requested layer id, in request order.
  std::vector<Var> features(const Var& gray,
                            const std::vector<std::string>& layers) const;

  /// sum over layers of (1 / (B·C_l·H_l·W_l)) · sum_k ||f_k(x) - f_k(x_hat)||^2
  Var loss(const Var& x, const Var& x_hat,
           const std::vector<std::string>& layers) const;

 private:
  struct ConvLayer {
    std::string name;
    Var weight;
    Var bias;
  };
  PerceptualExtractor() = default;
  static int layer_index(const std::string& id);

  std::vector<ConvLayer> convs_;
  bool pretrained_ = false;
  int width_divisor_ = 1;
};

Var perceptual_loss(const PerceptualExtractor& extractor, const Var& x,
                    const Var& x_hat, const std::vector<std::string>& layers);

struct LossTerms {
  Var total;
  double pixel = 0.0;
  double gradient = 0.0;
  double perceptual = 0.0;
};

/// pixel + lambda_grad * gradient + lambda_perp * perceptual
double total_loss(const LossConfig& cfg, double pixel, double gradient,
                  double perceptual);
Var total_loss(const LossConfig& cfg, const Var& pixel, const Var& gradient,
               const Var& perceptual);

/// Evaluates every term on one batch; skips the gradient term entirely when
/// `include_gradient` is false.
LossTerms reconstruction_loss(const LossConfig& cfg,
                              const PerceptualExtractor& extractor,
                              const Var& x, const Var& x_hat,
                              bool include_gradient = true);

}  // namespace mmfuse::loss
