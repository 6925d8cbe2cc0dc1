#pragma once

// Asymmetric autoencoder: a dilated residual-attention encoder with a
// gradient-operator edge branch, and a three-layer decoder.

#include <cstdint>
#include <optional>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include "json.hpp"
#include "mmfuse/autograd.hpp"
#include "mmfuse/imaging.hpp"

namespace mmfuse::nn {

using ag::Var;

struct EncoderConfig {
  int shallow_channels = 32;
  int branch_channels = 32;
  std::vector<int> dilation_rates{1, 3, 5};
  std::vector<int> pyramid_depths{1, 2, 3};
  int pyramid_channels = 40;
  int attention_downsample_factor = 2;
  int residual_trunk_depth = 2;
  int residual_stages = 1;
  int pyramid_stages = 1;
  double leaky_slope = 0.2;
  int latent_channels = 64;
  std::vector<int> decoder_channels{64, 32};  // hidden widths; +1 output conv
  bool use_drgo = true;

  /// Throws ConfigError on non-positive widths or empty branch lists.
  void validate() const;
  bool operator==(const EncoderConfig&) const = default;
};

void to_json(nlohmann::json& j, const EncoderConfig& c);
void from_json(const nlohmann::json& j, EncoderConfig& c);

/// Stable hex digest of the canonical config serialization.
std::string config_hash(const EncoderConfig& c);

/// Ordered name → parameter Var registry.
class ParameterSet {
 public:
  Var& add(std::string name, Tensor value, bool trainable = true);
  const std::vector<std::pair<std::string, Var>>& entries() const {
    return entries_;
  }
  std::vector<std::pair<std::string, Var>>& entries() { return entries_; }
  const Var* find(const std::string& name) const;
  std::size_t scalar_count() const;
  void zero_grad();

 private:
  std::vector<std::pair<std::string, Var>> entries_;
};

/// Kaiming fan-in normal initialization, gain for a leaky ReLU with `slope`.
/// A slope of 1 gives the linear gain.
struct Initializer {
  std::mt19937_64 rng;
  Tensor kaiming(Shape shape, double slope);
};

struct Conv2d {
  Var weight;
  Var bias;
  int dilation = 1;
  int padding = 0;

  /// Registers `<name>.weight` (cout, cin, k, k) and `<name>.bias`.
  /// Padding defaults to dilation * (k - 1) / 2, which preserves H×W.
  static Conv2d create(ParameterSet& params, const std::string& name, int cin,
                       int cout, int kernel, int dilation, double init_slope,
                       Initializer& init);

  Var operator()(const Var& x) const;
  int in_channels() const { return weight.shape().c; }
  int out_channels() const { return weight.shape().n; }
};

/// |Sobel_x| + |Sobel_y| per channel, replicate padded.
Var sobel_magnitude(const Var& x);

/// Parallel dilated 3×3 convolutions on the shallow features, concatenated.
struct DilatedBranches {
  std::vector<Conv2d> convs;
  double slope = 0.2;
  Var operator()(const Var& shallow) const;
};

/// trunk(x) ⊙ σ(mask(x)) + x, the mask path being pool → conv → upsample.
struct ResidualAttentionBlock {
  std::vector<Conv2d> trunk;
  Conv2d mask;
  int downsample = 2;
  double slope = 0.2;
  Var operator()(const Var& x) const;
  /// σ(mask(x)), exposed for inspection.
  Var mask_weights(const Var& x) const;
};

/// Stacks of 1, 2, 3 consecutive 3×3 convolutions (receptive fields 3, 5, 7),
/// concatenated and projected by a 1×1 convolution.
struct PyramidAttentionBlock {
  std::vector<std::vector<Conv2d>> stacks;
  Conv2d projection;
  double slope = 0.2;
  Var operator()(const Var& x) const;
  /// Receptive field edge length of each stack.
  std::vector<int> receptive_fields() const;
};

/// Edge enhancer: residual conv pair plus a 1×1-projected Sobel magnitude,
/// then aligned to the latent width.
struct GradientOperatorBranch {
  Conv2d conv_a;
  Conv2d conv_b;
  Conv2d gradient_projection;
  Conv2d output_projection;
  double slope = 0.2;
  Var operator()(const Var& shallow) const;
  /// The Sobel path alone, before the residual sum.
  Var gradient_path(const Var& shallow) const;
};

struct Decoder {
  std::vector<Conv2d> layers;
  double slope = 0.2;
  Var operator()(const Var& latent) const;
};

/// All trainable state plus the config it was built for.
struct ModelWeights {
  EncoderConfig config;
  std::string version = "1";
  std::vector<std::pair<std::string, Tensor>> tensors;
};

std::size_t param_count(const ModelWeights& weights);

class Autoencoder {
 public:
  Autoencoder(const EncoderConfig& config, std::uint64_t seed);
  explicit Autoencoder(const ModelWeights& weights);

  Autoencoder(const Autoencoder&) = delete;
  Autoencoder& operator=(const Autoencoder&) = delete;
  Autoencoder(Autoencoder&&) = default;
  Autoencoder& operator=(Autoencoder&&) = default;

  const EncoderConfig& config() const { return config_; }
  ParameterSet& parameters() { return params_; }
  const ParameterSet& parameters() const { return params_; }

  /// Throws ShapeError unless H and W are usable by every block.
  void check_input_shape(const Shape& s) const;

  Var shallow(const Var& x) const;
  Var encode(const Var& x) const;
  Var decode(const Var& latent) const;
  Var reconstruct(const Var& x) const { return decode(encode(x)); }

  /// Graph-free helpers.
  Tensor encode_image(const imaging::GrayImage& img) const;
  imaging::GrayImage decode_to_image(const Tensor& latent) const;

  const DilatedBranches& dilated() const { return dilated_; }
  const std::vector<ResidualAttentionBlock>& residual_blocks() const {
    return residual_;
  }
  const std::vector<PyramidAttentionBlock>& pyramid_blocks() const {
    return pyramid_;
  }
  const std::optional<GradientOperatorBranch>& drgo() const { return drgo_; }
  const Decoder& decoder() const { return decoder_; }

  ModelWeights weights() const;
  /// Copies tensors by name; names and shapes must match exactly.
  void load_weights(const ModelWeights& weights);
  std::size_t param_count() const { return params_.scalar_count(); }

 private:
  void build(Initializer& init);

  EncoderConfig config_;
  ParameterSet params_;
  Conv2d stem_;
  DilatedBranches dilated_;
  std::vector<ResidualAttentionBlock> residual_;
  std::vector<PyramidAttentionBlock> pyramid_;
  std::optional<GradientOperatorBranch> drgo_;
  Decoder decoder_;
};

}  // namespace mmfuse::nn
