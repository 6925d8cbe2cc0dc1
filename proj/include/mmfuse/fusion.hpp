#pragma once

// Softmax feature-weighted nuclear norm (SFNN) fusion of two latent maps.
//
//   s_k = softmax over channels of f_k, per pixel
//   n_k[c] = ||s_k[c]||_*
//   W_k = phi(n_k) / (phi(n_a) + phi(n_b))
//   f = W_a f_a + W_b f_b
//
// phi is max, mean or sum (scalar weights) or identity (one weight per
// channel, normalized channel by channel).

#include <functional>
#include <map>
#include <memory>
#include <string>
#include <vector>

#include "mmfuse/tensor.hpp"

namespace mmfuse::fusion {

enum class Reduction { kMax, kMean, kSum, kIdentity };

/// Weights for sources a and b. Scalar kinds hold one entry; the identity
/// kind holds one entry per channel.
struct FusionWeights {
  std::vector<double> w_a;
  std::vector<double> w_b;
  bool per_channel() const { return w_a.size() > 1; }
};

/// Per-pixel softmax across channels of a (1, C, H, W) map, max-subtracted.
Tensor channel_softmax(const Tensor& f);

/// Sum of singular values of a row-major rows×cols matrix.
double nuclear_norm(const double* data, int rows, int cols);

/// Nuclear norm of every channel plane of a (1, C, H, W) map. Throws
/// NumericalError naming the channel if a plane holds non-finite values.
std::vector<double> channel_nuclear_norms(const Tensor& f);

/// Cross-modality normalization of the per-channel norms.
FusionWeights weights_from_norms(const std::vector<double>& n_a,
                                 const std::vector<double>& n_b,
                                 Reduction phi);

FusionWeights sfnn_weights(const Tensor& f_a, const Tensor& f_b, Reduction phi);

/// W_a f_a + W_b f_b with the weights broadcast over pixels (and channels for
/// scalar kinds).
Tensor apply_weights(const Tensor& f_a, const Tensor& f_b,
                     const FusionWeights& w);

/// A named rule merging two (1, C, H, W) latents.
class FusionStrategy {
 public:
  virtual ~FusionStrategy() = default;
  virtual std::string name() const = 0;
  virtual Tensor fuse(const Tensor& f_a, const Tensor& f_b) const = 0;
};

class SfnnStrategy final : public FusionStrategy {
 public:
  explicit SfnnStrategy(Reduction phi) : phi_(phi) {}
  std::string name() const override;
  Tensor fuse(const Tensor& f_a, const Tensor& f_b) const override;
  FusionWeights weights(const Tensor& f_a, const Tensor& f_b) const;
  Reduction reduction() const { return phi_; }

 private:
  Reduction phi_;
};

/// Convenience: SFNN fusion with the given reduction.
Tensor fuse(const Tensor& f_a, const Tensor& f_b, Reduction phi);

/// Name → strategy factory. Comes populated with the four SFNN kinds;
/// further strategies register through add().
class StrategyRegistry {
 public:
  using Factory = std::function<std::unique_ptr<FusionStrategy>()>;

  StrategyRegistry();

  void add(const std::string& name, Factory factory);
  /// Throws ConfigError listing the known names when `name` is unknown.
  std::unique_ptr<FusionStrategy> create(const std::string& name) const;
  bool contains(const std::string& name) const;
  std::vector<std::string> names() const;

 private:
  std::map<std::string, Factory> factories_;
};

std::string to_string(Reduction phi);

}  // namespace mmfuse::fusion
