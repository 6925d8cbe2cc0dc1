#pragma once

// Reverse-mode differentiation over 4D tensors.
//
// Each op returns a Var whose node remembers its parents and a closure that
// pushes the node's gradient back into them. backward() walks the graph in
// reverse topological order starting from a scalar Var. Nothing is recorded
// while a NoGradGuard is alive on the current thread, so inference builds no
// graph at all.

#include <array>
#include <functional>
#include <memory>
#include <span>
#include <vector>

#include "mmfuse/tensor.hpp"

namespace mmfuse::ag {

struct Node {
  Tensor value;
  Tensor grad;  // allocated lazily, same shape as value
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void(Node&)> backward_fn;

  Tensor& grad_buffer();
};

class Var {
 public:
  Var() = default;
  explicit Var(Tensor value, bool requires_grad = false);

  const Tensor& value() const { return node_->value; }
  Tensor& mutable_value() { return node_->value; }
  const Shape& shape() const { return node_->value.shape(); }
  bool requires_grad() const { return node_ && node_->requires_grad; }
  bool defined() const { return static_cast<bool>(node_); }

  /// Gradient accumulated by backward(); empty tensor if none reached this Var.
  const Tensor& grad() const { return node_->grad; }
  void zero_grad();

  /// Seeds d(self)/d(self) = 1 and propagates. Self must hold one element.
  void backward() const;

  const std::shared_ptr<Node>& node() const { return node_; }

 private:
  std::shared_ptr<Node> node_;
};

/// Disables graph recording on this thread for the guard's lifetime.
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

bool grad_enabled();

// --- elementwise -----------------------------------------------------------
Var add(const Var& a, const Var& b);
Var sub(const Var& a, const Var& b);
Var mul(const Var& a, const Var& b);
Var scale(const Var& a, double s);
Var leaky_relu(const Var& x, double slope);
Var relu(const Var& x);
Var sigmoid(const Var& x);
Var abs(const Var& x);

inline Var operator+(const Var& a, const Var& b) { return add(a, b); }
inline Var operator-(const Var& a, const Var& b) { return sub(a, b); }
inline Var operator*(const Var& a, const Var& b) { return mul(a, b); }
inline Var operator*(double s, const Var& a) { return scale(a, s); }

// --- convolution and resampling -------------------------------------------

/// 2D cross-correlation. weight is (Cout, Cin, K, K); bias, if defined, is
/// (1, Cout, 1, 1). Zero padding of `padding` pixels on every side.
Var conv2d(const Var& x, const Var& weight, const Var& bias, int dilation,
           int padding);

Var avg_pool2d(const Var& x, int factor);
Var max_pool2d(const Var& x, int factor);

/// Bilinear upsampling by an integer factor, half-pixel centers with edge
/// clamping (the align_corners=false convention).
Var upsample_bilinear(const Var& x, int factor);

/// Kernel indexed [dy + 1][dx + 1].
using Stencil3 = std::array<std::array<double, 3>, 3>;

/// Per-channel 3×3 cross-correlation with replicate padding.
Var stencil3x3(const Var& x, const Stencil3& kernel);

/// Per-channel 3×3 Sobel responses with replicate padding.
/// sobel_x responds to intensity change along the column axis.
Var sobel_x(const Var& x);
Var sobel_y(const Var& x);

// --- channel manipulation --------------------------------------------------
Var concat_channels(std::span<const Var> parts);
Var repeat_channels(const Var& x, int times);

/// y[:, c] = x[:, c] * scale[c] + shift[c]
Var channel_affine(const Var& x, std::vector<double> scale,
                   std::vector<double> shift);

// --- reductions ------------------------------------------------------------

/// Mean of squared differences over every element; a (1,1,1,1) scalar.
Var mse(const Var& a, const Var& b);

/// Sum of scalar Vars.
Var sum_scalars(std::span<const Var> terms);

}  // namespace mmfuse::ag
