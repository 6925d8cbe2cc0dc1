#pragma once

// Shared fixtures for the tests: seeded tensors, image fixtures and a central
// finite-difference gradient checker.

#include <algorithm>
#include <cmath>
#include <functional>
#include <random>
#include <vector>

#include "mmfuse/autograd.hpp"
#include "mmfuse/imaging.hpp"

namespace mmfuse::testing {

inline Tensor random_tensor(Shape s, std::uint64_t seed, double lo = -1.0, double hi = 1.0) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> dist(lo, hi);
  Tensor t(s);
  for (double& v : t.values()) v = dist(rng);
  return t;
}

inline imaging::GrayImage random_image(int h, int w, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> dist(0.0, 1.0);
  std::vector<double> px(static_cast<std::size_t>(h) * w);
  for (double& v : px) v = dist(rng);
  return imaging::GrayImage(h, w, std::move(px));
}

inline imaging::GrayImage constant_image(int h, int w, double v) {
  return imaging::GrayImage(h, w, std::vector<double>(static_cast<std::size_t>(h) * w, v));
}

inline imaging::GrayImage map_pixels(const imaging::GrayImage& img, const std::function<double(int, int, double)>& f) {
  std::vector<double> px(img.pixels().size());
  for (int y = 0; y < img.height(); ++y)
    for (int x = 0; x < img.width(); ++x)
      px[static_cast<std::size_t>(y) * img.width() + x] = f(y, x, img.at(y, x));
  return imaging::GrayImage(img.height(), img.width(), std::move(px));
}

// Smooth structured fixture: a few overlapping blobs and a ring.
inline imaging::GrayImage phantom(int n) {
  return map_pixels(constant_image(n, n, 0.0), [n](int y, int x, double) {
    const double u = (x + 0.5) / n - 0.5;
    const double v = (y + 0.5) / n - 0.5;
    const double r = std::hypot(u, v);
    double s = 0.15 + 0.5 * std::exp(-((u - 0.1) * (u - 0.1) + v * v) / 0.01);
    s += 0.3 * (r > 0.3 && r < 0.36);
    s += 0.2 * std::exp(-((u + 0.2) * (u + 0.2) + (v + 0.15) * (v + 0.15)) / 0.003);
    return std::clamp(s, 0.0, 1.0);
  });
}

inline imaging::GrayImage add_noise(const imaging::GrayImage& img, double amplitude, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> dist(-1.0, 1.0);
  return map_pixels(img, [&](int, int, double v) { return std::clamp(v + amplitude * dist(rng), 0.0, 1.0); });
}

// Separable Gaussian blur with replicate borders.
inline imaging::GrayImage blur(const imaging::GrayImage& img, double sigma) {
  const int r = static_cast<int>(std::ceil(3 * sigma));
  std::vector<double> k(2 * r + 1);
  double total = 0.0;
  for (int i = -r; i <= r; ++i) total += k[i + r] = std::exp(-i * i / (2 * sigma * sigma));
  for (double& v : k) v /= total;
  const int h = img.height();
  const int w = img.width();
  std::vector<double> tmp(img.pixels().size());
  std::vector<double> out(img.pixels().size());
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      double s = 0.0;
      for (int i = -r; i <= r; ++i) s += k[i + r] * img.at(y, std::clamp(x + i, 0, w - 1));
      tmp[static_cast<std::size_t>(y) * w + x] = s;
    }
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      double s = 0.0;
      for (int i = -r; i <= r; ++i) s += k[i + r] * tmp[static_cast<std::size_t>(std::clamp(y + i, 0, h - 1)) * w + x];
      out[static_cast<std::size_t>(y) * w + x] = std::clamp(s, 0.0, 1.0);
    }
  return imaging::GrayImage(h, w, std::move(out));
}


struct GradCheck {
  std::size_t checked = 0;
  double worst_relative = 0.0;
};

/// Compares backward() against central differences for every element of
/// every input with |analytic| > min_grad. `loss` must rebuild the graph.
inline GradCheck check_gradients(const std::function<ag::Var()>& loss,
                                 std::vector<ag::Var> inputs, double eps = 1e-3,
                                 double min_grad = 1e-6) {
  for (auto& in : inputs) in.zero_grad();
  loss().backward();
  std::vector<Tensor> analytic;
  for (const auto& in : inputs) analytic.push_back(in.grad());
  GradCheck out;
  for (std::size_t k = 0; k < inputs.size(); ++k) {
    Tensor& value = inputs[k].mutable_value();
    for (std::size_t i = 0; i < value.size(); ++i) {
      const double g = analytic[k].empty() ? 0.0 : analytic[k][i];
      if (std::abs(g) <= min_grad) continue;
      const double saved = value[i];
      double up;
      double down;
      {
        ag::NoGradGuard guard;
        value[i] = saved + eps;
        up = loss().value().item();
        value[i] = saved - eps;
        down = loss().value().item();
      }
      value[i] = saved;
      const double numeric = (up - down) / (2 * eps);
      const double rel = std::abs(numeric - g) / std::max(std::abs(numeric), std::abs(g));
      out.worst_relative = std::max(out.worst_relative, rel);
      ++out.checked;
    }
  }
  return out;
}

}  // namespace mmfuse::testing
