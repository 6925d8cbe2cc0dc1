#include "mmfuse/imaging.hpp"

#include <algorithm>
#include <cmath>
#include <random>

#include "mmfuse/errors.hpp"

namespace mmfuse::imaging {
namespace {

// Full-range BT.601 luma weights.
constexpr double kR = 0.299;
constexpr double kG = 0.587;
constexpr double kB = 0.114;

void check_unit_interval(const std::vector<double>& values, const char* what) {
  for (std::size_t i = 0; i < values.size(); ++i) {
    const double v = values[i];
    if (!(v >= 0.0 && v <= 1.0)) {
      throw InputError(std::string(what) + ": value " + std::to_string(v) +
                       " at index " + std::to_string(i) +
                       " outside [0, 1]");
    }
  }
}

double clamp01(double v) { return std::clamp(v, 0.0, 1.0); }

}  // namespace

Plane::Plane(int h, int w, double fill)
    : height(h), width(w), data(static_cast<std::size_t>(h) * w, fill) {
  if (h < 0 || w < 0) throw ShapeError("negative plane extent");
}

Plane::Plane(int h, int w, std::vector<double> values)
    : height(h), width(w), data(std::move(values)) {
  if (h < 0 || w < 0 || data.size() != static_cast<std::size_t>(h) * w) {
    throw ShapeError("plane " + std::to_string(h) + "x" + std::to_string(w) +
                     " given " + std::to_string(data.size()) + " values");
  }
}

GrayImage::GrayImage(Plane plane) : plane_(std::move(plane)) {
  if (plane_.height < kMinImageSide || plane_.width < kMinImageSide) {
    throw ShapeError("gray image " + std::to_string(plane_.height) + "x" +
                     std::to_string(plane_.width) + " smaller than " +
                     std::to_string(kMinImageSide) + "x" +
                     std::to_string(kMinImageSide));
  }
  check_unit_interval(plane_.data, "gray image");
}

GrayImage::GrayImage(int height, int width, std::vector<double> pixels)
    : GrayImage(Plane(height, width, std::move(pixels))) {}

Tensor GrayImage::to_tensor() const {
  return Tensor(Shape{1, 1, height(), width()}, plane_.data);
}

GrayImage GrayImage::from_tensor_clamped(const Tensor& t) {
  if (t.n() != 1 || t.c() != 1) {
    throw ShapeError("expected a (1, 1, H, W) tensor, got " + t.shape().str());
  }
  std::vector<double> px(t.values().begin(), t.values().end());
  for (double& v : px) {
    v = std::isnan(v) ? 0.0 : clamp01(v);
  }
  return GrayImage(t.h(), t.w(), std::move(px));
}

ColorImage::ColorImage(int height, int width, std::vector<double> rgb)
    : height_(height), width_(width), rgb_(std::move(rgb)) {
  if (height < 1 || width < 1 ||
      rgb_.size() != static_cast<std::size_t>(height) * width * 3) {
    throw ShapeError("color image " + std::to_string(height) + "x" +
                     std::to_string(width) + " given " +
                     std::to_string(rgb_.size()) + " components");
  }
  check_unit_interval(rgb_, "color image");
}

int height_of(const SourceImage& img) {
  return std::visit([](const auto& i) { return i.height(); }, img);
}

int width_of(const SourceImage& img) {
  return std::visit([](const auto& i) { return i.width(); }, img);
}

GrayImage normalize_intensity(const RawPlane& raw, int max_value) {
  if (max_value <= 0) throw InputError("max_value must be positive");
  if (raw.values.size() != static_cast<std::size_t>(raw.height) * raw.width) {
    throw ShapeError("raw plane size does not match its extent");
  }
  std::vector<double> px(raw.values.size());
  const double denom = static_cast<double>(max_value);
  for (std::size_t i = 0; i < px.size(); ++i) {
    const int v = raw.values[i];
    if (v < 0 || v > max_value) {
      throw InputError("raw intensity " + std::to_string(v) + " at index " +
                       std::to_string(i) + " outside [0, " +
                       std::to_string(max_value) + "]");
    }
    px[i] = v / denom;
  }
  return GrayImage(raw.height, raw.width, std::move(px));
}

YCbCrImage rgb_to_ycbcr(const ColorImage& img) {
  const int h = img.height();
  const int w = img.width();
  const std::size_t n = static_cast<std::size_t>(h) * w;
  std::vector<double> y(n);
  Plane cb(h, w);
  Plane cr(h, w);
  const auto& rgb = img.rgb();
  for (std::size_t i = 0; i < n; ++i) {
    const double r = rgb[3 * i];
    const double g = rgb[3 * i + 1];
    const double b = rgb[3 * i + 2];
    const double luma = kR * r + kG * g + kB * b;
    // Rounding can push luma a hair past 1 for white.
    y[i] = clamp01(luma);
    cb.data[i] = clamp01(0.5 + (b - luma) / (2.0 * (1.0 - kB)));
    cr.data[i] = clamp01(0.5 + (r - luma) / (2.0 * (1.0 - kR)));
  }
  return {GrayImage(h, w, std::move(y)), std::move(cb), std::move(cr)};
}

ColorImage ycbcr_to_rgb(const YCbCrImage& img) {
  const int h = img.y.height();
  const int w = img.y.width();
  if (img.cb.height != h || img.cb.width != w || img.cr.height != h ||
      img.cr.width != w) {
    throw ShapeError("YCbCr planes differ in size");
  }
  const std::size_t n = static_cast<std::size_t>(h) * w;
  std::vector<double> rgb(3 * n);
  const auto& y = img.y.pixels();
  for (std::size_t i = 0; i < n; ++i) {
    const double cb = img.cb.data[i] - 0.5;
    const double cr = img.cr.data[i] - 0.5;
    const double r = y[i] + 2.0 * (1.0 - kR) * cr;
    const double b = y[i] + 2.0 * (1.0 - kB) * cb;
    const double g = (y[i] - kR * r - kB * b) / kG;
    rgb[3 * i] = clamp01(r);
    rgb[3 * i + 1] = clamp01(g);
    rgb[3 * i + 2] = clamp01(b);
  }
  return ColorImage(h, w, std::move(rgb));
}

std::vector<GrayImage> volume_to_slices(const Volume& volume,
                                        double min_nonzero_fraction) {
  if (!(min_nonzero_fraction >= 0.0 && min_nonzero_fraction <= 1.0)) {
    throw InputError("min_nonzero_fraction must lie in [0, 1]");
  }
  const std::size_t plane = static_cast<std::size_t>(volume.height) * volume.width;
  if (volume.data.size() != plane * volume.depth) {
    throw ShapeError("volume data does not match its extent");
  }
  check_unit_interval(volume.data, "volume");
  std::vector<GrayImage> slices;
  for (int z = 0; z < volume.depth; ++z) {
    auto first = volume.data.begin() + static_cast<std::ptrdiff_t>(plane * z);
    auto last = first + static_cast<std::ptrdiff_t>(plane);
    const auto nonzero = static_cast<std::size_t>(
        std::count_if(first, last, [](double v) { return v != 0.0; }));
    // Integer comparison keeps "exactly 10%" on the inclusive side.
    if (static_cast<double>(nonzero) >=
        min_nonzero_fraction * static_cast<double>(plane) - 1e-9) {
      slices.emplace_back(volume.height, volume.width,
                          std::vector<double>(first, last));
    }
  }
  return slices;
}

Volume resample_trilinear(const Volume& v, int depth, int height, int width) {
  if (depth < 1 || height < 1 || width < 1) {
    throw ShapeError("resample target must be positive");
  }
  auto coord = [](int o, int out, int in) {
    return out == 1 ? 0.0
                    : static_cast<double>(o) * (in - 1) / (out - 1);
  };
  Volume out{depth, height, width,
             std::vector<double>(static_cast<std::size_t>(depth) * height * width)};
  for (int z = 0; z < depth; ++z) {
    const double sz = coord(z, depth, v.depth);
    const int z0 = static_cast<int>(sz);
    const int z1 = std::min(z0 + 1, v.depth - 1);
    const double tz = sz - z0;
    for (int y = 0; y < height; ++y) {
      const double sy = coord(y, height, v.height);
      const int y0 = static_cast<int>(sy);
      const int y1 = std::min(y0 + 1, v.height - 1);
      const double ty = sy - y0;
      for (int x = 0; x < width; ++x) {
        const double sx = coord(x, width, v.width);
        const int x0 = static_cast<int>(sx);
        const int x1 = std::min(x0 + 1, v.width - 1);
        const double tx = sx - x0;
        auto lerp_x = [&](int zz, int yy) {
          return (1 - tx) * v.at(zz, yy, x0) + tx * v.at(zz, yy, x1);
        };
        const double c0 = (1 - ty) * lerp_x(z0, y0) + ty * lerp_x(z0, y1);
        const double c1 = (1 - ty) * lerp_x(z1, y0) + ty * lerp_x(z1, y1);
        out.data[(static_cast<std::size_t>(z) * height + y) * width + x] =
            (1 - tz) * c0 + tz * c1;
      }
    }
  }
  return out;
}

Volume apply_mask(const Volume& volume, const Volume& mask) {
  if (volume.depth != mask.depth || volume.height != mask.height ||
      volume.width != mask.width) {
    throw ShapeError("mask extent differs from volume");
  }
  Volume out = volume;
  for (std::size_t i = 0; i < out.data.size(); ++i) {
    if (mask.data[i] == 0.0) out.data[i] = 0.0;
  }
  return out;
}

void normalize_min_max(std::vector<double>& values) {
  if (values.empty()) return;
  const auto [lo, hi] = std::minmax_element(values.begin(), values.end());
  const double mn = *lo;
  const double range = *hi - mn;
  for (double& v : values) v = range > 0.0 ? (v - mn) / range : 0.0;
}

SyntheticPair synthetic_pair(int size, std::uint64_t seed, bool color_b) {
  if (size < kMinImageSide) throw ShapeError("synthetic image too small");
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);

  struct Blob {
    double cx, cy, rx, ry, amp;
  };
  std::vector<Blob> lesions;
  const int count = 3 + static_cast<int>(unit(rng) * 3);
  for (int i = 0; i < count; ++i) {
    lesions.push_back({0.3 + 0.4 * unit(rng), 0.3 + 0.4 * unit(rng),
                       0.04 + 0.08 * unit(rng), 0.04 + 0.08 * unit(rng),
                       0.3 + 0.6 * unit(rng)});
  }
  const double tilt = (unit(rng) - 0.5) * 0.4;
  const double freq = 6.0 + 6.0 * unit(rng);
  const double phase = unit(rng) * 6.283185307179586;

  const std::size_t n = static_cast<std::size_t>(size) * size;
  std::vector<double> mri(n);
  std::vector<double> ct(n);
  std::vector<double> func(n);
  for (int y = 0; y < size; ++y) {
    for (int x = 0; x < size; ++x) {
      const double u = (x + 0.5) / size - 0.5;
      const double v = (y + 0.5) / size - 0.5;
      const double ru = u * std::cos(tilt) - v * std::sin(tilt);
      const double rv = u * std::sin(tilt) + v * std::cos(tilt);
      const double head = (ru * ru) / (0.42 * 0.42) + (rv * rv) / (0.47 * 0.47);
      const double brain = (ru * ru) / (0.37 * 0.37) + (rv * rv) / (0.42 * 0.42);
      const double vent = (ru * ru) / (0.06 * 0.06) + (rv * rv) / (0.14 * 0.14);
      double m = 0.0;
      double c = 0.0;
      double f = 0.0;
      if (head <= 1.0) {
        if (brain <= 1.0) {
          m = 0.55 + 0.12 * std::sin(freq * ru * 6.28 + phase) *
                         std::cos(freq * rv * 4.1);
          c = 0.25;
          f = 0.15 + 0.1 * (1.0 - brain);
          if (vent <= 1.0) {
            m = 0.15;
            c = 0.1;
          }
        } else {
          m = 0.3;   // scalp
          c = 0.95;  // skull
        }
      }
      for (const Blob& b : lesions) {
        const double du = (u + 0.5 - b.cx) / b.rx;
        const double dv = (v + 0.5 - b.cy) / b.ry;
        const double g = std::exp(-0.5 * (du * du + dv * dv));
        if (brain <= 1.0) {
          m += 0.25 * b.amp * g;
          f += b.amp * g;
        }
      }
      const std::size_t i = static_cast<std::size_t>(y) * size + x;
      mri[i] = std::clamp(m, 0.0, 1.0);
      ct[i] = std::clamp(c, 0.0, 1.0);
      func[i] = std::clamp(f, 0.0, 1.0);
    }
  }

  SyntheticPair out{GrayImage(size, size, std::move(mri)), GrayImage{}};
  if (!color_b) {
    out.b = GrayImage(size, size, std::move(ct));
    return out;
  }
  // Hot-metal style colormap for the functional modality.
  std::vector<double> rgb(3 * n);
  for (std::size_t i = 0; i < n; ++i) {
    const double t = func[i];
    rgb[3 * i] = std::clamp(3.0 * t, 0.0, 1.0);
    rgb[3 * i + 1] = std::clamp(3.0 * t - 1.0, 0.0, 1.0);
    rgb[3 * i + 2] = std::clamp(3.0 * t - 2.0, 0.0, 1.0) * 0.8 +
                     (t > 0.0 ? 0.2 * (1.0 - t) : 0.0);
  }
  out.b = ColorImage(size, size, std::move(rgb));
  return out;
}

}  // namespace mmfuse::imaging
