#pragma once

// Image containers, intensity normalization, color conversion and volume
// slicing. Every image that leaves this module lives in [0, 1].

#include <cstdint>
#include <filesystem>
#include <string>
#include <variant>
#include <vector>

#include "mmfuse/tensor.hpp"

namespace mmfuse::imaging {

/// Smallest edge accepted for a GrayImage; the encoder's attention mask
/// downsamples, and the perceptual extractor pools three times.
inline constexpr int kMinImageSide = 16;

/// Unchecked H×W plane of doubles, row-major.
struct Plane {
  int height = 0;
  int width = 0;
  std::vector<double> data;

  Plane() = default;
  Plane(int h, int w, double fill = 0.0);
  Plane(int h, int w, std::vector<double> values);

  double& at(int y, int x) { return data[static_cast<std::size_t>(y) * width + x]; }
  double at(int y, int x) const {
    return data[static_cast<std::size_t>(y) * width + x];
  }
  std::size_t size() const { return data.size(); }
  bool operator==(const Plane&) const = default;
};

/// Single-channel image with every pixel in [0, 1] and both sides >= 16.
class GrayImage {
 public:
  GrayImage() = default;
  explicit GrayImage(Plane plane);  // throws InputError / ShapeError
  GrayImage(int height, int width, std::vector<double> pixels);

  int height() const { return plane_.height; }
  int width() const { return plane_.width; }
  const Plane& plane() const { return plane_; }
  const std::vector<double>& pixels() const { return plane_.data; }
  double at(int y, int x) const { return plane_.at(y, x); }

  /// (1, 1, H, W) tensor view for the network.
  Tensor to_tensor() const;
  /// Clamps into [0, 1]; the tensor must be (1, 1, H, W).
  static GrayImage from_tensor_clamped(const Tensor& t);

  bool operator==(const GrayImage&) const = default;

 private:
  Plane plane_;
};

/// Interleaved RGB image, every component in [0, 1].
class ColorImage {
 public:
  ColorImage() = default;
  ColorImage(int height, int width, std::vector<double> rgb);

  int height() const { return height_; }
  int width() const { return width_; }
  const std::vector<double>& rgb() const { return rgb_; }
  double at(int y, int x, int ch) const {
    return rgb_[(static_cast<std::size_t>(y) * width_ + x) * 3 + ch];
  }

  bool operator==(const ColorImage&) const = default;

 private:
  int height_ = 0;
  int width_ = 0;
  std::vector<double> rgb_;
};

struct YCbCrImage {
  GrayImage y;
  Plane cb;
  Plane cr;
};

using SourceImage = std::variant<GrayImage, ColorImage>;

int height_of(const SourceImage& img);
int width_of(const SourceImage& img);

/// Integer raster as read from disk.
struct RawPlane {
  int height = 0;
  int width = 0;
  std::vector<int> values;
};

/// raw / max_value, exactly. Values outside [0, max_value] are rejected.
GrayImage normalize_intensity(const RawPlane& raw, int max_value = 255);

// Full-range ITU-R BT.601 with chroma centered at 0.5.
YCbCrImage rgb_to_ycbcr(const ColorImage& img);
/// Inverse transform; out-of-gamut results are clamped into [0, 1].
ColorImage ycbcr_to_rgb(const YCbCrImage& img);

/// D×H×W volume in [0, 1], D-major. D is the axial axis.
struct Volume {
  int depth = 0;
  int height = 0;
  int width = 0;
  std::vector<double> data;

  double at(int z, int y, int x) const {
    return data[(static_cast<std::size_t>(z) * height + y) * width + x];
  }
};

/// Axial slices whose fraction of nonzero pixels is >= min_nonzero_fraction.
std::vector<GrayImage> volume_to_slices(const Volume& volume,
                                        double min_nonzero_fraction);

/// Trilinear resampling onto a new grid, corner samples aligned.
Volume resample_trilinear(const Volume& volume, int depth, int height,
                          int width);

/// Zeroes voxels where mask is zero (ROI extraction).
Volume apply_mask(const Volume& volume, const Volume& mask);

/// Maps [min, max] of arbitrary data onto [0, 1]; constant data maps to 0.
void normalize_min_max(std::vector<double>& values);

// --- file formats -----------------------------------------------------------

/// Reads an 8- or 16-bit PNG. Gray(+alpha) yields GrayImage, RGB(A) yields
/// ColorImage; alpha is dropped. Intensities are divided by 2^depth - 1.
SourceImage read_png(const std::filesystem::path& path);
void write_png(const std::filesystem::path& path, const GrayImage& img,
               int bit_depth = 8);
void write_png(const std::filesystem::path& path, const ColorImage& img,
               int bit_depth = 8);

/// Reads a NIfTI-1 volume (.nii or .nii.gz), applies scl_slope/scl_inter and
/// min-max normalizes into [0, 1]. Only the first 3D frame is read.
Volume read_nifti(const std::filesystem::path& path);
/// Writes a float32 NIfTI-1 single-file volume (uncompressed).
void write_nifti(const std::filesystem::path& path, const Volume& volume);

// --- synthetic data -----------------------------------------------------------

/// Deterministic anatomical-looking phantom pair for demos and tests:
/// a soft-tissue gray image and a co-registered second modality. If
/// `color_b` is true the second image is an RGB functional map.
struct SyntheticPair {
  GrayImage a;
  SourceImage b;
};
SyntheticPair synthetic_pair(int size, std::uint64_t seed, bool color_b);

}  // namespace mmfuse::imaging
