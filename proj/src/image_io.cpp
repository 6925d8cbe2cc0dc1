#include <png.h>
#include <zlib.h>

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <memory>

#include "mmfuse/errors.hpp"
#include "mmfuse/imaging.hpp"

namespace mmfuse::imaging {
namespace {

struct FileCloser {
  void operator()(std::FILE* f) const {
    if (f) std::fclose(f);
  }
};
using FilePtr = std::unique_ptr<std::FILE, FileCloser>;

FilePtr open_file(const std::filesystem::path& path, const char* mode) {
  FilePtr f(std::fopen(path.string().c_str(), mode));
  if (!f) throw IoError("cannot open " + path.string());
  return f;
}

std::vector<std::uint16_t> quantize(const std::vector<double>& v, int depth) {
  const double maxv = depth == 16 ? 65535.0 : 255.0;
  std::vector<std::uint16_t> q(v.size());
  for (std::size_t i = 0; i < v.size(); ++i) {
    q[i] = static_cast<std::uint16_t>(
        std::lround(std::clamp(v[i], 0.0, 1.0) * maxv));
  }
  return q;
}

void write_png_raw(const std::filesystem::path& path, int height, int width,
                   int channels, const std::vector<double>& values,
                   int bit_depth) {
  if (bit_depth != 8 && bit_depth != 16) {
    throw ConfigError("png bit depth must be 8 or 16");
  }
  FilePtr f = open_file(path, "wb");
  png_structp png =
      png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  if (!png) throw IoError("png_create_write_struct failed");
  png_infop info = png_create_info_struct(png);
  if (!info) {
    png_destroy_write_struct(&png, nullptr);
    throw IoError("png_create_info_struct failed");
  }
  const auto q = quantize(values, bit_depth);
  const int bytes = bit_depth / 8;
  std::vector<png_byte> row(static_cast<std::size_t>(width) * channels * bytes);
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    throw IoError("failed writing " + path.string());
  }
  png_init_io(png, f.get());
  png_set_IHDR(png, info, width, height, bit_depth,
               channels == 1 ? PNG_COLOR_TYPE_GRAY : PNG_COLOR_TYPE_RGB,
               PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT,
               PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  const std::size_t per_row = static_cast<std::size_t>(width) * channels;
  for (int y = 0; y < height; ++y) {
    for (std::size_t i = 0; i < per_row; ++i) {
      const std::uint16_t v = q[y * per_row + i];
      if (bytes == 1) {
        row[i] = static_cast<png_byte>(v);
      } else {
        row[2 * i] = static_cast<png_byte>(v >> 8);  // PNG is big-endian
        row[2 * i + 1] = static_cast<png_byte>(v & 0xff);
      }
    }
    png_write_row(png, row.data());
  }
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
}

// --- NIfTI-1 -------------------------------------------------------------

constexpr int kNiftiHeaderSize = 348;

template <typename T>
T read_field(const std::array<char, kNiftiHeaderSize>& hdr, std::size_t offset,
             bool swap) {
  T v;
  std::array<char, sizeof(T)> bytes;
  std::memcpy(bytes.data(), hdr.data() + offset, sizeof(T));
  if (swap) std::reverse(bytes.begin(), bytes.end());
  std::memcpy(&v, bytes.data(), sizeof(T));
  return v;
}

struct GzCloser {
  void operator()(gzFile f) const {
    if (f) gzclose(f);
  }
};

void gz_read_exact(gzFile f, void* dst, std::size_t n,
                   const std::filesystem::path& path) {
  auto* p = static_cast<char*>(dst);
  while (n > 0) {
    const unsigned chunk =
        static_cast<unsigned>(std::min<std::size_t>(n, 1u << 30));
    const int got = gzread(f, p, chunk);
    if (got <= 0) throw IoError("truncated NIfTI file " + path.string());
    p += got;
    n -= static_cast<std::size_t>(got);
  }
}

template <typename T>
void convert_voxels(const std::vector<char>& raw, bool swap,
                    std::vector<double>& out) {
  const std::size_t n = raw.size() / sizeof(T);
  out.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    std::array<char, sizeof(T)> bytes;
    std::memcpy(bytes.data(), raw.data() + i * sizeof(T), sizeof(T));
    if (swap) std::reverse(bytes.begin(), bytes.end());
    T v;
    std::memcpy(&v, bytes.data(), sizeof(T));
    out[i] = static_cast<double>(v);
  }
}

}  // namespace

SourceImage read_png(const std::filesystem::path& path) {
  FilePtr f = open_file(path, "rb");
  std::array<png_byte, 8> sig{};
  if (std::fread(sig.data(), 1, sig.size(), f.get()) != sig.size() ||
      png_sig_cmp(sig.data(), 0, sig.size()) != 0) {
    throw IoError(path.string() + " is not a PNG file");
  }
  png_structp png =
      png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  if (!png) throw IoError("png_create_read_struct failed");
  png_infop info = png_create_info_struct(png);
  if (!info) {
    png_destroy_read_struct(&png, nullptr, nullptr);
    throw IoError("png_create_info_struct failed");
  }
  std::vector<png_byte> buffer;
  std::vector<png_bytep> rows;
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw IoError("failed reading " + path.string());
  }
  png_init_io(png, f.get());
  png_set_sig_bytes(png, static_cast<int>(sig.size()));
  png_read_info(png, info);

  const int color_type = png_get_color_type(png, info);
  if (color_type == PNG_COLOR_TYPE_PALETTE) png_set_palette_to_rgb(png);
  if (color_type == PNG_COLOR_TYPE_GRAY && png_get_bit_depth(png, info) < 8) {
    png_set_expand_gray_1_2_4_to_8(png);
  }
  if (color_type & PNG_COLOR_MASK_ALPHA) png_set_strip_alpha(png);
  if (png_get_valid(png, info, PNG_INFO_tRNS)) {
    png_set_tRNS_to_alpha(png);
    png_set_strip_alpha(png);
  }
  png_read_update_info(png, info);

  const int width = static_cast<int>(png_get_image_width(png, info));
  const int height = static_cast<int>(png_get_image_height(png, info));
  const int depth = png_get_bit_depth(png, info);
  const int channels = png_get_channels(png, info);
  const std::size_t rowbytes = png_get_rowbytes(png, info);
  buffer.resize(rowbytes * height);
  rows.resize(height);
  for (int y = 0; y < height; ++y) rows[y] = buffer.data() + y * rowbytes;
  png_read_image(png, rows.data());
  png_read_end(png, nullptr);
  png_destroy_read_struct(&png, &info, nullptr);

  if (channels != 1 && channels != 3) {
    throw IoError("unsupported PNG channel count in " + path.string());
  }
  const std::size_t count = static_cast<std::size_t>(width) * height * channels;
  const double maxv = depth == 16 ? 65535.0 : 255.0;
  std::vector<double> values(count);
  for (std::size_t i = 0; i < count; ++i) {
    const std::size_t y = i / (static_cast<std::size_t>(width) * channels);
    const std::size_t col = i % (static_cast<std::size_t>(width) * channels);
    const png_byte* r = rows[y];
    const unsigned v = depth == 16 ? (unsigned{r[2 * col]} << 8) | r[2 * col + 1]
                                   : unsigned{r[col]};
    values[i] = v / maxv;
  }
  if (channels == 1) return GrayImage(height, width, std::move(values));
  return ColorImage(height, width, std::move(values));
}

void write_png(const std::filesystem::path& path, const GrayImage& img,
               int bit_depth) {
  write_png_raw(path, img.height(), img.width(), 1, img.pixels(), bit_depth);
}

void write_png(const std::filesystem::path& path, const ColorImage& img,
               int bit_depth) {
  write_png_raw(path, img.height(), img.width(), 3, img.rgb(), bit_depth);
}

Volume read_nifti(const std::filesystem::path& path) {
  std::unique_ptr<gzFile_s, GzCloser> f(gzopen(path.string().c_str(), "rb"));
  if (!f) throw IoError("cannot open " + path.string());
  std::array<char, kNiftiHeaderSize> hdr{};
  gz_read_exact(f.get(), hdr.data(), hdr.size(), path);

  bool swap = false;
  if (read_field<std::int32_t>(hdr, 0, false) != kNiftiHeaderSize) {
    swap = true;
    if (read_field<std::int32_t>(hdr, 0, true) != kNiftiHeaderSize) {
      throw IoError(path.string() + " is not a NIfTI-1 file");
    }
  }
  if (std::memcmp(hdr.data() + 344, "n+1", 3) != 0) {
    throw IoError(path.string() + ": only single-file NIfTI-1 is supported");
  }
  std::array<int, 8> dim{};
  for (int i = 0; i < 8; ++i) {
    dim[i] = read_field<std::int16_t>(hdr, 40 + 2 * i, swap);
  }
  if (dim[0] < 3) throw IoError(path.string() + ": volume has fewer than 3 dims");
  const int nx = dim[1];
  const int ny = dim[2];
  const int nz = dim[3];
  if (nx < 1 || ny < 1 || nz < 1) throw IoError(path.string() + ": bad dims");
  const auto datatype = read_field<std::int16_t>(hdr, 70, swap);
  const auto vox_offset = read_field<float>(hdr, 108, swap);
  const auto slope = read_field<float>(hdr, 112, swap);
  const auto inter = read_field<float>(hdr, 116, swap);

  std::size_t bytes_per = 0;
  switch (datatype) {
    case 2: case 256: bytes_per = 1; break;
    case 4: case 512: bytes_per = 2; break;
    case 8: case 16: case 768: bytes_per = 4; break;
    case 64: bytes_per = 8; break;
    default:
      throw IoError(path.string() + ": unsupported NIfTI datatype " +
                    std::to_string(datatype));
  }
  const std::size_t skip =
      static_cast<std::size_t>(vox_offset) - kNiftiHeaderSize;
  std::vector<char> discard(skip);
  if (skip > 0) gz_read_exact(f.get(), discard.data(), skip, path);

  const std::size_t voxels = static_cast<std::size_t>(nx) * ny * nz;
  std::vector<char> raw(voxels * bytes_per);
  gz_read_exact(f.get(), raw.data(), raw.size(), path);

  Volume vol{nz, ny, nx, {}};
  switch (datatype) {
    case 2: convert_voxels<std::uint8_t>(raw, swap, vol.data); break;
    case 256: convert_voxels<std::int8_t>(raw, swap, vol.data); break;
    case 4: convert_voxels<std::int16_t>(raw, swap, vol.data); break;
    case 512: convert_voxels<std::uint16_t>(raw, swap, vol.data); break;
    case 8: convert_voxels<std::int32_t>(raw, swap, vol.data); break;
    case 768: convert_voxels<std::uint32_t>(raw, swap, vol.data); break;
    case 16: convert_voxels<float>(raw, swap, vol.data); break;
    case 64: convert_voxels<double>(raw, swap, vol.data); break;
  }
  if (slope != 0.0f && std::isfinite(slope)) {
    for (double& v : vol.data) v = v * slope + inter;
  }
  for (double& v : vol.data) {
    if (!std::isfinite(v)) v = 0.0;
  }
  normalize_min_max(vol.data);
  return vol;
}

void write_nifti(const std::filesystem::path& path, const Volume& volume) {
  std::array<char, kNiftiHeaderSize> hdr{};
  auto put = [&hdr](std::size_t offset, auto v) {
    std::memcpy(hdr.data() + offset, &v, sizeof(v));
  };
  put(0, std::int32_t{kNiftiHeaderSize});
  const std::array<std::int16_t, 8> dim{3,
                                        static_cast<std::int16_t>(volume.width),
                                        static_cast<std::int16_t>(volume.height),
                                        static_cast<std::int16_t>(volume.depth),
                                        1, 1, 1, 1};
  for (int i = 0; i < 8; ++i) put(40 + 2 * i, dim[i]);
  put(70, std::int16_t{16});  // float32
  put(72, std::int16_t{32});
  for (int i = 0; i < 8; ++i) put(76 + 4 * i, 1.0f);  // pixdim
  put(108, 352.0f);
  put(112, 1.0f);
  put(116, 0.0f);
  std::memcpy(hdr.data() + 344, "n+1\0", 4);

  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path.string());
  out.write(hdr.data(), hdr.size());
  const std::array<char, 4> extension{};
  out.write(extension.data(), extension.size());
  for (double v : volume.data) {
    const auto f = static_cast<float>(v);
    out.write(reinterpret_cast<const char*>(&f), sizeof(f));
  }
  if (!out) throw IoError("failed writing " + path.string());
}

}  // namespace mmfuse::imaging
