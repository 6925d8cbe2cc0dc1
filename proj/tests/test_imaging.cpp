#include <algorithm>
#include <filesystem>
#include <random>
#include <set>

#include "doctest.h"
#include "mmfuse/dataset.hpp"
#include "mmfuse/errors.hpp"
#include "mmfuse/imaging.hpp"
#include "test_support.hpp"

using namespace mmfuse;
using namespace mmfuse::imaging;
namespace fs = std::filesystem;

namespace {

RawPlane raw_plane(int h, int w, int value) {
  return {h, w, std::vector<int>(static_cast<std::size_t>(h) * w, value)};
}

ColorImage random_color(int h, int w, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> dist(0.0, 1.0);
  std::vector<double> rgb(static_cast<std::size_t>(h) * w * 3);
  for (double& v : rgb) v = dist(rng);
  return ColorImage(h, w, std::move(rgb));
}

ColorImage solid_color(double r, double g, double b) {
  std::vector<double> rgb;
  for (int i = 0; i < 16 * 16; ++i) rgb.insert(rgb.end(), {r, g, b});
  return ColorImage(16, 16, rgb);
}

Volume volume(int d, int h, int w, double fill = 0.0) {
  return {d, h, w, std::vector<double>(static_cast<std::size_t>(d) * h * w, fill)};
}

void fill_slice(Volume& v, int z, double value) {
  std::fill_n(v.data.begin() + static_cast<std::ptrdiff_t>(z) * v.height * v.width,
              v.height * v.width, value);
}

fs::path scratch_dir(const std::string& name) {
  const fs::path dir = fs::temp_directory_path() / ("mmfuse_test_" + name);
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

PairedDataset numbered_pairs(int count) {
  PairedDataset ds;
  for (int i = 0; i < count; ++i) {
    const auto img = testing::constant_image(16, 16, i / static_cast<double>(count));
    ds.pairs.push_back({"p" + std::to_string(1000 + i), img, img});
  }
  return ds;
}

}  // namespace

TEST_CASE("normalize_intensity divides by 255 exactly") {
  const GrayImage zero = normalize_intensity(raw_plane(16, 16, 0));
  CHECK(std::all_of(zero.pixels().begin(), zero.pixels().end(), [](double v) { return v == 0.0; }));
  const GrayImage one = normalize_intensity(raw_plane(16, 16, 255));
  CHECK(std::all_of(one.pixels().begin(), one.pixels().end(), [](double v) { return v == 1.0; }));
  CHECK(normalize_intensity(raw_plane(16, 16, 51)).at(3, 4) == 0.2);
  CHECK_THROWS_AS(normalize_intensity(raw_plane(16, 16, 256)), InputError);
  CHECK_THROWS_AS(normalize_intensity(raw_plane(16, 16, -1)), InputError);
}

TEST_CASE("normalize_intensity is linear") {
  std::mt19937_64 rng(3);
  RawPlane a{16, 16, {}};
  RawPlane b{16, 16, {}};
  RawPlane sum{16, 16, {}};
  for (int i = 0; i < 256; ++i) {
    const int va = static_cast<int>(rng() % 128);
    const int vb = static_cast<int>(rng() % 128);
    a.values.push_back(va);
    b.values.push_back(vb);
    sum.values.push_back(va + vb);
  }
  const auto na = normalize_intensity(a);
  const auto nb = normalize_intensity(b);
  const auto ns = normalize_intensity(sum);
  for (std::size_t i = 0; i < ns.pixels().size(); ++i) {
    CHECK(na.pixels()[i] + nb.pixels()[i] == doctest::Approx(ns.pixels()[i]).epsilon(1e-15));
  }
}

TEST_CASE("GrayImage enforces range and minimum size") {
  CHECK_THROWS_AS(GrayImage(16, 16, std::vector<double>(256, 1.5)), InputError);
  CHECK_THROWS_AS(GrayImage(15, 16, std::vector<double>(240, 0.5)), ShapeError);
  CHECK_THROWS_AS(ColorImage(16, 16, std::vector<double>(768, -0.1)), InputError);
}

TEST_CASE("YCbCr conversion of achromatic colors") {
  for (double g : {0.0, 0.37, 1.0}) {
    const auto ycc = rgb_to_ycbcr(solid_color(g, g, g));
    CHECK(ycc.y.at(5, 5) == doctest::Approx(g).epsilon(1e-12));
    CHECK(ycc.cb.at(5, 5) == doctest::Approx(0.5).epsilon(1e-12));
    CHECK(ycc.cr.at(5, 5) == doctest::Approx(0.5).epsilon(1e-12));
    const auto rgb = ycbcr_to_rgb(ycc);
    for (int ch = 0; ch < 3; ++ch) CHECK(rgb.at(2, 7, ch) == doctest::Approx(g).epsilon(1e-12));
  }
  // Luma weights of full-range BT.601.
  const auto red = rgb_to_ycbcr(solid_color(1.0, 0.0, 0.0));
  CHECK(red.y.at(0, 0) == doctest::Approx(0.299));
}

TEST_CASE("YCbCr round trip is identity on random images") {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    const ColorImage img = random_color(16, 20, seed);
    const ColorImage back = ycbcr_to_rgb(rgb_to_ycbcr(img));
    for (std::size_t i = 0; i < img.rgb().size(); ++i) {
      CHECK(std::abs(back.rgb()[i] - img.rgb()[i]) < 1e-3);
    }
  }
}

TEST_CASE("ycbcr_to_rgb clamps out-of-gamut values") {
  YCbCrImage ycc{testing::constant_image(16, 16, 1.0), Plane(16, 16, 1.0), Plane(16, 16, 1.0)};
  const ColorImage rgb = ycbcr_to_rgb(ycc);
  for (double v : rgb.rgb()) {
    CHECK(v >= 0.0);
    CHECK(v <= 1.0);
  }
}

TEST_CASE("volume_to_slices keeps slices at or above the nonzero fraction") {
  CHECK(volume_to_slices(volume(3, 16, 16), 0.1).empty());

  // Two all-one slices and two all-zero slices.
  Volume v = volume(4, 16, 16);
  fill_slice(v, 1, 1.0);
  fill_slice(v, 3, 0.5);
  const auto kept = volume_to_slices(v, 0.1);
  REQUIRE(kept.size() == 2);
  CHECK(kept[0].at(0, 0) == 1.0);
  CHECK(kept[1].at(0, 0) == 0.5);

  // A 20×20 slice with exactly 40 nonzero pixels is exactly 10%.
  Volume edge = volume(1, 20, 20);
  for (int i = 0; i < 40; ++i) edge.data[static_cast<std::size_t>(i) * 7] = 0.3;
  CHECK(volume_to_slices(edge, 0.1).size() == 1);
  CHECK(volume_to_slices(edge, 0.1001).empty());
  CHECK_THROWS_AS(volume_to_slices(edge, 1.5), InputError);
}

TEST_CASE("volume_to_slices count is monotone in the threshold") {
  std::mt19937_64 rng(11);
  Volume v = volume(12, 16, 16);
  for (int z = 0; z < v.depth; ++z) {
    const std::size_t lit = rng() % 257;
    for (std::size_t i = 0; i < lit; ++i) v.data[static_cast<std::size_t>(z) * 256 + i] = 0.8;
  }
  std::size_t previous = v.depth + 1;
  for (double t = 0.0; t <= 1.0; t += 0.05) {
    const std::size_t n = volume_to_slices(v, t).size();
    CHECK(n <= previous);
    previous = n;
  }
}

TEST_CASE("trilinear resampling preserves corners and linear ramps") {
  Volume v = volume(3, 4, 5);
  for (int z = 0; z < 3; ++z)
    for (int y = 0; y < 4; ++y)
      for (int x = 0; x < 5; ++x)
        v.data[(static_cast<std::size_t>(z) * 4 + y) * 5 + x] = 0.1 * z + 0.05 * y + 0.02 * x;
  const Volume r = resample_trilinear(v, 5, 7, 9);
  CHECK(r.at(0, 0, 0) == doctest::Approx(v.at(0, 0, 0)));
  CHECK(r.at(4, 6, 8) == doctest::Approx(v.at(2, 3, 4)));
  // Corner-aligned: target index i maps to source i * (n_src - 1) / (n_dst - 1).
  CHECK(r.at(2, 3, 4) == doctest::Approx(0.1 * 1.0 + 0.05 * 1.5 + 0.02 * 2.0));
}

TEST_CASE("apply_mask zeroes voxels outside the mask") {
  Volume v = volume(1, 2, 2, 0.7);
  Volume m = volume(1, 2, 2, 0.0);
  m.data[1] = 1.0;
  const Volume out = apply_mask(v, m);
  CHECK(out.data == std::vector<double>{0.0, 0.7, 0.0, 0.0});
}

TEST_CASE("PNG round trip at 8 and 16 bits") {
  const fs::path dir = scratch_dir("png");
  const GrayImage gray = testing::random_image(17, 23, 5);
  write_png(dir / "g16.png", gray, 16);
  const auto back16 = std::get<GrayImage>(read_png(dir / "g16.png"));
  REQUIRE(back16.height() == 17);
  REQUIRE(back16.width() == 23);
  for (std::size_t i = 0; i < gray.pixels().size(); ++i) {
    CHECK(std::abs(back16.pixels()[i] - gray.pixels()[i]) <= 0.5 / 65535 + 1e-12);
  }
  write_png(dir / "g8.png", gray, 8);
  const auto back8 = std::get<GrayImage>(read_png(dir / "g8.png"));
  for (std::size_t i = 0; i < gray.pixels().size(); ++i) {
    CHECK(std::abs(back8.pixels()[i] - gray.pixels()[i]) <= 0.5 / 255 + 1e-12);
  }
  const ColorImage color = random_color(16, 18, 6);
  write_png(dir / "c.png", color, 8);
  const auto cback = std::get<ColorImage>(read_png(dir / "c.png"));
  for (std::size_t i = 0; i < color.rgb().size(); ++i) {
    CHECK(std::abs(cback.rgb()[i] - color.rgb()[i]) <= 0.5 / 255 + 1e-12);
  }
  CHECK_THROWS_AS(read_png(dir / "missing.png"), IoError);
  fs::remove_all(dir);
}

TEST_CASE("NIfTI round trip") {
  const fs::path dir = scratch_dir("nifti");
  Volume v = volume(3, 16, 18);
  std::mt19937_64 rng(9);
  std::uniform_real_distribution<double> dist(0.0, 1.0);
  for (double& x : v.data) x = dist(rng);
  v.data[0] = 0.0;
  v.data[1] = 1.0;
  write_nifti(dir / "v.nii", v);
  const Volume back = read_nifti(dir / "v.nii");
  REQUIRE(back.depth == 3);
  REQUIRE(back.height == 16);
  REQUIRE(back.width == 18);
  for (std::size_t i = 0; i < v.data.size(); ++i) CHECK(back.data[i] == doctest::Approx(v.data[i]).epsilon(1e-6));
  fs::remove_all(dir);
}

TEST_CASE("split_indices and split_dataset") {
  for (auto [count, holdout] : {std::pair<std::size_t, std::size_t>{184, 30}, {357, 50}}) {
    const auto s = split_indices(count, holdout, 42);
    CHECK(s.test.size() == holdout);
    CHECK(s.train.size() == count - holdout);
    std::set<std::size_t> all(s.train.begin(), s.train.end());
    for (auto i : s.test) CHECK(all.insert(i).second);  // disjoint
    CHECK(all.size() == count);
    CHECK(std::is_sorted(s.test.begin(), s.test.end()));
    const auto again = split_indices(count, holdout, 42);
    CHECK(again.test == s.test);
    CHECK(again.train == s.train);
  }
  CHECK(split_indices(184, 30, 1).test != split_indices(184, 30, 2).test);
  CHECK_THROWS_AS(split_indices(10, 0, 1), ConfigError);
  CHECK_THROWS_AS(split_indices(10, 10, 1), ConfigError);

  const PairedDataset ds = numbered_pairs(12);
  const auto [train, test] = split_dataset(ds, 3, 7);
  CHECK(test.pairs.size() == 3);
  CHECK(train.pairs.size() == 9);
  CHECK(train.split == Split::kTrain);
  CHECK(test.split == Split::kTest);
  std::set<std::string> ids;
  for (const auto& p : train.pairs) ids.insert(p.id);
  for (const auto& p : test.pairs) CHECK(ids.insert(p.id).second);
  CHECK(ids.size() == 12);
}

TEST_CASE("PairedDataset rejects pairs that are not co-registered") {
  PairedDataset ds;
  ds.pairs.push_back({"x", testing::constant_image(16, 16, 0.1), testing::constant_image(16, 17, 0.1)});
  CHECK_THROWS_AS(ds.validate(), ShapeError);
}

TEST_CASE("scan_pairs, manifest round trip and load_split") {
  const fs::path root = scratch_dir("manifest");
  fs::create_directories(root / "mri");
  fs::create_directories(root / "ct");
  for (int i = 0; i < 6; ++i) {
    const auto pair = synthetic_pair(16, 50 + i, false);
    const std::string id = "case" + std::to_string(i) + ".png";
    write_png(root / "mri" / id, pair.a, 16);
    write_png(root / "ct" / id, std::get<GrayImage>(pair.b), 16);
  }
  write_png(root / "mri" / "orphan.png", testing::constant_image(16, 16, 0.2));

  const auto records = scan_pairs(root, "mri", "ct");
  REQUIRE(records.size() == 6);
  CHECK(records.front().id == "case0");
  CHECK(std::is_sorted(records.begin(), records.end(),
                       [](const auto& a, const auto& b) { return a.id < b.id; }));

  const DatasetManifest m = build_manifest(root, "mri", "ct", 2, 3);
  CHECK(m.records(Split::kTest).size() == 2);
  CHECK(m.records(Split::kTrain).size() == 4);
  write_manifest(root / "dataset.json", m);
  const DatasetManifest back = read_manifest(root / "dataset.json");
  CHECK(manifest_hash(back) == manifest_hash(m));
  CHECK(manifest_hash(build_manifest(root, "mri", "ct", 2, 4)) != manifest_hash(m));

  const PairedDataset test = load_split(back, Split::kTest);
  CHECK(test.pairs.size() == 2);
  CHECK(test.modality_tags == std::pair<std::string, std::string>{"mri", "ct"});
  CHECK(training_planes(load_split(back, Split::kTrain)).size() == 8);
  CHECK_THROWS_AS(scan_pairs(root, "mri", "pet"), IoError);
  fs::remove_all(root);
}

TEST_CASE("synthetic pairs are deterministic and in range") {
  const auto a = synthetic_pair(32, 7, true);
  const auto b = synthetic_pair(32, 7, true);
  CHECK(a.a == b.a);
  CHECK(std::get<ColorImage>(a.b) == std::get<ColorImage>(b.b));
  CHECK_FALSE(synthetic_pair(32, 8, true).a == a.a);
}
