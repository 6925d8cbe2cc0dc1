#include "mmfuse/dataset.hpp"

#include <algorithm>
#include <fstream>
#include <map>
#include <numeric>
#include <random>
#include <set>

#include "json.hpp"
#include "mmfuse/errors.hpp"
#include "mmfuse/hashing.hpp"

namespace mmfuse::imaging {
namespace {

using nlohmann::json;

bool is_image_file(const std::filesystem::path& p) {
  std::string ext = p.extension().string();
  std::transform(ext.begin(), ext.end(), ext.begin(),
                 [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  return ext == ".png";
}

std::map<std::string, std::filesystem::path> index_dir(
    const std::filesystem::path& dir) {
  if (!std::filesystem::is_directory(dir)) {
    throw IoError("missing modality directory " + dir.string());
  }
  std::map<std::string, std::filesystem::path> by_id;
  for (const auto& entry : std::filesystem::directory_iterator(dir)) {
    if (!entry.is_regular_file() || !is_image_file(entry.path())) continue;
    by_id.emplace(entry.path().stem().string(), entry.path());
  }
  return by_id;
}

json manifest_to_json(const DatasetManifest& m) {
  json pairs = json::array();
  for (const PairRecord& r : m.pairs) {
    pairs.push_back({{"id", r.id},
                     {"path_a", r.path_a.generic_string()},
                     {"path_b", r.path_b.generic_string()},
                     {"split", to_string(r.split)}});
  }
  return {{"root", m.root.generic_string()},
          {"modality_a", m.modality_a},
          {"modality_b", m.modality_b},
          {"seed", m.seed},
          {"holdout_count", m.holdout_count},
          {"pairs", std::move(pairs)}};
}

}  // namespace

std::string to_string(Split s) { return s == Split::kTrain ? "train" : "test"; }

Split split_from_string(const std::string& s) {
  if (s == "train") return Split::kTrain;
  if (s == "test") return Split::kTest;
  throw ConfigError("unknown split '" + s + "'");
}

void PairedDataset::validate() const {
  for (const ImagePair& p : pairs) {
    if (p.a.height() != height_of(p.b) || p.a.width() != width_of(p.b)) {
      throw ShapeError("pair '" + p.id + "' is not co-registered: " +
                       std::to_string(p.a.height()) + "x" +
                       std::to_string(p.a.width()) + " vs " +
                       std::to_string(height_of(p.b)) + "x" +
                       std::to_string(width_of(p.b)));
    }
  }
}

IndexSplit split_indices(std::size_t count, std::size_t holdout_count,
                         std::uint64_t seed) {
  if (holdout_count == 0 || holdout_count >= count) {
    throw ConfigError("holdout count " + std::to_string(holdout_count) +
                      " must lie strictly between 0 and " +
                      std::to_string(count));
  }
  std::vector<std::size_t> order(count);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::mt19937_64 rng(seed);
  std::shuffle(order.begin(), order.end(), rng);
  IndexSplit s;
  s.test.assign(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(holdout_count));
  s.train.assign(order.begin() + static_cast<std::ptrdiff_t>(holdout_count), order.end());
  std::sort(s.test.begin(), s.test.end());
  std::sort(s.train.begin(), s.train.end());
  return s;
}

std::pair<PairedDataset, PairedDataset> split_dataset(const PairedDataset& ds,
                                                      std::size_t holdout_count,
                                                      std::uint64_t seed) {
  const IndexSplit idx = split_indices(ds.pairs.size(), holdout_count, seed);
  PairedDataset train{{}, ds.modality_tags, Split::kTrain};
  PairedDataset test{{}, ds.modality_tags, Split::kTest};
  for (std::size_t i : idx.train) train.pairs.push_back(ds.pairs[i]);
  for (std::size_t i : idx.test) test.pairs.push_back(ds.pairs[i]);
  return {std::move(train), std::move(test)};
}

std::vector<PairRecord> DatasetManifest::records(Split s) const {
  std::vector<PairRecord> out;
  std::copy_if(pairs.begin(), pairs.end(), std::back_inserter(out),
               [s](const PairRecord& r) { return r.split == s; });
  return out;
}

std::vector<PairRecord> scan_pairs(const std::filesystem::path& root,
                                   const std::string& modality_a,
                                   const std::string& modality_b) {
  const auto a = index_dir(root / modality_a);
  const auto b = index_dir(root / modality_b);
  std::vector<PairRecord> out;
  for (const auto& [id, path_a] : a) {
    auto it = b.find(id);
    if (it == b.end()) continue;
    out.push_back({id, std::filesystem::relative(path_a, root),
                   std::filesystem::relative(it->second, root), Split::kTrain});
  }
  return out;
}

DatasetManifest build_manifest(const std::filesystem::path& root,
                               const std::string& modality_a,
                               const std::string& modality_b,
                               std::size_t holdout_count, std::uint64_t seed) {
  DatasetManifest m{root, modality_a, modality_b, seed, holdout_count,
                    scan_pairs(root, modality_a, modality_b)};
  const IndexSplit idx = split_indices(m.pairs.size(), holdout_count, seed);
  for (std::size_t i : idx.test) m.pairs[i].split = Split::kTest;
  return m;
}

void write_manifest(const std::filesystem::path& path,
                    const DatasetManifest& manifest) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path.string());
  out << manifest_to_json(manifest).dump(2) << '\n';
}

DatasetManifest read_manifest(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot read " + path.string());
  try {
    const json j = json::parse(in);
    DatasetManifest m;
    m.root = j.at("root").get<std::string>();
    m.modality_a = j.at("modality_a").get<std::string>();
    m.modality_b = j.at("modality_b").get<std::string>();
    m.seed = j.at("seed").get<std::uint64_t>();
    m.holdout_count = j.at("holdout_count").get<std::size_t>();
    std::set<std::string> ids;
    for (const json& r : j.at("pairs")) {
      PairRecord rec{r.at("id").get<std::string>(),
                     r.at("path_a").get<std::string>(),
                     r.at("path_b").get<std::string>(),
                     split_from_string(r.at("split").get<std::string>())};
      if (!ids.insert(rec.id).second) {
        throw IoError("duplicate pair id '" + rec.id + "' in " + path.string());
      }
      m.pairs.push_back(std::move(rec));
    }
    return m;
  } catch (const json::exception& e) {
    throw IoError("malformed manifest " + path.string() + ": " + e.what());
  }
}

std::string manifest_hash(const DatasetManifest& manifest) {
  return hex64(fnv1a64(manifest_to_json(manifest).dump()));
}

PairedDataset load_split(const DatasetManifest& manifest, Split split) {
  PairedDataset ds{{}, {manifest.modality_a, manifest.modality_b}, split};
  for (const PairRecord& r : manifest.records(split)) {
    SourceImage a = read_png(manifest.root / r.path_a);
    if (!std::holds_alternative<GrayImage>(a)) {
      throw InputError("modality '" + manifest.modality_a +
                       "' must be single-channel: " + r.path_a.string());
    }
    ds.pairs.push_back(
        {r.id, std::get<GrayImage>(std::move(a)), read_png(manifest.root / r.path_b)});
  }
  ds.validate();
  return ds;
}

std::vector<GrayImage> training_planes(const PairedDataset& ds) {
  std::vector<GrayImage> planes;
  planes.reserve(ds.pairs.size() * 2);
  for (const ImagePair& p : ds.pairs) {
    planes.push_back(p.a);
    if (const auto* g = std::get_if<GrayImage>(&p.b)) {
      planes.push_back(*g);
    } else {
      planes.push_back(rgb_to_ycbcr(std::get<ColorImage>(p.b)).y);
    }
  }
  return planes;
}

}  // namespace mmfuse::imaging
