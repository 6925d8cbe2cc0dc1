#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include "mmfuse/imaging.hpp"

namespace mmfuse::imaging {

enum class Split { kTrain, kTest };

std::string to_string(Split s);
Split split_from_string(const std::string& s);

struct ImagePair {
  std::string id;
  GrayImage a;
  SourceImage b;
};

/// Co-registered image pairs. Pair members always share H×W.
struct PairedDataset {
  std::vector<ImagePair> pairs;
  std::pair<std::string, std::string> modality_tags{"a", "b"};
  Split split = Split::kTrain;

  /// Throws ShapeError if a pair is not co-registered.
  void validate() const;
};

/// Chooses `holdout_count` of `count` indices for the test side using a
/// seeded shuffle. Both returned lists are sorted ascending and disjoint.
struct IndexSplit {
  std::vector<std::size_t> train;
  std::vector<std::size_t> test;
};
IndexSplit split_indices(std::size_t count, std::size_t holdout_count,
                         std::uint64_t seed);

std::pair<PairedDataset, PairedDataset> split_dataset(const PairedDataset& ds,
                                                      std::size_t holdout_count,
                                                      std::uint64_t seed);

// --- on-disk layout -----------------------------------------------------------

struct PairRecord {
  std::string id;
  std::filesystem::path path_a;
  std::filesystem::path path_b;
  Split split = Split::kTrain;
};

/// One record per pair; written once by prepare-data and read by every later
/// stage so splits are never re-derived.
struct DatasetManifest {
  std::filesystem::path root;
  std::string modality_a;
  std::string modality_b;
  std::uint64_t seed = 0;
  std::size_t holdout_count = 0;
  std::vector<PairRecord> pairs;

  std::vector<PairRecord> records(Split s) const;
};

/// Pairs `<root>/<modality_a>/<id>.<ext>` with `<root>/<modality_b>/<id>.<ext>`
/// by identical stem. Result is sorted by id. Unpaired files are skipped.
std::vector<PairRecord> scan_pairs(const std::filesystem::path& root,
                                   const std::string& modality_a,
                                   const std::string& modality_b);

DatasetManifest build_manifest(const std::filesystem::path& root,
                               const std::string& modality_a,
                               const std::string& modality_b,
                               std::size_t holdout_count, std::uint64_t seed);

void write_manifest(const std::filesystem::path& path,
                    const DatasetManifest& manifest);
DatasetManifest read_manifest(const std::filesystem::path& path);

/// FNV-1a 64 of the manifest's canonical serialization, hex encoded.
std::string manifest_hash(const DatasetManifest& manifest);

/// Loads the images of every record with the given split.
PairedDataset load_split(const DatasetManifest& manifest, Split split);

/// Single-channel training planes: image a, and image b (its Y plane if color).
std::vector<GrayImage> training_planes(const PairedDataset& ds);

}  // namespace mmfuse::imaging
