#pragma once

// Single-file tensor archive:
//   8-byte magic "MMFARCH1", little-endian u64 header length, JSON header,
//   then every tensor's float64 values back to back (little-endian).
// The header lists tensor names, shapes and byte offsets plus free-form
// metadata. Values round-trip bit-exactly.

#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include "json.hpp"
#include "mmfuse/network.hpp"
#include "mmfuse/tensor.hpp"

namespace mmfuse::io {

struct Archive {
  nlohmann::json meta = nlohmann::json::object();
  std::vector<std::pair<std::string, Tensor>> tensors;

  const Tensor* find(const std::string& name) const;
};

void write_archive(const std::filesystem::path& path, const Archive& archive);
Archive read_archive(const std::filesystem::path& path);

/// Model checkpoint: kind "model", config snapshot, config hash, tensors.
Archive model_archive(const nn::ModelWeights& weights);
nn::ModelWeights weights_from_archive(const Archive& archive);

void save_checkpoint(const std::filesystem::path& path,
                     const nn::ModelWeights& weights);

/// Loads a checkpoint. When `expected` is given its hash must equal the
/// stored config hash, otherwise ConfigError.
nn::ModelWeights load_checkpoint(const std::filesystem::path& path,
                                 const nn::EncoderConfig* expected = nullptr);

}  // namespace mmfuse::io
