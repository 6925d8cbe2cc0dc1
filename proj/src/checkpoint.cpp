#include "mmfuse/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>

#include "mmfuse/errors.hpp"

namespace mmfuse::io {
namespace {

constexpr char kMagic[8] = {'M', 'M', 'F', 'A', 'R', 'C', 'H', '1'};

static_assert(std::endian::native == std::endian::little,
              "archive I/O assumes a little-endian host");

}  // namespace

const Tensor* Archive::find(const std::string& name) const {
  for (const auto& [n, t] : tensors) {
    if (n == name) return &t;
  }
  return nullptr;
}

void write_archive(const std::filesystem::path& path, const Archive& archive) {
  nlohmann::json header;
  header["meta"] = archive.meta;
  header["tensors"] = nlohmann::json::array();
  std::uint64_t offset = 0;
  for (const auto& [name, t] : archive.tensors) {
    const Shape& s = t.shape();
    header["tensors"].push_back(
        {{"name", name}, {"shape", {s.n, s.c, s.h, s.w}}, {"offset", offset}});
    offset += t.size() * sizeof(double);
  }
  const std::string text = header.dump();
  const std::uint64_t len = text.size();

  const auto tmp = std::filesystem::path(path).concat(".tmp");
  {
    std::ofstream out(tmp, std::ios::binary);
    if (!out) throw IoError("cannot write " + tmp.string());
    out.write(kMagic, sizeof(kMagic));
    out.write(reinterpret_cast<const char*>(&len), sizeof(len));
    out.write(text.data(), static_cast<std::streamsize>(text.size()));
    for (const auto& [_, t] : archive.tensors) {
      out.write(reinterpret_cast<const char*>(t.data()),
                static_cast<std::streamsize>(t.size() * sizeof(double)));
    }
    if (!out) throw IoError("failed writing " + tmp.string());
  }
  // Readers never observe a half-written archive.
  std::filesystem::rename(tmp, path);
}

Archive read_archive(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot read " + path.string());
  char magic[8];
  std::uint64_t len = 0;
  in.read(magic, sizeof(magic));
  in.read(reinterpret_cast<char*>(&len), sizeof(len));
  if (!in || std::memcmp(magic, kMagic, sizeof(kMagic)) != 0) {
    throw IoError(path.string() + " is not a tensor archive");
  }
  std::string text(len, '\0');
  in.read(text.data(), static_cast<std::streamsize>(len));
  if (!in) throw IoError("truncated archive header in " + path.string());

  Archive archive;
  try {
    const nlohmann::json header = nlohmann::json::parse(text);
    archive.meta = header.at("meta");
    const std::streamoff data_start = in.tellg();
    for (const auto& entry : header.at("tensors")) {
      const auto dims = entry.at("shape").get<std::vector<int>>();
      if (dims.size() != 4) throw IoError("tensor shape must have 4 dims");
      Tensor t(Shape{dims[0], dims[1], dims[2], dims[3]});
      in.seekg(data_start +
               static_cast<std::streamoff>(entry.at("offset").get<std::uint64_t>()));
      in.read(reinterpret_cast<char*>(t.data()),
              static_cast<std::streamsize>(t.size() * sizeof(double)));
      if (!in) throw IoError("truncated tensor data in " + path.string());
      archive.tensors.emplace_back(entry.at("name").get<std::string>(), std::move(t));
    }
  } catch (const nlohmann::json::exception& e) {
    throw IoError("malformed archive header in " + path.string() + ": " + e.what());
  }
  return archive;
}

Archive model_archive(const nn::ModelWeights& weights) {
  Archive a;
  a.meta = {{"kind", "model"},
            {"version", weights.version},
            {"config", weights.config},
            {"config_hash", nn::config_hash(weights.config)},
            {"param_count", nn::param_count(weights)}};
  a.tensors = weights.tensors;
  return a;
}

nn::ModelWeights weights_from_archive(const Archive& archive) {
  nn::ModelWeights w;
  try {
    w.config = archive.meta.at("config").get<nn::EncoderConfig>();
    w.version = archive.meta.value("version", std::string("1"));
    const auto stored = archive.meta.at("config_hash").get<std::string>();
    if (stored != nn::config_hash(w.config)) {
      throw ConfigError("archive config hash " + stored +
                        " does not match its config snapshot");
    }
  } catch (const nlohmann::json::exception& e) {
    throw IoError(std::string("archive lacks a model config: ") + e.what());
  }
  const std::string prefix = "model/";
  for (const auto& [name, t] : archive.tensors) {
    if (name.rfind(prefix, 0) == 0) {
      w.tensors.emplace_back(name.substr(prefix.size()), t);
    } else if (name.find('/') == std::string::npos) {
      w.tensors.emplace_back(name, t);
    }
  }
  return w;
}

void save_checkpoint(const std::filesystem::path& path,
                     const nn::ModelWeights& weights) {
  write_archive(path, model_archive(weights));
}

nn::ModelWeights load_checkpoint(const std::filesystem::path& path,
                                 const nn::EncoderConfig* expected) {
  nn::ModelWeights w = weights_from_archive(read_archive(path));
  if (expected && nn::config_hash(*expected) != nn::config_hash(w.config)) {
    throw ConfigError("checkpoint " + path.string() + " was trained with config " +
                      nn::config_hash(w.config) + ", runtime config is " +
                      nn::config_hash(*expected));
  }
  return w;
}

}  // namespace mmfuse::io
