#include "gma/nn/archive.hpp"

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <vector>

#include "gma/errors.hpp"

namespace gma::nn {

static_assert(std::endian::native == std::endian::little,
              "tensor archives are little-endian");

namespace {
constexpr char kMagic[8] = {'G', 'M', 'A', 'T', 'E', 'N', 'S', '1'};
}

void save_archive(const std::filesystem::path& path, const ParameterSet& params,
                  const nlohmann::json& metadata) {
  nlohmann::json header;
  header["metadata"] = metadata;
  header["tensors"] = nlohmann::json::array();
  for (const auto& p : params) {
    header["tensors"].push_back(
        {{"name", p.name}, {"shape", p.value.shape()}, {"trainable", p.trainable}});
  }
  const std::string text = header.dump();

  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  const auto tmp = std::filesystem::path(path.string() + ".tmp");
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw DataError("cannot write " + tmp.string());
    out.write(kMagic, sizeof(kMagic));
    const std::uint64_t n = text.size();
    out.write(reinterpret_cast<const char*>(&n), sizeof(n));
    out.write(text.data(), static_cast<std::streamsize>(text.size()));
    for (const auto& p : params) {
      out.write(reinterpret_cast<const char*>(p.value.data()),
                static_cast<std::streamsize>(p.value.size() * sizeof(double)));
    }
    if (!out) throw DataError("short write to " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

TensorArchive load_archive(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open archive " + path.string());
  char magic[8];
  in.read(magic, sizeof(magic));
  if (!in || std::memcmp(magic, kMagic, sizeof(kMagic)) != 0) {
    throw DataError("not a tensor archive: " + path.string());
  }
  std::uint64_t n = 0;
  in.read(reinterpret_cast<char*>(&n), sizeof(n));
  if (!in || n > (1ull << 31)) throw DataError("corrupt archive header: " + path.string());
  std::string text(n, '\0');
  in.read(text.data(), static_cast<std::streamsize>(n));
  if (!in) throw DataError("truncated archive header: " + path.string());

  TensorArchive archive;
  nlohmann::json header;
  try {
    header = nlohmann::json::parse(text);
    archive.metadata = header.value("metadata", nlohmann::json::object());
    for (const auto& t : header.at("tensors")) {
      Parameter p;
      p.name = t.at("name").get<std::string>();
      p.trainable = t.value("trainable", true);
      p.value = Tensor(t.at("shape").get<std::vector<int>>());
      in.read(reinterpret_cast<char*>(p.value.data()),
              static_cast<std::streamsize>(p.value.size() * sizeof(double)));
      if (!in) throw DataError("truncated archive payload: " + path.string());
      archive.tensors[p.name] = std::move(p);
    }
  } catch (const nlohmann::json::exception& e) {
    throw DataError("corrupt archive header in " + path.string() + ": " + e.what());
  }
  return archive;
}

int copy_matching(const TensorArchive& archive, ParameterSet& params,
                  const std::string& target_prefix, const std::string& source_prefix) {
  int copied = 0;
  for (auto& p : params) {
    if (p.name.rfind(target_prefix, 0) != 0) continue;
    const std::string key = source_prefix + p.name.substr(target_prefix.size());
    const auto it = archive.tensors.find(key);
    if (it == archive.tensors.end()) continue;
    if (it->second.value.shape() != p.value.shape()) {
      throw DataError("shape mismatch for '" + key + "': archive " +
                      it->second.value.shape_string() + ", model " + p.value.shape_string());
    }
    p.value = it->second.value;
    ++copied;
  }
  return copied;
}

}  // namespace gma::nn
