#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <opencv2/core.hpp>

#include "gma/core.hpp"
#include "gma/flow.hpp"

namespace gma {

enum class Stage { masked, adjusted, flow };

std::string_view to_string(Stage stage);
std::optional<Stage> parse_stage(std::string_view text);

/// Hash of the config subset that determines a stage's payload. Each stage
/// includes the keys of the stages feeding it.
std::string stage_config_hash(const PipelineConfig& config, Stage stage);

struct ArrayMeta {
  std::vector<std::int64_t> shape;
  std::string dtype;  // "uint8" | "float32"
  Stage stage = Stage::masked;
  std::string config_hash;

  std::size_t element_count() const;
  std::size_t byte_size() const;
};

struct CacheEntry {
  std::string clip_id;
  Stage stage = Stage::masked;
  fs::path payload_path;
  fs::path sidecar_path;
};

/// Filesystem cache of preprocessing artifacts. Layout:
///   <root>/<clip_id>/<stage>.bin   flat little-endian row-major array
///   <root>/<clip_id>/<stage>.json  {shape, dtype, stage, config_hash}
/// Writes go through a temporary file and a rename. A lookup whose
/// config hash differs from the caller's is a miss.
class Cache {
 public:
  explicit Cache(fs::path root);

  const fs::path& root() const { return root_; }
  CacheEntry entry(const std::string& clip_id, Stage stage) const;

  void put(const std::string& clip_id, const ArrayMeta& meta,
           std::span<const std::byte> payload) const;
  std::optional<std::vector<std::byte>> get(const std::string& clip_id,
                                            Stage stage,
                                            std::string_view config_hash,
                                            ArrayMeta* meta = nullptr) const;

  /// Validated sidecar of an entry whose hash matches and whose payload has
  /// the recorded size; the payload itself is not read.
  std::optional<ArrayMeta> stat(const std::string& clip_id, Stage stage,
                                std::string_view config_hash) const;

  /// `count` payload bytes starting at `offset`; nullopt on a short read.
  std::optional<std::vector<std::byte>> read_range(const std::string& clip_id,
                                                   Stage stage, std::size_t offset,
                                                   std::size_t count) const;

  /// Frames stored as uint8 (T, H, W, 3).
  void put_frames(const std::string& clip_id, Stage stage,
                  const std::string& config_hash,
                  const std::vector<cv::Mat>& frames) const;
  std::optional<std::vector<cv::Mat>> get_frames(
      const std::string& clip_id, Stage stage,
      std::string_view config_hash) const;

  /// Raw flows stored as float32 (T-1, 2, H, W); channel 0 horizontal.
  void put_flows(const std::string& clip_id, const std::string& config_hash,
                 const std::vector<FlowPair>& flows) const;
  std::optional<std::vector<FlowPair>> get_flows(
      const std::string& clip_id, std::string_view config_hash) const;

  /// Auxiliary JSON document next to the stage payloads (adjuster report).
  void put_report(const std::string& clip_id, const std::string& name,
                  const nlohmann::json& report) const;
  std::optional<nlohmann::json> get_report(const std::string& clip_id,
                                           const std::string& name) const;

 private:
  fs::path root_;
};

/// Writes `bytes` to `path` atomically (temp file in the same directory,
/// then rename).
void write_file_atomic(const fs::path& path, std::span<const std::byte> bytes);

}  // namespace gma
