#include "gma/cache.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <random>
#include <sstream>

#include "gma/errors.hpp"

namespace gma {

static_assert(std::endian::native == std::endian::little,
              "cache payloads are written in host byte order and must be "
              "little-endian");

std::string_view to_string(Stage stage) {
  switch (stage) {
    case Stage::masked:
      return "masked";
    case Stage::adjusted:
      return "adjusted";
    case Stage::flow:
      return "flow";
  }
  return "?";
}

std::optional<Stage> parse_stage(std::string_view text) {
  for (Stage s : {Stage::masked, Stage::adjusted, Stage::flow}) {
    if (to_string(s) == text) return s;
  }
  return std::nullopt;
}

std::string stage_config_hash(const PipelineConfig& c, Stage stage) {
  nlohmann::json key;
  key["stage"] = std::string(to_string(stage));
  key["target_fps"] = c.target_fps;
  key["clip_duration_s"] = c.clip_duration_s;
  key["enable_extractor"] = c.enable_extractor;
  if (c.enable_extractor) {
    key["mask_threshold"] = c.mask_threshold;
    key["segmentation_backend"] = c.segmentation_backend;
  }
  if (stage != Stage::masked) {
    key["enable_adjuster"] = c.enable_adjuster;
    key["crop_size"] = c.crop_size;
    if (c.enable_adjuster) {
      key["alpha"] = c.alpha;
      key["min_conf"] = c.min_conf;
      key["pose_backend"] = c.pose_backend;
    }
  }
  if (stage == Stage::flow) {
    key["farneback"] = {kFarneback.pyr_scale, kFarneback.levels,
                        kFarneback.winsize,   kFarneback.iterations,
                        kFarneback.poly_n,    kFarneback.poly_sigma};
  }
  return fnv1a_hex(key.dump());
}

std::size_t ArrayMeta::element_count() const {
  std::size_t n = 1;
  for (auto d : shape) n *= static_cast<std::size_t>(d);
  return n;
}

std::size_t ArrayMeta::byte_size() const {
  if (dtype == "uint8") return element_count();
  if (dtype == "float32") return element_count() * 4;
  throw Error("unsupported dtype '" + dtype + "'");
}

void write_file_atomic(const fs::path& path, std::span<const std::byte> bytes) {
  fs::create_directories(path.parent_path());
  static thread_local std::mt19937_64 rng{std::random_device{}()};
  fs::path tmp = path;
  tmp += ".tmp" + std::to_string(rng());
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw DataError("cannot write " + tmp.string());
    out.write(reinterpret_cast<const char*>(bytes.data()),
              static_cast<std::streamsize>(bytes.size()));
    if (!out) throw DataError("short write to " + tmp.string());
  }
  fs::rename(tmp, path);
}

namespace {

void write_text_atomic(const fs::path& path, const std::string& text) {
  write_file_atomic(path, std::as_bytes(std::span(text.data(), text.size())));
}

std::optional<std::vector<std::byte>> read_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary | std::ios::ate);
  if (!in) return std::nullopt;
  const auto size = static_cast<std::size_t>(in.tellg());
  std::vector<std::byte> bytes(size);
  in.seekg(0);
  in.read(reinterpret_cast<char*>(bytes.data()),
          static_cast<std::streamsize>(size));
  if (!in) return std::nullopt;
  return bytes;
}

}  // namespace

Cache::Cache(fs::path root) : root_(std::move(root)) {}

CacheEntry Cache::entry(const std::string& clip_id, Stage stage) const {
  const fs::path dir = root_ / clip_id;
  const std::string name(to_string(stage));
  return {clip_id, stage, dir / (name + ".bin"), dir / (name + ".json")};
}

void Cache::put(const std::string& clip_id, const ArrayMeta& meta,
                std::span<const std::byte> payload) const {
  if (payload.size() != meta.byte_size()) {
    throw Error("cache payload for '" + clip_id + "' does not match its shape");
  }
  const CacheEntry e = entry(clip_id, meta.stage);
  nlohmann::json sidecar = {{"shape", meta.shape},
                            {"dtype", meta.dtype},
                            {"stage", std::string(to_string(meta.stage))},
                            {"config_hash", meta.config_hash}};
  // Payload first: a reader that sees the new sidecar also sees the payload.
  write_file_atomic(e.payload_path, payload);
  write_text_atomic(e.sidecar_path, sidecar.dump());
}

std::optional<ArrayMeta> Cache::stat(const std::string& clip_id, Stage stage,
                                     std::string_view config_hash) const {
  const CacheEntry e = entry(clip_id, stage);
  std::ifstream side(e.sidecar_path);
  if (!side) return std::nullopt;
  ArrayMeta meta;
  try {
    nlohmann::json j;
    side >> j;
    meta.shape = j.at("shape").get<std::vector<std::int64_t>>();
    meta.dtype = j.at("dtype").get<std::string>();
    const auto parsed = parse_stage(j.at("stage").get<std::string>());
    if (!parsed || *parsed != stage) return std::nullopt;
    meta.stage = *parsed;
    meta.config_hash = j.at("config_hash").get<std::string>();
  } catch (const nlohmann::json::exception&) {
    return std::nullopt;
  }
  if (meta.config_hash != config_hash) return std::nullopt;
  if (meta.dtype != "uint8" && meta.dtype != "float32") return std::nullopt;
  std::error_code ec;
  const auto size = fs::file_size(e.payload_path, ec);
  if (ec || size != meta.byte_size()) return std::nullopt;
  return meta;
}

std::optional<std::vector<std::byte>> Cache::get(const std::string& clip_id,
                                                 Stage stage,
                                                 std::string_view config_hash,
                                                 ArrayMeta* meta_out) const {
  const auto meta = stat(clip_id, stage, config_hash);
  if (!meta) return std::nullopt;
  auto bytes = read_file(entry(clip_id, stage).payload_path);
  if (!bytes || bytes->size() != meta->byte_size()) return std::nullopt;
  if (meta_out) *meta_out = *meta;
  return bytes;
}

std::optional<std::vector<std::byte>> Cache::read_range(const std::string& clip_id,
                                                        Stage stage, std::size_t offset,
                                                        std::size_t count) const {
  std::ifstream in(entry(clip_id, stage).payload_path, std::ios::binary);
  if (!in) return std::nullopt;
  in.seekg(static_cast<std::streamoff>(offset));
  std::vector<std::byte> bytes(count);
  in.read(reinterpret_cast<char*>(bytes.data()), static_cast<std::streamsize>(count));
  if (!in) return std::nullopt;
  return bytes;
}

void Cache::put_frames(const std::string& clip_id, Stage stage,
                       const std::string& config_hash,
                       const std::vector<cv::Mat>& frames) const {
  if (frames.empty()) throw Error("refusing to cache an empty frame list");
  const int h = frames.front().rows;
  const int w = frames.front().cols;
  ArrayMeta meta{{static_cast<std::int64_t>(frames.size()), h, w, 3},
                 "uint8",
                 stage,
                 config_hash};
  std::vector<std::byte> bytes(meta.byte_size());
  const std::size_t frame_bytes = static_cast<std::size_t>(h) * w * 3;
  for (std::size_t i = 0; i < frames.size(); ++i) {
    const cv::Mat& f = frames[i];
    if (f.type() != CV_8UC3 || f.rows != h || f.cols != w) {
      throw Error("inconsistent frame shapes for '" + clip_id + "'");
    }
    const cv::Mat c = f.isContinuous() ? f : f.clone();
    std::memcpy(bytes.data() + i * frame_bytes, c.data, frame_bytes);
  }
  put(clip_id, meta, bytes);
}

std::optional<std::vector<cv::Mat>> Cache::get_frames(
    const std::string& clip_id, Stage stage,
    std::string_view config_hash) const {
  ArrayMeta meta;
  auto bytes = get(clip_id, stage, config_hash, &meta);
  if (!bytes || meta.dtype != "uint8" || meta.shape.size() != 4 ||
      meta.shape[3] != 3) {
    return std::nullopt;
  }
  const int t = static_cast<int>(meta.shape[0]);
  const int h = static_cast<int>(meta.shape[1]);
  const int w = static_cast<int>(meta.shape[2]);
  const std::size_t frame_bytes = static_cast<std::size_t>(h) * w * 3;
  std::vector<cv::Mat> frames;
  frames.reserve(t);
  for (int i = 0; i < t; ++i) {
    cv::Mat f(h, w, CV_8UC3);
    std::memcpy(f.data, bytes->data() + i * frame_bytes, frame_bytes);
    frames.push_back(std::move(f));
  }
  return frames;
}

void Cache::put_flows(const std::string& clip_id,
                      const std::string& config_hash,
                      const std::vector<FlowPair>& flows) const {
  if (flows.empty()) throw Error("refusing to cache an empty flow list");
  const int h = flows.front().dh.rows;
  const int w = flows.front().dh.cols;
  ArrayMeta meta{{static_cast<std::int64_t>(flows.size()), 2, h, w},
                 "float32",
                 Stage::flow,
                 config_hash};
  std::vector<std::byte> bytes(meta.byte_size());
  const std::size_t plane = static_cast<std::size_t>(h) * w * sizeof(float);
  for (std::size_t i = 0; i < flows.size(); ++i) {
    const cv::Mat planes[2] = {flows[i].dh, flows[i].dv};
    for (int c = 0; c < 2; ++c) {
      const cv::Mat m = planes[c].isContinuous() ? planes[c] : planes[c].clone();
      if (m.type() != CV_32F || m.rows != h || m.cols != w) {
        throw Error("inconsistent flow shapes for '" + clip_id + "'");
      }
      std::memcpy(bytes.data() + (2 * i + c) * plane, m.data, plane);
    }
  }
  put(clip_id, meta, bytes);
}

std::optional<std::vector<FlowPair>> Cache::get_flows(
    const std::string& clip_id, std::string_view config_hash) const {
  ArrayMeta meta;
  auto bytes = get(clip_id, Stage::flow, config_hash, &meta);
  if (!bytes || meta.dtype != "float32" || meta.shape.size() != 4 ||
      meta.shape[1] != 2) {
    return std::nullopt;
  }
  const int t = static_cast<int>(meta.shape[0]);
  const int h = static_cast<int>(meta.shape[2]);
  const int w = static_cast<int>(meta.shape[3]);
  const std::size_t plane = static_cast<std::size_t>(h) * w * sizeof(float);
  std::vector<FlowPair> flows;
  flows.reserve(t);
  for (int i = 0; i < t; ++i) {
    FlowPair f;
    f.t = i;
    f.dh.create(h, w, CV_32F);
    f.dv.create(h, w, CV_32F);
    std::memcpy(f.dh.data, bytes->data() + (2 * i) * plane, plane);
    std::memcpy(f.dv.data, bytes->data() + (2 * i + 1) * plane, plane);
    flows.push_back(std::move(f));
  }
  return flows;
}

void Cache::put_report(const std::string& clip_id, const std::string& name,
                       const nlohmann::json& report) const {
  write_text_atomic(root_ / clip_id / (name + ".json"), report.dump(2));
}

std::optional<nlohmann::json> Cache::get_report(const std::string& clip_id,
                                                const std::string& name) const {
  std::ifstream in(root_ / clip_id / (name + ".json"));
  if (!in) return std::nullopt;
  try {
    nlohmann::json j;
    in >> j;
    return j;
  } catch (const nlohmann::json::exception&) {
    return std::nullopt;
  }
}

}  // namespace gma
