#include "gma/core.hpp"

#include <cmath>
#include <fstream>
#include <set>
#include <sstream>
#include <unordered_set>

#include "gma/errors.hpp"

namespace gma {

std::string_view to_string(GmsLabel label) {
  switch (label) {
    case GmsLabel::WM:
      return "WM";
    case GmsLabel::FM:
      return "FM";
    case GmsLabel::PR:
      return "PR";
  }
  return "?";
}

std::optional<GmsLabel> parse_label(std::string_view text) {
  for (GmsLabel label : kAllLabels) {
    if (to_string(label) == text) return label;
  }
  return std::nullopt;
}

GmsLabel label_from_index(int index) {
  if (index < 0 || index >= kNumClasses) {
    throw Error("class index out of range: " + std::to_string(index));
  }
  return static_cast<GmsLabel>(index);
}

// ---------------------------------------------------------------------------

void VideoClip::validate() const {
  if (frames.empty()) throw DataError("clip '" + clip_id + "' has no frames");
  if (!(fps > 0.0) || !std::isfinite(fps)) {
    throw DataError("clip '" + clip_id + "' has non-positive fps");
  }
  const cv::Size size = frames.front().size();
  for (std::size_t i = 0; i < frames.size(); ++i) {
    const cv::Mat& f = frames[i];
    if (f.type() != CV_8UC3) {
      throw DataError("clip '" + clip_id + "' frame " + std::to_string(i) +
                      " is not 8-bit RGB");
    }
    if (f.size() != size) {
      throw DataError("clip '" + clip_id + "' frame " + std::to_string(i) +
                      " has mismatched dimensions");
    }
  }
}

VideoClip VideoClip::with_frames(std::vector<cv::Mat> new_frames) const {
  VideoClip out;
  out.frames = std::move(new_frames);
  out.fps = fps;
  out.infant_id = infant_id;
  out.clip_id = clip_id;
  return out;
}

int decimation_step(double source_fps, double target_fps) {
  if (!(target_fps > 0.0)) throw UsageError("target_fps must be positive");
  if (target_fps > source_fps + 1e-9) {
    throw UsageError("target_fps exceeds source fps");
  }
  const double ratio = source_fps / target_fps;
  const double rounded = std::round(ratio);
  if (std::abs(ratio - rounded) > 1e-6) {
    std::ostringstream msg;
    msg << "fps ratio " << source_fps << "/" << target_fps
        << " is not an integer";
    throw UsageError(msg.str());
  }
  return static_cast<int>(rounded);
}

VideoClip resample_fps(const VideoClip& clip, double target_fps) {
  const int step = decimation_step(clip.fps, target_fps);
  std::vector<cv::Mat> kept;
  kept.reserve(clip.frames.size() / step + 1);
  for (std::size_t i = 0; i < clip.frames.size(); i += step) {
    kept.push_back(clip.frames[i]);
  }
  VideoClip out = clip.with_frames(std::move(kept));
  out.fps = target_fps;
  return out;
}

// ---------------------------------------------------------------------------
// Manifest
// ---------------------------------------------------------------------------

namespace {

std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> fields;
  std::string field;
  bool quoted = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    const char c = line[i];
    if (quoted) {
      if (c == '"' && i + 1 < line.size() && line[i + 1] == '"') {
        field += '"';
        ++i;
      } else if (c == '"') {
        quoted = false;
      } else {
        field += c;
      }
    } else if (c == '"') {
      quoted = true;
    } else if (c == ',') {
      fields.push_back(std::move(field));
      field.clear();
    } else {
      field += c;
    }
  }
  fields.push_back(std::move(field));
  return fields;
}

std::string csv_escape(const std::string& s) {
  if (s.find_first_of(",\"\n") == std::string::npos) return s;
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out += '"';
    out += c;
  }
  return out + "\"";
}

std::string trim(std::string s) {
  const auto first = s.find_first_not_of(" \t\r");
  if (first == std::string::npos) return {};
  const auto last = s.find_last_not_of(" \t\r");
  return s.substr(first, last - first + 1);
}

double parse_seconds(const std::string& text, int line_no,
                     std::string_view column) {
  std::size_t consumed = 0;
  double value = 0.0;
  try {
    value = std::stod(text, &consumed);
  } catch (const std::exception&) {
    consumed = 0;
  }
  if (consumed == 0 || consumed != text.size() || !std::isfinite(value)) {
    throw DataError("manifest row " + std::to_string(line_no) + ": invalid " +
                    std::string(column) + " '" + text + "'");
  }
  return value;
}

}  // namespace

const ManifestEntry* DatasetManifest::find(std::string_view clip_id) const {
  for (const auto& e : entries) {
    if (e.clip_id == clip_id) return &e;
  }
  return nullptr;
}

std::vector<std::string> DatasetManifest::infant_ids() const {
  std::vector<std::string> ids;
  std::unordered_set<std::string> seen;
  for (const auto& e : entries) {
    if (seen.insert(e.infant_id).second) ids.push_back(e.infant_id);
  }
  return ids;
}

DatasetManifest load_manifest(const fs::path& path, double clip_duration_s) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open manifest: " + path.string());

  const fs::path base = fs::absolute(path).parent_path();
  std::string line;
  if (!std::getline(in, line) || trim(line) != kManifestHeader) {
    throw DataError("manifest row 1: expected header '" +
                    std::string(kManifestHeader) + "'");
  }

  DatasetManifest manifest;
  std::set<std::string> ids;
  int line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (trim(line).empty()) continue;
    auto fields = split_csv_line(line);
    if (fields.size() != 6) {
      throw DataError("manifest row " + std::to_string(line_no) +
                      ": expected 6 fields, got " +
                      std::to_string(fields.size()));
    }
    for (auto& f : fields) f = trim(f);

    ManifestEntry e;
    e.clip_id = fields[0];
    e.infant_id = fields[1];
    if (e.clip_id.empty() || e.infant_id.empty() || fields[2].empty()) {
      throw DataError("manifest row " + std::to_string(line_no) +
                      ": empty clip_id, infant_id or video_path");
    }
    const auto label = parse_label(fields[3]);
    if (!label) {
      throw DataError("manifest row " + std::to_string(line_no) +
                      ": unknown label '" + fields[3] + "'");
    }
    e.label = *label;
    e.clip_start_s = parse_seconds(fields[4], line_no, "clip_start_s");
    e.clip_end_s = parse_seconds(fields[5], line_no, "clip_end_s");
    if (std::abs((e.clip_end_s - e.clip_start_s) - clip_duration_s) > 1e-6) {
      throw DataError("manifest row " + std::to_string(line_no) +
                      ": clip duration " +
                      std::to_string(e.clip_end_s - e.clip_start_s) +
                      " s differs from configured " +
                      std::to_string(clip_duration_s) + " s");
    }
    fs::path video(fields[2]);
    e.video_path = (video.is_absolute() ? video : base / video).lexically_normal();
    if (!fs::exists(e.video_path)) {
      throw DataError("manifest row " + std::to_string(line_no) +
                      ": video not found '" + e.video_path.string() + "'");
    }
    if (!ids.insert(e.clip_id).second) {
      throw DataError("manifest row " + std::to_string(line_no) +
                      ": duplicate clip_id '" + e.clip_id + "'");
    }
    manifest.entries.push_back(std::move(e));
  }
  return manifest;
}

void save_manifest(const DatasetManifest& manifest, const fs::path& path) {
  const fs::path base = fs::absolute(path).parent_path();
  std::ofstream out(path);
  if (!out) throw DataError("cannot write manifest: " + path.string());
  out << kManifestHeader << '\n';
  out.precision(17);
  for (const auto& e : manifest.entries) {
    fs::path video = e.video_path;
    if (video.is_absolute()) {
      const fs::path rel = video.lexically_relative(base);
      if (!rel.empty()) video = rel;
    }
    out << csv_escape(e.clip_id) << ',' << csv_escape(e.infant_id) << ','
        << csv_escape(video.generic_string()) << ',' << to_string(e.label)
        << ',' << e.clip_start_s << ',' << e.clip_end_s << '\n';
  }
}

// ---------------------------------------------------------------------------
// Config
// ---------------------------------------------------------------------------

void PipelineConfig::validate() const {
  auto fail = [](const std::string& what) { throw UsageError(what); };
  if (!(target_fps > 0.0)) fail("target_fps must be positive");
  if (chunk_length <= 0) fail("chunk_length must be positive");
  if (chunk_length % 2 != 0) fail("chunk_length must be even");
  if (chunk_stride <= 0) fail("chunk_stride must be positive");
  if (crop_size <= 0) fail("crop_size must be positive");
  if (!(alpha > 0.0) || !std::isfinite(alpha)) fail("alpha must be positive");
  if (!(flow_clip_bound > 0.0)) fail("flow_clip_bound must be positive");
  if (!(mask_threshold >= 0.0 && mask_threshold <= 1.0)) {
    fail("mask_threshold must lie in [0, 1]");
  }
  if (!(min_conf >= 0.0 && min_conf <= 1.0)) fail("min_conf must lie in [0, 1]");
  if (!(clip_duration_s > 0.0)) fail("clip_duration_s must be positive");
  if (backbone != "tiny" && backbone != "resnet50") {
    fail("backbone must be 'tiny' or 'resnet50'");
  }
  if (stream_mode != "two_stream" && stream_mode != "spatial_only" &&
      stream_mode != "temporal_only") {
    fail("stream_mode must be two_stream, spatial_only or temporal_only");
  }
  if (!(learning_rate > 0.0)) fail("learning_rate must be positive");
  if (weight_decay < 0.0) fail("weight_decay must be non-negative");
  if (batch_size <= 0) fail("batch_size must be positive");
  if (epochs < 0) fail("epochs must be non-negative");
  if (!(flip_prob >= 0.0 && flip_prob <= 1.0)) fail("flip_prob must lie in [0, 1]");
  if (folds < 2) fail("folds must be at least 2");
  if (workers < 1) fail("workers must be at least 1");
}

#define GMA_CONFIG_FIELDS(X)                                             \
  X(target_fps) X(chunk_length) X(chunk_stride) X(crop_size) X(alpha)    \
  X(flow_clip_bound) X(mask_threshold) X(enable_extractor)               \
  X(enable_adjuster) X(seed) X(pad_last_chunk) X(min_conf)               \
  X(clip_duration_s) X(segmentation_backend) X(pose_backend) X(backbone) \
  X(backbone_weights) X(stream_mode) X(learning_rate) X(weight_decay)    \
  X(batch_size) X(epochs) X(flip_prob) X(folds) X(workers)

void to_json(nlohmann::json& j, const PipelineConfig& c) {
  j = nlohmann::json::object();
#define GMA_WRITE(name) j[#name] = c.name;
  GMA_CONFIG_FIELDS(GMA_WRITE)
#undef GMA_WRITE
}

void from_json(const nlohmann::json& j, PipelineConfig& c) {
  if (!j.is_object()) throw UsageError("config must be a JSON object");
  std::set<std::string> known;
#define GMA_READ(name)                                                  \
  known.insert(#name);                                                  \
  if (j.contains(#name)) {                                              \
    try {                                                               \
      j.at(#name).get_to(c.name);                                       \
    } catch (const nlohmann::json::exception&) {                        \
      throw UsageError("config key '" #name "' has the wrong type");    \
    }                                                                   \
  }
  GMA_CONFIG_FIELDS(GMA_READ)
#undef GMA_READ
  for (const auto& [key, value] : j.items()) {
    if (!known.contains(key)) throw UsageError("unknown config key '" + key + "'");
  }
}

#undef GMA_CONFIG_FIELDS

PipelineConfig load_config(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw UsageError("cannot open config: " + path.string());
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::parse_error& e) {
    throw UsageError("config is not valid JSON: " + std::string(e.what()));
  }
  PipelineConfig config = j.get<PipelineConfig>();
  config.validate();
  return config;
}

void save_config(const PipelineConfig& config, const fs::path& path) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write config: " + path.string());
  out << nlohmann::json(config).dump(2) << '\n';
}

std::string fnv1a_hex(std::string_view bytes) {
  std::uint64_t h = 0xcbf29ce484222325ull;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 0x100000001b3ull;
  }
  static constexpr char kHex[] = "0123456789abcdef";
  std::string out(16, '0');
  for (int i = 15; i >= 0; --i) {
    out[i] = kHex[h & 0xf];
    h >>= 4;
  }
  return out;
}

}  // namespace gma
