#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <opencv2/core.hpp>

#include "json.hpp"

namespace gma {

namespace fs = std::filesystem;

// ---------------------------------------------------------------------------
// Labels
// ---------------------------------------------------------------------------

/// General-movement class. The enum order is the canonical class order used
/// for score vectors, confusion matrices and argmax tie-breaking.
enum class GmsLabel : int { WM = 0, FM = 1, PR = 2 };

inline constexpr int kNumClasses = 3;
inline constexpr std::array<GmsLabel, kNumClasses> kAllLabels = {
    GmsLabel::WM, GmsLabel::FM, GmsLabel::PR};

std::string_view to_string(GmsLabel label);
std::optional<GmsLabel> parse_label(std::string_view text);

/// WM and FM are normal movements, PR is the abnormal class.
inline bool is_normal(GmsLabel label) { return label != GmsLabel::PR; }

inline int index_of(GmsLabel label) { return static_cast<int>(label); }
GmsLabel label_from_index(int index);

// ---------------------------------------------------------------------------
// Video clip
// ---------------------------------------------------------------------------

/// A decoded clip. Frames are CV_8UC3 in RGB channel order and share one
/// size.
struct VideoClip {
  std::vector<cv::Mat> frames;
  double fps = 0.0;
  std::string infant_id;
  std::string clip_id;

  std::size_t size() const { return frames.size(); }
  bool empty() const { return frames.empty(); }
  int width() const { return frames.empty() ? 0 : frames.front().cols; }
  int height() const { return frames.empty() ? 0 : frames.front().rows; }
  cv::Size frame_size() const { return {width(), height()}; }

  /// Throws DataError when the invariants (non-empty, fps > 0, uniform
  /// 8-bit 3-channel frames) do not hold.
  void validate() const;

  /// Copy of the metadata with a new frame list.
  VideoClip with_frames(std::vector<cv::Mat> new_frames) const;
};

/// Keeps every (fps / target_fps)-th frame starting at index 0. Throws
/// UsageError when target_fps <= 0, exceeds the source rate, or does not
/// divide it to within 1e-6.
VideoClip resample_fps(const VideoClip& clip, double target_fps);

/// Integer decimation step used by resample_fps; exposed so per-frame
/// side data (ground truth) can be decimated identically.
int decimation_step(double source_fps, double target_fps);

// ---------------------------------------------------------------------------
// Dataset manifest
// ---------------------------------------------------------------------------

struct ManifestEntry {
  std::string clip_id;
  std::string infant_id;
  fs::path video_path;  // absolute after load
  GmsLabel label = GmsLabel::WM;
  double clip_start_s = 0.0;
  double clip_end_s = 0.0;

  bool operator==(const ManifestEntry&) const = default;
};

struct DatasetManifest {
  std::vector<ManifestEntry> entries;

  const ManifestEntry* find(std::string_view clip_id) const;
  std::vector<std::string> infant_ids() const;
};

inline constexpr std::string_view kManifestHeader =
    "clip_id,infant_id,video_path,label,clip_start_s,clip_end_s";

/// Parses and validates a manifest CSV. Relative video paths resolve against
/// the manifest's directory. Errors are DataError and name the 1-based line.
DatasetManifest load_manifest(const fs::path& path,
                              double clip_duration_s = 60.0);

/// Writes video paths relative to the manifest's directory when possible.
void save_manifest(const DatasetManifest& manifest, const fs::path& path);

// ---------------------------------------------------------------------------
// Configuration
// ---------------------------------------------------------------------------

struct PipelineConfig {
  // Preprocessing
  double target_fps = 6.0;
  int chunk_length = 30;  // L
  int chunk_stride = 30;  // tau
  int crop_size = 224;    // W = H
  double alpha = 0.8;
  double flow_clip_bound = 20.0;
  double mask_threshold = 0.5;
  bool enable_extractor = true;
  bool enable_adjuster = true;
  std::uint64_t seed = 0;

  bool pad_last_chunk = true;
  double min_conf = 0.3;
  double clip_duration_s = 60.0;
  std::string segmentation_backend = "ground_truth";
  std::string pose_backend = "ground_truth";

  // Model and training
  std::string backbone = "tiny";  // tiny | resnet50
  std::string backbone_weights;   // optional tensor archive for resnet50
  std::string stream_mode = "two_stream";
  double learning_rate = 1e-5;
  double weight_decay = 1e-2;
  int batch_size = 8;
  int epochs = 30;
  double flip_prob = 0.5;
  int folds = 5;
  int workers = 1;

  /// Throws UsageError on violated invariants (L even and positive, ...).
  void validate() const;
};

void to_json(nlohmann::json& j, const PipelineConfig& config);
/// Missing keys keep their defaults; unknown keys are rejected.
void from_json(const nlohmann::json& j, PipelineConfig& config);

PipelineConfig load_config(const fs::path& path);
void save_config(const PipelineConfig& config, const fs::path& path);

/// 64-bit FNV-1a over a byte string, rendered as 16 hex digits.
std::string fnv1a_hex(std::string_view bytes);

}  // namespace gma
