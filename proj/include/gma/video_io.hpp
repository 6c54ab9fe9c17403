#pragma once

#include <optional>
#include <string>

#include "gma/core.hpp"

namespace gma {

/// Frame-sequence index written next to lossless PNG frames:
///   {"fps", "width", "height", "frame_count", "frame_pattern",
///    "ground_truth"?, "mask_pattern"?}
struct SequenceIndex {
  double fps = 0.0;
  int width = 0;
  int height = 0;
  int frame_count = 0;
  std::string frame_pattern = "frame_%06d.png";
  std::optional<std::string> ground_truth;  // relative path
  std::optional<std::string> mask_pattern;  // relative printf pattern
};

SequenceIndex read_sequence_index(const fs::path& index_path);
void write_sequence_index(const SequenceIndex& index, const fs::path& index_path);

std::string format_pattern(const std::string& pattern, int index);

/// Half-open frame index range [begin, end) covering [start_s, end_s) at the
/// given rate.
struct FrameWindow {
  int begin = 0;
  int end = 0;
};
FrameWindow frame_window(double fps, double start_s, double end_s);

/// Loads frames of [start_s, end_s) from either a sequence index (".json")
/// or any container OpenCV can decode. Frames come back in RGB order.
VideoClip load_video(const fs::path& path, double start_s, double end_s,
                     std::string clip_id = {}, std::string infant_id = {});

/// Writes frames as PNGs plus "clip.json" in `dir`; returns the index path.
fs::path write_sequence(const VideoClip& clip, const fs::path& dir,
                        const SequenceIndex& extra = {});

/// RGB <-> PNG helpers.
cv::Mat read_rgb(const fs::path& path);
void write_rgb(const fs::path& path, const cv::Mat& rgb);

}  // namespace gma
