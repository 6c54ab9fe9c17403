#include "gma/video_io.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>

#include <opencv2/imgcodecs.hpp>
#include <opencv2/imgproc.hpp>
#include <opencv2/videoio.hpp>

#include "gma/errors.hpp"

namespace gma {

SequenceIndex read_sequence_index(const fs::path& index_path) {
  std::ifstream in(index_path);
  if (!in) throw DataError("cannot open sequence index " + index_path.string());
  SequenceIndex idx;
  try {
    nlohmann::json j;
    in >> j;
    idx.fps = j.at("fps").get<double>();
    idx.width = j.at("width").get<int>();
    idx.height = j.at("height").get<int>();
    idx.frame_count = j.at("frame_count").get<int>();
    idx.frame_pattern = j.value("frame_pattern", idx.frame_pattern);
    if (j.contains("ground_truth")) idx.ground_truth = j["ground_truth"].get<std::string>();
    if (j.contains("mask_pattern")) idx.mask_pattern = j["mask_pattern"].get<std::string>();
  } catch (const nlohmann::json::exception& e) {
    throw DataError("malformed sequence index " + index_path.string() + ": " +
                    e.what());
  }
  return idx;
}

void write_sequence_index(const SequenceIndex& idx, const fs::path& index_path) {
  nlohmann::json j = {{"fps", idx.fps},
                      {"width", idx.width},
                      {"height", idx.height},
                      {"frame_count", idx.frame_count},
                      {"frame_pattern", idx.frame_pattern}};
  if (idx.ground_truth) j["ground_truth"] = *idx.ground_truth;
  if (idx.mask_pattern) j["mask_pattern"] = *idx.mask_pattern;
  std::ofstream out(index_path);
  if (!out) throw DataError("cannot write " + index_path.string());
  out << j.dump(2) << '\n';
}

std::string format_pattern(const std::string& pattern, int index) {
  char buf[512];
  std::snprintf(buf, sizeof(buf), pattern.c_str(), index);
  return buf;
}

FrameWindow frame_window(double fps, double start_s, double end_s) {
  return {static_cast<int>(std::lround(start_s * fps)),
          static_cast<int>(std::lround(end_s * fps))};
}

cv::Mat read_rgb(const fs::path& path) {
  cv::Mat bgr = cv::imread(path.string(), cv::IMREAD_COLOR);
  if (bgr.empty()) throw DataError("cannot decode image " + path.string());
  cv::Mat rgb;
  cv::cvtColor(bgr, rgb, cv::COLOR_BGR2RGB);
  return rgb;
}

void write_rgb(const fs::path& path, const cv::Mat& rgb) {
  cv::Mat bgr;
  cv::cvtColor(rgb, bgr, cv::COLOR_RGB2BGR);
  if (!cv::imwrite(path.string(), bgr)) {
    throw DataError("cannot write image " + path.string());
  }
}

VideoClip load_video(const fs::path& path, double start_s, double end_s,
                     std::string clip_id, std::string infant_id) {
  if (!(end_s > start_s) || start_s < 0.0) {
    throw DataError("invalid clip window for " + path.string());
  }
  VideoClip clip;
  clip.clip_id = std::move(clip_id);
  clip.infant_id = std::move(infant_id);

  if (path.extension() == ".json") {
    const SequenceIndex idx = read_sequence_index(path);
    const FrameWindow win = frame_window(idx.fps, start_s, end_s);
    if (win.end > idx.frame_count) {
      throw DataError("clip window exceeds " + path.string() + " (" +
                      std::to_string(idx.frame_count) + " frames)");
    }
    clip.fps = idx.fps;
    const fs::path dir = path.parent_path();
    for (int i = win.begin; i < win.end; ++i) {
      clip.frames.push_back(read_rgb(dir / format_pattern(idx.frame_pattern, i)));
    }
  } else {
    cv::VideoCapture cap(path.string());
    if (!cap.isOpened()) throw DataError("cannot open video " + path.string());
    clip.fps = cap.get(cv::CAP_PROP_FPS);
    if (!(clip.fps > 0.0)) throw DataError("video reports no frame rate: " + path.string());
    const FrameWindow win = frame_window(clip.fps, start_s, end_s);
    cv::Mat bgr;
    for (int i = 0; i < win.end; ++i) {
      if (!cap.read(bgr)) {
        throw DataError("clip window exceeds video length of " + path.string());
      }
      if (i < win.begin) continue;
      cv::Mat rgb;
      cv::cvtColor(bgr, rgb, cv::COLOR_BGR2RGB);
      clip.frames.push_back(std::move(rgb));
    }
  }
  clip.validate();
  return clip;
}

fs::path write_sequence(const VideoClip& clip, const fs::path& dir,
                        const SequenceIndex& extra) {
  clip.validate();
  fs::create_directories(dir);
  SequenceIndex idx = extra;
  idx.fps = clip.fps;
  idx.width = clip.width();
  idx.height = clip.height();
  idx.frame_count = static_cast<int>(clip.size());
  for (std::size_t i = 0; i < clip.size(); ++i) {
    write_rgb(dir / format_pattern(idx.frame_pattern, static_cast<int>(i)),
              clip.frames[i]);
  }
  const fs::path index_path = dir / "clip.json";
  write_sequence_index(idx, index_path);
  return index_path;
}

}  // namespace gma
