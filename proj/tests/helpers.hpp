#pragma once

#include <filesystem>
#include <random>
#include <string>

#include <opencv2/core.hpp>

#include "gma/core.hpp"

namespace test {

// Fresh directory under the system temp dir, removed on destruction.
class TempDir {
 public:
  explicit TempDir(const std::string& tag) {
    std::random_device rd;
    path_ = std::filesystem::temp_directory_path() /
            ("gma_" + tag + "_" + std::to_string(rd()) + std::to_string(rd()));
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  const std::filesystem::path& path() const { return path_; }
  std::filesystem::path operator/(const std::string& name) const { return path_ / name; }

 private:
  std::filesystem::path path_;
};

inline cv::Mat noise_frame(int h, int w, unsigned seed) {
  cv::Mat m(h, w, CV_8UC3);
  cv::RNG(seed).fill(m, cv::RNG::UNIFORM, 0, 256);
  return m;
}

inline gma::VideoClip noise_clip(int frames, int h, int w, double fps, unsigned seed = 1) {
  gma::VideoClip c;
  c.fps = fps;
  c.clip_id = "c";
  c.infant_id = "i";
  for (int i = 0; i < frames; ++i) c.frames.push_back(noise_frame(h, w, seed + i));
  return c;
}

inline bool same_pixels(const cv::Mat& a, const cv::Mat& b) {
  if (a.size() != b.size() || a.type() != b.type()) return false;
  return cv::norm(a, b, cv::NORM_INF) == 0.0;
}

}  // namespace test
