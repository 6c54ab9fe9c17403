#include "gma/segmentation.hpp"

#include <algorithm>

#include <opencv2/imgproc.hpp>

#include "gma/errors.hpp"
#include "gma/flow.hpp"

namespace gma {

GroundTruthSegmentation::GroundTruthSegmentation(std::vector<cv::Mat> masks)
    : masks_(std::move(masks)) {}

SaliencyMask GroundTruthSegmentation::infer(const cv::Mat& frame,
                                            int frame_index) const {
  if (frame_index < 0 || frame_index >= static_cast<int>(masks_.size())) {
    throw Error("no ground-truth mask for frame " + std::to_string(frame_index));
  }
  const cv::Mat& m = masks_[frame_index];
  if (m.size() != frame.size()) {
    throw Error("ground-truth mask size differs from frame");
  }
  SaliencyMask out{{}, frame_index};
  if (m.depth() == CV_8U) {
    m.convertTo(out.values, CV_32F, 1.0 / 255.0);
  } else {
    m.convertTo(out.values, CV_32F);
  }
  return out;
}

LuminanceSegmentation::LuminanceSegmentation(cv::Mat background_luma)
    : background_(std::move(background_luma)) {
  CV_Assert(background_.type() == CV_32F);
}

SaliencyMask LuminanceSegmentation::infer(const cv::Mat& frame,
                                          int frame_index) const {
  if (frame.size() != background_.size()) {
    throw Error("frame size differs from the background model");
  }
  cv::Mat diff;
  cv::absdiff(luma(frame), background_, diff);
  diff *= 1.0 / 255.0;
  cv::blur(diff, diff, cv::Size(5, 5), cv::Point(-1, -1), cv::BORDER_REPLICATE);
  double max_value = 0.0;
  cv::minMaxLoc(diff, nullptr, &max_value);
  if (max_value > 1e-6) {
    diff *= 1.0 / max_value;
  } else {
    diff.setTo(0.0f);
  }
  return {diff, frame_index};
}

std::unique_ptr<SegmentationBackend> luminance_baseline_backend(
    const VideoClip& clip, int max_samples) {
  clip.validate();
  const int t = static_cast<int>(clip.size());
  const int n = std::min(t, std::max(1, max_samples));
  std::vector<cv::Mat> samples;
  samples.reserve(n);
  for (int i = 0; i < n; ++i) {
    const int idx = n == 1 ? 0 : static_cast<int>(
                                     static_cast<long long>(i) * (t - 1) / (n - 1));
    samples.push_back(luma(clip.frames[idx]));
  }
  cv::Mat background(clip.frame_size(), CV_32F);
  std::vector<float> column(n);
  for (int y = 0; y < background.rows; ++y) {
    for (int x = 0; x < background.cols; ++x) {
      for (int i = 0; i < n; ++i) column[i] = samples[i].at<float>(y, x);
      auto mid = column.begin() + n / 2;
      std::nth_element(column.begin(), mid, column.end());
      float median = *mid;
      if (n % 2 == 0) {
        const float lower = *std::max_element(column.begin(), mid);
        median = 0.5f * (median + lower);
      }
      background.at<float>(y, x) = median;
    }
  }
  return std::make_unique<LuminanceSegmentation>(background);
}

DnnSegmentation::DnnSegmentation(const fs::path& model_path, int input_size)
    : path_(model_path), input_size_(input_size) {
  if (!fs::exists(path_)) {
    throw DataError("segmentation model not found: " + path_.string());
  }
  net_ = cv::dnn::readNet(path_.string());
  if (net_.empty()) {
    throw DataError("cannot load segmentation model: " + path_.string());
  }
}

SaliencyMask DnnSegmentation::infer(const cv::Mat& frame,
                                    int frame_index) const {
  cv::Mat input;
  frame.convertTo(input, CV_32F, 1.0 / 255.0);
  cv::resize(input, input, cv::Size(input_size_, input_size_), 0, 0,
             cv::INTER_LINEAR);
  cv::subtract(input, cv::Scalar(0.485, 0.456, 0.406), input);
  cv::divide(input, cv::Scalar(0.229, 0.224, 0.225), input);
  cv::Mat blob = cv::dnn::blobFromImage(input);

  cv::Mat out;
  {
    std::lock_guard lock(mutex_);
    net_.setInput(blob);
    out = net_.forward();
  }
  if (out.dims != 4 || out.size[2] <= 0 || out.size[3] <= 0) {
    throw Error("unexpected segmentation output shape");
  }
  cv::Mat sal(out.size[2], out.size[3], CV_32F, out.ptr<float>(0, 0));
  sal = sal.clone();
  double lo = 0.0;
  double hi = 0.0;
  cv::minMaxLoc(sal, &lo, &hi);
  if (hi - lo > 1e-12) {
    sal = (sal - lo) / (hi - lo);
  } else {
    sal.setTo(0.0f);
  }
  cv::resize(sal, sal, frame.size(), 0, 0, cv::INTER_LINEAR);
  return {cv::min(cv::max(sal, 0.0), 1.0), frame_index};
}

VideoClip extract_body(const VideoClip& clip, const SegmentationBackend& backend,
                       double threshold) {
  if (!(threshold >= 0.0 && threshold <= 1.0)) {
    throw UsageError("mask threshold must lie in [0, 1]");
  }
  std::vector<cv::Mat> out;
  out.reserve(clip.size());
  for (std::size_t i = 0; i < clip.size(); ++i) {
    const cv::Mat& frame = clip.frames[i];
    SaliencyMask mask;
    try {
      mask = backend.infer(frame, static_cast<int>(i));
    } catch (const std::exception& e) {
      throw Error("segmentation backend '" + backend.name() +
                  "' failed at frame " + std::to_string(i) + ": " + e.what());
    }
    if (mask.values.size() != frame.size() || mask.values.type() != CV_32F) {
      throw Error("segmentation backend '" + backend.name() +
                  "' returned a malformed mask at frame " + std::to_string(i));
    }
    cv::Mat keep = mask.values >= threshold;
    cv::Mat masked = cv::Mat::zeros(frame.size(), frame.type());
    frame.copyTo(masked, keep);
    out.push_back(std::move(masked));
  }
  return clip.with_frames(std::move(out));
}

}  // namespace gma
