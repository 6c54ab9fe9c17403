#pragma once

#include <memory>
#include <mutex>
#include <string>
#include <vector>

#include <opencv2/core.hpp>
#include <opencv2/dnn.hpp>

#include "gma/core.hpp"

namespace gma {

/// Per-frame saliency in [0, 1]; CV_32F with the source frame's size.
struct SaliencyMask {
  cv::Mat values;
  int frame_index = 0;
};

/// Produces a saliency map for one frame. Implementations must be
/// deterministic and safe for concurrent const use.
class SegmentationBackend {
 public:
  virtual ~SegmentationBackend() = default;
  virtual std::string name() const = 0;
  virtual SaliencyMask infer(const cv::Mat& frame, int frame_index) const = 0;
};

/// Replays known masks (e.g. the synthetic generator's silhouettes) by
/// frame index. Masks may be 8-bit (0/255) or float in [0, 1].
class GroundTruthSegmentation final : public SegmentationBackend {
 public:
  explicit GroundTruthSegmentation(std::vector<cv::Mat> masks);
  std::string name() const override { return "ground_truth"; }
  SaliencyMask infer(const cv::Mat& frame, int frame_index) const override;

 private:
  std::vector<cv::Mat> masks_;
};

/// Background-difference saliency: |luma(frame) - luma(background)| / 255,
/// box-blurred 5x5 and divided by its maximum (all zero when the frame
/// matches the background everywhere).
class LuminanceSegmentation final : public SegmentationBackend {
 public:
  explicit LuminanceSegmentation(cv::Mat background_luma);
  std::string name() const override { return "luminance"; }
  SaliencyMask infer(const cv::Mat& frame, int frame_index) const override;

  const cv::Mat& background() const { return background_; }

 private:
  cv::Mat background_;  // CV_32F
};

/// Background model = per-pixel temporal median of luma over at most
/// `max_samples` evenly spaced frames.
std::unique_ptr<SegmentationBackend> luminance_baseline_backend(
    const VideoClip& clip, int max_samples = 51);

/// Salient-object network loaded through OpenCV's DNN module (e.g. an ONNX
/// export of U^2-Net). The first output channel is taken as saliency,
/// min-max normalized and resized back to the frame.
class DnnSegmentation final : public SegmentationBackend {
 public:
  explicit DnnSegmentation(const fs::path& model_path, int input_size = 320);
  std::string name() const override { return "model:" + path_.string(); }
  SaliencyMask infer(const cv::Mat& frame, int frame_index) const override;

 private:
  fs::path path_;
  int input_size_;
  mutable std::mutex mutex_;
  mutable cv::dnn::Net net_;
};

/// Masks every frame: pixels with saliency >= threshold keep their RGB value,
/// all others become (0, 0, 0). Backend failures abort with the frame index.
VideoClip extract_body(const VideoClip& clip, const SegmentationBackend& backend,
                       double threshold);

}  // namespace gma
