#pragma once

#include <array>
#include <mutex>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <opencv2/core.hpp>
#include <opencv2/dnn.hpp>

#include "gma/core.hpp"

namespace gma {

// Geometry conventions: image coordinates with x to the right and y down,
// pixel centers at integer positions. A frame's geometric center is
// ((W - 1) / 2, (H - 1) / 2).

enum class Joint : int { LeftShoulder = 0, RightShoulder = 1, LeftHip = 2, RightHip = 3 };
inline constexpr double kDefaultMinConf = 0.3;

struct PoseEstimate {
  std::array<cv::Point2d, 4> joints{};
  std::array<double, 4> confidence{};

  const cv::Point2d& operator[](Joint j) const { return joints[static_cast<int>(j)]; }
  cv::Point2d& operator[](Joint j) { return joints[static_cast<int>(j)]; }

  /// All joints at or above min_conf and, when bounds are given, inside them.
  bool valid(double min_conf, std::optional<cv::Size> bounds = std::nullopt) const;
  PoseEstimate transformed(const cv::Matx23d& affine) const;
};

/// theta_deg is the angle of (hip midpoint - shoulder midpoint) measured from
/// the image's downward vertical, positive toward image-right, in (-180, 180].
struct BodyAxisMeasurement {
  double theta_deg = 0.0;
  cv::Point2d center;
  double length = 0.0;
  bool valid = false;
};

struct AdjustmentParams {
  double theta0 = 0.0;      // step-1 angle from the first valid frame
  double theta_bar = 0.0;   // robust step-2 angle
  cv::Point2d center_bar;   // step-2 center mapped through the theta_bar rotation
  double length_bar = 0.0;
  double crop_side = 0.0;   // 3 * length_bar / alpha
  double alpha = 0.8;
  int reference_frame = 0;
  double valid_frame_fraction = 0.0;

  /// {theta0, theta_bar, center_bar, length_bar, R, valid_frame_fraction}
  nlohmann::json report() const;
};

/// Where a frame handed to a pose backend came from: its index in the clip
/// and the affine map from the clip's original pixel coordinates into the
/// frame's. Model-based backends ignore it; the ground-truth backend uses it
/// to place known joints.
struct FrameContext {
  int frame_index = 0;
  cv::Matx23d source_to_frame = cv::Matx23d(1, 0, 0, 0, 1, 0);
};

class PoseBackend {
 public:
  virtual ~PoseBackend() = default;
  virtual std::string name() const = 0;
  virtual PoseEstimate infer(const cv::Mat& frame, const FrameContext& ctx) const = 0;
};

/// Known per-frame joints in source coordinates, mapped through the context
/// transform.
class GroundTruthPose final : public PoseBackend {
 public:
  explicit GroundTruthPose(std::vector<PoseEstimate> source_poses);
  std::string name() const override { return "ground_truth"; }
  PoseEstimate infer(const cv::Mat& frame, const FrameContext& ctx) const override;

 private:
  std::vector<PoseEstimate> poses_;
};

/// OpenPose-style COCO body model loaded through OpenCV's DNN module. Takes
/// the heatmap peaks of shoulders (2, 5) and hips (8, 11); peak value is the
/// joint confidence.
class DnnPose final : public PoseBackend {
 public:
  DnnPose(const fs::path& weights, const fs::path& config = {}, int input_size = 368);
  std::string name() const override { return "model:" + weights_.string(); }
  PoseEstimate infer(const cv::Mat& frame, const FrameContext& ctx) const override;

 private:
  fs::path weights_;
  int input_size_;
  mutable std::mutex mutex_;
  mutable cv::dnn::Net net_;
};

BodyAxisMeasurement body_axis(const PoseEstimate& pose,
                              double min_conf = kDefaultMinConf,
                              std::optional<cv::Size> bounds = std::nullopt);

/// Mean of the samples inside [Q1, Q3], with quartiles by linear
/// interpolation on the sorted sample; the median if that set is empty.
/// Throws UsageError for empty or non-finite input.
double interquartile_mean(std::span<const double> values);

cv::Point2d frame_center(cv::Size size);
cv::Point2d apply_affine(const cv::Matx23d& a, const cv::Point2d& p);
/// (outer o inner)(p) = outer(inner(p)).
cv::Matx23d compose(const cv::Matx23d& outer, const cv::Matx23d& inner);

/// Rotation about `center` that maps a body axis at theta_deg to 0.
cv::Matx23d rotation_about(double theta_deg, const cv::Point2d& center);

/// Rotates each frame about its center by -theta (in the body-axis angle
/// convention) with bilinear sampling and black fill; size unchanged.
VideoClip rotate_frames(const VideoClip& clip, double theta_deg);

/// Two-step estimate: rotate by the first valid frame's angle, then
/// interquartile means of per-frame angle, center and length on the rotated
/// frames. Throws DataError when no frame yields a valid pose.
AdjustmentParams estimate_adjustment(const VideoClip& clip, const PoseBackend& backend,
                                     double alpha, double min_conf = kDefaultMinConf);

/// Affine map from source pixels to the out_size x out_size output:
/// rotation by theta0 + theta_bar about the frame center, then the square of
/// side R centered on center_bar scaled onto the output grid.
cv::Matx23d adjustment_transform(const AdjustmentParams& params, cv::Size frame,
                                 int out_size);

/// Rotate, crop (padding black outside the canvas) and bilinearly resize.
VideoClip apply_adjustment(const VideoClip& clip, const AdjustmentParams& params,
                           int out_size);

}  // namespace gma
