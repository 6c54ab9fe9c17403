#include "gma/pose_align.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include <opencv2/imgproc.hpp>

#include "gma/errors.hpp"

namespace gma {

namespace {

constexpr double kDegToRad = std::numbers::pi / 180.0;
constexpr double kRadToDeg = 180.0 / std::numbers::pi;

double quantile_sorted(const std::vector<double>& sorted, double q) {
  const double pos = q * static_cast<double>(sorted.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const auto hi = std::min(lo + 1, sorted.size() - 1);
  const double frac = pos - static_cast<double>(lo);
  return sorted[lo] + frac * (sorted[hi] - sorted[lo]);
}

}  // namespace

bool PoseEstimate::valid(double min_conf, std::optional<cv::Size> bounds) const {
  for (int i = 0; i < 4; ++i) {
    if (!(confidence[i] >= min_conf)) return false;
    const auto& p = joints[i];
    if (!std::isfinite(p.x) || !std::isfinite(p.y)) return false;
    if (bounds && (p.x < -0.5 || p.y < -0.5 || p.x > bounds->width - 0.5 ||
                   p.y > bounds->height - 0.5)) {
      return false;
    }
  }
  return true;
}

PoseEstimate PoseEstimate::transformed(const cv::Matx23d& affine) const {
  PoseEstimate out = *this;
  for (auto& p : out.joints) p = apply_affine(affine, p);
  return out;
}

nlohmann::json AdjustmentParams::report() const {
  return {{"theta0", theta0},
          {"theta_bar", theta_bar},
          {"center_bar", {center_bar.x, center_bar.y}},
          {"length_bar", length_bar},
          {"R", crop_side},
          {"alpha", alpha},
          {"reference_frame", reference_frame},
          {"valid_frame_fraction", valid_frame_fraction}};
}

// ---------------------------------------------------------------------------
// Backends
// ---------------------------------------------------------------------------

GroundTruthPose::GroundTruthPose(std::vector<PoseEstimate> source_poses)
    : poses_(std::move(source_poses)) {}

PoseEstimate GroundTruthPose::infer(const cv::Mat& /*frame*/,
                                    const FrameContext& ctx) const {
  if (ctx.frame_index < 0 || ctx.frame_index >= static_cast<int>(poses_.size())) {
    throw Error("no ground-truth pose for frame " + std::to_string(ctx.frame_index));
  }
  return poses_[ctx.frame_index].transformed(ctx.source_to_frame);
}

DnnPose::DnnPose(const fs::path& weights, const fs::path& config, int input_size)
    : weights_(weights), input_size_(input_size) {
  if (!fs::exists(weights_)) {
    throw DataError("pose model not found: " + weights_.string());
  }
  net_ = cv::dnn::readNet(weights_.string(), config.empty() ? "" : config.string());
  if (net_.empty()) throw DataError("cannot load pose model: " + weights_.string());
}

PoseEstimate DnnPose::infer(const cv::Mat& frame, const FrameContext&) const {
  // Frames are RGB; the network expects BGR, hence swapRB.
  cv::Mat blob = cv::dnn::blobFromImage(frame, 1.0 / 255.0,
                                        cv::Size(input_size_, input_size_),
                                        cv::Scalar(0, 0, 0), true, false);
  cv::Mat out;
  {
    std::lock_guard lock(mutex_);
    net_.setInput(blob);
    out = net_.forward();
  }
  if (out.dims != 4 || out.size[1] < 12) {
    throw Error("unexpected pose network output shape");
  }
  const int h = out.size[2];
  const int w = out.size[3];
  // COCO order: 2 RShoulder, 5 LShoulder, 8 RHip, 11 LHip.
  constexpr std::array<int, 4> kChannels = {5, 2, 11, 8};
  PoseEstimate pose;
  for (int j = 0; j < 4; ++j) {
    cv::Mat heat(h, w, CV_32F, out.ptr<float>(0, kChannels[j]));
    double peak = 0.0;
    cv::Point loc;
    cv::minMaxLoc(heat, nullptr, &peak, nullptr, &loc);
    pose.joints[j] = {(loc.x + 0.5) * frame.cols / w - 0.5,
                      (loc.y + 0.5) * frame.rows / h - 0.5};
    pose.confidence[j] = std::clamp(peak, 0.0, 1.0);
  }
  return pose;
}

// ---------------------------------------------------------------------------
// Geometry
// ---------------------------------------------------------------------------

BodyAxisMeasurement body_axis(const PoseEstimate& pose, double min_conf,
                              std::optional<cv::Size> bounds) {
  BodyAxisMeasurement m;
  if (!pose.valid(min_conf, bounds)) return m;
  const cv::Point2d shoulders =
      0.5 * (pose[Joint::LeftShoulder] + pose[Joint::RightShoulder]);
  const cv::Point2d hips = 0.5 * (pose[Joint::LeftHip] + pose[Joint::RightHip]);
  const cv::Point2d axis = hips - shoulders;
  m.length = std::hypot(axis.x, axis.y);
  if (!(m.length > 0.0)) return m;
  m.theta_deg = std::atan2(axis.x, axis.y) * kRadToDeg;
  if (m.theta_deg <= -180.0) m.theta_deg += 360.0;
  m.center = 0.5 * (shoulders + hips);
  m.valid = true;
  return m;
}

double interquartile_mean(std::span<const double> values) {
  if (values.empty()) throw UsageError("interquartile mean of an empty sample");
  std::vector<double> sorted(values.begin(), values.end());
  for (double v : sorted) {
    if (!std::isfinite(v)) throw UsageError("interquartile mean of non-finite values");
  }
  std::sort(sorted.begin(), sorted.end());
  const double q1 = quantile_sorted(sorted, 0.25);
  const double q3 = quantile_sorted(sorted, 0.75);
  double sum = 0.0;
  int count = 0;
  for (double v : sorted) {
    if (v >= q1 && v <= q3) {
      sum += v;
      ++count;
    }
  }
  if (count == 0) return quantile_sorted(sorted, 0.5);
  return sum / count;
}

cv::Point2d frame_center(cv::Size size) {
  return {(size.width - 1) / 2.0, (size.height - 1) / 2.0};
}

cv::Point2d apply_affine(const cv::Matx23d& a, const cv::Point2d& p) {
  return {a(0, 0) * p.x + a(0, 1) * p.y + a(0, 2),
          a(1, 0) * p.x + a(1, 1) * p.y + a(1, 2)};
}

cv::Matx23d compose(const cv::Matx23d& outer, const cv::Matx23d& inner) {
  const cv::Matx33d o(outer(0, 0), outer(0, 1), outer(0, 2), outer(1, 0),
                      outer(1, 1), outer(1, 2), 0, 0, 1);
  const cv::Matx33d i(inner(0, 0), inner(0, 1), inner(0, 2), inner(1, 0),
                      inner(1, 1), inner(1, 2), 0, 0, 1);
  const cv::Matx33d r = o * i;
  return {r(0, 0), r(0, 1), r(0, 2), r(1, 0), r(1, 1), r(1, 2)};
}

cv::Matx23d rotation_about(double theta_deg, const cv::Point2d& center) {
  // Maps the direction (sin a, cos a) to (sin(a - theta), cos(a - theta)).
  const double c = std::cos(theta_deg * kDegToRad);
  const double s = std::sin(theta_deg * kDegToRad);
  return {c, -s, center.x - (c * center.x - s * center.y),
          s, c,  center.y - (s * center.x + c * center.y)};
}

namespace {

cv::Mat warp(const cv::Mat& frame, const cv::Matx23d& a, cv::Size out) {
  cv::Mat dst;
  cv::warpAffine(frame, dst, cv::Mat(a), out, cv::INTER_LINEAR,
                 cv::BORDER_CONSTANT, cv::Scalar::all(0));
  return dst;
}

}  // namespace

VideoClip rotate_frames(const VideoClip& clip, double theta_deg) {
  if (!std::isfinite(theta_deg)) throw UsageError("rotation angle must be finite");
  if (theta_deg == 0.0) return clip.with_frames(clip.frames);
  const cv::Matx23d rot = rotation_about(theta_deg, frame_center(clip.frame_size()));
  std::vector<cv::Mat> out;
  out.reserve(clip.size());
  for (const auto& f : clip.frames) out.push_back(warp(f, rot, f.size()));
  return clip.with_frames(std::move(out));
}

AdjustmentParams estimate_adjustment(const VideoClip& clip, const PoseBackend& backend,
                                     double alpha, double min_conf) {
  if (!(alpha > 0.0)) throw UsageError("alpha must be positive");
  clip.validate();
  const cv::Size size = clip.frame_size();
  const cv::Point2d center = frame_center(size);

  AdjustmentParams params;
  params.alpha = alpha;

  // Step 1: coarse orientation from the first frame with a usable pose.
  int reference = -1;
  for (std::size_t i = 0; i < clip.size() && reference < 0; ++i) {
    const auto m = body_axis(backend.infer(clip.frames[i], {static_cast<int>(i)}),
                             min_conf, size);
    if (m.valid) {
      reference = static_cast<int>(i);
      params.theta0 = m.theta_deg;
    }
  }
  if (reference < 0) {
    throw DataError("no valid pose in any frame of clip '" + clip.clip_id + "'");
  }
  params.reference_frame = reference;

  // Step 2: per-frame measurements on the coarsely rotated clip.
  const VideoClip rotated = rotate_frames(clip, params.theta0);
  const cv::Matx23d step1 = rotation_about(params.theta0, center);
  std::vector<double> thetas;
  std::vector<double> xs;
  std::vector<double> ys;
  std::vector<double> lengths;
  for (std::size_t i = 0; i < rotated.size(); ++i) {
    const auto m = body_axis(
        backend.infer(rotated.frames[i], {static_cast<int>(i), step1}), min_conf, size);
    if (!m.valid) continue;
    thetas.push_back(m.theta_deg);
    xs.push_back(m.center.x);
    ys.push_back(m.center.y);
    lengths.push_back(m.length);
  }
  if (thetas.empty()) {
    throw DataError("no valid pose after coarse rotation in clip '" + clip.clip_id + "'");
  }
  params.valid_frame_fraction =
      static_cast<double>(thetas.size()) / static_cast<double>(clip.size());
  params.theta_bar = interquartile_mean(thetas);
  params.length_bar = interquartile_mean(lengths);
  const cv::Point2d c_bar{interquartile_mean(xs), interquartile_mean(ys)};
  params.center_bar = apply_affine(rotation_about(params.theta_bar, center), c_bar);
  params.crop_side = 3.0 * params.length_bar / params.alpha;
  if (!(params.crop_side > 0.0)) {
    throw DataError("degenerate body length in clip '" + clip.clip_id + "'");
  }
  return params;
}

cv::Matx23d adjustment_transform(const AdjustmentParams& params, cv::Size frame,
                                 int out_size) {
  if (!(params.crop_side > 0.0)) throw UsageError("crop side R must be positive");
  if (out_size <= 0) throw UsageError("output size must be positive");
  const cv::Matx23d rot =
      rotation_about(params.theta0 + params.theta_bar, frame_center(frame));
  // Output pixel j samples the square at offset (j + 0.5) * R / out_size.
  const double s = out_size / params.crop_side;
  const double r_half = params.crop_side / 2.0;
  const cv::Matx23d crop(s, 0, s * (r_half - params.center_bar.x) - 0.5,
                         0, s, s * (r_half - params.center_bar.y) - 0.5);
  return compose(crop, rot);
}

VideoClip apply_adjustment(const VideoClip& clip, const AdjustmentParams& params,
                           int out_size) {
  const cv::Matx23d a = adjustment_transform(params, clip.frame_size(), out_size);
  std::vector<cv::Mat> out;
  out.reserve(clip.size());
  for (const auto& f : clip.frames) out.push_back(warp(f, a, {out_size, out_size}));
  return clip.with_frames(std::move(out));
}

}  // namespace gma
