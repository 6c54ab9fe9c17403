#include "gma/flow.hpp"

#include <cmath>

#include <opencv2/core.hpp>
#include <opencv2/imgproc.hpp>
#include <opencv2/video/tracking.hpp>

#include "gma/errors.hpp"

namespace gma {

cv::Mat luma(const cv::Mat& rgb) {
  CV_Assert(rgb.type() == CV_8UC3);
  cv::Mat out(rgb.size(), CV_32F);
  for (int y = 0; y < rgb.rows; ++y) {
    const auto* src = rgb.ptr<cv::Vec3b>(y);
    auto* dst = out.ptr<float>(y);
    for (int x = 0; x < rgb.cols; ++x) {
      dst[x] = static_cast<float>(0.299 * src[x][0] + 0.587 * src[x][1] +
                                  0.114 * src[x][2]);
    }
  }
  return out;
}

std::vector<FlowPair> compute_flow(const VideoClip& clip) {
  if (clip.size() < 2) {
    throw UsageError("clip '" + clip.clip_id +
                     "' needs at least two frames for optical flow");
  }
  std::vector<FlowPair> flows;
  flows.reserve(clip.size() - 1);
  const int pad = kFarneback.winsize + 1;
  auto padded_luma = [pad](const cv::Mat& rgb) {
    cv::Mat out;
    cv::copyMakeBorder(luma(rgb), out, pad, pad, pad, pad, cv::BORDER_REFLECT_101);
    return out;
  };
  const cv::Rect inner(pad, pad, clip.frames[0].cols, clip.frames[0].rows);
  cv::Mat prev = padded_luma(clip.frames[0]);
  cv::Mat field;
  for (std::size_t t = 0; t + 1 < clip.size(); ++t) {
    cv::Mat next = padded_luma(clip.frames[t + 1]);
    cv::calcOpticalFlowFarneback(prev, next, field, kFarneback.pyr_scale,
                                 kFarneback.levels, kFarneback.winsize,
                                 kFarneback.iterations, kFarneback.poly_n,
                                 kFarneback.poly_sigma, 0);
    cv::Mat parts[2];
    cv::split(field(inner), parts);
    flows.push_back({parts[0], parts[1], static_cast<int>(t)});
    prev = std::move(next);
  }
  return flows;
}

FlowPair clip_and_scale(const FlowPair& flow, double bound) {
  if (!(bound > 0.0)) throw UsageError("flow clip bound must be positive");
  auto condition = [bound](const cv::Mat& m) {
    cv::Mat out = cv::min(cv::max(m, -bound), bound);
    out.convertTo(out, CV_32F, 1.0 / bound);
    return out;
  };
  return {condition(flow.dh), condition(flow.dv), flow.t};
}

FlowPair hflip(const FlowPair& flow) {
  FlowPair out;
  out.t = flow.t;
  cv::flip(flow.dh, out.dh, 1);
  out.dh = -out.dh;
  cv::flip(flow.dv, out.dv, 1);
  return out;
}

std::pair<cv::Mat, std::vector<FlowPair>> hflip(
    const cv::Mat& image, const std::vector<FlowPair>& flows) {
  cv::Mat mirrored;
  cv::flip(image, mirrored, 1);
  std::vector<FlowPair> out;
  out.reserve(flows.size());
  for (const auto& f : flows) out.push_back(hflip(f));
  return {mirrored, std::move(out)};
}

double mean_flow_magnitude(const std::vector<FlowPair>& flows) {
  double sum = 0.0;
  std::size_t count = 0;
  for (const auto& f : flows) {
    cv::Mat mag;
    cv::magnitude(f.dh, f.dv, mag);
    sum += cv::sum(mag)[0];
    count += mag.total();
  }
  return count == 0 ? 0.0 : sum / static_cast<double>(count);
}

}  // namespace gma
