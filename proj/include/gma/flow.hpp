#pragma once

#include <utility>
#include <vector>

#include <opencv2/core.hpp>

#include "gma/core.hpp"

namespace gma {

/// Displacement field between frames t and t + 1, in px/frame. Both maps are
/// CV_32F with the frame's dimensions.
struct FlowPair {
  cv::Mat dh;
  cv::Mat dv;
  int t = 0;
};

/// Farneback settings. These are fixed and part of the flow cache key.
struct FarnebackParams {
  double pyr_scale = 0.5;
  int levels = 3;
  int winsize = 15;
  int iterations = 3;
  int poly_n = 5;
  double poly_sigma = 1.2;
};
inline constexpr FarnebackParams kFarneback{};

/// Luma 0.299 R + 0.587 G + 0.114 B as CV_32F, from an RGB CV_8UC3 frame.
cv::Mat luma(const cv::Mat& rgb);

/// Dense flow for every consecutive frame pair; returns size() - 1 pairs.
/// Frames are reflect-padded by winsize + 1 px before estimation.
/// Throws UsageError for clips with fewer than two frames.
std::vector<FlowPair> compute_flow(const VideoClip& clip);

/// Clamps to [-bound, bound] and divides by bound.
FlowPair clip_and_scale(const FlowPair& flow, double bound);

/// Mirrors a flow field left-right; the horizontal component changes sign.
FlowPair hflip(const FlowPair& flow);

/// Mirrors an image and its flows consistently.
std::pair<cv::Mat, std::vector<FlowPair>> hflip(
    const cv::Mat& image, const std::vector<FlowPair>& flows);

/// Mean of |d| = sqrt(dh^2 + dv^2) over all pixels and pairs.
double mean_flow_magnitude(const std::vector<FlowPair>& flows);

}  // namespace gma
