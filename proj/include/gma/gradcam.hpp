#pragma once

#include <optional>

#include <opencv2/core.hpp>

#include "gma/chunker.hpp"
#include "gma/model.hpp"

namespace gma {

enum class CamStream { spatial, temporal };

std::string_view to_string(CamStream stream);

struct CamOverlay {
  cv::Mat heatmap;  // CV_32F, chunk frame size, values in [0, 1]
  CamStream stream = CamStream::spatial;
  int chunk_index = 1;
  GmsLabel target = GmsLabel::WM;
  cv::Mat blended;  // RGB CV_8UC3: 0.5 * jet(heatmap) + 0.5 * frame
  bool degenerate = false;  // no positive gradient: heatmap is all zero
};

/// Grad-CAM++ over one stream's activation at `target_layer` (an index into
/// the backbone's top-level layers, default the last one, i.e. the final
/// convolutional activation before fusion). The target class defaults to
/// the predicted one. Gradients are taken of the target's logit.
CamOverlay grad_cam_pp(const TwoStreamModel& model, const TemporalChunk& chunk,
                       CamStream stream, std::optional<GmsLabel> target = std::nullopt,
                       std::optional<int> target_layer = std::nullopt);

/// Blends a jet-colored heatmap with an RGB frame, half and half.
cv::Mat jet_overlay(const cv::Mat& frame_rgb, const cv::Mat& heatmap);

/// Pixels at or above the heatmap's 90th percentile that are also > 0 (CV_8U 0/255).
cv::Mat top_decile(const cv::Mat& heatmap);

/// Intersection over union of two binary masks (nonzero = set); 0 when both are empty.
double mask_iou(const cv::Mat& a, const cv::Mat& b);

}  // namespace gma
