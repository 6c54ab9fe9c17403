#include "gma/gradcam.hpp"

#include <algorithm>
#include <cmath>

#include <opencv2/imgproc.hpp>

#include "gma/errors.hpp"
#include "gma/log.hpp"

namespace gma {

std::string_view to_string(CamStream stream) {
  return stream == CamStream::spatial ? "spatial" : "temporal";
}

CamOverlay grad_cam_pp(const TwoStreamModel& model, const TemporalChunk& chunk,
                       CamStream stream, std::optional<GmsLabel> target,
                       std::optional<int> target_layer) {
  const StreamMode mode = model.config().mode;
  if ((stream == CamStream::spatial && mode == StreamMode::temporal_only) ||
      (stream == CamStream::temporal && mode == StreamMode::spatial_only)) {
    throw UsageError("the model has no " + std::string(to_string(stream)) + " stream");
  }
  const ModelInput input = model.prepare(chunk);
  const nn::Backbone& backbone =
      stream == CamStream::spatial ? model.spatial_backbone() : model.temporal_backbone();
  const nn::Sequential& layers = backbone.layers;
  const int last = static_cast<int>(layers.size()) - 1;
  const int t = target_layer.value_or(last);
  if (t < 0 || t > last) throw UsageError("target layer out of range");
  const nn::ParameterSet& params = model.parameters();

  // Split the stream at the target layer: A is its activation, the tail is
  // replayed with a tape so the head gradient can be carried back to A.
  nn::Tensor a = stream == CamStream::spatial ? input.spatial : input.temporal;
  for (int i = 0; i <= t; ++i) a = layers.at(i)->forward(params, a, nullptr);
  nn::Tape tail;
  nn::Tensor y = a;
  for (int i = t + 1; i <= last; ++i) y = layers.at(i)->forward(params, y, &tail);

  const TwoStreamModel::Activations acts = model.forward(input, false);
  CamOverlay out;
  out.stream = stream;
  out.chunk_index = chunk.n;
  out.target = target.value_or(acts.score.argmax());
  std::array<double, kNumClasses> d_logits{};
  d_logits[index_of(out.target)] = 1.0;
  const auto sg = model.head_backward(acts, d_logits, nullptr);
  nn::Tensor g = stream == CamStream::spatial ? sg.d_y_s : sg.d_y_t;
  if (t < last) {
    nn::Gradients scratch = nn::zero_gradients(params);
    for (int i = last; i > t; --i) g = layers.at(i)->backward(params, g, tail, scratch, true);
  }

  const int k = a.dim(0), h = a.dim(1), w = a.dim(2);
  cv::Mat cam = cv::Mat::zeros(h, w, CV_64F);
  bool any_positive = false;
  for (int c = 0; c < k; ++c) {
    double sum_a = 0.0;
    for (int y0 = 0; y0 < h; ++y0) {
      for (int x0 = 0; x0 < w; ++x0) sum_a += a.at(c, y0, x0);
    }
    double weight = 0.0;
    for (int y0 = 0; y0 < h; ++y0) {
      for (int x0 = 0; x0 < w; ++x0) {
        const double gv = g.at(c, y0, x0);
        if (gv <= 0.0) continue;
        const double g2 = gv * gv;
        const double denom = 2.0 * g2 + sum_a * g2 * gv;
        const double alpha = denom != 0.0 ? g2 / denom : 0.0;
        weight += alpha * gv;
        any_positive = true;
      }
    }
    if (weight == 0.0) continue;
    for (int y0 = 0; y0 < h; ++y0) {
      auto* row = cam.ptr<double>(y0);
      for (int x0 = 0; x0 < w; ++x0) row[x0] += weight * a.at(c, y0, x0);
    }
  }
  cam = cv::max(cam, 0.0);

  const cv::Size size = chunk.x_s.size();
  cv::Mat up;
  cam.convertTo(up, CV_32F);
  cv::resize(up, up, size, 0, 0, cv::INTER_LINEAR);
  double lo = 0, hi = 0;
  cv::minMaxLoc(up, &lo, &hi);
  if (!any_positive || !(hi > lo)) {
    warn(std::string(to_string(stream)) + " stream of chunk " + std::to_string(chunk.n) +
         " has no positive gradients; heatmap is zero");
    out.degenerate = true;
    out.heatmap = cv::Mat::zeros(size, CV_32F);
  } else {
    cv::subtract(up, cv::Scalar(lo), up);
    up.convertTo(up, CV_32F, 1.0 / (hi - lo));
    out.heatmap = cv::min(cv::max(up, 0.0), 1.0);
  }
  out.blended = jet_overlay(chunk.x_s, out.heatmap);
  return out;
}

cv::Mat jet_overlay(const cv::Mat& frame_rgb, const cv::Mat& heatmap) {
  if (frame_rgb.size() != heatmap.size() || frame_rgb.type() != CV_8UC3) {
    throw UsageError("overlay needs an RGB frame of the heatmap's size");
  }
  cv::Mat u8, bgr, rgb, out;
  heatmap.convertTo(u8, CV_8U, 255.0);
  cv::applyColorMap(u8, bgr, cv::COLORMAP_JET);
  cv::cvtColor(bgr, rgb, cv::COLOR_BGR2RGB);
  cv::addWeighted(rgb, 0.5, frame_rgb, 0.5, 0.0, out);
  return out;
}

cv::Mat top_decile(const cv::Mat& heatmap) {
  CV_Assert(heatmap.type() == CV_32F);
  std::vector<float> values(heatmap.begin<float>(), heatmap.end<float>());
  if (values.empty()) return cv::Mat();
  // 90th percentile by linear interpolation on the sorted values.
  std::sort(values.begin(), values.end());
  const double pos = 0.9 * static_cast<double>(values.size() - 1);
  const std::size_t lo = static_cast<std::size_t>(std::floor(pos));
  const std::size_t hi = std::min(lo + 1, values.size() - 1);
  const double q = values[lo] + (pos - static_cast<double>(lo)) * (values[hi] - values[lo]);
  cv::Mat mask = (heatmap >= q) & (heatmap > 0.0f);
  return mask;
}

double mask_iou(const cv::Mat& a, const cv::Mat& b) {
  if (a.size() != b.size()) throw UsageError("IoU of masks with different sizes");
  const cv::Mat ma = a != 0, mb = b != 0;
  const double inter = cv::countNonZero(ma & mb);
  const double uni = cv::countNonZero(ma | mb);
  return uni > 0 ? inter / uni : 0.0;
}

}  // namespace gma
