#include <opencv2/imgproc.hpp>

#include "doctest.h"
#include "gma/errors.hpp"
#include "gma/gradcam.hpp"
#include "gma/segmentation.hpp"
#include "gma/synthdata.hpp"
#include "helpers.hpp"

using namespace gma;

namespace {

class ConstantBackend final : public SegmentationBackend {
 public:
  explicit ConstantBackend(float v) : v_(v) {}
  std::string name() const override { return "constant"; }
  SaliencyMask infer(const cv::Mat& frame, int index) const override {
    return {cv::Mat(frame.size(), CV_32F, cv::Scalar(v_)), index};
  }

 private:
  float v_;
};

class FailingBackend final : public SegmentationBackend {
 public:
  std::string name() const override { return "failing"; }
  SaliencyMask infer(const cv::Mat& frame, int index) const override {
    if (index == 2) throw std::runtime_error("boom");
    return {cv::Mat(frame.size(), CV_32F, cv::Scalar(1)), index};
  }
};

SynthClip short_synth(std::uint64_t seed) {
  SynthSpec spec;
  spec.duration_s = 1.0;
  spec.fps = 6;
  spec.width = 160;
  spec.height = 160;
  spec.body_scale = 0.8;
  spec.background = SynthBackground::clutter;
  spec.seed = seed;
  return generate(spec);
}

// Disc moving left to right over a flat background.
VideoClip moving_blob(int frames, cv::Mat* last_truth) {
  VideoClip clip;
  clip.fps = 6;
  for (int i = 0; i < frames; ++i) {
    cv::Mat f(96, 128, CV_8UC3, cv::Scalar(60, 60, 60));
    cv::Mat truth = cv::Mat::zeros(96, 128, CV_8U);
    const cv::Point c(14 + 10 * i, 48);
    cv::circle(f, c, 9, cv::Scalar(220, 200, 180), cv::FILLED);
    cv::circle(truth, c, 9, cv::Scalar(255), cv::FILLED);
    clip.frames.push_back(f);
    *last_truth = truth;
  }
  return clip;
}

}  // namespace

TEST_CASE("identity and annihilating masks") {
  const VideoClip clip = test::noise_clip(3, 8, 10, 6);
  const VideoClip same = extract_body(clip, ConstantBackend(1.0f), 0.5);
  const VideoClip black = extract_body(clip, ConstantBackend(0.0f), 0.5);
  REQUIRE(same.size() == 3);
  for (int i = 0; i < 3; ++i) {
    CHECK(test::same_pixels(same.frames[i], clip.frames[i]));
    CHECK(cv::countNonZero(black.frames[i].reshape(1)) == 0);
  }
  CHECK(same.fps == clip.fps);
  CHECK_THROWS_AS(extract_body(clip, ConstantBackend(1.0f), 1.5), UsageError);
}

TEST_CASE("backend failure names the frame") {
  const VideoClip clip = test::noise_clip(4, 8, 8, 6);
  try {
    extract_body(clip, FailingBackend(), 0.5);
    FAIL("expected an error");
  } catch (const std::exception& e) {
    CHECK(std::string(e.what()).find("frame 2") != std::string::npos);
  }
}

TEST_CASE("ground-truth masks remove the background exactly") {
  const SynthClip s = short_synth(5);
  const GroundTruthSegmentation backend(s.truth.masks);
  const VideoClip out = extract_body(s.clip, backend, 0.5);
  REQUIRE(out.size() == s.clip.size());
  for (std::size_t i = 0; i < out.size(); ++i) {
    const cv::Mat& m = s.truth.masks[i];
    cv::Mat bg = out.frames[i].clone();
    bg.setTo(cv::Scalar::all(0), m);
    CHECK(cv::sum(bg) == cv::Scalar::all(0));

    cv::Mat fg_in = cv::Mat::zeros(m.size(), CV_8UC3), fg_out = fg_in.clone();
    s.clip.frames[i].copyTo(fg_in, m);
    out.frames[i].copyTo(fg_out, m);
    CHECK(test::same_pixels(fg_in, fg_out));
  }
}

TEST_CASE("masking is a projection and only keeps input pixels") {
  const SynthClip s = short_synth(9);
  const GroundTruthSegmentation backend(s.truth.masks);
  const VideoClip once = extract_body(s.clip, backend, 0.5);
  const VideoClip twice = extract_body(once, backend, 0.5);
  REQUIRE(twice.size() == once.size());
  for (std::size_t i = 0; i < once.size(); ++i) {
    CHECK(test::same_pixels(twice.frames[i], once.frames[i]));
    CHECK(once.frames[i].size() == s.clip.frames[i].size());
    // Every non-zero output pixel equals the input pixel.
    for (int y = 0; y < once.frames[i].rows; ++y) {
      for (int x = 0; x < once.frames[i].cols; ++x) {
        const auto o = once.frames[i].at<cv::Vec3b>(y, x);
        if (o != cv::Vec3b(0, 0, 0)) REQUIRE(o == s.clip.frames[i].at<cv::Vec3b>(y, x));
      }
    }
  }
  CHECK(once.fps == s.clip.fps);
}

TEST_CASE("saliency stays in [0, 1] with the frame's size") {
  const SynthClip s = short_synth(2);
  const auto lum = luminance_baseline_backend(s.clip);
  const GroundTruthSegmentation gt(s.truth.masks);
  for (int i = 0; i < static_cast<int>(s.clip.size()); ++i) {
    for (const SegmentationBackend* b : std::vector<const SegmentationBackend*>{lum.get(), &gt}) {
      const SaliencyMask m = b->infer(s.clip.frames[i], i);
      CHECK(m.values.size() == s.clip.frames[i].size());
      CHECK(m.values.type() == CV_32F);
      double lo, hi;
      cv::minMaxLoc(m.values, &lo, &hi);
      CHECK(lo >= 0.0);
      CHECK(hi <= 1.0);
      CHECK(m.frame_index == i);
    }
  }
}

TEST_CASE("luminance baseline") {
  SUBCASE("static clip gives a zero mask") {
    VideoClip clip;
    clip.fps = 6;
    const cv::Mat f = test::noise_frame(40, 50, 3);
    for (int i = 0; i < 5; ++i) clip.frames.push_back(f.clone());
    const auto b = luminance_baseline_backend(clip);
    CHECK(cv::norm(b->infer(f, 0).values, cv::NORM_INF) < 1e-6);
  }
  SUBCASE("all-black clip gives a zero mask") {
    VideoClip clip;
    clip.fps = 6;
    for (int i = 0; i < 4; ++i) clip.frames.push_back(cv::Mat::zeros(30, 30, CV_8UC3));
    const auto b = luminance_baseline_backend(clip);
    CHECK(cv::countNonZero(b->infer(clip.frames[0], 0).values) == 0);
  }
  SUBCASE("moving blob IoU against the drawn disc") {
    cv::Mat truth;
    const VideoClip clip = moving_blob(9, &truth);
    const auto b = luminance_baseline_backend(clip);
    const cv::Mat mask = b->infer(clip.frames.back(), 8).values >= 0.5f;
    const double iou = mask_iou(mask, truth);
    MESSAGE("blob IoU " << iou);
    CHECK(iou >= 0.5);
  }
}
