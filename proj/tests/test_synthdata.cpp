#include <algorithm>
#include <cmath>
#include <complex>
#include <numbers>

#include <opencv2/imgproc.hpp>

#include "doctest.h"
#include "gma/errors.hpp"
#include "gma/gradcam.hpp"
#include "gma/pipeline.hpp"
#include "gma/pose_align.hpp"
#include "gma/synthdata.hpp"
#include "helpers.hpp"

using namespace gma;

namespace {

// Frequency of the largest non-DC DFT bin of a real series sampled at fs.
double dominant_frequency(const std::vector<double>& x, double fs) {
  const std::size_t n = x.size();
  double mean = 0;
  for (double v : x) mean += v / n;
  double best = -1, best_f = 0;
  for (std::size_t k = 1; k <= n / 2; ++k) {
    std::complex<double> s = 0;
    for (std::size_t t = 0; t < n; ++t) {
      s += (x[t] - mean) * std::polar(1.0, -2.0 * std::numbers::pi * k * t / n);
    }
    if (std::abs(s) > best) {
      best = std::abs(s);
      best_f = k * fs / n;
    }
  }
  return best_f;
}

double diff_energy_std(const VideoClip& clip) {
  std::vector<double> e;
  for (std::size_t t = 1; t < clip.size(); ++t) {
    cv::Mat d;
    cv::absdiff(clip.frames[t], clip.frames[t - 1], d);
    e.push_back(cv::mean(d.reshape(1))[0]);
  }
  double m = 0;
  for (double v : e) m += v / e.size();
  double var = 0;
  for (double v : e) var += (v - m) * (v - m) / e.size();
  return std::sqrt(var);
}

double auc(const std::vector<double>& pos, const std::vector<double>& neg) {
  double wins = 0;
  for (double p : pos) {
    for (double q : neg) wins += p > q ? 1.0 : (p == q ? 0.5 : 0.0);
  }
  return wins / (pos.size() * neg.size());
}

SynthSpec spec_for(MotionProfile profile, std::uint64_t seed) {
  SynthSpec s;
  s.profile = profile;
  s.duration_s = 10;
  s.fps = 6;
  s.width = 160;
  s.height = 160;
  s.body_scale = 0.9;
  s.seed = seed;
  return s;
}

}  // namespace

TEST_CASE("same spec renders bit-identical clips") {
  SynthSpec s = spec_for(MotionProfile::FM_like, 3);
  s.background = SynthBackground::clutter;
  s.rotation_deg = 17;
  s.duration_s = 2;
  const SynthClip a = generate(s), b = generate(s);
  REQUIRE(a.clip.size() == 12);
  REQUIRE(a.clip.size() == b.clip.size());
  for (std::size_t i = 0; i < a.clip.size(); ++i) {
    CHECK(test::same_pixels(a.clip.frames[i], b.clip.frames[i]));
    CHECK(test::same_pixels(a.truth.masks[i], b.truth.masks[i]));
  }
  // Rendering frame i alone gives the same image as rendering the sequence.
  const SynthRenderer r(s);
  CHECK(test::same_pixels(r.render(7).rgb, a.clip.frames[7]));
  s.seed = 4;
  CHECK_FALSE(test::same_pixels(generate(s).clip.frames[5], a.clip.frames[5]));
}

TEST_CASE("limb-tip spectra separate FM from WM") {
  const double fs = 30;
  for (std::uint64_t seed = 0; seed < 4; ++seed) {
    SynthSpec wm = spec_for(MotionProfile::WM_like, seed);
    SynthSpec fm = spec_for(MotionProfile::FM_like, seed);
    wm.fps = fm.fps = fs;
    wm.duration_s = fm.duration_s = 20;
    const SynthRenderer rw(wm), rf(fm);
    for (Limb limb : {Limb::LeftArm, Limb::RightLeg}) {
      std::vector<double> xw, xf;
      for (int i = 0; i < static_cast<int>(fs * 20); ++i) {
        xw.push_back(rw.tip_offset(limb, i / fs, i).x);
        xf.push_back(rf.tip_offset(limb, i / fs, i).x);
      }
      const double f_wm = dominant_frequency(xw, fs);
      const double f_fm = dominant_frequency(xf, fs);
      CHECK(f_fm > 1.0);
      CHECK(f_wm < 0.6);
    }
  }
}

TEST_CASE("masks are the rendered silhouette") {
  SynthSpec s = spec_for(MotionProfile::WM_like, 8);
  s.duration_s = 1;
  s.background = SynthBackground::plain;
  const SynthClip c = generate(s);
  for (std::size_t i = 0; i < c.clip.size(); ++i) {
    const cv::Mat& f = c.clip.frames[i];
    const cv::Vec3b bg = f.at<cv::Vec3b>(0, 0);
    cv::Mat differs;
    cv::inRange(f, cv::Scalar(bg[0], bg[1], bg[2]), cv::Scalar(bg[0], bg[1], bg[2]), differs);
    differs = ~differs;
    CHECK(mask_iou(differs, c.truth.masks[i]) == 1.0);
  }
}

TEST_CASE("pose joints lie inside the silhouette") {
  for (MotionProfile p : {MotionProfile::WM_like, MotionProfile::FM_like, MotionProfile::PR_like}) {
    SynthSpec s = spec_for(p, 2);
    s.duration_s = 3;
    s.rotation_deg = -40;
    s.body_scale = 1.2;
    s.background = SynthBackground::clutter;
    const SynthClip c = generate(s);
    for (std::size_t i = 0; i < c.clip.size(); ++i) {
      for (const auto& j : c.truth.poses[i].joints) {
        const cv::Point px(static_cast<int>(std::lround(j.x)), static_cast<int>(std::lround(j.y)));
        REQUIRE(px.inside(cv::Rect(0, 0, s.width, s.height)));
        CHECK(c.truth.masks[i].at<std::uint8_t>(px) == 255);
      }
    }
  }
}

TEST_CASE("transform places the body axis at the requested angle") {
  SynthSpec s = spec_for(MotionProfile::PR_like, 1);
  s.duration_s = 1;
  s.rotation_deg = 30;
  s.body_scale = 1.2;
  s.translation = {5, -3};
  const SynthClip c = generate(s);
  const auto m = body_axis(c.truth.poses[0]);
  CHECK(m.theta_deg == doctest::Approx(30.0).epsilon(1e-9));
  CHECK(m.length == doctest::Approx(60.0).epsilon(1e-9));
  CHECK(m.center.x == doctest::Approx(79.5 + 5).epsilon(1e-9));
  CHECK(m.center.y == doctest::Approx(79.5 - 3).epsilon(1e-9));
}

TEST_CASE("generated dataset is balanced and loadable") {
  test::TempDir dir("synth");
  DatasetSpec spec;
  spec.n_per_class = 4;
  spec.duration_s = 2;
  spec.fps = 6;
  spec.width = 160;
  spec.height = 160;
  spec.seed = 7;
  const DatasetManifest m = generate_dataset(spec, dir / "ds");
  REQUIRE(m.entries.size() == 12);
  std::array<int, 3> counts{};
  for (const auto& e : m.entries) ++counts[index_of(e.label)];
  CHECK(counts == std::array<int, 3>{4, 4, 4});

  const DatasetManifest back = load_manifest(dir / "ds" / "manifest.csv", 2.0);
  CHECK(back.entries == m.entries);
  for (const auto& e : back.entries) {
    const LoadedClip c = load_clip(e);
    CHECK(c.clip.size() == 12);
    CHECK(c.clip.frame_size() == cv::Size(160, 160));
    REQUIRE(c.truth.has_value());
    CHECK(c.truth->size() == 12);
  }
  CHECK_THROWS_AS(generate_dataset(spec, "/proc/forbidden/ds"), DataError);
}

TEST_CASE("adjuster recovers the injected rotation") {
  DatasetSpec spec;
  spec.duration_s = 2;
  spec.fps = 6;
  spec.width = 224;
  spec.height = 224;
  spec.seed = 11;
  for (GmsLabel label : kAllLabels) {
    for (int i = 0; i < 3; ++i) {
      const SynthSpec s = dataset_clip_spec(spec, label, i);
      const SynthClip c = generate(s);
      const AdjustmentParams p = estimate_adjustment(c.clip, GroundTruthPose(c.truth.poses), 0.8);
      CHECK(std::abs(p.theta0 + p.theta_bar - s.rotation_deg) < 1.5);
      CHECK(std::abs(s.rotation_deg) <= 45.0);
      CHECK(std::abs(s.body_scale - 1.0) <= 0.2);
    }
  }
}

TEST_CASE("frame-difference energy std is higher for PR than FM") {
  std::vector<double> fm, pr;
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    fm.push_back(diff_energy_std(generate(spec_for(MotionProfile::FM_like, 100 + seed)).clip));
    pr.push_back(diff_energy_std(generate(spec_for(MotionProfile::PR_like, 200 + seed)).clip));
  }
  const double a = auc(pr, fm);
  MESSAGE("AUC(PR > FM) " << a);
  CHECK(a > 0.9);
}

TEST_CASE("ground truth survives write and reload") {
  test::TempDir dir("gt");
  SynthSpec s = spec_for(MotionProfile::WM_like, 5);
  s.duration_s = 2;
  s.limb_masks = true;
  const SynthClip c = generate(s);
  const fs::path index = write_synth_clip(c, dir / "clip");
  const GroundTruth g = load_ground_truth(index);
  REQUIRE(g.size() == c.truth.size());
  for (std::size_t i = 0; i < g.size(); ++i) {
    for (int j = 0; j < 4; ++j) {
      CHECK(g.poses[i].joints[j].x == doctest::Approx(c.truth.poses[i].joints[j].x).epsilon(1e-9));
      CHECK(g.poses[i].joints[j].y == doctest::Approx(c.truth.poses[i].joints[j].y).epsilon(1e-9));
    }
    CHECK(test::same_pixels(g.masks[i], c.truth.masks[i]));
    CHECK(test::same_pixels(g.limb_masks[i], c.truth.limb_masks[i]));
  }
  CHECK(g.transform.rotation_deg == s.rotation_deg);
  const GroundTruth window = load_ground_truth(index, 1.0, 2.0);
  CHECK(window.size() == 6);
  CHECK(test::same_pixels(window.masks[0], c.truth.masks[6]));
  const GroundTruth half = c.truth.decimated(2);
  CHECK(half.size() == 6);
  CHECK(test::same_pixels(half.masks[1], c.truth.masks[2]));
  // Limb regions only cover their own limb.
  const cv::Mat arm = c.truth.limb_region(Limb::LeftArm, 0, 12);
  CHECK(cv::countNonZero(arm) > 0);
  cv::Mat outside;
  cv::bitwise_and(arm, ~c.truth.masks[0], outside);
  for (int i = 1; i < 12; ++i) {
    cv::Mat in_any = cv::Mat::zeros(arm.size(), CV_8U);
    for (int k = 0; k < 12; ++k) in_any |= c.truth.masks[k];
    cv::bitwise_and(outside, ~in_any, outside);
  }
  CHECK(cv::countNonZero(outside) == 0);
}
