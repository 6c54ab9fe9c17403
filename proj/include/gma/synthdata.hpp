#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include <opencv2/core.hpp>

#include "gma/core.hpp"
#include "gma/pose_align.hpp"

namespace gma {

// Caricatures of the three movement classes, not clinical simulations:
//   WM_like  large slow elliptical limb paths (25-40 px, 0.2-0.5 Hz)
//   FM_like  small fast jittery paths (3-8 px, 1.5-3 Hz)
//   PR_like  one repeated path on every limb (10-15 px, 0.8 Hz, no jitter)
enum class MotionProfile { WM_like, FM_like, PR_like };
enum class SynthBackground { plain, clutter };

std::string_view to_string(MotionProfile profile);
MotionProfile profile_for(GmsLabel label);
GmsLabel label_for(MotionProfile profile);

enum class Limb : int { LeftArm = 0, RightArm = 1, LeftLeg = 2, RightLeg = 3 };

struct SynthSpec {
  MotionProfile profile = MotionProfile::WM_like;
  double duration_s = 60.0;
  double fps = 30.0;
  int width = 288;
  int height = 288;
  double body_scale = 1.0;
  double rotation_deg = 0.0;      // body-axis angle in the canvas
  cv::Point2d translation{0, 0};  // offset of the body center from the canvas center
  SynthBackground background = SynthBackground::plain;
  std::uint64_t seed = 0;
  std::array<bool, 4> active_limbs{true, true, true, true};
  bool limb_masks = false;  // also render per-limb occupancy

  int frame_count() const;
};

/// Body frame -> canvas: p = canvas_center + translation + scale * Rot * p_body,
/// with Rot chosen so the body axis (0, 1) measures rotation_deg.
struct SynthTransform {
  double rotation_deg = 0.0;
  double scale = 1.0;
  cv::Point2d translation;
  cv::Point2d canvas_center;

  cv::Point2d apply(const cv::Point2d& body) const;
};

struct GroundTruth {
  SynthTransform transform;
  std::vector<PoseEstimate> poses;                     // shoulders and hips, confidence 1
  std::vector<std::array<cv::Point2d, 4>> limb_tips;   // canvas coordinates
  std::vector<cv::Mat> masks;                          // CV_8U silhouette, 0 / 255
  std::vector<cv::Mat> limb_masks;                     // CV_8U, bit k set where limb k lies

  std::size_t size() const { return poses.size(); }
  /// Keeps every step-th frame, matching resample_fps.
  GroundTruth decimated(int step) const;
  /// Union of the limb masks of `limb` over frames [begin, end).
  cv::Mat limb_region(Limb limb, int begin, int end) const;
};

struct SynthClip {
  VideoClip clip;
  GroundTruth truth;
};

/// Frame-by-frame renderer. Motion parameters are drawn once from the seed;
/// each frame is a pure function of (spec, index).
class SynthRenderer {
 public:
  explicit SynthRenderer(SynthSpec spec);

  struct Frame {
    cv::Mat rgb;
    cv::Mat mask;
    cv::Mat limb_mask;  // empty unless spec.limb_masks
    PoseEstimate pose;
    std::array<cv::Point2d, 4> limb_tips;
  };

  Frame render(int index) const;
  const SynthSpec& spec() const { return spec_; }
  SynthTransform transform() const;

  /// Displacement of a limb tip from its rest position at time t, in body
  /// units (before scale and rotation). Zero for inactive limbs.
  cv::Point2d tip_offset(Limb limb, double t, int frame_index) const;

 private:
  struct Wave {
    double amplitude_x = 0, amplitude_y = 0, freq = 0, phase = 0;
  };
  struct LimbMotion {
    std::vector<Wave> waves;
    double drift_freq = 0, drift_phase = 0, drift_depth = 0;  // WM phase wander
    double jitter_px = 0;                                      // FM per-frame noise
  };

  SynthSpec spec_;
  std::array<LimbMotion, 4> motion_;
  std::array<double, 4> tilts_{};
  cv::Mat background_;
};

SynthClip generate(const SynthSpec& spec);

/// clip.json (with ground_truth and mask_pattern), PNG frames, mask PNGs,
/// optional limb PNGs and ground_truth.json in `dir`. Returns the index path.
fs::path write_synth_clip(const SynthClip& clip, const fs::path& dir);

/// Ground truth referenced by a sequence index. Throws DataError when the
/// index has none.
GroundTruth load_ground_truth(const fs::path& index_path);
/// Ground truth restricted to the [start_s, end_s) window used by load_video.
GroundTruth load_ground_truth(const fs::path& index_path, double start_s, double end_s);

struct DatasetSpec {
  int n_per_class = 4;
  std::uint64_t seed = 0;
  double duration_s = 60.0;
  double fps = 30.0;
  int width = 288;
  int height = 288;
  double max_rotation_deg = 45.0;
  double max_scale_change = 0.2;
  double max_translation_px = 10.0;
  bool limb_masks = false;
};

/// Writes <out>/<clip_id>/... for each clip and <out>/manifest.csv. Each clip
/// gets its own infant id and randomized rotation, scale, translation and
/// background. Throws DataError when the directory cannot be written.
DatasetManifest generate_dataset(const DatasetSpec& spec, const fs::path& out_dir);

/// The SynthSpec generate_dataset uses for its i-th clip.
SynthSpec dataset_clip_spec(const DatasetSpec& spec, GmsLabel label, int index);

}  // namespace gma
