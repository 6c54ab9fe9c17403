#include "gma/synthdata.hpp"

#include <cmath>
#include <fstream>
#include <numbers>
#include <random>

#include <opencv2/imgcodecs.hpp>
#include <opencv2/imgproc.hpp>

#include "gma/errors.hpp"
#include "gma/video_io.hpp"

namespace gma {

namespace {

constexpr double kPi = std::numbers::pi;
constexpr int kShift = 4;  // fillPoly fixed-point bits
constexpr char kMaskPattern[] = "mask_%06d.png";
constexpr char kLimbPattern[] = "limb_%06d.png";
constexpr char kTruthFile[] = "ground_truth.json";

// Body-frame geometry of the right side; left limbs mirror x. The body axis
// runs from the shoulder midpoint (0, -25) to the hip midpoint (0, 25).
const cv::Point2d kShoulder{10, -25};
const cv::Point2d kHip{10, 25};
const cv::Size2d kTorsoAxes{16, 34};
const cv::Point2d kHeadCenter{0, -41};
constexpr double kHeadRadius = 14;

struct LimbGeometry {
  cv::Point2d root, mid, tip;
  double radius;
};

LimbGeometry rest_geometry(Limb limb) {
  const bool arm = limb == Limb::LeftArm || limb == Limb::RightArm;
  const double sx = (limb == Limb::LeftArm || limb == Limb::LeftLeg) ? -1.0 : 1.0;
  LimbGeometry g = arm ? LimbGeometry{{12, -24}, {30, -10}, {42, 10}, 4.5}
                       : LimbGeometry{{9, 28}, {16, 48}, {18, 68}, 5.5};
  g.root.x *= sx;
  g.mid.x *= sx;
  g.tip.x *= sx;
  return g;
}

const cv::Vec3b kSkin{236, 196, 168};
const cv::Vec3b kCloth{72, 122, 192};
const cv::Vec3b kPlain{206, 201, 190};
const cv::Vec3b kBedFrame{112, 72, 42};

std::vector<cv::Point> to_fixed(const std::vector<cv::Point2d>& pts) {
  std::vector<cv::Point> out;
  out.reserve(pts.size());
  for (const auto& p : pts) {
    out.emplace_back(static_cast<int>(std::lround(p.x * (1 << kShift))),
                     static_cast<int>(std::lround(p.y * (1 << kShift))));
  }
  return out;
}

void fill(cv::Mat& img, const std::vector<cv::Point2d>& polygon, const cv::Scalar& color) {
  const std::vector<std::vector<cv::Point>> polys{to_fixed(polygon)};
  cv::fillPoly(img, polys, color, cv::LINE_8, kShift);
}

std::vector<cv::Point2d> ellipse_polygon(const cv::Point2d& c, cv::Size2d axes) {
  std::vector<cv::Point2d> pts;
  constexpr int n = 72;
  for (int i = 0; i < n; ++i) {
    const double a = 2 * kPi * i / n;
    pts.emplace_back(c.x + axes.width * std::cos(a), c.y + axes.height * std::sin(a));
  }
  return pts;
}

// Stadium around segment a-b, in body coordinates.
std::vector<cv::Point2d> capsule_polygon(const cv::Point2d& a, const cv::Point2d& b,
                                         double r) {
  cv::Point2d u = b - a;
  const double len = std::hypot(u.x, u.y);
  u = len > 1e-9 ? u / len : cv::Point2d(1, 0);
  const double base = std::atan2(u.y, u.x);
  std::vector<cv::Point2d> pts;
  constexpr int n = 12;
  for (int i = 0; i <= n; ++i) {
    const double ang = base - kPi / 2 + kPi * i / n;
    pts.emplace_back(b.x + r * std::cos(ang), b.y + r * std::sin(ang));
  }
  for (int i = 0; i <= n; ++i) {
    const double ang = base + kPi / 2 + kPi * i / n;
    pts.emplace_back(a.x + r * std::cos(ang), a.y + r * std::sin(ang));
  }
  return pts;
}

std::vector<cv::Point2d> to_canvas(const SynthTransform& tf, std::vector<cv::Point2d> pts) {
  for (auto& p : pts) p = tf.apply(p);
  return pts;
}

cv::Mat make_background(const SynthSpec& spec) {
  cv::Mat bg(spec.height, spec.width, CV_8UC3, cv::Scalar(kPlain[0], kPlain[1], kPlain[2]));
  if (spec.background == SynthBackground::plain) return bg;

  std::mt19937_64 rng(spec.seed ^ 0x9e3779b97f4a7c15ULL);
  std::uniform_real_distribution<double> uni(0.0, 1.0);
  // Sheet wrinkles: a few oblique sinusoidal shading bands plus static noise.
  const double dir = uni(rng) * kPi;
  const double period = 18 + 20 * uni(rng);
  const double phase = uni(rng) * 2 * kPi;
  cv::Mat noise(spec.height, spec.width, CV_32F);
  cv::RNG(spec.seed | 1).fill(noise, cv::RNG::NORMAL, 0.0, 6.0);
  cv::GaussianBlur(noise, noise, cv::Size(5, 5), 1.2);
  for (int y = 0; y < spec.height; ++y) {
    auto* row = bg.ptr<cv::Vec3b>(y);
    for (int x = 0; x < spec.width; ++x) {
      const double s = x * std::cos(dir) + y * std::sin(dir);
      const double shade = 16 * std::sin(2 * kPi * s / period + phase) + noise.at<float>(y, x);
      for (int c = 0; c < 3; ++c) row[x][c] = cv::saturate_cast<uchar>(kPlain[c] + shade);
    }
  }
  for (int i = 0; i < 24; ++i) {
    const cv::Point a(static_cast<int>(uni(rng) * spec.width),
                      static_cast<int>(uni(rng) * spec.height));
    const double ang = uni(rng) * 2 * kPi;
    const double len = 15 + 45 * uni(rng);
    const cv::Point b(a.x + static_cast<int>(len * std::cos(ang)),
                      a.y + static_cast<int>(len * std::sin(ang)));
    const double v = 150 + 30 * uni(rng);
    cv::line(bg, a, b, cv::Scalar(v, v - 4, v - 12), 1 + static_cast<int>(uni(rng) * 2),
             cv::LINE_8);
  }
  const int border = 14;
  const cv::Scalar frame(kBedFrame[0], kBedFrame[1], kBedFrame[2]);
  cv::rectangle(bg, {0, 0}, {spec.width - 1, border - 1}, frame, cv::FILLED);
  cv::rectangle(bg, {0, spec.height - border}, {spec.width - 1, spec.height - 1}, frame,
                cv::FILLED);
  cv::rectangle(bg, {0, 0}, {border - 1, spec.height - 1}, frame, cv::FILLED);
  cv::rectangle(bg, {spec.width - border, 0}, {spec.width - 1, spec.height - 1}, frame,
                cv::FILLED);
  return bg;
}

nlohmann::json point_json(const cv::Point2d& p) { return {p.x, p.y}; }
cv::Point2d json_point(const nlohmann::json& j) {
  return {j.at(0).get<double>(), j.at(1).get<double>()};
}

nlohmann::json transform_json(const SynthTransform& tf) {
  return {{"rotation_deg", tf.rotation_deg},
          {"scale", tf.scale},
          {"translation", point_json(tf.translation)},
          {"canvas_center", point_json(tf.canvas_center)}};
}

nlohmann::json frame_json(const PoseEstimate& pose, const std::array<cv::Point2d, 4>& tips) {
  nlohmann::json joints = nlohmann::json::array();
  nlohmann::json tip_list = nlohmann::json::array();
  for (const auto& p : pose.joints) joints.push_back(point_json(p));
  for (const auto& p : tips) tip_list.push_back(point_json(p));
  return {{"joints", joints}, {"tips", tip_list}};
}

void write_mask(const fs::path& path, const cv::Mat& mask) {
  if (!cv::imwrite(path.string(), mask)) throw DataError("cannot write " + path.string());
}

cv::Mat read_mask(const fs::path& path) {
  cv::Mat m = cv::imread(path.string(), cv::IMREAD_GRAYSCALE);
  if (m.empty()) throw DataError("cannot decode mask " + path.string());
  return m;
}

// Streams rendered frames to disk; keeps only the per-frame JSON in memory.
class ClipWriter {
 public:
  ClipWriter(fs::path dir, bool limbs) : dir_(std::move(dir)), limbs_(limbs) {
    std::error_code ec;
    fs::create_directories(dir_, ec);
    if (ec) throw DataError("cannot create output directory " + dir_.string());
  }

  void add(const cv::Mat& rgb, const cv::Mat& mask, const cv::Mat& limb_mask,
           const PoseEstimate& pose, const std::array<cv::Point2d, 4>& tips) {
    const int i = count_++;
    write_rgb(dir_ / format_pattern(index_.frame_pattern, i), rgb);
    write_mask(dir_ / format_pattern(kMaskPattern, i), mask);
    if (limbs_) write_mask(dir_ / format_pattern(kLimbPattern, i), limb_mask);
    frames_.push_back(frame_json(pose, tips));
    size_ = rgb.size();
  }

  fs::path finish(double fps, const SynthTransform& tf) {
    nlohmann::json truth = {{"transform", transform_json(tf)},
                            {"fps", fps},
                            {"joint_order",
                             {"left_shoulder", "right_shoulder", "left_hip", "right_hip"}},
                            {"limb_order", {"left_arm", "right_arm", "left_leg", "right_leg"}},
                            {"mask_pattern", kMaskPattern},
                            {"frames", std::move(frames_)}};
    if (limbs_) truth["limb_pattern"] = kLimbPattern;
    std::ofstream out(dir_ / kTruthFile);
    if (!out) throw DataError("cannot write " + (dir_ / kTruthFile).string());
    out << truth.dump() << '\n';

    index_.fps = fps;
    index_.width = size_.width;
    index_.height = size_.height;
    index_.frame_count = count_;
    index_.ground_truth = kTruthFile;
    index_.mask_pattern = kMaskPattern;
    const fs::path index_path = dir_ / "clip.json";
    write_sequence_index(index_, index_path);
    return index_path;
  }

 private:
  fs::path dir_;
  bool limbs_;
  SequenceIndex index_;
  int count_ = 0;
  cv::Size size_;
  nlohmann::json frames_ = nlohmann::json::array();
};

}  // namespace

std::string_view to_string(MotionProfile profile) {
  switch (profile) {
    case MotionProfile::WM_like:
      return "WM_like";
    case MotionProfile::FM_like:
      return "FM_like";
    case MotionProfile::PR_like:
      return "PR_like";
  }
  return "?";
}

MotionProfile profile_for(GmsLabel label) {
  switch (label) {
    case GmsLabel::WM:
      return MotionProfile::WM_like;
    case GmsLabel::FM:
      return MotionProfile::FM_like;
    case GmsLabel::PR:
      return MotionProfile::PR_like;
  }
  return MotionProfile::WM_like;
}

GmsLabel label_for(MotionProfile profile) {
  switch (profile) {
    case MotionProfile::WM_like:
      return GmsLabel::WM;
    case MotionProfile::FM_like:
      return GmsLabel::FM;
    case MotionProfile::PR_like:
      return GmsLabel::PR;
  }
  return GmsLabel::WM;
}

int SynthSpec::frame_count() const { return static_cast<int>(std::lround(duration_s * fps)); }

cv::Point2d SynthTransform::apply(const cv::Point2d& p) const {
  const double r = rotation_deg * kPi / 180.0;
  const double c = std::cos(r), s = std::sin(r);
  return {canvas_center.x + translation.x + scale * (c * p.x + s * p.y),
          canvas_center.y + translation.y + scale * (-s * p.x + c * p.y)};
}

// ---------------------------------------------------------------------------

SynthRenderer::SynthRenderer(SynthSpec spec) : spec_(std::move(spec)) {
  if (spec_.width < 16 || spec_.height < 16 || !(spec_.fps > 0) || !(spec_.duration_s > 0) ||
      !(spec_.body_scale > 0)) {
    throw UsageError("invalid synthetic clip spec");
  }
  std::mt19937_64 rng(spec_.seed);
  std::uniform_real_distribution<double> uni(0.0, 1.0);
  auto range = [&](double lo, double hi) { return lo + (hi - lo) * uni(rng); };

  switch (spec_.profile) {
    case MotionProfile::WM_like:
      for (auto& m : motion_) {
        const double a = range(25, 40);
        m.waves.push_back({a, a * range(0.5, 0.9), range(0.2, 0.5), range(0, 2 * kPi)});
        m.drift_freq = range(0.03, 0.08);
        m.drift_phase = range(0, 2 * kPi);
        m.drift_depth = range(0.5, 1.0);
      }
      break;
    case MotionProfile::FM_like:
      for (auto& m : motion_) {
        const double a = range(3, 8);
        for (double share : {0.6, 0.4}) {
          m.waves.push_back(
              {a * share, a * share * range(0.3, 1.0), range(1.5, 3.0), range(0, 2 * kPi)});
        }
        m.jitter_px = 0.75;
      }
      break;
    case MotionProfile::PR_like: {
      const double a = range(10, 15);
      const Wave shared{a, 0.0, 0.8, range(0, 2 * kPi)};
      for (auto& m : motion_) m.waves = {shared};
      break;
    }
  }
  // Each limb's path is tilted by a random angle; PR limbs share theirs.
  const double shared_tilt = range(0, kPi);
  tilts_.fill(shared_tilt);
  if (spec_.profile != MotionProfile::PR_like) {
    for (double& t : tilts_) t = range(0, kPi);
  }
  background_ = make_background(spec_);
}

SynthTransform SynthRenderer::transform() const {
  SynthTransform tf;
  tf.rotation_deg = spec_.rotation_deg;
  tf.scale = spec_.body_scale;
  tf.translation = spec_.translation;
  tf.canvas_center = frame_center(cv::Size(spec_.width, spec_.height));
  return tf;
}

cv::Point2d SynthRenderer::tip_offset(Limb limb, double t, int frame_index) const {
  const int k = static_cast<int>(limb);
  if (!spec_.active_limbs[k]) return {0, 0};
  const LimbMotion& m = motion_[k];
  cv::Point2d d(0, 0);
  const double drift = m.drift_depth * std::sin(2 * kPi * m.drift_freq * t + m.drift_phase);
  for (const auto& w : m.waves) {
    const double psi = 2 * kPi * w.freq * t + w.phase + drift;
    d.x += w.amplitude_x * std::cos(psi);
    d.y += w.amplitude_y * std::sin(psi);
  }
  if (m.jitter_px > 0) {
    std::seed_seq seq{static_cast<std::uint64_t>(spec_.seed), static_cast<std::uint64_t>(frame_index),
                      static_cast<std::uint64_t>(k), std::uint64_t{0x51}};
    std::mt19937_64 rng(seq);
    std::normal_distribution<double> n(0.0, m.jitter_px);
    d.x += n(rng);
    d.y += n(rng);
  }
  const double c = std::cos(tilts_[k]), s = std::sin(tilts_[k]);
  return {c * d.x - s * d.y, s * d.x + c * d.y};
}

SynthRenderer::Frame SynthRenderer::render(int index) const {
  const double t = index / spec_.fps;
  const SynthTransform tf = transform();
  Frame f;
  f.rgb = background_.clone();
  f.mask = cv::Mat::zeros(spec_.height, spec_.width, CV_8U);
  if (spec_.limb_masks) f.limb_mask = cv::Mat::zeros(spec_.height, spec_.width, CV_8U);

  auto draw = [&](const std::vector<cv::Point2d>& body_poly, const cv::Vec3b& color) {
    const auto poly = to_canvas(tf, body_poly);
    fill(f.rgb, poly, cv::Scalar(color[0], color[1], color[2]));
    fill(f.mask, poly, cv::Scalar(255));
  };

  std::array<std::array<std::vector<cv::Point2d>, 2>, 4> limb_polys;
  for (int k = 0; k < 4; ++k) {
    const Limb limb = static_cast<Limb>(k);
    LimbGeometry g = rest_geometry(limb);
    const cv::Point2d d = tip_offset(limb, t, index);
    g.mid += 0.5 * d;
    g.tip += d;
    limb_polys[k] = {capsule_polygon(g.root, g.mid, g.radius),
                     capsule_polygon(g.mid, g.tip, g.radius)};
    f.limb_tips[k] = tf.apply(g.tip);
  }
  // Legs under the torso, arms and head on top.
  for (int k : {2, 3}) {
    for (const auto& p : limb_polys[k]) draw(p, kSkin);
  }
  draw(ellipse_polygon({0, 0}, kTorsoAxes), kCloth);
  for (int k : {0, 1}) {
    for (const auto& p : limb_polys[k]) draw(p, kSkin);
  }
  draw(ellipse_polygon(kHeadCenter, {kHeadRadius, kHeadRadius}), kSkin);

  if (spec_.limb_masks) {
    for (int k = 0; k < 4; ++k) {
      cv::Mat one = cv::Mat::zeros(spec_.height, spec_.width, CV_8U);
      for (const auto& p : limb_polys[k]) fill(one, to_canvas(tf, p), cv::Scalar(1 << k));
      cv::bitwise_or(f.limb_mask, one, f.limb_mask);
    }
  }

  const std::array<cv::Point2d, 4> body_joints = {cv::Point2d(-kShoulder.x, kShoulder.y),
                                                   kShoulder, cv::Point2d(-kHip.x, kHip.y),
                                                   kHip};
  for (int j = 0; j < 4; ++j) {
    f.pose.joints[j] = tf.apply(body_joints[j]);
    f.pose.confidence[j] = 1.0;
  }
  return f;
}

SynthClip generate(const SynthSpec& spec) {
  const SynthRenderer renderer(spec);
  SynthClip out;
  out.clip.fps = spec.fps;
  out.clip.clip_id = "synth";
  out.truth.transform = renderer.transform();
  const int n = spec.frame_count();
  for (int i = 0; i < n; ++i) {
    SynthRenderer::Frame f = renderer.render(i);
    out.clip.frames.push_back(std::move(f.rgb));
    out.truth.masks.push_back(std::move(f.mask));
    if (spec.limb_masks) out.truth.limb_masks.push_back(std::move(f.limb_mask));
    out.truth.poses.push_back(f.pose);
    out.truth.limb_tips.push_back(f.limb_tips);
  }
  return out;
}

GroundTruth GroundTruth::decimated(int step) const {
  if (step < 1) throw UsageError("decimation step must be >= 1");
  GroundTruth out;
  out.transform = transform;
  for (std::size_t i = 0; i < poses.size(); i += static_cast<std::size_t>(step)) {
    out.poses.push_back(poses[i]);
    if (i < limb_tips.size()) out.limb_tips.push_back(limb_tips[i]);
    if (i < masks.size()) out.masks.push_back(masks[i]);
    if (i < limb_masks.size()) out.limb_masks.push_back(limb_masks[i]);
  }
  return out;
}

cv::Mat GroundTruth::limb_region(Limb limb, int begin, int end) const {
  if (limb_masks.empty()) throw UsageError("ground truth has no limb masks");
  if (begin < 0 || end > static_cast<int>(limb_masks.size()) || begin >= end) {
    throw UsageError("limb region frame range out of bounds");
  }
  const uchar bit = static_cast<uchar>(1 << static_cast<int>(limb));
  cv::Mat region = cv::Mat::zeros(limb_masks[begin].size(), CV_8U);
  for (int i = begin; i < end; ++i) {
    cv::Mat hit;
    cv::bitwise_and(limb_masks[i], cv::Scalar(bit), hit);
    region.setTo(255, hit > 0);
  }
  return region;
}

fs::path write_synth_clip(const SynthClip& clip, const fs::path& dir) {
  ClipWriter writer(dir, !clip.truth.limb_masks.empty());
  for (std::size_t i = 0; i < clip.clip.size(); ++i) {
    writer.add(clip.clip.frames[i], clip.truth.masks.at(i),
               clip.truth.limb_masks.empty() ? cv::Mat() : clip.truth.limb_masks[i],
               clip.truth.poses.at(i), clip.truth.limb_tips.at(i));
  }
  return writer.finish(clip.clip.fps, clip.truth.transform);
}

GroundTruth load_ground_truth(const fs::path& index_path) {
  const SequenceIndex idx = read_sequence_index(index_path);
  return load_ground_truth(index_path, 0.0, idx.frame_count / idx.fps);
}

GroundTruth load_ground_truth(const fs::path& index_path, double start_s, double end_s) {
  const SequenceIndex idx = read_sequence_index(index_path);
  if (!idx.ground_truth) {
    throw DataError("no ground truth recorded for " + index_path.string());
  }
  const fs::path dir = index_path.parent_path();
  std::ifstream in(dir / *idx.ground_truth);
  if (!in) throw DataError("cannot open ground truth for " + index_path.string());
  const FrameWindow win = frame_window(idx.fps, start_s, end_s);

  GroundTruth gt;
  try {
    nlohmann::json j;
    in >> j;
    const auto& tf = j.at("transform");
    gt.transform.rotation_deg = tf.at("rotation_deg").get<double>();
    gt.transform.scale = tf.at("scale").get<double>();
    gt.transform.translation = json_point(tf.at("translation"));
    gt.transform.canvas_center = json_point(tf.at("canvas_center"));
    const auto& frames = j.at("frames");
    if (win.begin < 0 || win.end > static_cast<int>(frames.size())) {
      throw DataError("ground truth window exceeds " + index_path.string());
    }
    const std::string mask_pattern = j.value("mask_pattern", kMaskPattern);
    const std::string limb_pattern = j.value("limb_pattern", "");
    for (int i = win.begin; i < win.end; ++i) {
      const auto& fj = frames[static_cast<std::size_t>(i)];
      PoseEstimate pose;
      std::array<cv::Point2d, 4> tips{};
      for (int k = 0; k < 4; ++k) {
        pose.joints[k] = json_point(fj.at("joints").at(k));
        pose.confidence[k] = 1.0;
        tips[k] = json_point(fj.at("tips").at(k));
      }
      gt.poses.push_back(pose);
      gt.limb_tips.push_back(tips);
      gt.masks.push_back(read_mask(dir / format_pattern(mask_pattern, i)));
      if (!limb_pattern.empty()) {
        gt.limb_masks.push_back(read_mask(dir / format_pattern(limb_pattern, i)));
      }
    }
  } catch (const nlohmann::json::exception& e) {
    throw DataError("malformed ground truth for " + index_path.string() + ": " + e.what());
  }
  return gt;
}

SynthSpec dataset_clip_spec(const DatasetSpec& spec, GmsLabel label, int index) {
  std::seed_seq seq{static_cast<std::uint64_t>(spec.seed),
                    static_cast<std::uint64_t>(index_of(label)),
                    static_cast<std::uint64_t>(index)};
  std::mt19937_64 rng(seq);
  std::uniform_real_distribution<double> uni(-1.0, 1.0);
  SynthSpec s;
  s.profile = profile_for(label);
  s.duration_s = spec.duration_s;
  s.fps = spec.fps;
  s.width = spec.width;
  s.height = spec.height;
  s.rotation_deg = spec.max_rotation_deg * uni(rng);
  s.body_scale = 1.0 + spec.max_scale_change * uni(rng);
  s.translation = {spec.max_translation_px * uni(rng), spec.max_translation_px * uni(rng)};
  s.background = uni(rng) < 0.0 ? SynthBackground::plain : SynthBackground::clutter;
  s.seed = rng();
  s.limb_masks = spec.limb_masks;
  return s;
}

DatasetManifest generate_dataset(const DatasetSpec& spec, const fs::path& out_dir) {
  if (spec.n_per_class < 1) throw UsageError("n_per_class must be >= 1");
  std::error_code ec;
  fs::create_directories(out_dir, ec);
  if (ec || !fs::is_directory(out_dir)) {
    throw DataError("cannot create output directory " + out_dir.string());
  }
  DatasetManifest manifest;
  for (GmsLabel label : kAllLabels) {
    for (int i = 0; i < spec.n_per_class; ++i) {
      const SynthSpec s = dataset_clip_spec(spec, label, i);
      std::string lower(to_string(label));
      for (char& c : lower) c = static_cast<char>(std::tolower(c));
      char id[64];
      std::snprintf(id, sizeof(id), "synth_%s_%03d", lower.c_str(), i);

      const SynthRenderer renderer(s);
      ClipWriter writer(out_dir / id, s.limb_masks);
      for (int f = 0; f < s.frame_count(); ++f) {
        const auto frame = renderer.render(f);
        writer.add(frame.rgb, frame.mask, frame.limb_mask, frame.pose, frame.limb_tips);
      }
      ManifestEntry e;
      e.clip_id = id;
      e.infant_id = std::string("infant_") + id;
      e.video_path = fs::absolute(writer.finish(s.fps, renderer.transform()));
      e.label = label;
      e.clip_start_s = 0.0;
      e.clip_end_s = s.duration_s;
      manifest.entries.push_back(std::move(e));
    }
  }
  save_manifest(manifest, out_dir / "manifest.csv");
  return manifest;
}

}  // namespace gma
