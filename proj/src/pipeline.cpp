#include "gma/pipeline.hpp"

#include <atomic>
#include <exception>
#include <mutex>
#include <thread>

#include <opencv2/imgproc.hpp>

#include "gma/errors.hpp"
#include "gma/log.hpp"
#include "gma/video_io.hpp"

namespace gma {

namespace {

constexpr double kMinValidFraction = 0.2;

std::string model_path(const std::string& spec) {
  return spec.substr(std::string("model:").size());
}

bool is_model_spec(const std::string& spec) { return spec.rfind("model:", 0) == 0; }

}  // namespace

LoadedClip load_clip(const ManifestEntry& entry) {
  LoadedClip out;
  out.clip = load_video(entry.video_path, entry.clip_start_s, entry.clip_end_s, entry.clip_id,
                        entry.infant_id);
  if (entry.video_path.extension() == ".json" &&
      read_sequence_index(entry.video_path).ground_truth) {
    out.truth = load_ground_truth(entry.video_path, entry.clip_start_s, entry.clip_end_s);
    if (out.truth->size() != out.clip.size()) {
      throw DataError("ground truth of '" + entry.clip_id + "' has " +
                      std::to_string(out.truth->size()) + " frames, video has " +
                      std::to_string(out.clip.size()));
    }
  }
  return out;
}

std::unique_ptr<SegmentationBackend> make_segmentation_backend(const std::string& spec,
                                                               const VideoClip& clip,
                                                               const GroundTruth* truth) {
  if (spec == "ground_truth") {
    if (!truth || truth->masks.empty()) {
      throw DataError("clip '" + clip.clip_id + "' has no ground-truth masks");
    }
    return std::make_unique<GroundTruthSegmentation>(truth->masks);
  }
  if (spec == "luminance") return luminance_baseline_backend(clip);
  if (is_model_spec(spec)) return std::make_unique<DnnSegmentation>(model_path(spec));
  throw UsageError("unknown segmentation backend '" + spec + "'");
}

std::unique_ptr<PoseBackend> make_pose_backend(const std::string& spec,
                                               const GroundTruth* truth) {
  if (spec == "ground_truth") {
    if (!truth) throw DataError("clip has no ground-truth pose");
    return std::make_unique<GroundTruthPose>(truth->poses);
  }
  if (is_model_spec(spec)) {
    const std::string rest = model_path(spec);
    const auto comma = rest.find(',');
    if (comma == std::string::npos) return std::make_unique<DnnPose>(rest);
    return std::make_unique<DnnPose>(rest.substr(0, comma), rest.substr(comma + 1));
  }
  throw UsageError("unknown pose backend '" + spec + "'");
}

PreprocessResult preprocess_clip(const VideoClip& clip, const GroundTruth* truth,
                                 const PipelineConfig& config) {
  config.validate();
  clip.validate();
  PreprocessResult out;
  const VideoClip resampled = resample_fps(clip, config.target_fps);
  std::optional<GroundTruth> truth_r;
  if (truth) truth_r = truth->decimated(decimation_step(clip.fps, config.target_fps));
  const GroundTruth* gt = truth_r ? &*truth_r : nullptr;

  if (config.enable_extractor) {
    const auto seg = make_segmentation_backend(config.segmentation_backend, resampled, gt);
    out.masked = extract_body(resampled, *seg, config.mask_threshold);
  } else {
    out.masked = resampled;
  }

  if (config.enable_adjuster) {
    const auto pose = make_pose_backend(config.pose_backend, gt);
    std::optional<AdjustmentParams> params;
    try {
      params = estimate_adjustment(out.masked, *pose, config.alpha, config.min_conf);
    } catch (const DataError&) {
      if (!config.enable_extractor) throw;
    }
    if (config.enable_extractor &&
        (!params || params->valid_frame_fraction < kMinValidFraction)) {
      warn("clip '" + clip.clip_id +
           "': too few valid poses on masked frames, estimating on unmasked frames");
      params = estimate_adjustment(resampled, *pose, config.alpha, config.min_conf);
      out.pose_on_unmasked = true;
    }
    out.adjustment = params;
    out.adjusted = apply_adjustment(out.masked, *params, config.crop_size);
  } else {
    std::vector<cv::Mat> frames;
    frames.reserve(out.masked.size());
    for (const auto& f : out.masked.frames) {
      cv::Mat r;
      cv::resize(f, r, cv::Size(config.crop_size, config.crop_size), 0, 0, cv::INTER_LINEAR);
      frames.push_back(std::move(r));
    }
    out.adjusted = out.masked.with_frames(std::move(frames));
  }
  out.flows = compute_flow(out.adjusted);
  return out;
}

bool preprocess_entry(const ManifestEntry& entry, const PipelineConfig& config,
                      const Cache& cache, bool force) {
  const std::string h_masked = stage_config_hash(config, Stage::masked);
  const std::string h_adjusted = stage_config_hash(config, Stage::adjusted);
  const std::string h_flow = stage_config_hash(config, Stage::flow);
  if (!force && cache.stat(entry.clip_id, Stage::masked, h_masked) &&
      cache.stat(entry.clip_id, Stage::adjusted, h_adjusted) &&
      cache.stat(entry.clip_id, Stage::flow, h_flow)) {
    return false;
  }
  const LoadedClip loaded = load_clip(entry);
  const PreprocessResult r =
      preprocess_clip(loaded.clip, loaded.truth ? &*loaded.truth : nullptr, config);
  cache.put_frames(entry.clip_id, Stage::masked, h_masked, r.masked.frames);
  cache.put_frames(entry.clip_id, Stage::adjusted, h_adjusted, r.adjusted.frames);
  cache.put_flows(entry.clip_id, h_flow, r.flows);
  nlohmann::json report = {{"clip_id", entry.clip_id},
                           {"frames", r.adjusted.size()},
                           {"enable_extractor", config.enable_extractor},
                           {"enable_adjuster", config.enable_adjuster},
                           {"hashes",
                            {{"masked", h_masked}, {"adjusted", h_adjusted}, {"flow", h_flow}}}};
  if (r.adjustment) {
    report["adjuster"] = r.adjustment->report();
    report["adjuster"]["pose_on_unmasked"] = r.pose_on_unmasked;
    cache.put_report(entry.clip_id, "adjuster", report["adjuster"]);
  }
  cache.put_report(entry.clip_id, "preprocess", report);
  return true;
}

void preprocess_manifest(const DatasetManifest& manifest, const PipelineConfig& config,
                         const Cache& cache, int workers, bool force) {
  if (workers < 1) throw UsageError("workers must be >= 1");
  std::atomic<std::size_t> next{0};
  std::atomic<bool> failed{false};
  std::exception_ptr first_error;
  std::mutex error_mutex;
  auto work = [&] {
    for (;;) {
      const std::size_t i = next++;
      if (i >= manifest.entries.size() || failed) return;
      try {
        preprocess_entry(manifest.entries[i], config, cache, force);
      } catch (...) {
        std::lock_guard lock(error_mutex);
        if (!first_error) first_error = std::current_exception();
        failed = true;
      }
    }
  };
  if (workers == 1) {
    work();
  } else {
    std::vector<std::jthread> pool;
    for (int w = 0; w < workers; ++w) pool.emplace_back(work);
  }
  if (first_error) std::rethrow_exception(first_error);
}

}  // namespace gma
