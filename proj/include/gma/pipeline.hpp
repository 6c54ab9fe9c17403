#pragma once

#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "gma/cache.hpp"
#include "gma/core.hpp"
#include "gma/flow.hpp"
#include "gma/pose_align.hpp"
#include "gma/segmentation.hpp"
#include "gma/synthdata.hpp"

namespace gma {

/// A manifest clip with its ground truth when the media index records one.
struct LoadedClip {
  VideoClip clip;
  std::optional<GroundTruth> truth;
};

LoadedClip load_clip(const ManifestEntry& entry);

/// "ground_truth" | "luminance" | "model:<onnx path>". The ground-truth
/// backend needs `truth`.
std::unique_ptr<SegmentationBackend> make_segmentation_backend(const std::string& spec,
                                                               const VideoClip& clip,
                                                               const GroundTruth* truth);

/// "ground_truth" | "model:<weights>[,<config>]".
std::unique_ptr<PoseBackend> make_pose_backend(const std::string& spec,
                                               const GroundTruth* truth);

struct PreprocessResult {
  VideoClip masked;    // resampled, body-extracted when enabled
  VideoClip adjusted;  // crop_size x crop_size
  std::vector<FlowPair> flows;
  std::optional<AdjustmentParams> adjustment;
  bool pose_on_unmasked = false;
};

/// Resample to target_fps, extract the body, normalize the position (or
/// plainly resize when the adjuster is off) and compute flows. `truth` is
/// in the clip's native frame rate.
PreprocessResult preprocess_clip(const VideoClip& clip, const GroundTruth* truth,
                                 const PipelineConfig& config);

/// Preprocesses one manifest entry into the cache unless all stages are
/// already cached for this config. Returns true when work was done.
bool preprocess_entry(const ManifestEntry& entry, const PipelineConfig& config,
                      const Cache& cache, bool force = false);

/// preprocess_entry over the manifest with `workers` threads. The first
/// failure is rethrown after all workers stop.
void preprocess_manifest(const DatasetManifest& manifest, const PipelineConfig& config,
                         const Cache& cache, int workers, bool force = false);

}  // namespace gma
