#pragma once

#include <array>
#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "gma/cache.hpp"
#include "gma/chunker.hpp"
#include "gma/core.hpp"
#include "gma/model.hpp"

namespace gma {

// ---------------------------------------------------------------------------
// Folds
// ---------------------------------------------------------------------------

struct FoldSplit {
  int fold_id = 0;
  std::vector<std::string> train_ids;  // infant ids, sorted
  std::vector<std::string> val_ids;
};

/// Stratified infant-wise K-fold split. Each class's infants are shuffled
/// with the seed and dealt round-robin over the folds, the dealing position
/// carrying over from one class to the next. Throws UsageError for K < 2 and
/// DataError when a class has fewer than K infants or an infant carries two
/// labels.
std::vector<FoldSplit> make_folds(const DatasetManifest& manifest, int k, std::uint64_t seed);

// ---------------------------------------------------------------------------
// Metrics
// ---------------------------------------------------------------------------

using Confusion = std::array<std::array<long, kNumClasses>, kNumClasses>;  // [true][pred]

struct MetricReport {
  double accuracy = 0.0;
  double mcc = 0.0;
  double precision = 0.0;  // macro
  double recall = 0.0;     // macro
  Confusion confusion{};
  std::uint64_t seed = 0;
};

/// K-category MCC: (c*s - sum_k p_k t_k) / sqrt((s^2 - sum p_k^2)(s^2 - sum t_k^2)),
/// 0 when the denominator vanishes.
double multiclass_mcc(const Confusion& confusion);

/// Pairs are (true, predicted). Classes absent from both truth and
/// prediction contribute 0 to the macro averages and raise a warning.
MetricReport compute_metrics(std::span<const std::pair<GmsLabel, GmsLabel>> predictions);
MetricReport compute_metrics(const Confusion& confusion);

nlohmann::json to_json(const MetricReport& report);

// ---------------------------------------------------------------------------
// Preprocessed data
// ---------------------------------------------------------------------------

struct ClipRecord {
  std::string clip_id;
  std::string infant_id;
  GmsLabel label = GmsLabel::WM;
  int num_frames = 0;
  int size = 0;  // crop side
  int num_chunks = 0;
};

/// Chunks of cached clips, read from the cache on demand so a dataset never
/// has to fit in memory.
class ChunkDataset {
 public:
  /// Throws DataError naming the clip when a stage is missing from the cache.
  ChunkDataset(const DatasetManifest& manifest, const PipelineConfig& config, Cache cache);

  const std::vector<ClipRecord>& clips() const { return clips_; }
  const PipelineConfig& config() const { return config_; }

  TemporalChunk chunk(std::size_t clip, int n) const;
  std::vector<TemporalChunk> chunks(std::size_t clip) const;

  /// Indices of clips whose infant is in `infant_ids`.
  std::vector<std::size_t> clips_of(std::span<const std::string> infant_ids) const;

 private:
  PipelineConfig config_;
  Cache cache_;
  std::string adjusted_hash_;
  std::string flow_hash_;
  std::vector<ClipRecord> clips_;
};

// ---------------------------------------------------------------------------
// Training
// ---------------------------------------------------------------------------

struct VideoOutcome {
  std::string clip_id;
  std::string infant_id;
  GmsLabel truth = GmsLabel::WM;
  GmsLabel predicted = GmsLabel::WM;
  std::array<double, kNumClasses> probs{};
};

struct EpochLog {
  int epoch = 0;  // 0 = before training
  double train_loss = 0.0;
  double val_accuracy = 0.0;
  double val_mcc = 0.0;
};

struct TrainResult {
  TwoStreamModel model;  // best by validation MCC
  MetricReport report;   // validation metrics of `model`
  int best_epoch = 0;
  std::vector<double> loss_curve;  // mean chunk loss per epoch
  std::vector<EpochLog> history;
  std::vector<VideoOutcome> val_outcomes;
};

struct TrainHooks {
  std::function<void(const EpochLog&)> on_epoch;
  /// Called for every training sample after augmentation.
  std::function<void(std::size_t clip, const TemporalChunk&, GmsLabel, bool flipped)> on_sample;
};

/// Video-level predictions for the given clips.
std::vector<VideoOutcome> predict_clips(const TwoStreamModel& model, const ChunkDataset& data,
                                        std::span<const std::size_t> clips);

/// Fine-tunes a fresh model on the fold's training infants with AdamW,
/// mini-batches of chunks and horizontal-flip augmentation, scoring the
/// validation infants after every epoch. Deterministic for a fixed
/// config.seed and fold.
TrainResult train_fold(const FoldSplit& fold, const ChunkDataset& data,
                       const PipelineConfig& config, const TrainHooks& hooks = {});

struct SeedResult {
  std::uint64_t seed = 0;
  std::vector<FoldSplit> folds;
  std::vector<MetricReport> fold_reports;
  std::vector<std::vector<double>> loss_curves;
  std::vector<VideoOutcome> outcomes;  // pooled over folds
  MetricReport pooled;
};

struct MeanStd {
  double mean = 0.0;
  double std = 0.0;  // population
};

struct CvReport {
  std::vector<SeedResult> seeds;
  MeanStd accuracy, mcc, precision, recall;
};

/// Trains one model per fold; overridable so tests can stub training.
using FoldTrainer = std::function<TrainResult(const FoldSplit&, const PipelineConfig&)>;

/// Per seed: K folds, predictions pooled across folds and scored once.
/// Summary is mean and population standard deviation over seeds.
CvReport run_cv(const DatasetManifest& manifest, int k, std::span<const std::uint64_t> seeds,
                const PipelineConfig& config, const FoldTrainer& trainer);
/// Same, training with train_fold on `data`.
CvReport run_cv(const ChunkDataset& data, const DatasetManifest& manifest, int k,
                std::span<const std::uint64_t> seeds, const PipelineConfig& config,
                const TrainHooks& hooks = {});

MeanStd mean_std(std::span<const double> values);

nlohmann::json to_json(const CvReport& report);
/// Method,Accuracy,MCC,Precision,Recall with "mean ± std" cells.
std::string summary_csv(const std::vector<std::pair<std::string, CvReport>>& rows);

}  // namespace gma
