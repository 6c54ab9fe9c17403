#include "gma/train_eval.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <map>
#include <random>
#include <set>
#include <sstream>

#include "gma/errors.hpp"
#include "gma/log.hpp"
#include "gma/nn/optim.hpp"

namespace gma {

// ---------------------------------------------------------------------------
// Folds
// ---------------------------------------------------------------------------

std::vector<FoldSplit> make_folds(const DatasetManifest& manifest, int k, std::uint64_t seed) {
  if (k < 2) throw UsageError("fold count must be >= 2");
  std::map<std::string, GmsLabel> infant_label;
  for (const auto& e : manifest.entries) {
    const auto [it, inserted] = infant_label.emplace(e.infant_id, e.label);
    if (!inserted && it->second != e.label) {
      throw DataError("infant '" + e.infant_id + "' has clips with different labels");
    }
  }
  std::array<std::vector<std::string>, kNumClasses> by_class;
  for (const auto& [infant, label] : infant_label) by_class[index_of(label)].push_back(infant);
  for (GmsLabel label : kAllLabels) {
    const auto& ids = by_class[index_of(label)];
    if (static_cast<int>(ids.size()) < k) {
      throw DataError("class " + std::string(to_string(label)) + " has " +
                      std::to_string(ids.size()) + " infants, fewer than " +
                      std::to_string(k) + " folds");
    }
  }

  std::mt19937_64 rng(seed);
  std::vector<std::vector<std::string>> val(k);
  int position = 0;
  for (auto& ids : by_class) {
    // Fisher-Yates with our own draws so the split does not depend on the
    // standard library's shuffle.
    for (std::size_t i = ids.size(); i > 1; --i) {
      const std::size_t j = rng() % i;
      std::swap(ids[i - 1], ids[j]);
    }
    for (const auto& id : ids) val[position++ % k].push_back(id);
  }

  std::vector<FoldSplit> folds(k);
  for (int f = 0; f < k; ++f) {
    folds[f].fold_id = f;
    folds[f].val_ids = val[f];
    std::sort(folds[f].val_ids.begin(), folds[f].val_ids.end());
    for (int g = 0; g < k; ++g) {
      if (g == f) continue;
      folds[f].train_ids.insert(folds[f].train_ids.end(), val[g].begin(), val[g].end());
    }
    std::sort(folds[f].train_ids.begin(), folds[f].train_ids.end());
  }
  return folds;
}

// ---------------------------------------------------------------------------
// Metrics
// ---------------------------------------------------------------------------

double multiclass_mcc(const Confusion& m) {
  double s = 0, c = 0;
  std::array<double, kNumClasses> t{}, p{};
  for (int i = 0; i < kNumClasses; ++i) {
    for (int j = 0; j < kNumClasses; ++j) {
      s += m[i][j];
      t[i] += m[i][j];
      p[j] += m[i][j];
    }
    c += m[i][i];
  }
  double pt = 0, pp = 0, tt = 0;
  for (int k = 0; k < kNumClasses; ++k) {
    pt += p[k] * t[k];
    pp += p[k] * p[k];
    tt += t[k] * t[k];
  }
  const double denom = std::sqrt((s * s - pp) * (s * s - tt));
  if (!(denom > 0)) return 0.0;
  return (c * s - pt) / denom;
}

MetricReport compute_metrics(const Confusion& confusion) {
  MetricReport r;
  r.confusion = confusion;
  long total = 0, correct = 0;
  std::array<long, kNumClasses> rows{}, cols{};
  for (int i = 0; i < kNumClasses; ++i) {
    for (int j = 0; j < kNumClasses; ++j) {
      if (confusion[i][j] < 0) throw UsageError("negative confusion count");
      total += confusion[i][j];
      rows[i] += confusion[i][j];
      cols[j] += confusion[i][j];
    }
    correct += confusion[i][i];
  }
  if (total == 0) throw UsageError("cannot compute metrics of zero predictions");
  r.accuracy = static_cast<double>(correct) / static_cast<double>(total);
  r.mcc = multiclass_mcc(confusion);
  for (int k = 0; k < kNumClasses; ++k) {
    const auto name = std::string(to_string(label_from_index(k)));
    if (rows[k] == 0 && cols[k] == 0) {
      warn("class " + name + " absent from truth and predictions; counts as 0 in macro averages");
    }
    if (cols[k] > 0) r.precision += static_cast<double>(confusion[k][k]) / cols[k];
    if (rows[k] > 0) r.recall += static_cast<double>(confusion[k][k]) / rows[k];
  }
  r.precision /= kNumClasses;
  r.recall /= kNumClasses;
  return r;
}

MetricReport compute_metrics(std::span<const std::pair<GmsLabel, GmsLabel>> predictions) {
  if (predictions.empty()) throw UsageError("cannot compute metrics of zero predictions");
  Confusion m{};
  for (const auto& [truth, pred] : predictions) ++m[index_of(truth)][index_of(pred)];
  return compute_metrics(m);
}

nlohmann::json to_json(const MetricReport& r) {
  nlohmann::json confusion = nlohmann::json::array();
  for (const auto& row : r.confusion) confusion.push_back(row);
  return {{"accuracy", r.accuracy}, {"mcc", r.mcc},        {"precision", r.precision},
          {"recall", r.recall},     {"confusion", confusion}, {"seed", r.seed}};
}

// ---------------------------------------------------------------------------
// Preprocessed data
// ---------------------------------------------------------------------------

ChunkDataset::ChunkDataset(const DatasetManifest& manifest, const PipelineConfig& config,
                           Cache cache)
    : config_(config),
      cache_(std::move(cache)),
      adjusted_hash_(stage_config_hash(config, Stage::adjusted)),
      flow_hash_(stage_config_hash(config, Stage::flow)) {
  config_.validate();
  for (const auto& e : manifest.entries) {
    const auto frames = cache_.stat(e.clip_id, Stage::adjusted, adjusted_hash_);
    const auto flows = cache_.stat(e.clip_id, Stage::flow, flow_hash_);
    if (!frames || !flows) {
      throw DataError("cache miss for clip '" + e.clip_id + "' (stage " +
                      (frames ? "flow" : "adjusted") + "); run preprocess first");
    }
    const auto& fs_ = frames->shape;
    const auto& fl = flows->shape;
    if (fs_.size() != 4 || fl.size() != 4 || fl[0] + 1 != fs_[0] || fl[2] != fs_[1] ||
        fl[3] != fs_[2] || fs_[1] != fs_[2] || fs_[1] != config_.crop_size) {
      throw DataError("cached stages of clip '" + e.clip_id + "' are inconsistent");
    }
    ClipRecord r;
    r.clip_id = e.clip_id;
    r.infant_id = e.infant_id;
    r.label = e.label;
    r.num_frames = static_cast<int>(fs_[0]);
    r.size = static_cast<int>(fs_[1]);
    r.num_chunks = count_chunks(r.num_frames, config_.chunk_length, config_.chunk_stride,
                                config_.pad_last_chunk);
    clips_.push_back(std::move(r));
  }
}

TemporalChunk ChunkDataset::chunk(std::size_t clip, int n) const {
  const ClipRecord& r = clips_.at(clip);
  if (n < 1 || n > r.num_chunks) {
    throw UsageError("clip '" + r.clip_id + "' has no chunk " + std::to_string(n));
  }
  const int l = config_.chunk_length;
  const ChunkIndices idx = chunk_indices(n, l, config_.chunk_stride);
  const std::size_t frame_bytes = static_cast<std::size_t>(r.size) * r.size * 3;
  const auto frame = cache_.read_range(r.clip_id, Stage::adjusted,
                                       frame_bytes * idx.spatial_index, frame_bytes);
  const int first = idx.flow_indices.front();
  const int count = std::min(l, r.num_frames - 1 - first);
  const std::size_t plane = static_cast<std::size_t>(r.size) * r.size * sizeof(float);
  const auto flow_bytes = cache_.read_range(r.clip_id, Stage::flow, 2 * plane * first,
                                            2 * plane * static_cast<std::size_t>(count));
  if (!frame || !flow_bytes) throw DataError("short read from cache for clip '" + r.clip_id + "'");

  cv::Mat spatial(r.size, r.size, CV_8UC3);
  std::memcpy(spatial.data, frame->data(), frame_bytes);
  std::vector<FlowPair> flows(count);
  for (int k = 0; k < count; ++k) {
    flows[k].t = first + k;
    flows[k].dh.create(r.size, r.size, CV_32F);
    flows[k].dv.create(r.size, r.size, CV_32F);
    std::memcpy(flows[k].dh.data, flow_bytes->data() + (2 * k) * plane, plane);
    std::memcpy(flows[k].dv.data, flow_bytes->data() + (2 * k + 1) * plane, plane);
  }
  return assemble_chunk(n, l, config_.chunk_stride, spatial, flows, config_.flow_clip_bound);
}

std::vector<TemporalChunk> ChunkDataset::chunks(std::size_t clip) const {
  std::vector<TemporalChunk> out;
  for (int n = 1; n <= clips_.at(clip).num_chunks; ++n) out.push_back(chunk(clip, n));
  return out;
}

std::vector<std::size_t> ChunkDataset::clips_of(std::span<const std::string> infant_ids) const {
  const std::set<std::string> wanted(infant_ids.begin(), infant_ids.end());
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < clips_.size(); ++i) {
    if (wanted.count(clips_[i].infant_id)) out.push_back(i);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Training
// ---------------------------------------------------------------------------

std::vector<VideoOutcome> predict_clips(const TwoStreamModel& model, const ChunkDataset& data,
                                        std::span<const std::size_t> clips) {
  std::vector<VideoOutcome> out;
  for (std::size_t i : clips) {
    const ClipRecord& r = data.clips().at(i);
    if (r.num_chunks == 0) throw DataError("clip '" + r.clip_id + "' is too short for one chunk");
    std::vector<PredictionScore> scores;
    for (int n = 1; n <= r.num_chunks; ++n) scores.push_back(classify_chunk(data.chunk(i, n), model));
    const VideoPrediction v = classify_video(scores);
    out.push_back({r.clip_id, r.infant_id, r.label, v.label, v.score.probs});
  }
  return out;
}

namespace {

MetricReport score(const std::vector<VideoOutcome>& outcomes) {
  std::vector<std::pair<GmsLabel, GmsLabel>> pairs;
  for (const auto& o : outcomes) pairs.emplace_back(o.truth, o.predicted);
  return compute_metrics(pairs);
}

}  // namespace

TrainResult train_fold(const FoldSplit& fold, const ChunkDataset& data,
                       const PipelineConfig& config, const TrainHooks& hooks) {
  config.validate();
  const auto train_clips = data.clips_of(fold.train_ids);
  const auto val_clips = data.clips_of(fold.val_ids);
  std::vector<std::pair<std::size_t, int>> samples;
  for (std::size_t i : train_clips) {
    for (int n = 1; n <= data.clips()[i].num_chunks; ++n) samples.emplace_back(i, n);
  }
  if (samples.empty()) throw DataError("fold " + std::to_string(fold.fold_id) + " has no training chunks");
  if (val_clips.empty()) throw DataError("fold " + std::to_string(fold.fold_id) + " has no validation clips");

  std::seed_seq seq{static_cast<std::uint64_t>(config.seed),
                    static_cast<std::uint64_t>(fold.fold_id), std::uint64_t{0x67}};
  std::mt19937_64 rng(seq);
  ModelConfig mc = model_config_from(config);
  mc.seed = rng();
  TwoStreamModel model(mc);
  nn::AdamW optimizer(model.parameters(), {config.learning_rate, config.weight_decay});
  std::uniform_real_distribution<double> uni(0.0, 1.0);

  auto outcomes = predict_clips(model, data, val_clips);
  MetricReport report = score(outcomes);
  TrainResult result{model, report, 0, {}, {}, outcomes};
  result.history.push_back({0, 0.0, report.accuracy, report.mcc});
  if (hooks.on_epoch) hooks.on_epoch(result.history.back());

  const std::size_t batch = static_cast<std::size_t>(config.batch_size);
  for (int epoch = 1; epoch <= config.epochs; ++epoch) {
    for (std::size_t i = samples.size(); i > 1; --i) std::swap(samples[i - 1], samples[rng() % i]);
    double epoch_loss = 0.0;
    for (std::size_t start = 0; start < samples.size(); start += batch) {
      const std::size_t end = std::min(samples.size(), start + batch);
      nn::Gradients grads = nn::zero_gradients(model.parameters());
      for (std::size_t s = start; s < end; ++s) {
        const auto [clip, n] = samples[s];
        TemporalChunk chunk = data.chunk(clip, n);
        const bool flipped = uni(rng) < config.flip_prob;
        if (flipped) chunk = hflip_chunk(chunk);
        const GmsLabel label = data.clips()[clip].label;
        if (hooks.on_sample) hooks.on_sample(clip, chunk, label, flipped);
        epoch_loss += model.accumulate_gradients(model.prepare(chunk), label, grads);
      }
      const double inv = 1.0 / static_cast<double>(end - start);
      for (auto& g : grads) g *= inv;
      optimizer.step(model.parameters(), grads);
    }
    epoch_loss /= static_cast<double>(samples.size());
    result.loss_curve.push_back(epoch_loss);

    outcomes = predict_clips(model, data, val_clips);
    report = score(outcomes);
    result.history.push_back({epoch, epoch_loss, report.accuracy, report.mcc});
    if (hooks.on_epoch) hooks.on_epoch(result.history.back());
    if (report.mcc > result.report.mcc) {
      result.model = model;
      result.report = report;
      result.best_epoch = epoch;
      result.val_outcomes = outcomes;
    }
  }
  result.report.seed = config.seed;
  return result;
}

MeanStd mean_std(std::span<const double> values) {
  MeanStd out;
  if (values.empty()) return out;
  for (double v : values) out.mean += v;
  out.mean /= static_cast<double>(values.size());
  for (double v : values) out.std += (v - out.mean) * (v - out.mean);
  out.std = std::sqrt(out.std / static_cast<double>(values.size()));
  return out;
}

CvReport run_cv(const DatasetManifest& manifest, int k, std::span<const std::uint64_t> seeds,
                const PipelineConfig& config, const FoldTrainer& trainer) {
  if (seeds.empty()) throw UsageError("run_cv needs at least one seed");
  CvReport cv;
  for (std::uint64_t seed : seeds) {
    PipelineConfig c = config;
    c.seed = seed;
    SeedResult sr;
    sr.seed = seed;
    sr.folds = make_folds(manifest, k, seed);
    for (const auto& fold : sr.folds) {
      TrainResult r = trainer(fold, c);
      r.report.seed = seed;
      sr.fold_reports.push_back(r.report);
      sr.loss_curves.push_back(r.loss_curve);
      sr.outcomes.insert(sr.outcomes.end(), r.val_outcomes.begin(), r.val_outcomes.end());
    }
    sr.pooled = score(sr.outcomes);
    sr.pooled.seed = seed;
    cv.seeds.push_back(std::move(sr));
  }
  auto summarize = [&](double MetricReport::*field) {
    std::vector<double> v;
    for (const auto& s : cv.seeds) v.push_back(s.pooled.*field);
    return mean_std(v);
  };
  cv.accuracy = summarize(&MetricReport::accuracy);
  cv.mcc = summarize(&MetricReport::mcc);
  cv.precision = summarize(&MetricReport::precision);
  cv.recall = summarize(&MetricReport::recall);
  return cv;
}

CvReport run_cv(const ChunkDataset& data, const DatasetManifest& manifest, int k,
                std::span<const std::uint64_t> seeds, const PipelineConfig& config,
                const TrainHooks& hooks) {
  return run_cv(manifest, k, seeds, config,
                [&](const FoldSplit& fold, const PipelineConfig& c) {
                  return train_fold(fold, data, c, hooks);
                });
}

nlohmann::json to_json(const CvReport& cv) {
  auto ms = [](const MeanStd& m) { return nlohmann::json{{"mean", m.mean}, {"std", m.std}}; };
  nlohmann::json j;
  j["summary"] = {{"accuracy", ms(cv.accuracy)},
                  {"mcc", ms(cv.mcc)},
                  {"precision", ms(cv.precision)},
                  {"recall", ms(cv.recall)}};
  j["seeds"] = nlohmann::json::array();
  for (const auto& s : cv.seeds) {
    nlohmann::json sj;
    sj["seed"] = s.seed;
    sj["pooled"] = to_json(s.pooled);
    sj["folds"] = nlohmann::json::array();
    for (std::size_t f = 0; f < s.folds.size(); ++f) {
      nlohmann::json fj = to_json(s.fold_reports.at(f));
      fj["fold_id"] = s.folds[f].fold_id;
      fj["val_infants"] = s.folds[f].val_ids;
      fj["loss_curve"] = s.loss_curves.at(f);
      sj["folds"].push_back(std::move(fj));
    }
    sj["predictions"] = nlohmann::json::array();
    for (const auto& o : s.outcomes) {
      sj["predictions"].push_back({{"clip_id", o.clip_id},
                                   {"infant_id", o.infant_id},
                                   {"truth", std::string(to_string(o.truth))},
                                   {"predicted", std::string(to_string(o.predicted))},
                                   {"probs", o.probs}});
    }
    j["seeds"].push_back(std::move(sj));
  }
  return j;
}

std::string summary_csv(const std::vector<std::pair<std::string, CvReport>>& rows) {
  std::ostringstream out;
  out << "Method,Accuracy,MCC,Precision,Recall\n";
  auto cell = [](const MeanStd& m) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.3f \xC2\xB1 %.3f", m.mean, m.std);
    return std::string(buf);
  };
  for (const auto& [name, cv] : rows) {
    out << name << ',' << cell(cv.accuracy) << ',' << cell(cv.mcc) << ',' << cell(cv.precision)
        << ',' << cell(cv.recall) << '\n';
  }
  return out.str();
}

}  // namespace gma
