// gma: synthetic data, preprocessing, training, evaluation, prediction and
// Grad-CAM++ export for two-stream general-movement classification.

#include <cstdio>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <opencv2/videoio.hpp>

#include "CLI11.hpp"
#include "gma/cache.hpp"
#include "gma/errors.hpp"
#include "gma/gradcam.hpp"
#include "gma/model.hpp"
#include "gma/pipeline.hpp"
#include "gma/synthdata.hpp"
#include "gma/train_eval.hpp"
#include "gma/video_io.hpp"

namespace {

using namespace gma;
using nlohmann::json;

// Every PipelineConfig key doubles as a flag (--chunk-length for chunk_length).
struct ConfigFlags {
  std::optional<std::string> config_path;
  std::map<std::string, std::optional<std::string>> values;

  void attach(CLI::App* app) {
    app->add_option("--config", config_path, "JSON config file; flags override it");
    const json defaults = PipelineConfig{};
    for (const auto& [key, value] : defaults.items()) {
      std::string flag = "--" + key;
      for (char& c : flag) {
        if (c == '_') c = '-';
      }
      values[key];
      app->add_option(flag, values[key], "config key " + key)->group("Config");
    }
  }

  PipelineConfig resolve() const {
    PipelineConfig config;
    if (config_path) config = load_config(*config_path);
    json j = config;
    for (const auto& [key, text] : values) {
      if (!text) continue;
      json& slot = j[key];
      try {
        if (slot.is_boolean()) {
          if (*text == "true" || *text == "1") {
            slot = true;
          } else if (*text == "false" || *text == "0") {
            slot = false;
          } else {
            throw UsageError("--" + key + " expects true or false");
          }
        } else if (slot.is_number_integer() || slot.is_number_unsigned()) {
          std::size_t used = 0;
          const long long v = std::stoll(*text, &used);
          if (used != text->size()) throw std::invalid_argument(*text);
          slot = v;
        } else if (slot.is_number()) {
          std::size_t used = 0;
          const double v = std::stod(*text, &used);
          if (used != text->size()) throw std::invalid_argument(*text);
          slot = v;
        } else {
          slot = *text;
        }
      } catch (const std::logic_error&) {
        throw UsageError("invalid value '" + *text + "' for --" + key);
      }
    }
    PipelineConfig out = j.get<PipelineConfig>();
    out.validate();
    return out;
  }
};

void write_text(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write " + path.string());
  out << text;
  if (!out) throw DataError("short write to " + path.string());
}

double video_duration(const fs::path& path) {
  if (path.extension() == ".json") {
    const SequenceIndex idx = read_sequence_index(path);
    return idx.frame_count / idx.fps;
  }
  cv::VideoCapture cap(path.string());
  if (!cap.isOpened()) throw DataError("cannot open video " + path.string());
  const double fps = cap.get(cv::CAP_PROP_FPS);
  const double frames = cap.get(cv::CAP_PROP_FRAME_COUNT);
  if (!(fps > 0) || !(frames > 0)) throw DataError("cannot determine length of " + path.string());
  return frames / fps;
}

struct VideoArgs {
  std::string path;
  double start = 0.0;
  std::optional<double> end;

  void attach(CLI::App* app) {
    app->add_option("--video", path, "clip.json or video file")->required();
    app->add_option("--start", start, "window start in seconds");
    app->add_option("--end", end, "window end in seconds (default: end of video)");
  }

  std::vector<TemporalChunk> chunks(const PipelineConfig& config) const {
    ManifestEntry e;
    e.clip_id = fs::path(path).parent_path().filename().string();
    if (e.clip_id.empty()) e.clip_id = "clip";
    e.infant_id = e.clip_id;
    e.video_path = fs::absolute(path);
    e.clip_start_s = start;
    e.clip_end_s = end.value_or(video_duration(e.video_path));
    const LoadedClip loaded = load_clip(e);
    const PreprocessResult r =
        preprocess_clip(loaded.clip, loaded.truth ? &*loaded.truth : nullptr, config);
    auto chunks = build_chunks(r.adjusted.frames, r.flows, config.chunk_length,
                               config.chunk_stride, config.flow_clip_bound, config.pad_last_chunk);
    if (chunks.empty()) throw DataError("video is too short for one chunk");
    return chunks;
  }
};

json probs_json(const std::array<double, kNumClasses>& probs) {
  json j;
  for (GmsLabel l : kAllLabels) j[std::string(to_string(l))] = probs[index_of(l)];
  return j;
}

int run(int argc, char** argv) {
  CLI::App app{"Two-stream general-movement classification"};
  app.require_subcommand(1);

  // synth-gen
  auto* synth = app.add_subcommand("synth-gen", "write a synthetic dataset and manifest");
  DatasetSpec dspec;
  std::string synth_out = "synth";
  synth->add_option("--out", synth_out, "output directory");
  synth->add_option("--n-per-class", dspec.n_per_class, "clips per class");
  synth->add_option("--seed", dspec.seed, "random seed");
  synth->add_option("--duration", dspec.duration_s, "clip length in seconds");
  synth->add_option("--fps", dspec.fps, "frame rate");
  synth->add_option("--width", dspec.width, "canvas width");
  synth->add_option("--height", dspec.height, "canvas height");
  synth->add_flag("--limb-masks", dspec.limb_masks, "also write per-limb masks");

  // preprocess
  auto* pre = app.add_subcommand("preprocess", "fill the cache with masked, adjusted frames and flows");
  ConfigFlags pre_cfg;
  std::string pre_manifest, pre_cache = "cache";
  bool pre_force = false;
  pre_cfg.attach(pre);
  pre->add_option("--manifest", pre_manifest, "manifest CSV")->required();
  pre->add_option("--cache", pre_cache, "cache directory");
  pre->add_flag("--force", pre_force, "recompute cached stages");

  // train
  auto* train = app.add_subcommand("train", "train one model and write a checkpoint");
  ConfigFlags train_cfg;
  std::string train_manifest, train_cache = "cache", train_out = "model.ckpt";
  std::optional<int> train_fold_id;
  train_cfg.attach(train);
  train->add_option("--manifest", train_manifest, "manifest CSV")->required();
  train->add_option("--cache", train_cache, "cache directory");
  train->add_option("--checkpoint", train_out, "checkpoint path");
  train->add_option("--fold", train_fold_id,
                    "train on fold i of the infant-wise split (default: all clips)");

  // evaluate
  auto* eval = app.add_subcommand("evaluate", "stratified infant-wise cross-validation");
  ConfigFlags eval_cfg;
  std::string eval_manifest, eval_cache = "cache", eval_out = "evaluation";
  std::vector<std::uint64_t> eval_seeds{0, 1, 2, 3, 4};
  std::vector<std::string> eval_modes;
  eval_cfg.attach(eval);
  eval->add_option("--manifest", eval_manifest, "manifest CSV")->required();
  eval->add_option("--cache", eval_cache, "cache directory");
  eval->add_option("--out", eval_out, "report directory");
  eval->add_option("--seeds", eval_seeds, "CV seeds")->delimiter(',');
  eval->add_option("--modes", eval_modes,
                   "stream modes to compare (default: the configured one)")->delimiter(',');

  // predict
  auto* predict = app.add_subcommand("predict", "class probabilities of one video");
  std::string predict_ckpt;
  std::optional<std::string> predict_out;
  VideoArgs predict_video;
  predict->add_option("--checkpoint", predict_ckpt, "checkpoint path")->required();
  predict->add_option("--out", predict_out, "JSON output path (default: stdout)");
  predict_video.attach(predict);

  // visualize
  auto* vis = app.add_subcommand("visualize", "Grad-CAM++ overlays per stream");
  std::string vis_ckpt, vis_out = "cam";
  std::vector<int> vis_chunks{1};
  std::optional<std::string> vis_target;
  std::optional<int> vis_layer;
  VideoArgs vis_video;
  vis->add_option("--checkpoint", vis_ckpt, "checkpoint path")->required();
  vis->add_option("--out", vis_out, "output directory");
  vis->add_option("--chunk", vis_chunks, "1-based chunk indices")->delimiter(',');
  vis->add_option("--target", vis_target, "target class (default: predicted)");
  vis->add_option("--target-layer", vis_layer, "backbone layer index (default: last)");
  vis_video.attach(vis);

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    throw UsageError(e.what());
  }

  if (synth->parsed()) {
    const DatasetManifest m = generate_dataset(dspec, synth_out);
    std::cout << json{{"manifest", (fs::path(synth_out) / "manifest.csv").string()},
                      {"clips", m.entries.size()}}
                     .dump()
              << '\n';
  } else if (pre->parsed()) {
    const PipelineConfig config = pre_cfg.resolve();
    const DatasetManifest m = load_manifest(pre_manifest, config.clip_duration_s);
    preprocess_manifest(m, config, Cache(pre_cache), config.workers, pre_force);
    std::cout << json{{"clips", m.entries.size()},
                      {"hashes",
                       {{"masked", stage_config_hash(config, Stage::masked)},
                        {"adjusted", stage_config_hash(config, Stage::adjusted)},
                        {"flow", stage_config_hash(config, Stage::flow)}}}}
                     .dump()
              << '\n';
  } else if (train->parsed()) {
    const PipelineConfig config = train_cfg.resolve();
    const DatasetManifest m = load_manifest(train_manifest, config.clip_duration_s);
    const ChunkDataset data(m, config, Cache(train_cache));
    FoldSplit fold;
    if (train_fold_id) {
      const auto folds = make_folds(m, config.folds, config.seed);
      if (*train_fold_id < 0 || *train_fold_id >= static_cast<int>(folds.size())) {
        throw UsageError("--fold must lie in [0, " + std::to_string(folds.size()) + ")");
      }
      fold = folds[*train_fold_id];
    } else {
      fold.train_ids = m.infant_ids();
      fold.val_ids = fold.train_ids;  // no held-out data: model selection on training fit
    }
    TrainHooks hooks;
    hooks.on_epoch = [](const EpochLog& e) {
      std::cerr << "epoch " << e.epoch << " loss " << e.train_loss << " val_acc "
                << e.val_accuracy << " val_mcc " << e.val_mcc << '\n';
    };
    const TrainResult r = train_fold(fold, data, config, hooks);
    save_checkpoint(train_out, r.model, config);
    json report = {{"checkpoint", train_out},
                   {"best_epoch", r.best_epoch},
                   {"loss_curve", r.loss_curve},
                   {"validation", to_json(r.report)}};
    write_text(train_out + ".json", report.dump(2) + "\n");
    std::cout << report.dump() << '\n';
  } else if (eval->parsed()) {
    const PipelineConfig config = eval_cfg.resolve();
    const DatasetManifest m = load_manifest(eval_manifest, config.clip_duration_s);
    const ChunkDataset data(m, config, Cache(eval_cache));
    if (eval_modes.empty()) eval_modes.push_back(config.stream_mode);
    std::vector<std::pair<std::string, CvReport>> rows;
    json all;
    for (const auto& mode : eval_modes) {
      PipelineConfig c = config;
      c.stream_mode = mode;
      c.validate();
      rows.emplace_back(mode, run_cv(data, m, c.folds, eval_seeds, c));
      all[mode] = to_json(rows.back().second);
    }
    fs::create_directories(eval_out);
    write_text(fs::path(eval_out) / "report.json", all.dump(2) + "\n");
    const std::string csv = summary_csv(rows);
    write_text(fs::path(eval_out) / "summary.csv", csv);
    std::cout << csv;
  } else if (predict->parsed()) {
    const Checkpoint ckpt = load_checkpoint(predict_ckpt);
    const auto chunks = predict_video.chunks(ckpt.config);
    const VideoPrediction v = classify_video(chunks, ckpt.model);
    const json out = {{"video", predict_video.path},
                      {"label", std::string(to_string(v.label))},
                      {"probs", probs_json(v.score.probs)},
                      {"chunks", chunks.size()}};
    if (predict_out) {
      write_text(*predict_out, out.dump(2) + "\n");
    } else {
      std::cout << out.dump() << '\n';
    }
  } else if (vis->parsed()) {
    const Checkpoint ckpt = load_checkpoint(vis_ckpt);
    std::optional<GmsLabel> target;
    if (vis_target) {
      target = parse_label(*vis_target);
      if (!target) throw UsageError("unknown target class '" + *vis_target + "'");
    }
    const auto chunks = vis_video.chunks(ckpt.config);
    fs::create_directories(vis_out);
    json written = json::array();
    std::vector<CamStream> streams;
    if (ckpt.model.config().mode != StreamMode::temporal_only) streams.push_back(CamStream::spatial);
    if (ckpt.model.config().mode != StreamMode::spatial_only) streams.push_back(CamStream::temporal);
    for (int n : vis_chunks) {
      if (n < 1 || n > static_cast<int>(chunks.size())) {
        throw UsageError("chunk " + std::to_string(n) + " out of range 1.." +
                         std::to_string(chunks.size()));
      }
      for (CamStream s : streams) {
        const CamOverlay cam = grad_cam_pp(ckpt.model, chunks[n - 1], s, target, vis_layer);
        char name[64];
        std::snprintf(name, sizeof(name), "chunk%03d_%s.png", n, std::string(to_string(s)).c_str());
        const fs::path path = fs::path(vis_out) / name;
        write_rgb(path, cam.blended);
        written.push_back({{"chunk", n},
                           {"stream", std::string(to_string(s))},
                           {"target", std::string(to_string(cam.target))},
                           {"degenerate", cam.degenerate},
                           {"path", path.string()}});
      }
    }
    std::cout << written.dump() << '\n';
  }
  return 0;
}

int fail(int code, std::string_view kind, const std::string& message) {
  std::cerr << json{{"error", kind}, {"code", code}, {"message", message}}.dump() << '\n';
  return code;
}

}  // namespace

int main(int argc, char** argv) {
  try {
    return run(argc, argv);
  } catch (const gma::UsageError& e) {
    return fail(2, "usage", e.what());
  } catch (const gma::DataError& e) {
    return fail(3, "data", e.what());
  } catch (const std::exception& e) {
    return fail(4, "runtime", e.what());
  }
}
