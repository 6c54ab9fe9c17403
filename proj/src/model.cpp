#include "gma/model.hpp"

#include <algorithm>
#include <cmath>
#include <random>

#include <Eigen/Core>

#include "gma/cache.hpp"
#include "gma/errors.hpp"
#include "gma/nn/archive.hpp"

namespace gma {

namespace {

using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MatrixMap = Eigen::Map<RowMatrix>;
using ConstMatrixMap = Eigen::Map<const RowMatrix>;

constexpr std::array<double, 3> kImageNetMean = {0.485, 0.456, 0.406};
constexpr std::array<double, 3> kImageNetStd = {0.229, 0.224, 0.225};

void check_fusion_shapes(const nn::Tensor& y_s, const nn::Tensor& y_t,
                         const nn::Tensor& filters, const nn::Tensor& bias) {
  if (y_s.rank() != 3 || !y_s.same_shape(y_t)) {
    throw UsageError("stream feature maps differ in shape: " + y_s.shape_string() +
                     " vs " + y_t.shape_string());
  }
  const int d = y_s.dim(0);
  if (filters.rank() != 2 || filters.dim(0) != d || filters.dim(1) != 2 * d ||
      bias.rank() != 1 || bias.dim(0) != d) {
    throw UsageError("fusion parameters do not match feature depth " + std::to_string(d));
  }
}

// Channel concatenation as a (2D, P) matrix, spatial first.
RowMatrix concat_features(const nn::Tensor& y_s, const nn::Tensor& y_t) {
  const int d = y_s.dim(0);
  const int plane = y_s.dim(1) * y_s.dim(2);
  RowMatrix cat(2 * d, plane);
  cat.topRows(d) = ConstMatrixMap(y_s.data(), d, plane);
  cat.bottomRows(d) = ConstMatrixMap(y_t.data(), d, plane);
  return cat;
}

nn::Tensor fuse_impl(const nn::Tensor& y_s, const nn::Tensor& y_t, const nn::Tensor& filters,
                     const nn::Tensor& bias) {
  check_fusion_shapes(y_s, y_t, filters, bias);
  const int d = y_s.dim(0);
  const int plane = y_s.dim(1) * y_s.dim(2);
  nn::Tensor out({d, y_s.dim(1), y_s.dim(2)});
  MatrixMap o(out.data(), d, plane);
  o.noalias() = ConstMatrixMap(filters.data(), d, 2 * d) * concat_features(y_s, y_t);
  for (int c = 0; c < d; ++c) o.row(c).array() += bias[c];
  return out;
}

}  // namespace

std::string_view to_string(StreamMode mode) {
  switch (mode) {
    case StreamMode::two_stream:
      return "two_stream";
    case StreamMode::spatial_only:
      return "spatial_only";
    case StreamMode::temporal_only:
      return "temporal_only";
  }
  return "?";
}

StreamMode parse_stream_mode(std::string_view text) {
  for (StreamMode m :
       {StreamMode::two_stream, StreamMode::spatial_only, StreamMode::temporal_only}) {
    if (to_string(m) == text) return m;
  }
  throw UsageError("unknown stream mode '" + std::string(text) + "'");
}

nn::BackboneKind parse_backbone(std::string_view text) {
  if (text == "tiny" || text == "tiny_test_cnn") return nn::BackboneKind::tiny_test_cnn;
  if (text == "resnet50" || text == "pretrained_resnet50") {
    return nn::BackboneKind::pretrained_resnet50;
  }
  throw UsageError("unknown backbone '" + std::string(text) + "'");
}

ModelConfig model_config_from(const PipelineConfig& config) {
  ModelConfig m;
  m.backbone = parse_backbone(config.backbone);
  m.mode = parse_stream_mode(config.stream_mode);
  m.chunk_length = config.chunk_length;
  m.input_size = config.crop_size;
  m.seed = config.seed;
  m.pretrained_weights = config.backbone_weights;
  return m;
}

GmsLabel PredictionScore::argmax() const {
  int best = 0;
  for (int c = 1; c < kNumClasses; ++c) {
    if (probs[c] > probs[best]) best = c;
  }
  return label_from_index(best);
}

std::array<double, kNumClasses> softmax(const std::array<double, kNumClasses>& logits) {
  const double m = *std::max_element(logits.begin(), logits.end());
  std::array<double, kNumClasses> p{};
  double sum = 0.0;
  for (int c = 0; c < kNumClasses; ++c) {
    p[c] = std::exp(logits[c] - m);
    sum += p[c];
  }
  for (double& v : p) v /= sum;
  return p;
}

nn::Tensor fuse(const nn::Tensor& y_s, const nn::Tensor& y_t, const FusionLayer& layer) {
  return fuse_impl(y_s, y_t, layer.filters, layer.bias);
}

// ---------------------------------------------------------------------------

TwoStreamModel::TwoStreamModel(const ModelConfig& config) : config_(config) {
  if (config_.chunk_length <= 0 || config_.chunk_length % 2 != 0) {
    throw UsageError("chunk length must be a positive even number");
  }
  if (config_.input_size <= 0) throw UsageError("input size must be positive");
  std::mt19937_64 rng(config_.seed);
  const int flow_channels = 2 * config_.chunk_length;

  if (config_.backbone == nn::BackboneKind::tiny_test_cnn) {
    spatial_ = nn::build_tiny_cnn(params_, "spatial.", 3, config_.input_size, rng);
    temporal_ =
        nn::build_tiny_cnn(params_, "temporal.", flow_channels, config_.input_size, rng);
  } else {
    spatial_ = nn::build_resnet50(params_, "spatial.", 3, config_.input_size, rng);
    temporal_ = nn::build_resnet50(params_, "temporal.", 3, config_.input_size, rng);
    if (!config_.pretrained_weights.empty()) {
      const nn::TensorArchive archive = nn::load_archive(config_.pretrained_weights);
      nn::copy_matching(archive, params_, "spatial.");
      nn::copy_matching(archive, params_, "temporal.");
    }
    nn::adapt_first_layer(temporal_, params_, flow_channels);
  }

  const int d = spatial_.spec.feature_depth;
  nn::Tensor filters({d, 2 * d});
  std::normal_distribution<double> noise(0.0, 1e-3);
  for (int i = 0; i < d; ++i) {
    for (int j = 0; j < 2 * d; ++j) {
      filters[static_cast<std::size_t>(i) * 2 * d + j] =
          ((j == i || j == i + d) ? 0.5 : 0.0) + noise(rng);
    }
  }
  fusion_w_ = params_.add("fusion.weight", std::move(filters));
  fusion_b_ = params_.add("fusion.bias", nn::Tensor({d}, 0.0));

  nn::Tensor fc({kNumClasses, d});
  std::uniform_real_distribution<double> uni(-1.0 / std::sqrt(d), 1.0 / std::sqrt(d));
  for (double& v : fc.values()) v = uni(rng);
  fc_w_ = params_.add("fc.weight", std::move(fc));
  fc_b_ = params_.add("fc.bias", nn::Tensor({kNumClasses}, 0.0));
}

FusionLayer TwoStreamModel::fusion_layer() const {
  return {params_.value(fusion_w_), params_.value(fusion_b_)};
}

void TwoStreamModel::set_fusion_layer(const FusionLayer& layer) {
  if (!layer.filters.same_shape(params_.value(fusion_w_)) ||
      !layer.bias.same_shape(params_.value(fusion_b_))) {
    throw UsageError("fusion layer shape mismatch");
  }
  params_.value(fusion_w_) = layer.filters;
  params_.value(fusion_b_) = layer.bias;
}

ModelInput TwoStreamModel::prepare(const TemporalChunk& chunk) const {
  if (chunk.x_t.rank() != 3 || chunk.x_t.dim(0) != 2 * config_.chunk_length) {
    throw UsageError("chunk has " + std::to_string(chunk.x_t.rank() == 3 ? chunk.x_t.dim(0) : 0) +
                     " flow channels, model expects " +
                     std::to_string(2 * config_.chunk_length));
  }
  if (chunk.x_s.type() != CV_8UC3 || chunk.x_s.rows != chunk.x_t.dim(1) ||
      chunk.x_s.cols != chunk.x_t.dim(2)) {
    throw UsageError("chunk spatial frame does not match its flow stack");
  }
  const bool imagenet = config_.backbone == nn::BackboneKind::pretrained_resnet50;
  ModelInput input;
  input.spatial = nn::Tensor({3, chunk.x_s.rows, chunk.x_s.cols});
  for (int y = 0; y < chunk.x_s.rows; ++y) {
    const auto* row = chunk.x_s.ptr<cv::Vec3b>(y);
    for (int x = 0; x < chunk.x_s.cols; ++x) {
      for (int c = 0; c < 3; ++c) {
        double v = row[x][c] / 255.0;
        if (imagenet) v = (v - kImageNetMean[c]) / kImageNetStd[c];
        input.spatial.at(c, y, x) = v;
      }
    }
  }
  input.temporal = chunk.x_t;
  return input;
}

TwoStreamModel::Activations TwoStreamModel::forward(const ModelInput& input,
                                                    bool keep_tape) const {
  Activations a;
  const bool use_spatial = config_.mode != StreamMode::temporal_only;
  const bool use_temporal = config_.mode != StreamMode::spatial_only;
  if (use_spatial) {
    a.y_s = spatial_.layers.forward(params_, input.spatial, keep_tape ? &a.spatial_tape : nullptr);
  }
  if (use_temporal) {
    a.y_t = temporal_.layers.forward(params_, input.temporal,
                                     keep_tape ? &a.temporal_tape : nullptr);
  }
  if (use_spatial && use_temporal) {
    a.head_in = fuse_impl(a.y_s, a.y_t, params_.value(fusion_w_), params_.value(fusion_b_));
  } else {
    a.head_in = use_spatial ? a.y_s : a.y_t;
  }

  const int d = a.head_in.dim(0);
  const int plane = a.head_in.dim(1) * a.head_in.dim(2);
  ConstMatrixMap head(a.head_in.data(), d, plane);
  a.pooled.resize(d);
  for (int c = 0; c < d; ++c) a.pooled[c] = head.row(c).mean();

  const nn::Tensor& fc = params_.value(fc_w_);
  const nn::Tensor& fc_b = params_.value(fc_b_);
  for (int k = 0; k < kNumClasses; ++k) {
    double z = fc_b[k];
    for (int c = 0; c < d; ++c) z += fc[static_cast<std::size_t>(k) * d + c] * a.pooled[c];
    a.logits[k] = z;
  }
  a.score.probs = softmax(a.logits);
  return a;
}

PredictionScore TwoStreamModel::classify(const ModelInput& input) const {
  return forward(input, false).score;
}

TwoStreamModel::StreamGradients TwoStreamModel::head_backward(
    const Activations& a, const std::array<double, kNumClasses>& d_logits,
    nn::Gradients* grads) const {
  const int d = a.head_in.dim(0);
  const int h = a.head_in.dim(1);
  const int w = a.head_in.dim(2);
  const int plane = h * w;
  const nn::Tensor& fc = params_.value(fc_w_);

  std::vector<double> d_pooled(d, 0.0);
  for (int k = 0; k < kNumClasses; ++k) {
    for (int c = 0; c < d; ++c) {
      d_pooled[c] += fc[static_cast<std::size_t>(k) * d + c] * d_logits[k];
      if (grads) (*grads)[fc_w_][static_cast<std::size_t>(k) * d + c] += d_logits[k] * a.pooled[c];
    }
    if (grads) (*grads)[fc_b_][k] += d_logits[k];
  }
  // Global average pooling spreads each channel's gradient evenly.
  RowMatrix d_head(d, plane);
  for (int c = 0; c < d; ++c) d_head.row(c).setConstant(d_pooled[c] / plane);

  StreamGradients out;
  if (config_.mode == StreamMode::two_stream) {
    const RowMatrix cat = concat_features(a.y_s, a.y_t);
    if (grads) {
      MatrixMap(((*grads)[fusion_w_]).data(), d, 2 * d).noalias() += d_head * cat.transpose();
      for (int c = 0; c < d; ++c) (*grads)[fusion_b_][c] += d_head.row(c).sum();
    }
    const RowMatrix d_cat =
        ConstMatrixMap(params_.value(fusion_w_).data(), d, 2 * d).transpose() * d_head;
    out.d_y_s = nn::Tensor({d, h, w});
    out.d_y_t = nn::Tensor({d, h, w});
    MatrixMap(out.d_y_s.data(), d, plane) = d_cat.topRows(d);
    MatrixMap(out.d_y_t.data(), d, plane) = d_cat.bottomRows(d);
  } else {
    nn::Tensor g({d, h, w});
    MatrixMap(g.data(), d, plane) = d_head;
    (config_.mode == StreamMode::spatial_only ? out.d_y_s : out.d_y_t) = std::move(g);
  }
  return out;
}

double TwoStreamModel::accumulate_gradients(const ModelInput& input, GmsLabel label,
                                            nn::Gradients& grads) const {
  Activations a = forward(input, true);
  const int target = index_of(label);
  std::array<double, kNumClasses> d_logits = a.score.probs;
  d_logits[target] -= 1.0;
  const double loss = -std::log(std::max(a.score.probs[target], 1e-300));

  StreamGradients g = head_backward(a, d_logits, &grads);
  if (!g.d_y_s.empty()) spatial_.layers.backward(params_, g.d_y_s, a.spatial_tape, grads, false);
  if (!g.d_y_t.empty()) {
    temporal_.layers.backward(params_, g.d_y_t, a.temporal_tape, grads, false);
  }
  return loss;
}

double TwoStreamModel::loss(const ModelInput& input, GmsLabel label) const {
  const PredictionScore s = classify(input);
  return -std::log(std::max(s.probs[index_of(label)], 1e-300));
}

PredictionScore classify_chunk(const TemporalChunk& chunk, const TwoStreamModel& model) {
  return model.classify(model.prepare(chunk));
}

VideoPrediction classify_video(std::span<const PredictionScore> chunk_scores) {
  if (chunk_scores.empty()) throw UsageError("cannot classify a video without chunks");
  VideoPrediction out;
  for (const auto& s : chunk_scores) {
    for (int c = 0; c < kNumClasses; ++c) out.score.probs[c] += s.probs[c];
  }
  for (double& p : out.score.probs) p /= static_cast<double>(chunk_scores.size());
  out.label = out.score.argmax();
  return out;
}

VideoPrediction classify_video(std::span<const TemporalChunk> chunks,
                               const TwoStreamModel& model) {
  if (chunks.empty()) throw UsageError("cannot classify a video without chunks");
  std::vector<PredictionScore> scores;
  scores.reserve(chunks.size());
  for (const auto& c : chunks) scores.push_back(classify_chunk(c, model));
  return classify_video(scores);
}

// ---------------------------------------------------------------------------
// Checkpoints
// ---------------------------------------------------------------------------

std::string checkpoint_config_hash(const PipelineConfig& config) {
  nlohmann::json key = {{"flow", stage_config_hash(config, Stage::flow)},
                        {"chunk_length", config.chunk_length},
                        {"chunk_stride", config.chunk_stride},
                        {"flow_clip_bound", config.flow_clip_bound},
                        {"pad_last_chunk", config.pad_last_chunk},
                        {"backbone", config.backbone},
                        {"stream_mode", config.stream_mode}};
  return fnv1a_hex(key.dump());
}

void save_checkpoint(const std::filesystem::path& path, const TwoStreamModel& model,
                     const PipelineConfig& config) {
  nlohmann::json meta;
  meta["format"] = "gma-checkpoint";
  meta["config"] = config;
  meta["config_hash"] = checkpoint_config_hash(config);
  meta["class_order"] = {"WM", "FM", "PR"};
  meta["chunk_length"] = model.config().chunk_length;
  meta["backbone"] = std::string(nn::to_string(model.config().backbone));
  meta["stream_mode"] = std::string(to_string(model.config().mode));
  nn::save_archive(path, model.parameters(), meta);
}

Checkpoint load_checkpoint(const std::filesystem::path& path,
                           std::optional<int> expected_chunk_length) {
  const nn::TensorArchive archive = nn::load_archive(path);
  const auto& meta = archive.metadata;
  if (meta.value("format", "") != "gma-checkpoint") {
    throw DataError("not a model checkpoint: " + path.string());
  }
  if (meta.value("class_order", nlohmann::json::array()) !=
      nlohmann::json({"WM", "FM", "PR"})) {
    throw DataError("checkpoint class order differs from WM, FM, PR");
  }
  PipelineConfig config;
  try {
    config = meta.at("config").get<PipelineConfig>();
  } catch (const std::exception& e) {
    throw DataError("checkpoint config unreadable: " + std::string(e.what()));
  }
  const int stored_l = meta.value("chunk_length", -1);
  if (expected_chunk_length && stored_l != *expected_chunk_length) {
    throw DataError("checkpoint chunk length " + std::to_string(stored_l) +
                    " differs from requested " + std::to_string(*expected_chunk_length));
  }
  ModelConfig mc = model_config_from(config);
  mc.pretrained_weights.clear();
  TwoStreamModel model(mc);
  for (auto& p : model.parameters()) {
    const auto it = archive.tensors.find(p.name);
    if (it == archive.tensors.end()) {
      throw DataError("checkpoint lacks tensor '" + p.name + "'");
    }
    if (it->second.value.shape() != p.value.shape()) {
      throw DataError("checkpoint tensor '" + p.name + "' has the wrong shape");
    }
    p.value = it->second.value;
  }
  return {std::move(model), config, meta.value("config_hash", "")};
}

}  // namespace gma
