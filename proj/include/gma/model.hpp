#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "gma/chunker.hpp"
#include "gma/core.hpp"
#include "gma/nn/backbones.hpp"
#include "gma/nn/layers.hpp"

namespace gma {

enum class StreamMode { two_stream, spatial_only, temporal_only };

std::string_view to_string(StreamMode mode);
StreamMode parse_stream_mode(std::string_view text);
nn::BackboneKind parse_backbone(std::string_view text);

struct ModelConfig {
  nn::BackboneKind backbone = nn::BackboneKind::tiny_test_cnn;
  StreamMode mode = StreamMode::two_stream;
  int chunk_length = 30;  // temporal stream takes 2L channels
  int input_size = 224;
  std::uint64_t seed = 0;
  /// Optional tensor archive with torchvision-named ResNet-50 weights
  /// (prefix-free). Loaded into both streams; the temporal stream's first
  /// layer is then widened with adapt_first_layer.
  std::filesystem::path pretrained_weights;
};

ModelConfig model_config_from(const PipelineConfig& config);

struct PredictionScore {
  std::array<double, kNumClasses> probs{};

  /// Highest probability; ties resolve to the earliest class (WM < FM < PR).
  GmsLabel argmax() const;
};

/// Pointwise-convolution fusion parameters. `filters` is stored as a
/// (D, 2D) matrix: output channel d = sum_c filters(d, c) * concat_c + bias(d),
/// where concat puts the spatial stream's D channels first.
struct FusionLayer {
  nn::Tensor filters;  // (D, 2D)
  nn::Tensor bias;     // (D)
};

/// Concatenates y_s and y_t (spatial first) along channels and applies the
/// 1x1 convolution. Throws UsageError on shape mismatch.
nn::Tensor fuse(const nn::Tensor& y_s, const nn::Tensor& y_t, const FusionLayer& layer);

/// Network inputs after normalization.
struct ModelInput {
  nn::Tensor spatial;   // (3, S, S)
  nn::Tensor temporal;  // (2L, S, S)
};

/// Two CNN streams, fusion at the final convolutional activation, global
/// average pooling, a fully connected layer and softmax.
class TwoStreamModel {
 public:
  explicit TwoStreamModel(const ModelConfig& config);

  const ModelConfig& config() const { return config_; }
  nn::ParameterSet& parameters() { return params_; }
  const nn::ParameterSet& parameters() const { return params_; }
  const nn::BackboneSpec& spatial_spec() const { return spatial_.spec; }
  const nn::BackboneSpec& temporal_spec() const { return temporal_.spec; }
  int feature_depth() const { return spatial_.spec.feature_depth; }
  const nn::Backbone& spatial_backbone() const { return spatial_; }
  const nn::Backbone& temporal_backbone() const { return temporal_; }

  FusionLayer fusion_layer() const;
  void set_fusion_layer(const FusionLayer& layer);

  /// Spatial frame scaled to [0, 1] (ImageNet-normalized for ResNet-50);
  /// temporal stack used as is.
  ModelInput prepare(const TemporalChunk& chunk) const;

  struct Activations {
    nn::Tensor y_s;     // empty in temporal_only mode
    nn::Tensor y_t;     // empty in spatial_only mode
    nn::Tensor head_in; // fused map, or the single stream's map
    std::vector<double> pooled;
    std::array<double, kNumClasses> logits{};
    PredictionScore score;
    nn::Tape spatial_tape;
    nn::Tape temporal_tape;
  };

  Activations forward(const ModelInput& input, bool keep_tape = false) const;
  PredictionScore classify(const ModelInput& input) const;

  /// Gradients of the head w.r.t. each stream's feature map, given
  /// dL/dlogits. When `grads` is non-null the head's parameter gradients are
  /// accumulated into it.
  struct StreamGradients {
    nn::Tensor d_y_s;
    nn::Tensor d_y_t;
  };
  StreamGradients head_backward(const Activations& acts,
                                const std::array<double, kNumClasses>& d_logits,
                                nn::Gradients* grads) const;

  /// Cross-entropy of one sample; adds dL/dparams into `grads`.
  double accumulate_gradients(const ModelInput& input, GmsLabel label,
                              nn::Gradients& grads) const;

  /// Cross-entropy without gradients.
  double loss(const ModelInput& input, GmsLabel label) const;

  int fusion_weight_id() const { return fusion_w_; }
  int fusion_bias_id() const { return fusion_b_; }
  int fc_weight_id() const { return fc_w_; }
  int fc_bias_id() const { return fc_b_; }

 private:
  ModelConfig config_;
  nn::ParameterSet params_;
  nn::Backbone spatial_;
  nn::Backbone temporal_;
  int fusion_w_ = -1;
  int fusion_b_ = -1;
  int fc_w_ = -1;
  int fc_b_ = -1;
};

PredictionScore classify_chunk(const TemporalChunk& chunk, const TwoStreamModel& model);

struct VideoPrediction {
  PredictionScore score;
  GmsLabel label = GmsLabel::WM;
};

/// Arithmetic mean of chunk scores, then argmax.
VideoPrediction classify_video(std::span<const PredictionScore> chunk_scores);
VideoPrediction classify_video(std::span<const TemporalChunk> chunks,
                               const TwoStreamModel& model);

/// Softmax of logits.
std::array<double, kNumClasses> softmax(const std::array<double, kNumClasses>& logits);

// ---------------------------------------------------------------------------
// Checkpoints
// ---------------------------------------------------------------------------

struct Checkpoint {
  TwoStreamModel model;
  PipelineConfig config;
  std::string config_hash;
};

/// Weights, the full PipelineConfig, its hash and the class order in one
/// tensor archive.
void save_checkpoint(const std::filesystem::path& path, const TwoStreamModel& model,
                     const PipelineConfig& config);

/// Refuses (DataError) when expected_chunk_length is given and differs from
/// the stored L, or when the class order differs from WM, FM, PR.
Checkpoint load_checkpoint(const std::filesystem::path& path,
                           std::optional<int> expected_chunk_length = std::nullopt);

/// Hash identifying the preprocessing + model configuration of a checkpoint.
std::string checkpoint_config_hash(const PipelineConfig& config);

}  // namespace gma
