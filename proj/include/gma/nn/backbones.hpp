#pragma once

#include <random>
#include <string>
#include <string_view>

#include "gma/nn/layers.hpp"

namespace gma::nn {

enum class BackboneKind { tiny_test_cnn, pretrained_resnet50 };

std::string_view to_string(BackboneKind kind);

struct BackboneSpec {
  BackboneKind kind = BackboneKind::tiny_test_cnn;
  int in_channels = 3;
  int feature_width = 0;   // W'
  int feature_height = 0;  // H'
  int feature_depth = 0;   // D
};

/// A convolutional feature extractor. Its output is the activation of the
/// final convolutional stage. The first layer of `layers` is always the
/// input convolution.
struct Backbone {
  BackboneSpec spec;
  Sequential layers;
  std::string prefix;
};

/// Four 3x3 stride-2 convolutions (8, 16, 32, 32 channels, no bias), each
/// followed by ReLU. D = 32, W' = H' = input / 16 for multiples of 16.
Backbone build_tiny_cnn(ParameterSet& params, const std::string& prefix, int in_channels,
                        int input_size, std::mt19937_64& rng);

/// ResNet-50 up to and including layer4 (D = 2048, 7 x 7 for 224 input).
/// Parameter names follow torchvision's state_dict under `prefix`, with
/// batch norms frozen to their running statistics.
Backbone build_resnet50(ParameterSet& params, const std::string& prefix, int in_channels,
                        int input_size, std::mt19937_64& rng);

/// Widens a 3-channel input convolution to `in_channels`: every new input
/// channel's kernel is the mean of the three original kernels scaled by
/// 3 / in_channels. Other weights are untouched.
void adapt_first_layer(Backbone& backbone, ParameterSet& params, int in_channels);

}  // namespace gma::nn
