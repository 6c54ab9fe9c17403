#include "gma/nn/backbones.hpp"

#include <memory>
#include <stdexcept>

#include "gma/errors.hpp"

namespace gma::nn {

std::string_view to_string(BackboneKind kind) {
  switch (kind) {
    case BackboneKind::tiny_test_cnn:
      return "tiny_test_cnn";
    case BackboneKind::pretrained_resnet50:
      return "pretrained_resnet50";
  }
  return "?";
}

namespace {

int conv_extent(int input, int k, int stride, int pad) {
  return (input + 2 * pad - k) / stride + 1;
}

LayerPtr make_conv(ParameterSet& params, const std::string& name, int in, int out, int k,
                   int stride, int pad, std::mt19937_64& rng) {
  const int w = params.add(name + ".weight", he_normal(out, in, k, rng));
  return std::make_shared<Conv2d>(in, out, k, stride, pad, w);
}

LayerPtr make_bn(ParameterSet& params, const std::string& name, int channels) {
  const int gamma = params.add(name + ".weight", Tensor({channels}, 1.0));
  const int beta = params.add(name + ".bias", Tensor({channels}, 0.0));
  const int mean = params.add(name + ".running_mean", Tensor({channels}, 0.0), false);
  const int var = params.add(name + ".running_var", Tensor({channels}, 1.0), false);
  return std::make_shared<FrozenBatchNorm>(gamma, beta, mean, var);
}

}  // namespace

Backbone build_tiny_cnn(ParameterSet& params, const std::string& prefix, int in_channels,
                        int input_size, std::mt19937_64& rng) {
  if (in_channels < 1) throw std::invalid_argument("in_channels must be positive");
  constexpr int kWidths[] = {8, 16, 32, 32};
  Backbone b;
  b.prefix = prefix;
  int channels = in_channels;
  int extent = input_size;
  for (int i = 0; i < 4; ++i) {
    b.layers.append(make_conv(params, prefix + "conv" + std::to_string(i + 1), channels,
                              kWidths[i], 3, 2, 1, rng));
    b.layers.append(std::make_shared<ReLU>());
    channels = kWidths[i];
    extent = conv_extent(extent, 3, 2, 1);
  }
  b.spec = {BackboneKind::tiny_test_cnn, in_channels, extent, extent, channels};
  return b;
}

Backbone build_resnet50(ParameterSet& params, const std::string& prefix, int in_channels,
                        int input_size, std::mt19937_64& rng) {
  if (in_channels < 1) throw std::invalid_argument("in_channels must be positive");
  Backbone b;
  b.prefix = prefix;
  b.layers.append(make_conv(params, prefix + "conv1", in_channels, 64, 7, 2, 3, rng));
  b.layers.append(make_bn(params, prefix + "bn1", 64));
  b.layers.append(std::make_shared<ReLU>());
  b.layers.append(std::make_shared<MaxPool2d>(3, 2, 1));
  int extent = conv_extent(conv_extent(input_size, 7, 2, 3), 3, 2, 1);

  constexpr int kBlocks[] = {3, 4, 6, 3};
  constexpr int kWidths[] = {64, 128, 256, 512};
  int channels = 64;
  for (int stage = 0; stage < 4; ++stage) {
    const int width = kWidths[stage];
    const int out = width * 4;
    for (int block = 0; block < kBlocks[stage]; ++block) {
      const std::string name =
          prefix + "layer" + std::to_string(stage + 1) + "." + std::to_string(block);
      const int stride = (block == 0 && stage > 0) ? 2 : 1;
      Sequential main;
      main.append(make_conv(params, name + ".conv1", channels, width, 1, 1, 0, rng));
      main.append(make_bn(params, name + ".bn1", width));
      main.append(std::make_shared<ReLU>());
      main.append(make_conv(params, name + ".conv2", width, width, 3, stride, 1, rng));
      main.append(make_bn(params, name + ".bn2", width));
      main.append(std::make_shared<ReLU>());
      main.append(make_conv(params, name + ".conv3", width, out, 1, 1, 0, rng));
      main.append(make_bn(params, name + ".bn3", out));
      Sequential shortcut;
      if (block == 0) {
        shortcut.append(
            make_conv(params, name + ".downsample.0", channels, out, 1, stride, 0, rng));
        shortcut.append(make_bn(params, name + ".downsample.1", out));
      }
      b.layers.append(std::make_shared<Residual>(std::move(main), std::move(shortcut)));
      channels = out;
      extent = conv_extent(extent, 3, stride, 1);
    }
  }
  b.spec = {BackboneKind::pretrained_resnet50, in_channels, extent, extent, channels};
  return b;
}

void adapt_first_layer(Backbone& backbone, ParameterSet& params, int in_channels) {
  if (in_channels < 1) throw UsageError("in_channels must be at least 1");
  const auto* conv = dynamic_cast<const Conv2d*>(backbone.layers.at(0).get());
  if (!conv) throw std::logic_error("backbone does not start with a convolution");
  if (conv->in_channels() != 3) {
    throw std::invalid_argument("first layer must expect 3 input channels");
  }
  const Tensor& old = params.value(conv->weight_id());
  const int out = conv->out_channels();
  const int k = conv->kernel();
  const std::size_t taps = static_cast<std::size_t>(k) * k;
  Tensor widened({out, in_channels, k, k});
  const double scale = 3.0 / in_channels;
  for (int o = 0; o < out; ++o) {
    for (std::size_t t = 0; t < taps; ++t) {
      double mean = 0.0;
      for (int c = 0; c < 3; ++c) mean += old[(static_cast<std::size_t>(o) * 3 + c) * taps + t];
      mean /= 3.0;
      for (int c = 0; c < in_channels; ++c) {
        widened[(static_cast<std::size_t>(o) * in_channels + c) * taps + t] = mean * scale;
      }
    }
  }
  params.value(conv->weight_id()) = std::move(widened);
  backbone.layers.replace(
      0, std::make_shared<Conv2d>(in_channels, out, k, conv->stride(), conv->padding(),
                                  conv->weight_id(), conv->bias_id()));
  backbone.spec.in_channels = in_channels;
}

}  // namespace gma::nn
