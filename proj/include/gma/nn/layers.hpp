#pragma once

#include <cstdint>
#include <memory>
#include <random>
#include <string>
#include <vector>

#include "gma/nn/tensor.hpp"

namespace gma::nn {

struct Parameter {
  std::string name;
  Tensor value;
  bool trainable = true;
};

/// Owns every weight of a network. Layers refer to entries by index, so a
/// network is copied by copying its ParameterSet.
class ParameterSet {
 public:
  int add(std::string name, Tensor value, bool trainable = true);

  std::size_t size() const { return params_.size(); }
  Parameter& operator[](std::size_t i) { return params_[i]; }
  const Parameter& operator[](std::size_t i) const { return params_[i]; }
  Tensor& value(int id) { return params_.at(static_cast<std::size_t>(id)).value; }
  const Tensor& value(int id) const { return params_.at(static_cast<std::size_t>(id)).value; }

  /// -1 when absent.
  int find(const std::string& name) const;

  auto begin() { return params_.begin(); }
  auto end() { return params_.end(); }
  auto begin() const { return params_.begin(); }
  auto end() const { return params_.end(); }

 private:
  std::vector<Parameter> params_;
};

/// One gradient tensor per parameter, shaped like it.
using Gradients = std::vector<Tensor>;
Gradients zero_gradients(const ParameterSet& params);
void add_gradients(Gradients& into, const Gradients& from);

/// Saved forward state, consumed in reverse order by backward().
class Tape {
 public:
  void push(Tensor t) { stack_.push_back(std::move(t)); }
  Tensor pop();
  bool empty() const { return stack_.empty(); }

 private:
  std::vector<Tensor> stack_;
};

/// Stateless layer over a single (C, H, W) sample. Weights live in the
/// ParameterSet passed to each call; activations needed by backward() go on
/// the tape, so one layer object can serve concurrent evaluations.
class Layer {
 public:
  virtual ~Layer() = default;
  virtual Tensor forward(const ParameterSet& p, const Tensor& x, Tape* tape) const = 0;
  /// Accumulates parameter gradients into `grads`; returns dL/dx (empty when
  /// need_input_grad is false).
  virtual Tensor backward(const ParameterSet& p, const Tensor& grad_out, Tape& tape,
                          Gradients& grads, bool need_input_grad) const = 0;
};

using LayerPtr = std::shared_ptr<const Layer>;

class Conv2d final : public Layer {
 public:
  Conv2d(int in_channels, int out_channels, int kernel, int stride, int padding,
         int weight_id, int bias_id = -1);

  Tensor forward(const ParameterSet& p, const Tensor& x, Tape* tape) const override;
  Tensor backward(const ParameterSet& p, const Tensor& grad_out, Tape& tape,
                  Gradients& grads, bool need_input_grad) const override;

  int in_channels() const { return in_; }
  int out_channels() const { return out_; }
  int kernel() const { return k_; }
  int stride() const { return stride_; }
  int padding() const { return pad_; }
  int weight_id() const { return weight_id_; }
  int bias_id() const { return bias_id_; }
  int output_extent(int input) const { return (input + 2 * pad_ - k_) / stride_ + 1; }

 private:
  int in_;
  int out_;
  int k_;
  int stride_;
  int pad_;
  int weight_id_;
  int bias_id_;
};

/// Batch normalization with frozen running statistics and a trainable
/// affine part: y = gamma * (x - mean) / sqrt(var + eps) + beta.
class FrozenBatchNorm final : public Layer {
 public:
  FrozenBatchNorm(int gamma_id, int beta_id, int mean_id, int var_id, double eps = 1e-5);

  Tensor forward(const ParameterSet& p, const Tensor& x, Tape* tape) const override;
  Tensor backward(const ParameterSet& p, const Tensor& grad_out, Tape& tape,
                  Gradients& grads, bool need_input_grad) const override;

 private:
  int gamma_id_;
  int beta_id_;
  int mean_id_;
  int var_id_;
  double eps_;
};

class ReLU final : public Layer {
 public:
  Tensor forward(const ParameterSet& p, const Tensor& x, Tape* tape) const override;
  Tensor backward(const ParameterSet& p, const Tensor& grad_out, Tape& tape,
                  Gradients& grads, bool need_input_grad) const override;
};

class MaxPool2d final : public Layer {
 public:
  MaxPool2d(int kernel, int stride, int padding);

  Tensor forward(const ParameterSet& p, const Tensor& x, Tape* tape) const override;
  Tensor backward(const ParameterSet& p, const Tensor& grad_out, Tape& tape,
                  Gradients& grads, bool need_input_grad) const override;

 private:
  int k_;
  int stride_;
  int pad_;
};

class Sequential final : public Layer {
 public:
  Sequential() = default;
  explicit Sequential(std::vector<LayerPtr> layers) : layers_(std::move(layers)) {}

  void append(LayerPtr layer) { layers_.push_back(std::move(layer)); }
  std::size_t size() const { return layers_.size(); }
  const LayerPtr& at(std::size_t i) const { return layers_.at(i); }
  void replace(std::size_t i, LayerPtr layer) { layers_.at(i) = std::move(layer); }

  Tensor forward(const ParameterSet& p, const Tensor& x, Tape* tape) const override;
  Tensor backward(const ParameterSet& p, const Tensor& grad_out, Tape& tape,
                  Gradients& grads, bool need_input_grad) const override;

 private:
  std::vector<LayerPtr> layers_;
};

/// y = relu(main(x) + shortcut(x)); an empty shortcut is the identity.
class Residual final : public Layer {
 public:
  Residual(Sequential main, Sequential shortcut);

  Tensor forward(const ParameterSet& p, const Tensor& x, Tape* tape) const override;
  Tensor backward(const ParameterSet& p, const Tensor& grad_out, Tape& tape,
                  Gradients& grads, bool need_input_grad) const override;

 private:
  Sequential main_;
  Sequential shortcut_;
};

/// He-normal initialized conv weight (out, in, k, k).
Tensor he_normal(int out_channels, int in_channels, int kernel, std::mt19937_64& rng);

}  // namespace gma::nn
