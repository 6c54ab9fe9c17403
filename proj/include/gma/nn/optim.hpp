#pragma once

#include "gma/nn/layers.hpp"

namespace gma::nn {

/// Adam with decoupled weight decay:
///   p <- p - lr * wd * p
///   m <- b1 m + (1 - b1) g,  v <- b2 v + (1 - b2) g^2
///   p <- p - lr * m_hat / (sqrt(v_hat) + eps)
/// Non-trainable parameters are skipped.
class AdamW {
 public:
  struct Options {
    double learning_rate = 1e-5;
    double weight_decay = 1e-2;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
  };

  AdamW(const ParameterSet& params, Options options);

  void step(ParameterSet& params, const Gradients& grads);
  long steps() const { return steps_; }
  const Options& options() const { return options_; }

 private:
  Options options_;
  Gradients m_;
  Gradients v_;
  long steps_ = 0;
};

}  // namespace gma::nn
