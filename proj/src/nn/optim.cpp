#include "gma/nn/optim.hpp"

#include <cmath>
#include <stdexcept>

namespace gma::nn {

AdamW::AdamW(const ParameterSet& params, Options options)
    : options_(options), m_(zero_gradients(params)), v_(zero_gradients(params)) {}

void AdamW::step(ParameterSet& params, const Gradients& grads) {
  if (grads.size() != params.size() || m_.size() != params.size()) {
    throw std::invalid_argument("optimizer state does not match parameters");
  }
  ++steps_;
  const double b1 = options_.beta1;
  const double b2 = options_.beta2;
  const double bias1 = 1.0 - std::pow(b1, static_cast<double>(steps_));
  const double bias2 = 1.0 - std::pow(b2, static_cast<double>(steps_));
  const double lr = options_.learning_rate;
  const double decay = 1.0 - lr * options_.weight_decay;
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (!params[i].trainable) continue;
    Tensor& p = params[i].value;
    const Tensor& g = grads[i];
    Tensor& m = m_[i];
    Tensor& v = v_[i];
    for (std::size_t j = 0; j < p.size(); ++j) {
      p[j] *= decay;
      m[j] = b1 * m[j] + (1.0 - b1) * g[j];
      v[j] = b2 * v[j] + (1.0 - b2) * g[j] * g[j];
      const double m_hat = m[j] / bias1;
      const double v_hat = v[j] / bias2;
      p[j] -= lr * m_hat / (std::sqrt(v_hat) + options_.eps);
    }
  }
}

}  // namespace gma::nn
