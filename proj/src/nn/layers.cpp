#include "gma/nn/layers.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>

#include <Eigen/Core>

namespace gma::nn {

namespace {

using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MatrixMap = Eigen::Map<RowMatrix>;
using ConstMatrixMap = Eigen::Map<const RowMatrix>;

void require(bool ok, const char* what) {
  if (!ok) throw std::invalid_argument(what);
}

// cols has (C * k * k) rows and (ho * wo) columns.
void im2col(const Tensor& x, int k, int stride, int pad, int ho, int wo, double* cols) {
  const int channels = x.dim(0);
  const int h = x.dim(1);
  const int w = x.dim(2);
  const std::size_t plane = static_cast<std::size_t>(ho) * wo;
  for (int c = 0; c < channels; ++c) {
    const double* src = x.data() + static_cast<std::size_t>(c) * h * w;
    for (int ky = 0; ky < k; ++ky) {
      for (int kx = 0; kx < k; ++kx) {
        double* dst = cols + (static_cast<std::size_t>(c * k + ky) * k + kx) * plane;
        for (int oy = 0; oy < ho; ++oy) {
          const int iy = oy * stride - pad + ky;
          double* row = dst + static_cast<std::size_t>(oy) * wo;
          if (iy < 0 || iy >= h) {
            std::fill(row, row + wo, 0.0);
            continue;
          }
          const double* line = src + static_cast<std::size_t>(iy) * w;
          for (int ox = 0; ox < wo; ++ox) {
            const int ix = ox * stride - pad + kx;
            row[ox] = (ix >= 0 && ix < w) ? line[ix] : 0.0;
          }
        }
      }
    }
  }
}

void col2im(const double* cols, int channels, int h, int w, int k, int stride, int pad,
            int ho, int wo, Tensor& dx) {
  const std::size_t plane = static_cast<std::size_t>(ho) * wo;
  for (int c = 0; c < channels; ++c) {
    double* dst = dx.data() + static_cast<std::size_t>(c) * h * w;
    for (int ky = 0; ky < k; ++ky) {
      for (int kx = 0; kx < k; ++kx) {
        const double* src = cols + (static_cast<std::size_t>(c * k + ky) * k + kx) * plane;
        for (int oy = 0; oy < ho; ++oy) {
          const int iy = oy * stride - pad + ky;
          if (iy < 0 || iy >= h) continue;
          double* line = dst + static_cast<std::size_t>(iy) * w;
          const double* row = src + static_cast<std::size_t>(oy) * wo;
          for (int ox = 0; ox < wo; ++ox) {
            const int ix = ox * stride - pad + kx;
            if (ix >= 0 && ix < w) line[ix] += row[ox];
          }
        }
      }
    }
  }
}

std::vector<double>& scratch() {
  thread_local std::vector<double> buffer;
  return buffer;
}

}  // namespace

// ---------------------------------------------------------------------------

int ParameterSet::add(std::string name, Tensor value, bool trainable) {
  params_.push_back({std::move(name), std::move(value), trainable});
  return static_cast<int>(params_.size()) - 1;
}

int ParameterSet::find(const std::string& name) const {
  for (std::size_t i = 0; i < params_.size(); ++i) {
    if (params_[i].name == name) return static_cast<int>(i);
  }
  return -1;
}

Gradients zero_gradients(const ParameterSet& params) {
  Gradients g;
  g.reserve(params.size());
  for (const auto& p : params) g.emplace_back(p.value.shape());
  return g;
}

void add_gradients(Gradients& into, const Gradients& from) {
  require(into.size() == from.size(), "gradient set size mismatch");
  for (std::size_t i = 0; i < into.size(); ++i) into[i] += from[i];
}

Tensor Tape::pop() {
  if (stack_.empty()) throw std::logic_error("tape underflow");
  Tensor t = std::move(stack_.back());
  stack_.pop_back();
  return t;
}

Tensor he_normal(int out_channels, int in_channels, int kernel, std::mt19937_64& rng) {
  Tensor w({out_channels, in_channels, kernel, kernel});
  std::normal_distribution<double> dist(0.0, std::sqrt(2.0 / (in_channels * kernel * kernel)));
  for (double& v : w.values()) v = dist(rng);
  return w;
}

// ---------------------------------------------------------------------------
// Conv2d
// ---------------------------------------------------------------------------

Conv2d::Conv2d(int in_channels, int out_channels, int kernel, int stride, int padding,
               int weight_id, int bias_id)
    : in_(in_channels),
      out_(out_channels),
      k_(kernel),
      stride_(stride),
      pad_(padding),
      weight_id_(weight_id),
      bias_id_(bias_id) {
  require(in_ > 0 && out_ > 0 && k_ > 0 && stride_ > 0 && pad_ >= 0,
          "invalid convolution geometry");
}

Tensor Conv2d::forward(const ParameterSet& p, const Tensor& x, Tape* tape) const {
  require(x.rank() == 3 && x.dim(0) == in_, "conv input channel mismatch");
  const int ho = output_extent(x.dim(1));
  const int wo = output_extent(x.dim(2));
  require(ho > 0 && wo > 0, "conv input too small");
  const Tensor& weight = p.value(weight_id_);
  const int rows = in_ * k_ * k_;
  const int plane = ho * wo;

  Tensor y({out_, ho, wo});
  ConstMatrixMap w(weight.data(), out_, rows);
  MatrixMap out(y.data(), out_, plane);
  if (k_ == 1 && stride_ == 1 && pad_ == 0) {
    out.noalias() = w * ConstMatrixMap(x.data(), rows, plane);
  } else {
    auto& cols = scratch();
    cols.resize(static_cast<std::size_t>(rows) * plane);
    im2col(x, k_, stride_, pad_, ho, wo, cols.data());
    out.noalias() = w * ConstMatrixMap(cols.data(), rows, plane);
  }
  if (bias_id_ >= 0) {
    const Tensor& b = p.value(bias_id_);
    for (int c = 0; c < out_; ++c) out.row(c).array() += b[c];
  }
  if (tape) tape->push(x);
  return y;
}

Tensor Conv2d::backward(const ParameterSet& p, const Tensor& grad_out, Tape& tape,
                        Gradients& grads, bool need_input_grad) const {
  const Tensor x = tape.pop();
  const int ho = grad_out.dim(1);
  const int wo = grad_out.dim(2);
  const int rows = in_ * k_ * k_;
  const int plane = ho * wo;
  ConstMatrixMap gy(grad_out.data(), out_, plane);
  MatrixMap gw(grads[weight_id_].data(), out_, rows);
  if (bias_id_ >= 0) {
    Tensor& gb = grads[bias_id_];
    for (int c = 0; c < out_; ++c) gb[c] += gy.row(c).sum();
  }
  const bool pointwise = k_ == 1 && stride_ == 1 && pad_ == 0;
  if (pointwise) {
    gw.noalias() += gy * ConstMatrixMap(x.data(), rows, plane).transpose();
  } else {
    auto& cols = scratch();
    cols.resize(static_cast<std::size_t>(rows) * plane);
    im2col(x, k_, stride_, pad_, ho, wo, cols.data());
    gw.noalias() += gy * ConstMatrixMap(cols.data(), rows, plane).transpose();
  }
  if (!need_input_grad) return {};

  ConstMatrixMap w(p.value(weight_id_).data(), out_, rows);
  Tensor dx(x.shape());
  if (pointwise) {
    MatrixMap(dx.data(), rows, plane).noalias() = w.transpose() * gy;
  } else {
    auto& cols = scratch();
    MatrixMap(cols.data(), rows, plane).noalias() = w.transpose() * gy;
    col2im(cols.data(), in_, x.dim(1), x.dim(2), k_, stride_, pad_, ho, wo, dx);
  }
  return dx;
}

// ---------------------------------------------------------------------------
// FrozenBatchNorm
// ---------------------------------------------------------------------------

FrozenBatchNorm::FrozenBatchNorm(int gamma_id, int beta_id, int mean_id, int var_id,
                                 double eps)
    : gamma_id_(gamma_id), beta_id_(beta_id), mean_id_(mean_id), var_id_(var_id), eps_(eps) {}

Tensor FrozenBatchNorm::forward(const ParameterSet& p, const Tensor& x, Tape* tape) const {
  const Tensor& gamma = p.value(gamma_id_);
  const Tensor& beta = p.value(beta_id_);
  const Tensor& mean = p.value(mean_id_);
  const Tensor& var = p.value(var_id_);
  const int channels = x.dim(0);
  require(static_cast<int>(gamma.size()) == channels, "batchnorm channel mismatch");
  const std::size_t plane = static_cast<std::size_t>(x.dim(1)) * x.dim(2);
  Tensor y(x.shape());
  for (int c = 0; c < channels; ++c) {
    const double scale = gamma[c] / std::sqrt(var[c] + eps_);
    const double shift = beta[c] - mean[c] * scale;
    const double* src = x.data() + c * plane;
    double* dst = y.data() + c * plane;
    for (std::size_t i = 0; i < plane; ++i) dst[i] = src[i] * scale + shift;
  }
  if (tape) tape->push(x);
  return y;
}

Tensor FrozenBatchNorm::backward(const ParameterSet& p, const Tensor& grad_out, Tape& tape,
                                 Gradients& grads, bool need_input_grad) const {
  const Tensor x = tape.pop();
  const Tensor& gamma = p.value(gamma_id_);
  const Tensor& mean = p.value(mean_id_);
  const Tensor& var = p.value(var_id_);
  const int channels = x.dim(0);
  const std::size_t plane = static_cast<std::size_t>(x.dim(1)) * x.dim(2);
  Tensor dx = need_input_grad ? Tensor(x.shape()) : Tensor();
  for (int c = 0; c < channels; ++c) {
    const double inv_std = 1.0 / std::sqrt(var[c] + eps_);
    const double* g = grad_out.data() + c * plane;
    const double* src = x.data() + c * plane;
    double g_sum = 0.0;
    double g_xhat = 0.0;
    for (std::size_t i = 0; i < plane; ++i) {
      g_sum += g[i];
      g_xhat += g[i] * (src[i] - mean[c]) * inv_std;
    }
    grads[gamma_id_][c] += g_xhat;
    grads[beta_id_][c] += g_sum;
    if (need_input_grad) {
      const double scale = gamma[c] * inv_std;
      double* d = dx.data() + c * plane;
      for (std::size_t i = 0; i < plane; ++i) d[i] = g[i] * scale;
    }
  }
  return dx;
}

// ---------------------------------------------------------------------------
// ReLU / MaxPool
// ---------------------------------------------------------------------------

Tensor ReLU::forward(const ParameterSet&, const Tensor& x, Tape* tape) const {
  Tensor y = x;
  for (double& v : y.values()) v = v > 0.0 ? v : 0.0;
  if (tape) tape->push(y);
  return y;
}

Tensor ReLU::backward(const ParameterSet&, const Tensor& grad_out, Tape& tape, Gradients&,
                      bool need_input_grad) const {
  const Tensor y = tape.pop();
  if (!need_input_grad) return {};
  Tensor dx = grad_out;
  for (std::size_t i = 0; i < dx.size(); ++i) {
    if (!(y[i] > 0.0)) dx[i] = 0.0;
  }
  return dx;
}

MaxPool2d::MaxPool2d(int kernel, int stride, int padding)
    : k_(kernel), stride_(stride), pad_(padding) {}

Tensor MaxPool2d::forward(const ParameterSet&, const Tensor& x, Tape* tape) const {
  const int channels = x.dim(0);
  const int h = x.dim(1);
  const int w = x.dim(2);
  const int ho = (h + 2 * pad_ - k_) / stride_ + 1;
  const int wo = (w + 2 * pad_ - k_) / stride_ + 1;
  Tensor y({channels, ho, wo});
  Tensor argmax({channels, ho, wo});
  for (int c = 0; c < channels; ++c) {
    for (int oy = 0; oy < ho; ++oy) {
      for (int ox = 0; ox < wo; ++ox) {
        double best = -std::numeric_limits<double>::infinity();
        int best_idx = -1;
        for (int ky = 0; ky < k_; ++ky) {
          const int iy = oy * stride_ - pad_ + ky;
          if (iy < 0 || iy >= h) continue;
          for (int kx = 0; kx < k_; ++kx) {
            const int ix = ox * stride_ - pad_ + kx;
            if (ix < 0 || ix >= w) continue;
            const double v = x.at(c, iy, ix);
            if (v > best) {
              best = v;
              best_idx = iy * w + ix;
            }
          }
        }
        y.at(c, oy, ox) = best;
        argmax.at(c, oy, ox) = best_idx;
      }
    }
  }
  if (tape) {
    tape->push(Tensor(x.shape()));  // carries the input shape only
    tape->push(std::move(argmax));
  }
  return y;
}

Tensor MaxPool2d::backward(const ParameterSet&, const Tensor& grad_out, Tape& tape,
                           Gradients&, bool need_input_grad) const {
  const Tensor argmax = tape.pop();
  Tensor dx = tape.pop();
  if (!need_input_grad) return {};
  const int channels = dx.dim(0);
  const std::size_t in_plane = static_cast<std::size_t>(dx.dim(1)) * dx.dim(2);
  const std::size_t out_plane = static_cast<std::size_t>(grad_out.dim(1)) * grad_out.dim(2);
  for (int c = 0; c < channels; ++c) {
    for (std::size_t i = 0; i < out_plane; ++i) {
      const int idx = static_cast<int>(argmax[c * out_plane + i]);
      if (idx >= 0) dx[c * in_plane + idx] += grad_out[c * out_plane + i];
    }
  }
  return dx;
}

// ---------------------------------------------------------------------------
// Containers
// ---------------------------------------------------------------------------

Tensor Sequential::forward(const ParameterSet& p, const Tensor& x, Tape* tape) const {
  Tensor h = x;
  for (const auto& layer : layers_) h = layer->forward(p, h, tape);
  return h;
}

Tensor Sequential::backward(const ParameterSet& p, const Tensor& grad_out, Tape& tape,
                            Gradients& grads, bool need_input_grad) const {
  Tensor g = grad_out;
  for (std::size_t i = layers_.size(); i-- > 0;) {
    const bool need = i > 0 || need_input_grad;
    g = layers_[i]->backward(p, g, tape, grads, need);
  }
  return layers_.empty() && !need_input_grad ? Tensor() : g;
}

Residual::Residual(Sequential main, Sequential shortcut)
    : main_(std::move(main)), shortcut_(std::move(shortcut)) {}

Tensor Residual::forward(const ParameterSet& p, const Tensor& x, Tape* tape) const {
  Tensor y = main_.forward(p, x, tape);
  y += shortcut_.size() ? shortcut_.forward(p, x, tape) : x;
  for (double& v : y.values()) v = v > 0.0 ? v : 0.0;
  if (tape) tape->push(y);
  return y;
}

Tensor Residual::backward(const ParameterSet& p, const Tensor& grad_out, Tape& tape,
                          Gradients& grads, bool need_input_grad) const {
  const Tensor y = tape.pop();
  Tensor g = grad_out;
  for (std::size_t i = 0; i < g.size(); ++i) {
    if (!(y[i] > 0.0)) g[i] = 0.0;
  }
  Tensor d_short;
  if (shortcut_.size()) {
    d_short = shortcut_.backward(p, g, tape, grads, need_input_grad);
  } else if (need_input_grad) {
    d_short = g;
  }
  Tensor d_main = main_.backward(p, g, tape, grads, need_input_grad);
  if (!need_input_grad) return {};
  d_main += d_short;
  return d_main;
}

}  // namespace gma::nn
