#include "sg/model.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <limits>
#include <sstream>
#include <stdexcept>

namespace sg {

namespace {

using RowMat = Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MatMap = Eigen::Map<RowMat>;
using ConstMatMap = Eigen::Map<const RowMat>;
using VecMap = Eigen::Map<Eigen::VectorXf>;
using ConstVecMap = Eigen::Map<const Eigen::VectorXf>;

constexpr std::array<std::string_view, kParamCount> kParamNames{
    "conv1.weight", "conv1.bias", "conv2.weight", "conv2.bias",
    "conv3.weight", "conv3.bias", "fc.weight",    "fc.bias"};

constexpr std::size_t kKernel = 3;
constexpr std::size_t kTaps = kKernel * kKernel;

// 3x3, stride 1, zero padding 1. cols is (C*9) x (H*W), row-major.
void im2col(const float* in, std::size_t channels, std::size_t h, std::size_t w, float* cols) {
  for (std::size_t c = 0; c < channels; ++c) {
    const float* plane = in + c * h * w;
    for (std::size_t ky = 0; ky < kKernel; ++ky) {
      for (std::size_t kx = 0; kx < kKernel; ++kx) {
        float* row = cols + ((c * kTaps) + ky * kKernel + kx) * h * w;
        for (std::size_t y = 0; y < h; ++y) {
          const long sy = static_cast<long>(y + ky) - 1;
          float* dst = row + y * w;
          if (sy < 0 || sy >= static_cast<long>(h)) {
            std::fill(dst, dst + w, 0.0f);
            continue;
          }
          const float* src = plane + static_cast<std::size_t>(sy) * w;
          for (std::size_t x = 0; x < w; ++x) {
            const long sx = static_cast<long>(x + kx) - 1;
            dst[x] = (sx < 0 || sx >= static_cast<long>(w)) ? 0.0f : src[sx];
          }
        }
      }
    }
  }
}

// Adjoint of im2col: scatter-add columns back onto a zeroed C x H x W image.
void col2im(const float* cols, std::size_t channels, std::size_t h, std::size_t w, float* out) {
  std::fill(out, out + channels * h * w, 0.0f);
  for (std::size_t c = 0; c < channels; ++c) {
    float* plane = out + c * h * w;
    for (std::size_t ky = 0; ky < kKernel; ++ky) {
      for (std::size_t kx = 0; kx < kKernel; ++kx) {
        const float* row = cols + ((c * kTaps) + ky * kKernel + kx) * h * w;
        for (std::size_t y = 0; y < h; ++y) {
          const long sy = static_cast<long>(y + ky) - 1;
          if (sy < 0 || sy >= static_cast<long>(h)) continue;
          float* dst = plane + static_cast<std::size_t>(sy) * w;
          const float* src = row + y * w;
          for (std::size_t x = 0; x < w; ++x) {
            const long sx = static_cast<long>(x + kx) - 1;
            if (sx >= 0 && sx < static_cast<long>(w)) dst[sx] += src[x];
          }
        }
      }
    }
  }
}

// 2x2 max pool, stride 2. Records the flat source index of each winner.
void maxpool2(const float* in, std::size_t channels, std::size_t h, std::size_t w, float* out,
              std::uint32_t* argmax) {
  const std::size_t oh = h / 2;
  const std::size_t ow = w / 2;
  for (std::size_t c = 0; c < channels; ++c) {
    for (std::size_t y = 0; y < oh; ++y) {
      for (std::size_t x = 0; x < ow; ++x) {
        std::size_t best = (c * h + 2 * y) * w + 2 * x;
        for (std::size_t dy = 0; dy < 2; ++dy) {
          for (std::size_t dx = 0; dx < 2; ++dx) {
            const std::size_t idx = (c * h + 2 * y + dy) * w + 2 * x + dx;
            if (in[idx] > in[best]) best = idx;
          }
        }
        const std::size_t o = (c * oh + y) * ow + x;
        out[o] = in[best];
        argmax[o] = static_cast<std::uint32_t>(best);
      }
    }
  }
}

struct Geometry {
  std::size_t h1, w1, h2, w2, h3, w3;
  explicit Geometry(std::size_t h, std::size_t w)
      : h1(h), w1(w), h2(h / 2), w2(w / 2), h3(h / 4), w3(w / 4) {}
};

// Per-sample activations kept for the backward pass.
struct Workspace {
  FloatBuffer input, cols1, a1, p1, cols2, a2, p2, cols3, a3, pooled, logits;
  std::vector<std::uint32_t> idx1, idx2;
  FloatBuffer dz3, dcols, dp, dz2, dz1, dpooled;

  explicit Workspace(const Geometry& g, std::size_t classes) {
    const auto [c1, c2, c3] = TinyCnn::kWidths;
    input.resize(TinyCnn::kInputChannels * g.h1 * g.w1);
    cols1.resize(TinyCnn::kInputChannels * kTaps * g.h1 * g.w1);
    a1.resize(c1 * g.h1 * g.w1);
    p1.resize(c1 * g.h2 * g.w2);
    idx1.resize(p1.size());
    cols2.resize(c1 * kTaps * g.h2 * g.w2);
    a2.resize(c2 * g.h2 * g.w2);
    p2.resize(c2 * g.h3 * g.w3);
    idx2.resize(p2.size());
    cols3.resize(c2 * kTaps * g.h3 * g.w3);
    a3.resize(c3 * g.h3 * g.w3);
    pooled.resize(c3);
    logits.resize(classes);
  }
};

void relu_inplace(MatMap m) { m = m.cwiseMax(0.0f); }

void sample_forward(const ParameterSet& p, const float* image, const Geometry& g, Workspace& ws) {
  const auto [c1, c2, c3] = TinyCnn::kWidths;
  const std::size_t n1 = g.h1 * g.w1;
  const std::size_t n2 = g.h2 * g.w2;
  const std::size_t n3 = g.h3 * g.w3;

  for (std::size_t k = 0; k < ws.input.size(); ++k) ws.input[k] = 2.0f * image[k] - 1.0f;
  im2col(ws.input.data(), TinyCnn::kInputChannels, g.h1, g.w1, ws.cols1.data());
  MatMap a1(ws.a1.data(), c1, n1);
  a1.noalias() = ConstMatMap(p[Param::conv1_w].data(), c1, TinyCnn::kInputChannels * kTaps) *
                 ConstMatMap(ws.cols1.data(), TinyCnn::kInputChannels * kTaps, n1);
  a1.colwise() += ConstVecMap(p[Param::conv1_b].data(), c1);
  relu_inplace(a1);
  maxpool2(ws.a1.data(), c1, g.h1, g.w1, ws.p1.data(), ws.idx1.data());

  im2col(ws.p1.data(), c1, g.h2, g.w2, ws.cols2.data());
  MatMap a2(ws.a2.data(), c2, n2);
  a2.noalias() = ConstMatMap(p[Param::conv2_w].data(), c2, c1 * kTaps) *
                 ConstMatMap(ws.cols2.data(), c1 * kTaps, n2);
  a2.colwise() += ConstVecMap(p[Param::conv2_b].data(), c2);
  relu_inplace(a2);
  maxpool2(ws.a2.data(), c2, g.h2, g.w2, ws.p2.data(), ws.idx2.data());

  im2col(ws.p2.data(), c2, g.h3, g.w3, ws.cols3.data());
  MatMap a3(ws.a3.data(), c3, n3);
  a3.noalias() = ConstMatMap(p[Param::conv3_w].data(), c3, c2 * kTaps) *
                 ConstMatMap(ws.cols3.data(), c2 * kTaps, n3);
  a3.colwise() += ConstVecMap(p[Param::conv3_b].data(), c3);
  relu_inplace(a3);

  VecMap pooled(ws.pooled.data(), c3);
  pooled = a3.rowwise().sum() / static_cast<float>(n3);
  const std::size_t classes = ws.logits.size();
  VecMap logits(ws.logits.data(), classes);
  logits.noalias() = ConstMatMap(p[Param::fc_w].data(), classes, c3) * pooled;
  logits += ConstVecMap(p[Param::fc_b].data(), classes);
}

void unpool_relu(const FloatBuffer& dpooled, const std::vector<std::uint32_t>& argmax,
                 const FloatBuffer& activation, FloatBuffer& dz) {
  dz.assign(activation.size(), 0.0f);
  for (std::size_t o = 0; o < dpooled.size(); ++o) dz[argmax[o]] += dpooled[o];
  for (std::size_t k = 0; k < dz.size(); ++k) {
    if (activation[k] <= 0.0f) dz[k] = 0.0f;
  }
}

void sample_backward(const ParameterSet& p, const Geometry& g, Workspace& ws,
                     std::span<const float> dlogits, ParameterSet& grads) {
  const auto [c1, c2, c3] = TinyCnn::kWidths;
  const std::size_t n1 = g.h1 * g.w1;
  const std::size_t n2 = g.h2 * g.w2;
  const std::size_t n3 = g.h3 * g.w3;
  const std::size_t classes = dlogits.size();

  ConstVecMap dlog(dlogits.data(), classes);
  ConstVecMap pooled(ws.pooled.data(), c3);
  MatMap(grads[Param::fc_w].data(), classes, c3).noalias() += dlog * pooled.transpose();
  VecMap(grads[Param::fc_b].data(), classes) += dlog;
  ws.dpooled.resize(c3);
  VecMap dpooled(ws.dpooled.data(), c3);
  dpooled.noalias() = ConstMatMap(p[Param::fc_w].data(), classes, c3).transpose() * dlog;

  // Global average pool and ReLU of the last conv.
  ws.dz3.resize(c3 * n3);
  MatMap dz3(ws.dz3.data(), c3, n3);
  const float inv = 1.0f / static_cast<float>(n3);
  for (std::size_t c = 0; c < c3; ++c) {
    for (std::size_t k = 0; k < n3; ++k) {
      dz3(c, k) = ws.a3[c * n3 + k] > 0.0f ? ws.dpooled[c] * inv : 0.0f;
    }
  }
  MatMap(grads[Param::conv3_w].data(), c3, c2 * kTaps).noalias() +=
      dz3 * ConstMatMap(ws.cols3.data(), c2 * kTaps, n3).transpose();
  VecMap(grads[Param::conv3_b].data(), c3) += dz3.rowwise().sum();
  ws.dcols.resize(c2 * kTaps * n3);
  MatMap(ws.dcols.data(), c2 * kTaps, n3).noalias() =
      ConstMatMap(p[Param::conv3_w].data(), c3, c2 * kTaps).transpose() * dz3;
  ws.dp.resize(c2 * n3);
  col2im(ws.dcols.data(), c2, g.h3, g.w3, ws.dp.data());

  unpool_relu(ws.dp, ws.idx2, ws.a2, ws.dz2);
  ConstMatMap dz2(ws.dz2.data(), c2, n2);
  MatMap(grads[Param::conv2_w].data(), c2, c1 * kTaps).noalias() +=
      dz2 * ConstMatMap(ws.cols2.data(), c1 * kTaps, n2).transpose();
  VecMap(grads[Param::conv2_b].data(), c2) += dz2.rowwise().sum();
  ws.dcols.resize(c1 * kTaps * n2);
  MatMap(ws.dcols.data(), c1 * kTaps, n2).noalias() =
      ConstMatMap(p[Param::conv2_w].data(), c2, c1 * kTaps).transpose() * dz2;
  ws.dp.resize(c1 * n2);
  col2im(ws.dcols.data(), c1, g.h2, g.w2, ws.dp.data());

  unpool_relu(ws.dp, ws.idx1, ws.a1, ws.dz1);
  ConstMatMap dz1(ws.dz1.data(), c1, n1);
  MatMap(grads[Param::conv1_w].data(), c1, TinyCnn::kInputChannels * kTaps).noalias() +=
      dz1 * ConstMatMap(ws.cols1.data(), TinyCnn::kInputChannels * kTaps, n1).transpose();
  VecMap(grads[Param::conv1_b].data(), c1) += dz1.rowwise().sum();
}

Geometry check_batch(const TinyCnn& model, const Tensor& batch) {
  (void)model;
  if (batch.rank() != 4 || batch.dim(1) != TinyCnn::kInputChannels) {
    throw std::invalid_argument("model: expected N x 3 x H x W batch, got " +
                                shape_string(batch.shape()));
  }
  const std::size_t h = batch.dim(2);
  const std::size_t w = batch.dim(3);
  if (h == 0 || w == 0 || h % 4 != 0 || w % 4 != 0) {
    throw std::invalid_argument("model: spatial dims must be positive multiples of 4, got " +
                                shape_string(batch.shape()));
  }
  return Geometry(h, w);
}

ParameterSet empty_parameters(std::size_t num_classes) {
  const auto [c1, c2, c3] = TinyCnn::kWidths;
  ParameterSet p;
  p[Param::conv1_w] = Tensor({c1, TinyCnn::kInputChannels, kKernel, kKernel});
  p[Param::conv1_b] = Tensor({c1});
  p[Param::conv2_w] = Tensor({c2, c1, kKernel, kKernel});
  p[Param::conv2_b] = Tensor({c2});
  p[Param::conv3_w] = Tensor({c3, c2, kKernel, kKernel});
  p[Param::conv3_b] = Tensor({c3});
  p[Param::fc_w] = Tensor({num_classes, c3});
  p[Param::fc_b] = Tensor({num_classes});
  return p;
}

}  // namespace

std::string_view param_name(Param p) { return kParamNames[static_cast<std::size_t>(p)]; }

ParameterSet ParameterSet::zeros_like() const {
  ParameterSet out;
  for (std::size_t i = 0; i < kParamCount; ++i) out.tensors[i] = Tensor(tensors[i].shape());
  return out;
}

void ParameterSet::add_scaled(const ParameterSet& other, float factor) {
  for (std::size_t i = 0; i < kParamCount; ++i) {
    if (tensors[i].shape() != other.tensors[i].shape()) {
      throw std::invalid_argument("parameter set: shape mismatch for " +
                                  std::string(kParamNames[i]));
    }
    for (std::size_t k = 0; k < tensors[i].size(); ++k) tensors[i][k] += factor * other.tensors[i][k];
  }
}

TinyCnn::TinyCnn(std::size_t num_classes, RandomStream& rng) {
  if (num_classes < 2) throw std::invalid_argument("model: need at least two classes");
  params_ = empty_parameters(num_classes);
  for (Param w : {Param::conv1_w, Param::conv2_w, Param::conv3_w, Param::fc_w}) {
    Tensor& t = params_[w];
    const std::size_t fan_in = t.size() / t.dim(0);
    // A small classifier keeps the initial logits near uniform, which shortens
    // the plateau at the start of training and its seed-to-seed spread.
    const double gain = w == Param::fc_w ? 0.01 : 2.0;
    const double stddev = std::sqrt(gain / static_cast<double>(fan_in));
    for (float& v : t.values()) v = static_cast<float>(stddev * rng.normal());
  }
}

TinyCnn TinyCnn::zeros(std::size_t num_classes) {
  TinyCnn model;
  model.params_ = empty_parameters(num_classes);
  return model;
}

TinyCnn TinyCnn::from_parameters(ParameterSet params) {
  const std::size_t classes = params[Param::fc_b].size();
  const ParameterSet expected = empty_parameters(classes);
  for (std::size_t i = 0; i < kParamCount; ++i) {
    if (params.tensors[i].shape() != expected.tensors[i].shape()) {
      throw std::invalid_argument("model: parameter " + std::string(kParamNames[i]) +
                                  " has shape " + shape_string(params.tensors[i].shape()));
    }
  }
  TinyCnn model;
  model.params_ = std::move(params);
  return model;
}

std::span<const float> TinyCnn::class_weights(std::size_t cls) const {
  const Tensor& w = params_[Param::fc_w];
  if (cls >= w.dim(0)) throw std::out_of_range("class_weights: class out of range");
  return {w.data() + cls * kFeatureChannels, kFeatureChannels};
}

ForwardResult forward(const TinyCnn& model, const Tensor& batch) {
  const Geometry g = check_batch(model, batch);
  const std::size_t n = batch.dim(0);
  const std::size_t classes = model.num_classes();
  const std::size_t image_size = TinyCnn::kInputChannels * g.h1 * g.w1;
  ForwardResult out{Tensor({n, classes}), Tensor({n, TinyCnn::kFeatureChannels, g.h3, g.w3})};
  Workspace ws(g, classes);
  for (std::size_t i = 0; i < n; ++i) {
    sample_forward(model.parameters(), batch.data() + i * image_size, g, ws);
    std::copy(ws.logits.begin(), ws.logits.end(), out.logits.data() + i * classes);
    std::copy(ws.a3.begin(), ws.a3.end(), out.features.data() + i * ws.a3.size());
  }
  return out;
}

std::vector<double> softmax(std::span<const float> logits) {
  const double top = *std::max_element(logits.begin(), logits.end());
  std::vector<double> p(logits.size());
  double z = 0.0;
  for (std::size_t c = 0; c < logits.size(); ++c) {
    p[c] = std::exp(static_cast<double>(logits[c]) - top);
    z += p[c];
  }
  for (double& v : p) v /= z;
  return p;
}

double soft_cross_entropy(std::span<const float> logits, const SoftLabel& target) {
  const double top = *std::max_element(logits.begin(), logits.end());
  double z = 0.0;
  for (float l : logits) z += std::exp(static_cast<double>(l) - top);
  const double log_z = top + std::log(z);
  double loss = 0.0;
  for (std::size_t c = 0; c < logits.size(); ++c) {
    if (target[c] != 0.0f) loss -= target[c] * (static_cast<double>(logits[c]) - log_z);
  }
  return loss;
}

LossResult loss_and_backward(const TinyCnn& model, const Tensor& batch,
                             std::span<const SoftLabel> targets) {
  const Geometry g = check_batch(model, batch);
  const std::size_t n = batch.dim(0);
  const std::size_t classes = model.num_classes();
  if (targets.size() != n) throw std::invalid_argument("loss: one target per sample required");
  const std::size_t image_size = TinyCnn::kInputChannels * g.h1 * g.w1;
  LossResult out{0.0, model.parameters().zeros_like(), Tensor({n, classes}),
                 Tensor({n, TinyCnn::kFeatureChannels, g.h3, g.w3})};
  Workspace ws(g, classes);
  FloatBuffer dlogits(classes);
  for (std::size_t i = 0; i < n; ++i) {
    if (targets[i].num_classes() != classes) {
      throw std::invalid_argument("loss: target class count mismatch");
    }
    sample_forward(model.parameters(), batch.data() + i * image_size, g, ws);
    std::copy(ws.logits.begin(), ws.logits.end(), out.logits.data() + i * classes);
    std::copy(ws.a3.begin(), ws.a3.end(), out.features.data() + i * ws.a3.size());
    out.loss += soft_cross_entropy(ws.logits, targets[i]);
    const auto probs = softmax(ws.logits);
    for (std::size_t c = 0; c < classes; ++c) {
      dlogits[c] = static_cast<float>((probs[c] - targets[i][c]) / static_cast<double>(n));
    }
    sample_backward(model.parameters(), g, ws, dlogits, out.gradients);
  }
  out.loss /= static_cast<double>(n);
  return out;
}

OptimizerState::OptimizerState(const TinyCnn& model, double lr_, double momentum_,
                               double weight_decay_)
    : velocity(model.parameters().zeros_like()),
      lr(lr_),
      momentum(momentum_),
      weight_decay(weight_decay_) {}

void sgd_step(TinyCnn& model, const ParameterSet& gradients, OptimizerState& state) {
  ParameterSet& params = model.parameters();
  const auto m = static_cast<float>(state.momentum);
  const auto wd = static_cast<float>(state.weight_decay);
  const auto lr = static_cast<float>(state.lr);
  for (std::size_t i = 0; i < kParamCount; ++i) {
    Tensor& theta = params.tensors[i];
    Tensor& v = state.velocity.tensors[i];
    const Tensor& grad = gradients.tensors[i];
    if (theta.shape() != grad.shape() || theta.shape() != v.shape()) {
      throw std::invalid_argument("sgd_step: shape mismatch for " + std::string(kParamNames[i]));
    }
    for (std::size_t k = 0; k < theta.size(); ++k) {
      v[k] = m * v[k] + grad[k] + wd * theta[k];
      theta[k] -= lr * v[k];
    }
  }
}

// ---------------------------------------------------------------------------
// Double-precision reference path.

namespace {

using DVec = std::vector<double>;

// Activation pattern: one entry per ReLU (active or not) and per pooling
// window (winning position). Equal patterns mean no kink lies in between.
using Pattern = std::vector<std::uint8_t>;

DVec ref_conv_relu(const DVec& in, std::size_t cin, std::size_t h, std::size_t w,
                   const Tensor& weight, const Tensor& bias, Pattern* pattern) {
  const std::size_t cout = weight.dim(0);
  DVec out(cout * h * w);
  for (std::size_t o = 0; o < cout; ++o) {
    for (std::size_t y = 0; y < h; ++y) {
      for (std::size_t x = 0; x < w; ++x) {
        double acc = bias[o];
        for (std::size_t c = 0; c < cin; ++c) {
          for (std::size_t ky = 0; ky < 3; ++ky) {
            const long sy = static_cast<long>(y + ky) - 1;
            if (sy < 0 || sy >= static_cast<long>(h)) continue;
            for (std::size_t kx = 0; kx < 3; ++kx) {
              const long sx = static_cast<long>(x + kx) - 1;
              if (sx < 0 || sx >= static_cast<long>(w)) continue;
              acc += static_cast<double>(weight[((o * cin + c) * 3 + ky) * 3 + kx]) *
                     in[(c * h + static_cast<std::size_t>(sy)) * w + static_cast<std::size_t>(sx)];
            }
          }
        }
        out[(o * h + y) * w + x] = std::max(acc, 0.0);
        if (pattern) pattern->push_back(acc > 0.0 ? 1 : 0);
      }
    }
  }
  return out;
}

DVec ref_maxpool(const DVec& in, std::size_t c, std::size_t h, std::size_t w, Pattern* pattern) {
  DVec out(c * (h / 2) * (w / 2));
  for (std::size_t k = 0; k < c; ++k) {
    for (std::size_t y = 0; y < h / 2; ++y) {
      for (std::size_t x = 0; x < w / 2; ++x) {
        double best = -std::numeric_limits<double>::infinity();
        std::uint8_t arg = 0;
        for (std::size_t d = 0; d < 4; ++d) {
          const double v = in[(k * h + 2 * y + d / 2) * w + 2 * x + d % 2];
          if (v > best) {
            best = v;
            arg = static_cast<std::uint8_t>(d);
          }
        }
        out[(k * (h / 2) + y) * (w / 2) + x] = best;
        if (pattern) pattern->push_back(arg);
      }
    }
  }
  return out;
}

double reference_loss_impl(const ParameterSet& p, const Tensor& batch,
                           std::span<const SoftLabel> targets, Pattern* pattern) {
  const std::size_t n = batch.dim(0);
  const std::size_t h = batch.dim(2);
  const std::size_t w = batch.dim(3);
  const std::size_t classes = p[Param::fc_b].size();
  const auto [c1, c2, c3] = TinyCnn::kWidths;
  double total = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const Tensor image = batch.slice(i);
    DVec x(image.values().begin(), image.values().end());
    for (double& v : x) v = 2.0 * v - 1.0;
    x = ref_maxpool(ref_conv_relu(x, 3, h, w, p[Param::conv1_w], p[Param::conv1_b], pattern), c1,
                    h, w, pattern);
    x = ref_maxpool(
        ref_conv_relu(x, c1, h / 2, w / 2, p[Param::conv2_w], p[Param::conv2_b], pattern), c2,
        h / 2, w / 2, pattern);
    x = ref_conv_relu(x, c2, h / 4, w / 4, p[Param::conv3_w], p[Param::conv3_b], pattern);
    const std::size_t plane = (h / 4) * (w / 4);
    DVec logits(classes);
    for (std::size_t k = 0; k < classes; ++k) {
      double acc = p[Param::fc_b][k];
      for (std::size_t c = 0; c < c3; ++c) {
        double avg = 0.0;
        for (std::size_t q = 0; q < plane; ++q) avg += x[c * plane + q];
        acc += static_cast<double>(p[Param::fc_w][k * c3 + c]) * (avg / static_cast<double>(plane));
      }
      logits[k] = acc;
    }
    const double top = *std::max_element(logits.begin(), logits.end());
    double z = 0.0;
    for (double l : logits) z += std::exp(l - top);
    const double log_z = top + std::log(z);
    for (std::size_t k = 0; k < classes; ++k) total -= targets[i][k] * (logits[k] - log_z);
  }
  return total / static_cast<double>(n);
}

}  // namespace

double reference_loss(const ParameterSet& params, const Tensor& batch,
                      std::span<const SoftLabel> targets) {
  return reference_loss_impl(params, batch, targets, nullptr);
}

GradCheckReport finite_diff_check(const TinyCnn& model, const Tensor& batch,
                                  std::span<const SoftLabel> targets, double tolerance,
                                  const ParameterSet& analytic, const GradCheckOptions& options) {
  GradCheckReport report;
  report.tolerance = tolerance;
  report.passed = true;
  ParameterSet probe = model.parameters();
  Pattern base_pattern;
  reference_loss_impl(probe, batch, targets, &base_pattern);
  RandomStream picker(options.sample_seed);
  for (std::size_t t = 0; t < kParamCount; ++t) {
    Tensor& values = probe.tensors[t];
    std::vector<std::size_t> entries;
    if (options.max_entries_per_tensor == 0 || values.size() <= options.max_entries_per_tensor) {
      entries.resize(values.size());
      for (std::size_t k = 0; k < values.size(); ++k) entries[k] = k;
    } else {
      auto perm = picker.permutation(values.size());
      entries.assign(perm.begin(), perm.begin() + static_cast<long>(options.max_entries_per_tensor));
    }
    std::vector<double> numeric(entries.size());
    double scale = 0.0;
    GradCheckReport::Layer layer{std::string(kParamNames[t]), 0.0, entries.size(), 0};
    for (std::size_t e = 0; e < entries.size(); ++e) {
      const std::size_t k = entries[e];
      const float original = values[k];
      // A central difference across a ReLU or max-pool kink measures a blend
      // of two slopes, so the step shrinks until neither side changes the
      // activation pattern.
      double step = options.step;
      for (int attempt = 0;; ++attempt) {
        // The perturbation is applied to the float parameter; use the
        // realised step so rounding of theta +/- h does not bias the quotient.
        Pattern plus_pattern;
        Pattern minus_pattern;
        values[k] = static_cast<float>(original + step);
        const double up = static_cast<double>(values[k]) - original;
        const double f_plus = reference_loss_impl(probe, batch, targets, &plus_pattern);
        values[k] = static_cast<float>(original - step);
        const double down = original - static_cast<double>(values[k]);
        const double f_minus = reference_loss_impl(probe, batch, targets, &minus_pattern);
        values[k] = original;
        numeric[e] = (f_plus - f_minus) / (up + down);
        const bool smooth = plus_pattern == base_pattern && minus_pattern == base_pattern;
        if (smooth || attempt == options.max_step_reductions) break;
        step *= 0.1;
        if (attempt == 0) ++layer.step_reduced;
      }
      scale = std::max(scale, std::abs(numeric[e]));
    }
    const double floor = std::max(1e-3 * scale, 1e-9);
    for (std::size_t e = 0; e < entries.size(); ++e) {
      const double a = analytic.tensors[t][entries[e]];
      const double n = numeric[e];
      const double rel = std::abs(a - n) / std::max({std::abs(a), std::abs(n), floor});
      layer.max_relative_error = std::max(layer.max_relative_error, rel);
    }
    if (!(layer.max_relative_error <= tolerance)) report.passed = false;
    report.layers.push_back(std::move(layer));
  }
  return report;
}

GradCheckReport finite_diff_check(const TinyCnn& model, const Tensor& batch,
                                  std::span<const SoftLabel> targets, double tolerance,
                                  const GradCheckOptions& options) {
  const LossResult analytic = loss_and_backward(model, batch, targets);
  return finite_diff_check(model, batch, targets, tolerance, analytic.gradients, options);
}

void save_checkpoint(const std::string& path, const TinyCnn& model) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot open " + path + " for writing");
  std::ostringstream manifest;
  manifest << "classes " << model.num_classes() << '\n';
  for (std::size_t i = 0; i < kParamCount; ++i) {
    manifest << kParamNames[i] << ' ' << static_cast<long long>(out.tellp()) << '\n';
    write_sgt(out, model.parameters().tensors[i]);
  }
  if (!out) throw std::runtime_error("write failed: " + path);
  std::ofstream man(path + ".manifest");
  if (!man) throw std::runtime_error("cannot open " + path + ".manifest for writing");
  man << manifest.str();
}

TinyCnn load_checkpoint(const std::string& path) {
  std::ifstream man(path + ".manifest");
  std::ifstream in(path, std::ios::binary);
  if (!in || !man) throw std::runtime_error("checkpoint not found: " + path);
  std::string key;
  std::size_t classes = 0;
  if (!(man >> key >> classes) || key != "classes") {
    throw std::runtime_error(path + ".manifest: missing class count");
  }
  ParameterSet params;
  std::string name;
  long long offset = 0;
  std::size_t loaded = 0;
  while (man >> name >> offset) {
    const auto it = std::find(kParamNames.begin(), kParamNames.end(), name);
    if (it == kParamNames.end()) throw std::runtime_error(path + ": unknown parameter " + name);
    in.seekg(offset);
    params.tensors[static_cast<std::size_t>(it - kParamNames.begin())] = read_sgt(in);
    ++loaded;
  }
  if (loaded != kParamCount) throw std::runtime_error(path + ": incomplete checkpoint");
  TinyCnn model = TinyCnn::from_parameters(std::move(params));
  if (model.num_classes() != classes) throw std::runtime_error(path + ": class count mismatch");
  return model;
}

}  // namespace sg
