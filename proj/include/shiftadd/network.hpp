// SPDX-License-Identifier: Apache-2.0
#pragma once

// Batched training network with hand-written reverse mode. A batch of B
// feature maps of shape C x H x W is held as a C x (B*H*W) column-major
// matrix whose column b*H*W + h*W + w is one spatial position of sample b.
// Convolutions run as im2col + GEMM.

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "shiftadd/kd.hpp"
#include "shiftadd/model.hpp"
#include "shiftadd/tensor.hpp"

namespace shiftadd {

/// Trainable tensors in a fixed order: per layer kernel, bias, gamma, beta
/// (conv) or weights, bias (dense). Running batchnorm statistics are not
/// included.
template <typename Scalar>
std::vector<std::span<Scalar>> trainable_views(ModelParams<Scalar> &params);

/// He-normal kernels, zero biases, identity batchnorm; drawn from the
/// "init" stream of `seed`.
template <typename Scalar>
ModelParams<Scalar> init_params(const ModelSpec &spec, std::uint64_t seed);

/// Packs samples into the batch layout; all must have the spec input shape.
template <typename Scalar, typename Sample>
MatrixX<Scalar> pack_batch(std::span<const Sample *const> samples) {
  if (samples.empty()) throw ConfigError("empty batch");
  const Shape s = samples.front()->shape();
  const auto plane = static_cast<Eigen::Index>(s.plane());
  MatrixX<Scalar> out(s.channels, plane * static_cast<Eigen::Index>(samples.size()));
  for (std::size_t b = 0; b < samples.size(); ++b) {
    if (samples[b]->shape() != s) throw ConfigError("batch samples differ in shape");
    out.middleCols(static_cast<Eigen::Index>(b) * plane, plane) =
        samples[b]->matrix().template cast<Scalar>();
  }
  return out;
}

template <typename Scalar>
class Network {
 public:
  Network(ModelSpec spec, ModelParams<Scalar> params);

  const ModelSpec &spec() const { return spec_; }
  ModelParams<Scalar> &params() { return params_; }
  const ModelParams<Scalar> &params() const { return params_; }
  const ModelParams<Scalar> &grads() const { return grads_; }

  /// Logits, class_count x batch. Training mode normalizes with batch
  /// statistics and updates the running ones; eval mode uses the running
  /// statistics only.
  MatrixX<Scalar> forward(const MatrixX<Scalar> &input, int batch, bool training);
  /// Back-propagates d loss / d logits from the last training forward.
  void backward(const MatrixX<Scalar> &dlogits);
  /// Output of layer i from the last forward, in batch layout.
  const MatrixX<Scalar> &output(std::size_t layer) const { return cache_.at(layer).out; }

  Scalar bn_momentum = Scalar(0.1);

 private:
  struct Cache {
    MatrixX<Scalar> cols;   // conv im2col, or dense input
    MatrixX<Scalar> xhat;   // batchnorm normalized pre-activation
    VectorX<Scalar> inv_std;
    MatrixX<Scalar> out;
    std::vector<Eigen::Index> argmax;  // max pool source column per output
  };

  ModelSpec spec_;
  ModelParams<Scalar> params_;
  ModelParams<Scalar> grads_;
  std::vector<Shape> shapes_;
  std::vector<Cache> cache_;
  int batch_ = 0;
  bool trained_forward_ = false;
};

struct BatchLoss {
  double loss = 0;  // mean over the batch
  MatrixX<double> dlogits;
};

/// Mean KD loss of a batch and its logits gradient. Without teacher
/// logits the loss is plain cross entropy. NumericError names the first
/// sample whose loss is not finite.
BatchLoss batch_kd_loss(const MatrixX<double> &logits, std::span<const int> labels,
                        const MatrixX<double> *teacher, const KDConfig &cfg,
                        std::span<const std::string> sample_ids = {});

struct Gradients {
  double loss = 0;
  ModelParams<double> grads;
};

/// Gradients of the mean batch loss for every trainable parameter, with
/// batchnorm in training mode.
Gradients backward_gradients(const ModelSpec &spec, const ModelParams<double> &params,
                             const MatrixX<double> &input, std::span<const int> labels,
                             const MatrixX<double> *teacher, const KDConfig &cfg);

}  // namespace shiftadd
