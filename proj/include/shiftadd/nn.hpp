// SPDX-License-Identifier: Apache-2.0
#pragma once

// Reference floating-point kernels. These are the deterministic oracle the
// integer engine and the streaming simulator are checked against; the
// training path in network.hpp is a separate batched implementation.

#include <algorithm>
#include <cmath>
#include <limits>
#include <span>
#include <string>
#include <vector>

#include "shiftadd/model.hpp"
#include "shiftadd/tensor.hpp"

namespace shiftadd {

/// Zero-padded 2-D convolution. Each output is the (n, p, q) triple sum in
/// that fixed loop order, then the bias.
template <typename Scalar>
Tensor<Scalar> conv2d_forward(const Tensor<Scalar> &input,
                              const ConvLayerParams<Scalar> &params) {
  if (input.channels() != params.in_channels)
    throw ConfigError("conv2d: input has " + std::to_string(input.channels()) +
                      " channels, kernel expects " +
                      std::to_string(params.in_channels));
  if (params.kernel_h < 1 || params.kernel_w < 1 || params.stride < 1 ||
      params.padding < 0)
    throw ConfigError("conv2d: invalid kernel geometry");
  const int ph = input.rows() + 2 * params.padding;
  const int pw = input.cols() + 2 * params.padding;
  if (ph < params.kernel_h || pw < params.kernel_w)
    throw ConfigError("conv2d: window larger than padded input");
  const int out_rows = (ph - params.kernel_h) / params.stride + 1;
  const int out_cols = (pw - params.kernel_w) / params.stride + 1;
  const int m_count = params.out_channels();

  Tensor<Scalar> out(m_count, out_rows, out_cols);
  for (int m = 0; m < m_count; ++m) {
    for (int x = 0; x < out_rows; ++x) {
      for (int y = 0; y < out_cols; ++y) {
        Scalar acc = 0;
        for (int n = 0; n < params.in_channels; ++n) {
          for (int p = 0; p < params.kernel_h; ++p) {
            const int r = x * params.stride + p - params.padding;
            if (r < 0 || r >= input.rows()) continue;
            for (int q = 0; q < params.kernel_w; ++q) {
              const int c = y * params.stride + q - params.padding;
              if (c < 0 || c >= input.cols()) continue;
              acc += input(n, r, c) * params.k(m, n, p, q);
            }
          }
        }
        out(m, x, y) = acc + params.bias(m);
      }
    }
  }
  return out;
}

template <typename Scalar>
Tensor<Scalar> pool2d_forward(const Tensor<Scalar> &input,
                              const PoolSpec &spec) {
  if (spec.window_h < 1 || spec.window_w < 1 || spec.stride < 1)
    throw ConfigError("pool2d: invalid window geometry");
  if (input.rows() < spec.window_h || input.cols() < spec.window_w)
    throw ConfigError("pool2d: window larger than input " +
                      input.shape().str());
  const int out_rows = (input.rows() - spec.window_h) / spec.stride + 1;
  const int out_cols = (input.cols() - spec.window_w) / spec.stride + 1;
  const Scalar area = static_cast<Scalar>(spec.window_h * spec.window_w);

  Tensor<Scalar> out(input.channels(), out_rows, out_cols);
  for (int c = 0; c < input.channels(); ++c) {
    for (int x = 0; x < out_rows; ++x) {
      for (int y = 0; y < out_cols; ++y) {
        Scalar acc = spec.mode == PoolMode::Max
                         ? -std::numeric_limits<Scalar>::infinity()
                         : Scalar(0);
        for (int p = 0; p < spec.window_h; ++p) {
          for (int q = 0; q < spec.window_w; ++q) {
            const Scalar v = input(c, x * spec.stride + p, y * spec.stride + q);
            if (spec.mode == PoolMode::Max)
              acc = std::max(acc, v);
            else
              acc += v;
          }
        }
        out(c, x, y) = spec.mode == PoolMode::Max ? acc : acc / area;
      }
    }
  }
  return out;
}

template <typename Scalar>
VectorX<Scalar> dense_forward(std::span<const Scalar> input,
                              const DenseParams<Scalar> &params) {
  if (static_cast<Eigen::Index>(input.size()) != params.weights.cols())
    throw ConfigError("dense: input length " + std::to_string(input.size()) +
                      " != " + std::to_string(params.weights.cols()));
  if (params.bias.size() != params.weights.rows())
    throw ConfigError("dense: bias length != output width");
  VectorX<Scalar> out(params.weights.rows());
  for (Eigen::Index i = 0; i < params.weights.rows(); ++i) {
    Scalar acc = 0;
    for (Eigen::Index j = 0; j < params.weights.cols(); ++j)
      acc += params.weights(i, j) * input[static_cast<std::size_t>(j)];
    out(i) = acc + params.bias(i);
  }
  return out;
}

/// Inference-mode batchnorm using running statistics.
template <typename Scalar>
void batchnorm_inplace(Tensor<Scalar> &t, const BatchNormParams<Scalar> &bn) {
  if (bn.channels() != t.channels())
    throw ConfigError("batchnorm: channel count mismatch");
  for (int c = 0; c < t.channels(); ++c) {
    const Scalar scale = bn.gamma(c) / std::sqrt(bn.var(c) + bn.epsilon);
    t.matrix().row(c) =
        ((t.matrix().row(c).array() - bn.mean(c)) * scale + bn.beta(c))
            .matrix();
  }
}

template <typename Scalar>
void relu_inplace(Tensor<Scalar> &t) {
  t.matrix() = t.matrix().cwiseMax(Scalar(0));
}

/// Returns a conv whose output equals bn(conv(x)) for every x.
template <typename Scalar>
ConvLayerParams<Scalar> fold_batchnorm(const ConvLayerParams<Scalar> &conv,
                                       const BatchNormParams<Scalar> &bn) {
  if (bn.channels() != conv.out_channels() || bn.beta.size() != bn.channels() ||
      bn.mean.size() != bn.channels() || bn.var.size() != bn.channels())
    throw ConfigError("fold_batchnorm: batchnorm has " +
                      std::to_string(bn.channels()) + " channels, conv has " +
                      std::to_string(conv.out_channels()));
  ConvLayerParams<Scalar> out = conv;
  for (int m = 0; m < conv.out_channels(); ++m) {
    const Scalar denom = bn.var(m) + bn.epsilon;
    if (!(denom > 0))
      throw DomainError("fold_batchnorm: variance + epsilon must be > 0");
    const Scalar scale = bn.gamma(m) / std::sqrt(denom);
    out.kernel.row(m) *= scale;
    out.bias(m) = (conv.bias(m) - bn.mean(m)) * scale + bn.beta(m);
  }
  return out;
}

/// Folds every batchnorm into its conv; the returned spec has the flags
/// cleared.
template <typename Scalar>
std::pair<ModelSpec, ModelParams<Scalar>> fold_model_batchnorm(
    const ModelSpec &spec, const ModelParams<Scalar> &params) {
  ModelParams<Scalar> out = params;
  for (std::size_t i = 0; i < spec.layers.size(); ++i) {
    if (spec.layers[i].kind == LayerKind::Conv && spec.layers[i].batchnorm) {
      out.layers[i].conv =
          fold_batchnorm(*params.layers[i].conv, *params.layers[i].bn);
      out.layers[i].bn.reset();
    }
  }
  return {spec.without_batchnorm(), std::move(out)};
}

/// Tempered softmax, evaluated with max-subtraction.
VectorX<double> softmax_temperature(const VectorX<double> &logits,
                                    double temperature);
std::vector<double> softmax_temperature(std::span<const double> logits,
                                        double temperature);

/// Index of the largest entry; ties go to the lowest index.
template <typename Derived>
int argmax(const Eigen::MatrixBase<Derived> &v) {
  int best = 0;
  for (Eigen::Index i = 1; i < v.size(); ++i)
    if (v(i) > v(best)) best = static_cast<int>(i);
  return best;
}

/// Output of every layer, in spec order.
template <typename Scalar>
std::vector<Tensor<Scalar>> model_trace(const ModelSpec &spec,
                                        const ModelParams<Scalar> &params,
                                        const Tensor<Scalar> &input) {
  if (input.shape() != spec.input)
    throw ConfigError("model input shape " + input.shape().str() +
                      " != spec input " + spec.input.str());
  check_params(spec, params);
  std::vector<Tensor<Scalar>> trace;
  trace.reserve(spec.layers.size());
  const Tensor<Scalar> *cur = &input;
  for (std::size_t i = 0; i < spec.layers.size(); ++i) {
    const LayerSpec &l = spec.layers[i];
    const LayerParams<Scalar> &p = params.layers.at(i);
    try {
      switch (l.kind) {
        case LayerKind::Conv: {
          if (!p.conv) throw ConfigError("missing conv parameters");
          Tensor<Scalar> out = conv2d_forward(*cur, *p.conv);
          if (l.batchnorm) {
            if (!p.bn) throw ConfigError("missing batchnorm parameters");
            batchnorm_inplace(out, *p.bn);
          }
          if (l.relu) relu_inplace(out);
          trace.push_back(std::move(out));
          break;
        }
        case LayerKind::MaxPool:
        case LayerKind::AvgPool:
          trace.push_back(pool2d_forward(*cur, l.pool()));
          break;
        case LayerKind::Flatten: {
          Tensor<Scalar> out(static_cast<int>(cur->size()), 1, 1);
          std::copy(cur->flat().begin(), cur->flat().end(),
                    out.flat().begin());
          trace.push_back(std::move(out));
          break;
        }
        case LayerKind::Dense: {
          if (!p.dense) throw ConfigError("missing dense parameters");
          VectorX<Scalar> v = dense_forward(cur->flat(), *p.dense);
          Tensor<Scalar> out(static_cast<int>(v.size()), 1, 1);
          std::copy(v.data(), v.data() + v.size(), out.flat().begin());
          if (l.relu) relu_inplace(out);
          trace.push_back(std::move(out));
          break;
        }
        case LayerKind::Input:
          throw ConfigError("input pseudo-layer inside graph");
      }
    } catch (const ConfigError &e) {
      throw ConfigError("layer '" + l.name + "': " + e.what());
    }
    cur = &trace.back();
  }
  return trace;
}

/// Raw logits (length class_count) of the layer graph.
template <typename Scalar>
VectorX<Scalar> model_forward(const ModelSpec &spec,
                              const ModelParams<Scalar> &params,
                              const Tensor<Scalar> &input) {
  const auto trace = model_trace(spec, params, input);
  const auto flat = trace.back().flat();
  return Eigen::Map<const VectorX<Scalar>>(flat.data(),
                                           static_cast<Eigen::Index>(flat.size()));
}

}  // namespace shiftadd
