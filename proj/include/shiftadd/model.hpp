// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <Eigen/Core>

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "shiftadd/errors.hpp"
#include "shiftadd/tensor.hpp"

namespace shiftadd {

template <typename Scalar>
using MatrixX = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;
template <typename Scalar>
using RowMatrixX =
    Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename Scalar>
using VectorX = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;

/// Numeric values double as the kind tag of the weight file formats.
enum class LayerKind : std::uint8_t {
  Input = 0,
  Conv = 1,
  MaxPool = 2,
  AvgPool = 3,
  Flatten = 4,
  Dense = 5,
};

const char *to_string(LayerKind kind);

enum class PoolMode { Max, Avg };

struct PoolSpec {
  PoolMode mode = PoolMode::Max;
  int window_h = 2;
  int window_w = 2;
  int stride = 2;
};

/// One entry of the layer graph. `out_channels` is M for conv and the
/// output width for dense; pools and flatten derive it from their input.
struct LayerSpec {
  LayerKind kind = LayerKind::Conv;
  std::string name;
  int out_channels = 0;
  int kernel_h = 1;
  int kernel_w = 1;
  int stride = 1;
  int padding = 0;
  bool relu = false;
  bool batchnorm = false;

  bool has_params() const {
    return kind == LayerKind::Conv || kind == LayerKind::Dense;
  }
  bool is_pool() const {
    return kind == LayerKind::MaxPool || kind == LayerKind::AvgPool;
  }
  PoolSpec pool() const {
    return {kind == LayerKind::MaxPool ? PoolMode::Max : PoolMode::Avg,
            kernel_h, kernel_w, stride};
  }
};

/// Ordered layer graph. The input is a pseudo-layer held in `input`, not in
/// `layers`.
struct ModelSpec {
  Shape input{1, 256, 11};
  std::vector<LayerSpec> layers;
  int class_count = 3;

  /// The 4-layer student: conv(8)-max-conv(16)-max-conv(32)-avg-conv(64)-
  /// flatten(2048)-fc(3), ReLU after each conv.
  static ModelSpec student(bool batchnorm = true);
  /// Channel-doubled student used as the in-repo teacher.
  static ModelSpec wide_student(bool batchnorm = true);
  /// Small variant for gradient checks and streaming property tests.
  static ModelSpec reduced(Shape input = {1, 8, 6}, bool batchnorm = true);

  /// Output shape of every layer; throws ConfigError naming the first layer
  /// whose shape does not compose.
  std::vector<Shape> shapes() const;
  Shape input_of(std::size_t layer) const;
  std::size_t flatten_size() const;
  int index_of(const std::string &name) const;
  /// Copy with every batchnorm flag cleared (after folding).
  ModelSpec without_batchnorm() const;
};

struct CountReport {
  std::int64_t param_count = 0;
  std::int64_t flop_count = 0;
  std::int64_t mac_count = 0;
  std::string convention;
};

/// Parameter and FLOP counts. FLOPs follow the convention string: one MAC
/// is one FLOP, bias adds count, pooling and activation do not.
CountReport count_report(const ModelSpec &spec);

template <typename Scalar>
struct ConvLayerParams {
  /// M x (N*P*Q), row-major so the flat order is [m][n][p][q].
  RowMatrixX<Scalar> kernel;
  VectorX<Scalar> bias;
  int in_channels = 1;
  int kernel_h = 1;
  int kernel_w = 1;
  int stride = 1;
  int padding = 0;

  int out_channels() const { return static_cast<int>(kernel.rows()); }
  Eigen::Index index(int m, int n, int p, int q) const {
    (void)m;
    return (static_cast<Eigen::Index>(n) * kernel_h + p) * kernel_w + q;
  }
  Scalar &k(int m, int n, int p, int q) { return kernel(m, index(m, n, p, q)); }
  Scalar k(int m, int n, int p, int q) const {
    return kernel(m, index(m, n, p, q));
  }

  static ConvLayerParams zeros(int out, int in, int kh, int kw, int stride,
                               int padding) {
    ConvLayerParams c;
    c.kernel = RowMatrixX<Scalar>::Zero(out, in * kh * kw);
    c.bias = VectorX<Scalar>::Zero(out);
    c.in_channels = in;
    c.kernel_h = kh;
    c.kernel_w = kw;
    c.stride = stride;
    c.padding = padding;
    return c;
  }

  template <typename To>
  ConvLayerParams<To> cast() const {
    ConvLayerParams<To> c;
    c.kernel = kernel.template cast<To>();
    c.bias = bias.template cast<To>();
    c.in_channels = in_channels;
    c.kernel_h = kernel_h;
    c.kernel_w = kernel_w;
    c.stride = stride;
    c.padding = padding;
    return c;
  }
};

template <typename Scalar>
struct BatchNormParams {
  VectorX<Scalar> gamma;
  VectorX<Scalar> beta;
  VectorX<Scalar> mean;
  VectorX<Scalar> var;
  Scalar epsilon = Scalar(1e-5);

  int channels() const { return static_cast<int>(gamma.size()); }

  static BatchNormParams identity(int channels, Scalar eps = Scalar(1e-5)) {
    BatchNormParams bn;
    bn.gamma = VectorX<Scalar>::Ones(channels);
    bn.beta = VectorX<Scalar>::Zero(channels);
    bn.mean = VectorX<Scalar>::Zero(channels);
    bn.var = VectorX<Scalar>::Ones(channels);
    bn.epsilon = eps;
    return bn;
  }

  template <typename To>
  BatchNormParams<To> cast() const {
    return {gamma.template cast<To>(), beta.template cast<To>(),
            mean.template cast<To>(), var.template cast<To>(),
            static_cast<To>(epsilon)};
  }
};

template <typename Scalar>
struct DenseParams {
  /// out x in
  RowMatrixX<Scalar> weights;
  VectorX<Scalar> bias;

  static DenseParams zeros(int out, int in) {
    return {RowMatrixX<Scalar>::Zero(out, in), VectorX<Scalar>::Zero(out)};
  }
  template <typename To>
  DenseParams<To> cast() const {
    return {weights.template cast<To>(), bias.template cast<To>()};
  }
};

/// Parameters for one layer of a ModelSpec; which members are set depends
/// on the layer kind.
template <typename Scalar>
struct LayerParams {
  std::optional<ConvLayerParams<Scalar>> conv;
  std::optional<BatchNormParams<Scalar>> bn;
  std::optional<DenseParams<Scalar>> dense;

  template <typename To>
  LayerParams<To> cast() const {
    LayerParams<To> out;
    if (conv) out.conv = conv->template cast<To>();
    if (bn) out.bn = bn->template cast<To>();
    if (dense) out.dense = dense->template cast<To>();
    return out;
  }
};

template <typename Scalar>
struct ModelParams {
  std::vector<LayerParams<Scalar>> layers;

  /// Zero kernels and biases; batchnorm (when flagged) is the identity.
  static ModelParams zeros(const ModelSpec &spec) {
    ModelParams p;
    const auto shapes = spec.shapes();
    p.layers.resize(spec.layers.size());
    for (std::size_t i = 0; i < spec.layers.size(); ++i) {
      const LayerSpec &l = spec.layers[i];
      const Shape in = spec.input_of(i);
      if (l.kind == LayerKind::Conv) {
        p.layers[i].conv = ConvLayerParams<Scalar>::zeros(
            l.out_channels, in.channels, l.kernel_h, l.kernel_w, l.stride,
            l.padding);
        if (l.batchnorm)
          p.layers[i].bn = BatchNormParams<Scalar>::identity(l.out_channels);
      } else if (l.kind == LayerKind::Dense) {
        p.layers[i].dense = DenseParams<Scalar>::zeros(
            l.out_channels, static_cast<int>(in.size()));
      }
    }
    return p;
  }

  template <typename To>
  ModelParams<To> cast() const {
    ModelParams<To> out;
    out.layers.reserve(layers.size());
    for (const auto &l : layers) out.layers.push_back(l.template cast<To>());
    return out;
  }
};

/// Throws ConfigError unless `params` carries exactly the tensors `spec`
/// requires, with matching shapes.
template <typename Scalar>
void check_params(const ModelSpec &spec, const ModelParams<Scalar> &params);

}  // namespace shiftadd
