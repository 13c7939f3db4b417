// SPDX-License-Identifier: Apache-2.0
#include "shiftadd/model.hpp"

namespace shiftadd {

const char *to_string(LayerKind kind) {
  switch (kind) {
    case LayerKind::Input: return "input";
    case LayerKind::Conv: return "conv";
    case LayerKind::MaxPool: return "maxpool";
    case LayerKind::AvgPool: return "avgpool";
    case LayerKind::Flatten: return "flatten";
    case LayerKind::Dense: return "dense";
  }
  return "unknown";
}

namespace {

LayerSpec conv(std::string name, int out, bool bn) {
  return {LayerKind::Conv, std::move(name), out, 3, 3, 1, 1, true, bn};
}
LayerSpec pool(std::string name, LayerKind kind) {
  return {kind, std::move(name), 0, 2, 2, 2, 0, false, false};
}

ModelSpec four_layer(int base, bool bn) {
  ModelSpec s;
  s.input = {1, 256, 11};
  s.class_count = 3;
  s.layers = {
      conv("conv1", base, bn),
      pool("maxpool1", LayerKind::MaxPool),
      conv("conv2", 2 * base, bn),
      pool("maxpool2", LayerKind::MaxPool),
      conv("conv3", 4 * base, bn),
      pool("avgpool1", LayerKind::AvgPool),
      conv("conv4", 8 * base, bn),
      {LayerKind::Flatten, "flatten", 0, 1, 1, 1, 0, false, false},
      {LayerKind::Dense, "fc1", 3, 1, 1, 1, 0, false, false},
  };
  return s;
}

}  // namespace

ModelSpec ModelSpec::student(bool batchnorm) { return four_layer(8, batchnorm); }

ModelSpec ModelSpec::wide_student(bool batchnorm) {
  return four_layer(16, batchnorm);
}

ModelSpec ModelSpec::reduced(Shape input, bool batchnorm) {
  ModelSpec s;
  s.input = input;
  s.class_count = 3;
  s.layers = {
      conv("conv1", 2, batchnorm),
      pool("maxpool1", LayerKind::MaxPool),
      conv("conv2", 4, batchnorm),
      pool("avgpool1", LayerKind::AvgPool),
      conv("conv3", 8, batchnorm),
      {LayerKind::Flatten, "flatten", 0, 1, 1, 1, 0, false, false},
      {LayerKind::Dense, "fc1", 3, 1, 1, 1, 0, false, false},
  };
  return s;
}

std::vector<Shape> ModelSpec::shapes() const {
  if (input.channels < 1 || input.rows < 1 || input.cols < 1)
    throw ConfigError("model input shape must be positive, got " + input.str());
  std::vector<Shape> out;
  out.reserve(layers.size());
  Shape cur = input;
  for (const LayerSpec &l : layers) {
    const std::string where = "layer '" + l.name + "' (" + to_string(l.kind) + ")";
    switch (l.kind) {
      case LayerKind::Conv: {
        if (l.out_channels < 1 || l.kernel_h < 1 || l.kernel_w < 1 ||
            l.stride < 1 || l.padding < 0)
          throw ConfigError(where + ": invalid conv geometry");
        const int ph = cur.rows + 2 * l.padding;
        const int pw = cur.cols + 2 * l.padding;
        if (ph < l.kernel_h || pw < l.kernel_w)
          throw ConfigError(where + ": kernel larger than padded input " +
                            cur.str());
        cur = {l.out_channels, (ph - l.kernel_h) / l.stride + 1,
               (pw - l.kernel_w) / l.stride + 1};
        break;
      }
      case LayerKind::MaxPool:
      case LayerKind::AvgPool: {
        if (l.kernel_h < 1 || l.kernel_w < 1 || l.stride < 1)
          throw ConfigError(where + ": invalid pool geometry");
        if (cur.rows < l.kernel_h || cur.cols < l.kernel_w)
          throw ConfigError(where + ": window larger than input " + cur.str());
        cur = {cur.channels, (cur.rows - l.kernel_h) / l.stride + 1,
               (cur.cols - l.kernel_w) / l.stride + 1};
        break;
      }
      case LayerKind::Flatten:
        cur = {static_cast<int>(cur.size()), 1, 1};
        break;
      case LayerKind::Dense:
        if (l.out_channels < 1)
          throw ConfigError(where + ": dense output width must be >= 1");
        cur = {l.out_channels, 1, 1};
        break;
      case LayerKind::Input:
        throw ConfigError(where + ": input is not a graph layer");
    }
    out.push_back(cur);
  }
  if (layers.empty() || layers.back().kind != LayerKind::Dense ||
      cur.channels != class_count)
    throw ConfigError("model must end in a dense layer with class_count = " +
                      std::to_string(class_count) + " outputs");
  return out;
}

Shape ModelSpec::input_of(std::size_t layer) const {
  if (layer == 0) return input;
  return shapes().at(layer - 1);
}

std::size_t ModelSpec::flatten_size() const {
  const auto s = shapes();
  for (std::size_t i = 0; i < layers.size(); ++i)
    if (layers[i].kind == LayerKind::Flatten) return s[i].size();
  throw ConfigError("model has no flatten layer");
}

int ModelSpec::index_of(const std::string &name) const {
  for (std::size_t i = 0; i < layers.size(); ++i)
    if (layers[i].name == name) return static_cast<int>(i);
  return -1;
}

ModelSpec ModelSpec::without_batchnorm() const {
  ModelSpec s = *this;
  for (auto &l : s.layers) l.batchnorm = false;
  return s;
}

CountReport count_report(const ModelSpec &spec) {
  CountReport r;
  r.convention =
      "1 MAC = 1 FLOP for conv/dense; bias add = 1 FLOP; pooling, activation "
      "and batchnorm not counted; params = kernels + biases + dense + "
      "batchnorm gamma/beta";
  const auto shapes = spec.shapes();
  for (std::size_t i = 0; i < spec.layers.size(); ++i) {
    const LayerSpec &l = spec.layers[i];
    const Shape in = spec.input_of(i);
    const Shape out = shapes[i];
    if (l.kind == LayerKind::Conv) {
      const std::int64_t fan_in =
          static_cast<std::int64_t>(in.channels) * l.kernel_h * l.kernel_w;
      r.param_count += l.out_channels * fan_in + l.out_channels;
      if (l.batchnorm) r.param_count += 2 * l.out_channels;
      const auto outputs = static_cast<std::int64_t>(out.size());
      r.mac_count += outputs * fan_in;
      r.flop_count += outputs * fan_in + outputs;
    } else if (l.kind == LayerKind::Dense) {
      const auto fan_in = static_cast<std::int64_t>(in.size());
      r.param_count += l.out_channels * fan_in + l.out_channels;
      r.mac_count += l.out_channels * fan_in;
      r.flop_count += l.out_channels * fan_in + l.out_channels;
    }
  }
  return r;
}

template <typename Scalar>
void check_params(const ModelSpec &spec, const ModelParams<Scalar> &params) {
  if (params.layers.size() != spec.layers.size())
    throw ConfigError("parameter set has " +
                      std::to_string(params.layers.size()) +
                      " layers, spec has " + std::to_string(spec.layers.size()));
  for (std::size_t i = 0; i < spec.layers.size(); ++i) {
    const LayerSpec &l = spec.layers[i];
    const LayerParams<Scalar> &p = params.layers[i];
    const Shape in = spec.input_of(i);
    const std::string where = "layer '" + l.name + "'";
    if (l.kind == LayerKind::Conv) {
      if (!p.conv) throw ConfigError(where + ": missing conv parameters");
      const auto &c = *p.conv;
      if (c.out_channels() != l.out_channels || c.in_channels != in.channels ||
          c.kernel_h != l.kernel_h || c.kernel_w != l.kernel_w ||
          c.stride != l.stride || c.padding != l.padding ||
          c.kernel.cols() != static_cast<Eigen::Index>(in.channels) *
                                 l.kernel_h * l.kernel_w ||
          c.bias.size() != l.out_channels)
        throw ConfigError(where + ": conv parameter shape mismatch");
      if (l.batchnorm) {
        if (!p.bn || p.bn->channels() != l.out_channels ||
            p.bn->beta.size() != l.out_channels ||
            p.bn->mean.size() != l.out_channels ||
            p.bn->var.size() != l.out_channels)
          throw ConfigError(where + ": batchnorm parameter mismatch");
      }
    } else if (l.kind == LayerKind::Dense) {
      if (!p.dense) throw ConfigError(where + ": missing dense parameters");
      if (p.dense->weights.rows() != l.out_channels ||
          p.dense->weights.cols() != static_cast<Eigen::Index>(in.size()) ||
          p.dense->bias.size() != l.out_channels)
        throw ConfigError(where + ": dense parameter shape mismatch");
    }
  }
}

template void check_params(const ModelSpec &, const ModelParams<float> &);
template void check_params(const ModelSpec &, const ModelParams<double> &);

}  // namespace shiftadd
