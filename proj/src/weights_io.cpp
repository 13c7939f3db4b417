// SPDX-License-Identifier: Apache-2.0
#include "shiftadd/weights_io.hpp"

#include <limits>
#include <map>

namespace shiftadd {

namespace {

constexpr std::uint8_t kReluBit = 0x10;
constexpr std::uint8_t kBatchnormBit = 0x20;

std::uint16_t to_u16(long v, const char *what) {
  if (v < 0 || v > std::numeric_limits<std::uint16_t>::max())
    throw FormatError(std::string("layer field ") + what + " = " +
                      std::to_string(v) + " does not fit u16");
  return static_cast<std::uint16_t>(v);
}

template <typename Derived>
void put_f32(ByteWriter &w, const Eigen::DenseBase<Derived> &m) {
  // Row-major traversal regardless of storage order.
  for (Eigen::Index i = 0; i < m.rows(); ++i)
    for (Eigen::Index j = 0; j < m.cols(); ++j)
      w.f32(static_cast<float>(m(i, j)));
}

template <typename Derived>
void get_f32(ByteReader &r, Eigen::DenseBase<Derived> &m) {
  for (Eigen::Index i = 0; i < m.rows(); ++i)
    for (Eigen::Index j = 0; j < m.cols(); ++j) m(i, j) = r.f32();
}

}  // namespace

std::vector<LayerHeader> layer_headers(const ModelSpec &spec) {
  const auto shapes = spec.shapes();
  std::vector<LayerHeader> out;
  out.push_back({static_cast<std::uint8_t>(LayerKind::Input),
                 to_u16(spec.input.channels, "M"), 0,
                 to_u16(spec.input.rows, "P"), to_u16(spec.input.cols, "Q"), 1,
                 0});
  for (std::size_t i = 0; i < spec.layers.size(); ++i) {
    const LayerSpec &l = spec.layers[i];
    const Shape in = spec.input_of(i);
    LayerHeader h;
    h.tag = static_cast<std::uint8_t>(l.kind);
    if (l.relu) h.tag |= kReluBit;
    if (l.batchnorm) h.tag |= kBatchnormBit;
    switch (l.kind) {
      case LayerKind::Conv:
        h.m = to_u16(l.out_channels, "M");
        h.n = to_u16(in.channels, "N");
        h.p = to_u16(l.kernel_h, "P");
        h.q = to_u16(l.kernel_w, "Q");
        h.s = to_u16(l.stride, "S");
        h.pad = to_u16(l.padding, "pad");
        break;
      case LayerKind::MaxPool:
      case LayerKind::AvgPool:
        h.m = h.n = to_u16(in.channels, "M");
        h.p = to_u16(l.kernel_h, "P");
        h.q = to_u16(l.kernel_w, "Q");
        h.s = to_u16(l.stride, "S");
        break;
      case LayerKind::Flatten:
        h.m = h.n = to_u16(static_cast<long>(in.size()), "M");
        h.p = h.q = h.s = 1;
        break;
      case LayerKind::Dense:
        h.m = to_u16(l.out_channels, "M");
        h.n = to_u16(static_cast<long>(in.size()), "N");
        h.p = h.q = h.s = 1;
        break;
      case LayerKind::Input:
        throw ConfigError("input pseudo-layer inside graph");
    }
    out.push_back(h);
  }
  return out;
}

void write_layer_header(ByteWriter &w, const LayerHeader &h) {
  w.u8(h.tag);
  w.u16(h.m);
  w.u16(h.n);
  w.u16(h.p);
  w.u16(h.q);
  w.u16(h.s);
  w.u16(h.pad);
}

LayerHeader read_layer_header(ByteReader &r) {
  LayerHeader h;
  h.tag = r.u8();
  h.m = r.u16();
  h.n = r.u16();
  h.p = r.u16();
  h.q = r.u16();
  h.s = r.u16();
  h.pad = r.u16();
  return h;
}

ModelSpec spec_from_headers(const std::vector<LayerHeader> &headers) {
  if (headers.empty() || (headers[0].tag & 0x0f) != 0)
    throw FormatError("first layer record must be the input pseudo-layer");
  ModelSpec spec;
  spec.layers.clear();
  spec.input = {headers[0].m, headers[0].p, headers[0].q};
  std::map<LayerKind, int> counters;
  for (std::size_t i = 1; i < headers.size(); ++i) {
    const LayerHeader &h = headers[i];
    const auto kind = static_cast<LayerKind>(h.tag & 0x0f);
    LayerSpec l;
    l.kind = kind;
    l.relu = (h.tag & kReluBit) != 0;
    l.batchnorm = (h.tag & kBatchnormBit) != 0;
    const int ordinal = ++counters[kind];
    switch (kind) {
      case LayerKind::Conv:
        l.name = "conv" + std::to_string(ordinal);
        l.out_channels = h.m;
        l.kernel_h = h.p;
        l.kernel_w = h.q;
        l.stride = h.s;
        l.padding = h.pad;
        break;
      case LayerKind::MaxPool:
      case LayerKind::AvgPool:
        l.name = std::string(to_string(kind)) + std::to_string(ordinal);
        l.kernel_h = h.p;
        l.kernel_w = h.q;
        l.stride = h.s;
        break;
      case LayerKind::Flatten:
        l.name = ordinal == 1 ? "flatten" : "flatten" + std::to_string(ordinal);
        break;
      case LayerKind::Dense:
        l.name = "fc" + std::to_string(ordinal);
        l.out_channels = h.m;
        break;
      default:
        throw FormatError("unknown layer kind tag " + std::to_string(h.tag));
    }
    spec.layers.push_back(l);
  }
  if (spec.layers.empty()) throw FormatError("model has no layers");
  spec.class_count = spec.layers.back().out_channels;
  spec.shapes();  // validates composition
  return spec;
}

std::vector<std::uint8_t> encode_sacw(const ModelSpec &spec,
                                      const ModelParams<double> &params) {
  check_params(spec, params);
  const auto headers = layer_headers(spec);
  ByteWriter w;
  w.bytes("SACW");
  w.u16(kSacwVersion);
  w.u16(to_u16(static_cast<long>(headers.size()), "layer count"));
  write_layer_header(w, headers[0]);
  for (std::size_t i = 0; i < spec.layers.size(); ++i) {
    write_layer_header(w, headers[i + 1]);
    const LayerParams<double> &p = params.layers[i];
    if (spec.layers[i].kind == LayerKind::Conv) {
      put_f32(w, p.conv->kernel);
      put_f32(w, p.conv->bias.transpose());
      if (spec.layers[i].batchnorm) {
        put_f32(w, p.bn->gamma.transpose());
        put_f32(w, p.bn->beta.transpose());
        put_f32(w, p.bn->mean.transpose());
        put_f32(w, p.bn->var.transpose());
        w.f32(static_cast<float>(p.bn->epsilon));
      }
    } else if (spec.layers[i].kind == LayerKind::Dense) {
      put_f32(w, p.dense->weights);
      put_f32(w, p.dense->bias.transpose());
    }
  }
  return std::move(w.data());
}

WeightFile decode_sacw(const std::vector<std::uint8_t> &bytes,
                       const std::string &source) {
  ByteReader r(bytes, source);
  r.expect_magic("SACW");
  const std::uint16_t version = r.u16();
  if (version != kSacwVersion)
    throw FormatError(source + ": unsupported SACW version " +
                      std::to_string(version));
  const std::uint16_t count = r.u16();
  if (count < 2) throw FormatError(source + ": too few layer records");

  // Headers are interleaved with payloads, so the spec is rebuilt
  // incrementally: read a header, size its payload from the headers so far.
  std::vector<LayerHeader> headers;
  std::vector<LayerParams<double>> layers;
  headers.push_back(read_layer_header(r));
  for (std::uint16_t i = 1; i < count; ++i) {
    const LayerHeader h = read_layer_header(r);
    headers.push_back(h);
    LayerParams<double> p;
    const auto kind = static_cast<LayerKind>(h.tag & 0x0f);
    if (kind == LayerKind::Conv) {
      auto c = ConvLayerParams<double>::zeros(h.m, h.n, h.p, h.q, h.s, h.pad);
      get_f32(r, c.kernel);
      auto bias_row = c.bias.transpose();
      get_f32(r, bias_row);
      p.conv = std::move(c);
      if (h.tag & kBatchnormBit) {
        auto bn = BatchNormParams<double>::identity(h.m);
        for (auto *v : {&bn.gamma, &bn.beta, &bn.mean, &bn.var}) {
          auto row = v->transpose();
          get_f32(r, row);
        }
        bn.epsilon = r.f32();
        p.bn = std::move(bn);
      }
    } else if (kind == LayerKind::Dense) {
      auto d = DenseParams<double>::zeros(h.m, h.n);
      get_f32(r, d.weights);
      auto bias_row = d.bias.transpose();
      get_f32(r, bias_row);
      p.dense = std::move(d);
    }
    layers.push_back(std::move(p));
  }
  if (!r.at_end())
    throw FormatError(source + ": " + std::to_string(r.remaining()) +
                      " trailing bytes");
  WeightFile wf;
  wf.spec = spec_from_headers(headers);
  wf.params.layers = std::move(layers);
  check_params(wf.spec, wf.params);
  return wf;
}

void write_sacw(const std::filesystem::path &path, const ModelSpec &spec,
                const ModelParams<double> &params) {
  write_file_atomic(path, encode_sacw(spec, params));
}

WeightFile read_sacw(const std::filesystem::path &path) {
  return decode_sacw(read_file_bytes(path), path.string());
}

}  // namespace shiftadd
