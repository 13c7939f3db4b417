// SPDX-License-Identifier: Apache-2.0
#include "shiftadd/quant.hpp"

#include <algorithm>
#include <bit>
#include <cfenv>
#include <cmath>

namespace shiftadd {

void FixedFrame::validate() const {
  if (fraction_bits < 0 || integer_bits < 1 || width() > 31)
    throw ConfigError("fixed-point frame needs F >= 0, I >= 1, F + I <= 31; got F=" +
                      std::to_string(fraction_bits) +
                      " I=" + std::to_string(integer_bits));
}

std::int64_t fixed_magnitude(double w, const FixedFrame &frame) {
  frame.validate();
  if (!std::isfinite(w)) throw RangeError("non-finite weight");
  const double mag = std::fabs(w);
  if (mag >= std::ldexp(1.0, frame.integer_bits))
    throw RangeError("|w| = " + std::to_string(mag) + " exceeds 2^" +
                     std::to_string(frame.integer_bits));
  // Scaling by a power of two is exact; nearbyint rounds half to even under
  // the default rounding mode.
  const double scaled = std::nearbyint(std::ldexp(mag, frame.fraction_bits));
  const auto v = static_cast<std::int64_t>(scaled);
  if (v >= (std::int64_t{1} << frame.width()))
    throw RangeError("|w| = " + std::to_string(mag) +
                     " rounds past the integer range");
  return v;
}

double round_to_fixed(double w, const FixedFrame &frame) {
  const double v = std::ldexp(static_cast<double>(fixed_magnitude(w, frame)),
                              -frame.fraction_bits);
  return w < 0 ? -v : v;
}

std::vector<int> fixed_point_decompose(double w, const FixedFrame &frame) {
  const std::int64_t v = fixed_magnitude(w, frame);
  std::vector<int> exps;
  for (int bit = frame.width() - 1; bit >= 0; --bit)
    if ((v >> bit) & 1) exps.push_back(bit - frame.fraction_bits);
  return exps;
}

std::vector<int> ShiftQuantParam::exponents(const FixedFrame &frame) const {
  std::vector<int> e;
  e.reserve(shifts.size());
  for (auto s : shifts) e.push_back(frame.exponent_of(s));
  return e;
}

double ShiftQuantParam::value(const FixedFrame &frame) const {
  double acc = 0.0;
  for (auto s : shifts) acc += std::ldexp(1.0, frame.exponent_of(s));
  return sign < 0 ? -acc : (sign > 0 ? acc : 0.0);
}

ShiftQuantParam shift_quantize_param(double w, int terms,
                                     const FixedFrame &frame) {
  if (terms < 1) throw ConfigError("number of shift parameters must be >= 1");
  const std::vector<int> exps = fixed_point_decompose(w, frame);
  ShiftQuantParam q;
  const std::size_t keep = std::min(exps.size(), static_cast<std::size_t>(terms));
  for (std::size_t i = 0; i < keep; ++i)
    q.shifts.push_back(static_cast<std::uint8_t>(frame.shift_of(exps[i])));
  q.sign = q.shifts.empty() ? 0 : (w < 0 ? -1 : 1);
  return q;
}

std::size_t QuantizedLayer::term_count() const {
  std::size_t n = 0;
  for (const auto &p : params) n += p.shifts.size();
  return n;
}

const QuantizedLayer *QuantizedModel::layer_for(std::size_t spec_index) const {
  for (const auto &l : layers)
    if (l.layer_index == spec_index) return &l;
  return nullptr;
}

namespace {

void quantize_values(QuantizedLayer &out, const std::string &layer_name,
                     std::span<const double> values, int terms,
                     const FixedFrame &frame, std::size_t index_offset) {
  for (std::size_t i = 0; i < values.size(); ++i) {
    try {
      out.params.push_back(shift_quantize_param(values[i], terms, frame));
    } catch (const RangeError &e) {
      throw RangeError("layer '" + layer_name + "' parameter " +
                       std::to_string(index_offset + i) + ": " + e.what());
    }
  }
}

}  // namespace

QuantizedModel shift_quantize_model(const ModelSpec &spec,
                                    const ModelParams<double> &params,
                                    int terms, const FixedFrame &frame,
                                    const QuantizeOptions &options) {
  frame.validate();
  if (terms < 1) throw ConfigError("number of shift parameters must be >= 1");
  check_params(spec, params);
  for (const auto &l : spec.layers)
    if (l.batchnorm)
      throw ConfigError("layer '" + l.name +
                        "': fold batchnorm before quantization");

  QuantizedModel q;
  q.spec = spec;
  q.terms = terms;
  q.frame = frame;
  const int bias_terms = options.quantize_biases ? terms : frame.width();
  for (std::size_t i = 0; i < spec.layers.size(); ++i) {
    const LayerSpec &l = spec.layers[i];
    if (!l.has_params()) continue;
    QuantizedLayer ql;
    ql.layer_index = i;
    const LayerParams<double> &p = params.layers[i];
    const auto &w = l.kind == LayerKind::Conv ? p.conv->kernel : p.dense->weights;
    const auto &b = l.kind == LayerKind::Conv ? p.conv->bias : p.dense->bias;
    ql.weight_count = static_cast<std::size_t>(w.size());
    quantize_values(ql, l.name, {w.data(), static_cast<std::size_t>(w.size())},
                    terms, frame, 0);
    quantize_values(ql, l.name, {b.data(), static_cast<std::size_t>(b.size())},
                    bias_terms, frame, ql.weight_count);
    q.layers.push_back(std::move(ql));
  }
  return q;
}

ModelParams<double> dequantize_model(const QuantizedModel &q) {
  ModelParams<double> out = ModelParams<double>::zeros(q.spec);
  for (const QuantizedLayer &ql : q.layers) {
    LayerParams<double> &p = out.layers.at(ql.layer_index);
    auto &w = p.conv ? p.conv->kernel : p.dense->weights;
    auto &b = p.conv ? p.conv->bias : p.dense->bias;
    if (ql.params.size() != static_cast<std::size_t>(w.size() + b.size()))
      throw ConfigError("quantized layer size does not match its spec");
    for (std::size_t i = 0; i < ql.weight_count; ++i)
      w.data()[i] = ql.params[i].value(q.frame);
    for (Eigen::Index i = 0; i < b.size(); ++i)
      b(i) = ql.params[ql.weight_count + static_cast<std::size_t>(i)].value(q.frame);
  }
  return out;
}

EncodedLayer encode_layer(std::span<const int> magnitudes, int bits) {
  if (bits < 1 || bits > 8)
    throw ConfigError("encoding width must be in [1, 8], got " +
                      std::to_string(bits));
  if (magnitudes.empty()) throw ConfigError("cannot encode an empty layer");
  const int min_value = *std::min_element(magnitudes.begin(), magnitudes.end());
  if (min_value < 0) throw ConfigError("shift magnitudes must be non-negative");
  const int max_range = (1 << bits) - 1;
  EncodedLayer out;
  out.bias = min_value;
  out.codes.reserve(magnitudes.size());
  for (int m : magnitudes) {
    int biased = m - out.bias;
    if (biased > max_range) {
      biased = max_range;
      ++out.clamp_count;
    }
    out.codes.push_back(static_cast<std::uint8_t>(biased));
  }
  return out;
}

std::vector<int> decode_layer(int bias, std::span<const std::uint8_t> codes) {
  std::vector<int> out;
  out.reserve(codes.size());
  for (auto c : codes) out.push_back(static_cast<int>(c) + bias);
  return out;
}

QuantizedModel encode_model(const QuantizedModel &q, int bits) {
  QuantizedModel out = q;
  out.bits = bits;
  for (QuantizedLayer &ql : out.layers) {
    std::vector<int> mags;
    mags.reserve(ql.term_count());
    for (const auto &p : ql.params)
      for (auto s : p.shifts) mags.push_back(s);
    if (mags.empty()) {
      // All-zero layer: nothing to store.
      if (bits < 1 || bits > 8)
        throw ConfigError("encoding width must be in [1, 8]");
      ql.encoding_bias = 0;
      ql.codes.clear();
      ql.clamp_count = 0;
      continue;
    }
    EncodedLayer enc = encode_layer(mags, bits);
    const std::vector<int> decoded = decode_layer(enc.bias, enc.codes);
    std::size_t k = 0;
    for (auto &p : ql.params)
      for (auto &s : p.shifts) s = static_cast<std::uint8_t>(decoded[k++]);
    ql.encoding_bias = enc.bias;
    ql.codes = std::move(enc.codes);
    ql.clamp_count = enc.clamp_count;
  }
  return out;
}

CompressionReport compression_report(const ModelSpec &spec, int terms,
                                     int bits) {
  if (terms < 1) throw ConfigError("number of shift parameters must be >= 1");
  if (bits < 1 || bits > 8) throw ConfigError("encoding width must be in [1, 8]");
  CompressionReport r;
  r.terms = terms;
  r.bits = bits;
  r.stored_bits_per_weight = terms * bits;
  r.ratio = static_cast<double>(r.stored_bits_per_weight) / r.baseline_bits;
  r.ratio_percent = r.ratio * 100.0;
  r.exceeds_baseline = r.ratio > 1.0;
  r.param_count = count_report(spec).param_count;
  for (const auto &l : spec.layers)
    if (l.has_params()) ++r.parameterized_layers;
  r.total_stored_bits = r.param_count * r.stored_bits_per_weight;
  r.total_stored_bits_with_overhead =
      r.total_stored_bits +
      r.param_count * (r.sign_bits_per_weight + r.term_count_bits_per_weight) +
      r.parameterized_layers * r.layer_bias_bits;
  r.baseline_total_bits = r.param_count * r.baseline_bits;
  return r;
}

}  // namespace shiftadd
