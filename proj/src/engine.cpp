// SPDX-License-Identifier: Apache-2.0
#include "shiftadd/engine.hpp"

#include <bit>
#include <cmath>
#include <string>

#include "shiftadd/nn.hpp"

namespace shiftadd {

std::int32_t quantize_activation(double x, int activation_bits) {
  if (activation_bits < 0 || activation_bits > 30)
    throw ConfigError("activation fraction bits must be in [0, 30]");
  if (!std::isfinite(x)) throw RangeError("non-finite activation");
  if (std::fabs(x) >= std::ldexp(1.0, 31 - activation_bits))
    throw RangeError("activation " + std::to_string(x) +
                     " overflows the int32 grid at F_a = " +
                     std::to_string(activation_bits));
  const double v = std::nearbyint(std::ldexp(x, activation_bits));
  if (std::fabs(v) > static_cast<double>(kActivationLimit))
    throw RangeError("activation rounds past the int32 grid");
  return static_cast<std::int32_t>(v);
}

std::int64_t shift_add_mul(std::int32_t act, const ShiftQuantParam &q,
                           const FixedFrame &frame) {
  std::int64_t acc = 0;
  const std::int64_t a = act;
  for (auto s : q.shifts) {
    const int amount = frame.fraction_bits + frame.exponent_of(s);
    if (amount < 0 || amount > 31)
      throw RangeError("shift amount " + std::to_string(amount) +
                       " outside the aligned datapath");
    acc += a << amount;
  }
  return q.sign < 0 ? -acc : (q.sign > 0 ? acc : 0);
}

std::int64_t shift_right_round_even(std::int64_t value, int shift) {
  if (shift <= 0) return value;
  const std::int64_t floor_q = value >> shift;
  const std::int64_t rem = value - (floor_q << shift);
  const std::int64_t half = std::int64_t{1} << (shift - 1);
  if (rem > half || (rem == half && (floor_q & 1))) return floor_q + 1;
  return floor_q;
}

std::int32_t SaturationCounter::clamp(std::int64_t v, const char *where) {
  if (v > kActivationLimit || v < -kActivationLimit) {
    if (diagnostic)
      throw SaturationError(std::string("saturation in ") + where);
    ++count;
    return static_cast<std::int32_t>(v > 0 ? kActivationLimit : -kActivationLimit);
  }
  return static_cast<std::int32_t>(v);
}

PreparedLayer::PreparedLayer(const QuantizedLayer &layer, const LayerSpec &spec,
                             Shape input, const FixedFrame &frame,
                             int activation_bits)
    : spec_(spec), fraction_bits_(frame.fraction_bits) {
  std::size_t out = static_cast<std::size_t>(spec.out_channels);
  std::size_t fan_in = 0;
  if (spec.kind == LayerKind::Conv) {
    in_channels_ = input.channels;
    kernel_h_ = spec.kernel_h;
    kernel_w_ = spec.kernel_w;
    fan_in = static_cast<std::size_t>(input.channels) * kernel_h_ * kernel_w_;
  } else if (spec.kind == LayerKind::Dense) {
    in_channels_ = static_cast<int>(input.size());
    fan_in = input.size();
  } else {
    throw ConfigError("layer '" + spec.name + "' has no parameters to prepare");
  }
  if (layer.weight_count != out * fan_in || layer.params.size() != out * fan_in + out)
    throw ConfigError("layer '" + spec.name +
                      "': quantized parameter count does not match the spec");

  offsets_.reserve(layer.params.size() + 1);
  offsets_.push_back(0);
  std::int64_t max_weight = 0;
  for (std::size_t i = 0; i < layer.weight_count; ++i) {
    const ShiftQuantParam &p = layer.params[i];
    std::int64_t w = 0;
    for (auto s : p.shifts) {
      const int amount = frame.fraction_bits + frame.exponent_of(s);
      if (amount < 0 || amount > 31)
        throw ConfigError("layer '" + spec.name + "': shift outside frame");
      amounts_.push_back(static_cast<std::uint8_t>(amount));
      w += std::int64_t{1} << amount;
    }
    max_weight = std::max(max_weight, w);
    signs_.push_back(p.sign);
    offsets_.push_back(static_cast<std::uint32_t>(amounts_.size()));
  }
  std::int64_t max_bias = 0;
  for (std::size_t m = 0; m < out; ++m) {
    const ShiftQuantParam &p = layer.params[layer.weight_count + m];
    std::int64_t b = 0;
    for (auto s : p.shifts) {
      const int amount = activation_bits + frame.fraction_bits + frame.exponent_of(s);
      if (amount < 0 || amount > 61)
        throw ConfigError("layer '" + spec.name + "': bias shift outside frame");
      b += std::int64_t{1} << amount;
    }
    max_bias = std::max(max_bias, b);
    bias_acc_.push_back(p.sign < 0 ? -b : b);
  }
  const long double worst = static_cast<long double>(fan_in) *
                                static_cast<long double>(kActivationLimit) *
                                static_cast<long double>(max_weight) +
                            static_cast<long double>(max_bias);
  worst_case_bits_ = worst > 0 ? static_cast<double>(std::log2(worst)) : 0.0;
}

std::int32_t PreparedLayer::finish(std::int64_t acc, SaturationCounter &sat) const {
  std::int32_t v = sat.clamp(shift_right_round_even(acc, fraction_bits_),
                             spec_.name.c_str());
  if (spec_.relu && v < 0) v = 0;
  return v;
}

std::int32_t integer_average(std::int64_t sum, int area) {
  if (area < 1 || !std::has_single_bit(static_cast<unsigned>(area)))
    throw ConfigError("integer average pooling needs a power-of-two window area");
  const int k = std::countr_zero(static_cast<unsigned>(area));
  return static_cast<std::int32_t>((sum + (area >> 1)) >> k);
}

IntTensor integer_pool_forward(const IntTensor &input, const PoolSpec &spec) {
  if (input.rows() < spec.window_h || input.cols() < spec.window_w ||
      spec.window_h < 1 || spec.window_w < 1 || spec.stride < 1)
    throw ConfigError("pool2d: window larger than input " + input.shape().str());
  const int out_rows = (input.rows() - spec.window_h) / spec.stride + 1;
  const int out_cols = (input.cols() - spec.window_w) / spec.stride + 1;
  const int area = spec.window_h * spec.window_w;
  IntTensor out(input.channels(), out_rows, out_cols);
  for (int c = 0; c < input.channels(); ++c) {
    for (int x = 0; x < out_rows; ++x) {
      for (int y = 0; y < out_cols; ++y) {
        std::int64_t acc = spec.mode == PoolMode::Max ? INT64_MIN : 0;
        for (int p = 0; p < spec.window_h; ++p) {
          for (int q = 0; q < spec.window_w; ++q) {
            const std::int32_t v = input(c, x * spec.stride + p, y * spec.stride + q);
            if (spec.mode == PoolMode::Max)
              acc = std::max<std::int64_t>(acc, v);
            else
              acc += v;
          }
        }
        out(c, x, y) = spec.mode == PoolMode::Max ? static_cast<std::int32_t>(acc)
                                                  : integer_average(acc, area);
      }
    }
  }
  return out;
}

std::vector<double> InferenceResult::real_logits(int activation_bits) const {
  std::vector<double> out;
  for (auto v : logits) out.push_back(std::ldexp(static_cast<double>(v), -activation_bits));
  return out;
}

ShiftAddEngine::ShiftAddEngine(QuantizedModel model, EngineConfig config)
    : model_(std::move(model)), config_(config) {
  model_.frame.validate();
  if (config_.activation_bits < 0 || config_.activation_bits > 30)
    throw ConfigError("activation fraction bits must be in [0, 30]");
  model_.activation_bits = config_.activation_bits;
  shapes_ = model_.spec.shapes();
  prepared_.resize(model_.spec.layers.size());
  for (std::size_t i = 0; i < model_.spec.layers.size(); ++i) {
    const LayerSpec &l = model_.spec.layers[i];
    if (l.batchnorm)
      throw ConfigError("layer '" + l.name + "': engine needs batchnorm folded");
    if (l.kind == LayerKind::AvgPool &&
        !std::has_single_bit(static_cast<unsigned>(l.kernel_h * l.kernel_w)))
      throw ConfigError("layer '" + l.name +
                        "': average window area must be a power of two");
    if (!l.has_params()) continue;
    const QuantizedLayer *ql = model_.layer_for(i);
    if (!ql) throw ConfigError("layer '" + l.name + "' has no quantized parameters");
    prepared_[i].emplace(*ql, l, model_.spec.input_of(i), model_.frame,
                         config_.activation_bits);
    if (prepared_[i]->worst_case_bits() >= 63.0)
      throw ConfigError("layer '" + l.name + "': worst-case accumulator needs " +
                        std::to_string(prepared_[i]->worst_case_bits()) +
                        " bits, exceeds int64");
  }
}

const PreparedLayer *ShiftAddEngine::prepared(std::size_t layer) const {
  return prepared_.at(layer) ? &*prepared_[layer] : nullptr;
}

double ShiftAddEngine::worst_case_accumulator_bits() const {
  double worst = 0;
  for (const auto &p : prepared_)
    if (p) worst = std::max(worst, p->worst_case_bits());
  return worst;
}

IntTensor ShiftAddEngine::condition_input(const TensorD &frame) const {
  if (frame.shape() != model_.spec.input)
    throw ConfigError("frame shape " + frame.shape().str() + " != model input " +
                      model_.spec.input.str());
  IntTensor out(frame.shape());
  const auto src = frame.flat();
  auto dst = out.flat();
  for (std::size_t i = 0; i < src.size(); ++i)
    dst[i] = quantize_activation(src[i], config_.activation_bits);
  return out;
}

IntTensor ShiftAddEngine::layer_forward(std::size_t layer, const IntTensor &input,
                                        SaturationCounter &sat) const {
  const LayerSpec &l = model_.spec.layers.at(layer);
  const Shape out_shape = shapes_[layer];
  switch (l.kind) {
    case LayerKind::Conv: {
      const PreparedLayer &pl = *prepared_[layer];
      IntTensor out(out_shape);
      for (int m = 0; m < out_shape.channels; ++m) {
        for (int x = 0; x < out_shape.rows; ++x) {
          for (int y = 0; y < out_shape.cols; ++y) {
            std::int64_t acc = 0;
            for (int n = 0; n < input.channels(); ++n) {
              for (int p = 0; p < l.kernel_h; ++p) {
                const int r = x * l.stride + p - l.padding;
                if (r < 0 || r >= input.rows()) continue;
                for (int q = 0; q < l.kernel_w; ++q) {
                  const int c = y * l.stride + q - l.padding;
                  if (c < 0 || c >= input.cols()) continue;
                  acc += pl.mul(pl.weight_index(m, n, p, q), input(n, r, c));
                }
              }
            }
            out(m, x, y) = pl.finish(acc + pl.bias(m), sat);
          }
        }
      }
      return out;
    }
    case LayerKind::MaxPool:
    case LayerKind::AvgPool:
      return integer_pool_forward(input, l.pool());
    case LayerKind::Flatten: {
      IntTensor out(out_shape);
      std::copy(input.flat().begin(), input.flat().end(), out.flat().begin());
      return out;
    }
    case LayerKind::Dense: {
      const PreparedLayer &pl = *prepared_[layer];
      const auto in = input.flat();
      IntTensor out(out_shape);
      for (int m = 0; m < out_shape.channels; ++m) {
        std::int64_t acc = 0;
        const std::size_t row = static_cast<std::size_t>(m) * in.size();
        for (std::size_t j = 0; j < in.size(); ++j) acc += pl.mul(row + j, in[j]);
        out(m, 0, 0) = pl.finish(acc + pl.bias(m), sat);
      }
      return out;
    }
    case LayerKind::Input:
      break;
  }
  throw ConfigError("unsupported layer kind in integer engine");
}

InferenceResult ShiftAddEngine::forward_integer(const IntTensor &input) const {
  if (input.shape() != model_.spec.input)
    throw ConfigError("integer input shape mismatch");
  InferenceResult r;
  r.saturations.assign(model_.spec.layers.size(), 0);
  IntTensor cur = input;
  for (std::size_t i = 0; i < model_.spec.layers.size(); ++i) {
    SaturationCounter sat{config_.diagnostic, 0};
    cur = layer_forward(i, cur, sat);
    r.saturations[i] = sat.count;
    r.total_saturations += sat.count;
  }
  r.logits.assign(cur.flat().begin(), cur.flat().end());
  r.argmax = 0;
  for (std::size_t i = 1; i < r.logits.size(); ++i)
    if (r.logits[i] > r.logits[static_cast<std::size_t>(r.argmax)])
      r.argmax = static_cast<int>(i);
  return r;
}

InferenceResult ShiftAddEngine::forward(const TensorD &frame) const {
  return forward_integer(condition_input(frame));
}

}  // namespace shiftadd
