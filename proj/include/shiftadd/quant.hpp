// SPDX-License-Identifier: Apache-2.0
#pragma once

// Power-of-two weight quantization and per-layer biased code packing.
//
// A weight w is rounded (half-to-even) onto the fixed-point grid 2^-F with I
// integer bits, giving an integer magnitude v < 2^(F+I). Its set bits are the
// exponents e = bit - F. Quantization keeps the N most significant of them.
//
// Exponents are stored as non-negative shift magnitudes s = (I - 1) - e, so
// s = 0 is the largest representable power and s = F + I - 1 the smallest
// (2^-F). Shift lists are ascending in s, i.e. most significant term first.

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "shiftadd/model.hpp"

namespace shiftadd {

struct FixedFrame {
  int fraction_bits = 16;  // F
  int integer_bits = 2;    // I

  int width() const { return fraction_bits + integer_bits; }
  int max_shift() const { return width() - 1; }
  int shift_of(int exponent) const { return integer_bits - 1 - exponent; }
  int exponent_of(int shift) const { return integer_bits - 1 - shift; }
  void validate() const;
  bool operator==(const FixedFrame &) const = default;
};

/// round_half_even(|w| * 2^F); RangeError when it does not fit F + I bits.
std::int64_t fixed_magnitude(double w, const FixedFrame &frame);
/// w rounded onto the fixed-point grid (sign preserved).
double round_to_fixed(double w, const FixedFrame &frame);

/// Exponents of the set bits of the fixed-point |w|, most significant first.
std::vector<int> fixed_point_decompose(double w, const FixedFrame &frame);

struct ShiftQuantParam {
  std::int8_t sign = 0;
  std::vector<std::uint8_t> shifts;

  std::vector<int> exponents(const FixedFrame &frame) const;
  /// sign * sum 2^e; exact in binary floating point.
  double value(const FixedFrame &frame) const;
  bool operator==(const ShiftQuantParam &) const = default;
};

/// Keeps the `terms` most significant power-of-two terms of w.
ShiftQuantParam shift_quantize_param(double w, int terms,
                                     const FixedFrame &frame);

struct QuantizedLayer {
  std::size_t layer_index = 0;  // into spec.layers
  /// Number of leading entries of `params` that are kernel (or dense)
  /// weights in [m][n][p][q] / [out][in] order; the rest are biases.
  std::size_t weight_count = 0;
  std::vector<ShiftQuantParam> params;

  /// Biased encoding state; meaningful once the model has been encoded.
  int encoding_bias = 0;
  std::vector<std::uint8_t> codes;  // one per term, in params order
  std::size_t clamp_count = 0;

  std::size_t term_count() const;
};

struct QuantizedModel {
  ModelSpec spec;  // batchnorm already folded
  int terms = 3;   // N, shift parameters per weight
  int bits = 0;    // code width; 0 until encode_model runs
  FixedFrame frame;
  int activation_bits = 8;  // F_a used by the integer engine
  std::vector<QuantizedLayer> layers;  // conv and dense layers only

  const QuantizedLayer *layer_for(std::size_t spec_index) const;
};

struct QuantizeOptions {
  /// When false, biases keep their full fixed-point expansion (F + I terms).
  bool quantize_biases = true;
};

/// Quantizes every conv and dense parameter with the same N, F and I.
/// Throws ConfigError when batchnorm is still present and RangeError naming
/// layer and index when a weight does not fit the frame.
QuantizedModel shift_quantize_model(const ModelSpec &spec,
                                    const ModelParams<double> &params,
                                    int terms, const FixedFrame &frame,
                                    const QuantizeOptions &options = {});

ModelParams<double> dequantize_model(const QuantizedModel &q);

struct EncodedLayer {
  int bias = 0;
  std::vector<std::uint8_t> codes;
  std::size_t clamp_count = 0;
};

/// Biased binary encoding of one layer's shift magnitudes: bias is the
/// minimum magnitude, code = magnitude - bias saturated at 2^bits - 1.
EncodedLayer encode_layer(std::span<const int> magnitudes, int bits);
std::vector<int> decode_layer(int bias, std::span<const std::uint8_t> codes);

/// Encodes every layer at `bits` and replaces each shift list by its
/// decoded value, so the returned model is what the hardware would see.
QuantizedModel encode_model(const QuantizedModel &q, int bits);

struct CompressionReport {
  int terms = 0;
  int bits = 0;
  int stored_bits_per_weight = 0;
  int baseline_bits = 32;
  double ratio = 0.0;  // stored / baseline
  double ratio_percent = 0.0;
  bool exceeds_baseline = false;
  /// Overheads excluded from the headline ratio.
  int sign_bits_per_weight = 2;
  int term_count_bits_per_weight = 4;
  int layer_bias_bits = 16;
  std::int64_t param_count = 0;
  std::int64_t parameterized_layers = 0;
  std::int64_t total_stored_bits = 0;
  std::int64_t total_stored_bits_with_overhead = 0;
  std::int64_t baseline_total_bits = 0;
};

CompressionReport compression_report(const ModelSpec &spec, int terms,
                                     int bits);

}  // namespace shiftadd
