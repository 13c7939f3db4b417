// SPDX-License-Identifier: Apache-2.0
#pragma once

// Integer inference where every weight multiply is a signed sum of left
// shifts of the activation. Activations are int32 at 2^-F_a resolution;
// accumulators are int64 at 2^-(F_a + F) with F the weight fraction bits.
//
// The data path uses only shifts, adds, negation and compares on
// data-dependent values. Multiplications that appear below operate on
// shapes and indices, never on activations or weights.

#include <cstdint>
#include <optional>
#include <span>
#include <vector>

#include "shiftadd/quant.hpp"
#include "shiftadd/tensor.hpp"

namespace shiftadd {

using IntTensor = Tensor<std::int32_t>;

inline constexpr std::int64_t kActivationLimit = 2147483647;  // 2^31 - 1

struct EngineConfig {
  int activation_bits = 8;  // F_a
  /// Raise SaturationError on the first saturated requantization instead of
  /// clamping and counting.
  bool diagnostic = false;
};

/// round_half_even(x * 2^F_a); RangeError when |x| >= 2^(31 - F_a).
std::int32_t quantize_activation(double x, int activation_bits);

/// sign * sum_j (act << (F + e_j)): the product act * w * 2^F computed with
/// shifts only. `frame.fraction_bits` is the alignment F_w.
std::int64_t shift_add_mul(std::int32_t act, const ShiftQuantParam &q,
                           const FixedFrame &frame);

/// Arithmetic right shift with round-half-to-even.
std::int64_t shift_right_round_even(std::int64_t value, int shift);

/// Per-call saturation diagnostics.
struct SaturationCounter {
  bool diagnostic = false;
  std::size_t count = 0;
  std::int32_t clamp(std::int64_t v, const char *where);
};

/// One conv or dense layer with its shift lists flattened into left-shift
/// amounts, ready for the integer data path.
class PreparedLayer {
 public:
  PreparedLayer(const QuantizedLayer &layer, const LayerSpec &spec, Shape input,
                const FixedFrame &frame, int activation_bits);

  /// Contribution of parameter `index` applied to `act`.
  std::int64_t mul(std::size_t index, std::int32_t act) const {
    const std::uint32_t begin = offsets_[index];
    const std::uint32_t end = offsets_[index + 1];
    std::int64_t acc = 0;
    const std::int64_t a = act;
    for (std::uint32_t t = begin; t < end; ++t) acc += a << amounts_[t];
    return signs_[index] < 0 ? -acc : acc;
  }
  /// Bias of output channel m expanded to accumulator scale.
  std::int64_t bias(int m) const { return bias_acc_[static_cast<std::size_t>(m)]; }
  /// Accumulator back to activation scale, then ReLU if the layer has one.
  std::int32_t finish(std::int64_t acc, SaturationCounter &sat) const;

  std::size_t param_count() const { return signs_.size(); }
  /// Index of kernel weight [m][n][p][q] (conv) or [m][j] (dense, p = q = 0).
  std::size_t weight_index(int m, int n, int p, int q) const {
    return ((static_cast<std::size_t>(m) * in_channels_ + n) * kernel_h_ + p) *
               kernel_w_ + q;
  }
  /// log2 of the worst-case accumulator magnitude for int32 inputs.
  double worst_case_bits() const { return worst_case_bits_; }
  const LayerSpec &spec() const { return spec_; }
  int fraction_bits() const { return fraction_bits_; }

 private:
  LayerSpec spec_;
  int in_channels_ = 1;
  int kernel_h_ = 1;
  int kernel_w_ = 1;
  int fraction_bits_ = 0;
  std::vector<std::uint32_t> offsets_;
  std::vector<std::uint8_t> amounts_;
  std::vector<std::int8_t> signs_;
  std::vector<std::int64_t> bias_acc_;
  double worst_case_bits_ = 0;
};

/// Integer max pool, or average pool by rounded right shift (window area
/// must be a power of two).
IntTensor integer_pool_forward(const IntTensor &input, const PoolSpec &spec);
/// (sum + area/2) >> log2(area) for one window sum.
std::int32_t integer_average(std::int64_t sum, int area);

struct InferenceResult {
  std::vector<std::int32_t> logits;  // at scale 2^-F_a
  int argmax = 0;
  std::vector<std::size_t> saturations;  // per spec layer
  std::size_t total_saturations = 0;

  std::vector<double> real_logits(int activation_bits) const;
};

class ShiftAddEngine {
 public:
  /// Throws ConfigError if any layer's worst-case accumulator could reach
  /// 2^63 or an average pool window is not a power of two.
  explicit ShiftAddEngine(QuantizedModel model, EngineConfig config = {});

  const QuantizedModel &model() const { return model_; }
  const EngineConfig &config() const { return config_; }
  const ModelSpec &spec() const { return model_.spec; }

  /// The frame must already be normalized as for the float model.
  IntTensor condition_input(const TensorD &frame) const;
  IntTensor layer_forward(std::size_t layer, const IntTensor &input,
                          SaturationCounter &sat) const;
  InferenceResult forward(const TensorD &frame) const;
  InferenceResult forward_integer(const IntTensor &input) const;

  /// Prepared conv/dense layer at spec index, nullptr for other kinds.
  const PreparedLayer *prepared(std::size_t layer) const;
  double worst_case_accumulator_bits() const;

 private:
  QuantizedModel model_;
  EngineConfig config_;
  std::vector<Shape> shapes_;
  std::vector<std::optional<PreparedLayer>> prepared_;
};

}  // namespace shiftadd
