// SPDX-License-Identifier: Apache-2.0
#pragma once

// Glue shared by the command-line tool and the acceptance suite: model
// files, evaluation through the reference and shift-add paths, and the
// quantization and encoding sweeps.

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "shiftadd/dataset.hpp"
#include "shiftadd/engine.hpp"
#include "shiftadd/quant.hpp"

namespace shiftadd {

struct LoadedModel {
  ModelSpec spec;
  ModelParams<double> params;  // dequantized for SAQM files
  std::optional<QuantizedModel> quantized;
  Normalization norm;
  bool norm_found = false;
};

/// Reads a SACW or SAQM file (detected by magic) and its normalization
/// sidecar when present.
LoadedModel load_model(const std::filesystem::path &path);

struct ReferenceEvaluation {
  double accuracy = 0;
  std::vector<int> predictions;
  std::vector<std::vector<double>> logits;
};

/// Double-precision reference path (eval-mode batchnorm).
ReferenceEvaluation evaluate_reference(const ModelSpec &spec, const ModelParams<double> &params,
                                       const std::vector<LabeledSample> &samples,
                                       const Normalization &norm);

struct EngineEvaluation {
  double accuracy = 0;
  std::vector<int> predictions;
  std::vector<std::vector<std::int32_t>> logits;
  std::vector<std::size_t> saturations;  // per sample
};

EngineEvaluation evaluate_engine(const ShiftAddEngine &engine,
                                 const std::vector<LabeledSample> &samples,
                                 const Normalization &norm);

struct QuantSweepRow {
  int terms = 0;
  double accuracy = 0;        // shift-add engine
  double float_accuracy = 0;  // folded float model, same samples
  double max_abs_weight_error = 0;
  std::size_t saturations = 0;
};

/// Folds batchnorm, then quantizes with N = 1..max_terms and evaluates each
/// on the shift-add engine.
std::vector<QuantSweepRow> quantize_sweep(const ModelSpec &spec, const ModelParams<double> &params,
                                          const std::vector<LabeledSample> &samples,
                                          const Normalization &norm, int max_terms,
                                          const FixedFrame &frame, int activation_bits = 8);

struct EncodeSweepRow {
  int bits = 0;
  double accuracy = 0;
  std::size_t clamp_count = 0;
  double ratio_percent = 0;
  bool lossless = false;
};

std::vector<EncodeSweepRow> encode_sweep(const QuantizedModel &q,
                                         const std::vector<LabeledSample> &samples,
                                         const Normalization &norm, int max_bits = 8,
                                         int activation_bits = 8);

/// Smallest code width that encodes every layer without clamping.
int lossless_bits(const QuantizedModel &q);

/// Shortest round-trip decimal form, locale independent.
std::string format_number(double v);

/// One CSV row per sample: id, label, then the flattened activations of
/// the named layer. ConfigError for an unknown layer name.
std::string export_features(const ModelSpec &spec, const ModelParams<double> &params,
                            const std::vector<LabeledSample> &samples,
                            const Normalization &norm, const std::string &layer);

}  // namespace shiftadd
