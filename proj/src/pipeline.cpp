// SPDX-License-Identifier: Apache-2.0
#include "shiftadd/pipeline.hpp"

#include <algorithm>
#include <bit>
#include <charconv>
#include <cmath>

#include "shiftadd/binary_io.hpp"
#include "shiftadd/nn.hpp"
#include "shiftadd/saqm.hpp"
#include "shiftadd/weights_io.hpp"

namespace shiftadd {

namespace fs = std::filesystem;

LoadedModel load_model(const fs::path &path) {
  const auto bytes = read_file_bytes(path);
  LoadedModel m;
  const std::string magic(bytes.begin(), bytes.begin() + std::min<std::size_t>(4, bytes.size()));
  if (magic == "SACW") {
    WeightFile wf = decode_sacw(bytes, path.string());
    m.spec = std::move(wf.spec);
    m.params = std::move(wf.params);
  } else if (magic == "SAQM") {
    QuantizedModel q = decode_saqm(bytes, path.string());
    m.spec = q.spec;
    m.params = dequantize_model(q);
    m.quantized = std::move(q);
  } else {
    throw FormatError(path.string() + ": not a SACW or SAQM model file");
  }
  const fs::path np = normalization_path(path);
  if (fs::exists(np)) {
    m.norm = read_normalization(np);
    m.norm_found = true;
  }
  return m;
}

ReferenceEvaluation evaluate_reference(const ModelSpec &spec, const ModelParams<double> &params,
                                       const std::vector<LabeledSample> &samples,
                                       const Normalization &norm) {
  ReferenceEvaluation ev;
  std::size_t correct = 0;
  for (const auto &s : samples) {
    const VectorX<double> z = model_forward(spec, params, norm.apply_double(s.frame));
    const int p = argmax(z);
    correct += p == s.label;
    ev.predictions.push_back(p);
    ev.logits.emplace_back(z.data(), z.data() + z.size());
  }
  if (!samples.empty()) ev.accuracy = static_cast<double>(correct) / samples.size();
  return ev;
}

EngineEvaluation evaluate_engine(const ShiftAddEngine &engine,
                                 const std::vector<LabeledSample> &samples,
                                 const Normalization &norm) {
  EngineEvaluation ev;
  std::size_t correct = 0;
  for (const auto &s : samples) {
    const InferenceResult r = engine.forward(norm.apply_double(s.frame));
    correct += r.argmax == s.label;
    ev.predictions.push_back(r.argmax);
    ev.logits.push_back(r.logits);
    ev.saturations.push_back(r.total_saturations);
  }
  if (!samples.empty()) ev.accuracy = static_cast<double>(correct) / samples.size();
  return ev;
}

namespace {

double max_weight_error(const ModelParams<double> &a, const ModelParams<double> &b) {
  double worst = 0;
  for (std::size_t i = 0; i < a.layers.size(); ++i) {
    const auto &x = a.layers[i];
    const auto &y = b.layers[i];
    if (x.conv) {
      worst = std::max(worst, (x.conv->kernel - y.conv->kernel).cwiseAbs().maxCoeff());
      worst = std::max(worst, (x.conv->bias - y.conv->bias).cwiseAbs().maxCoeff());
    }
    if (x.dense) {
      worst = std::max(worst, (x.dense->weights - y.dense->weights).cwiseAbs().maxCoeff());
      worst = std::max(worst, (x.dense->bias - y.dense->bias).cwiseAbs().maxCoeff());
    }
  }
  return worst;
}

}  // namespace

std::vector<QuantSweepRow> quantize_sweep(const ModelSpec &spec, const ModelParams<double> &params,
                                          const std::vector<LabeledSample> &samples,
                                          const Normalization &norm, int max_terms,
                                          const FixedFrame &frame, int activation_bits) {
  if (max_terms < 1) throw ConfigError("sweep needs at least N = 1");
  const auto [fspec, fparams] = fold_model_batchnorm(spec, params);
  const double float_acc = evaluate_reference(fspec, fparams, samples, norm).accuracy;
  std::vector<QuantSweepRow> rows;
  for (int n = 1; n <= max_terms; ++n) {
    const QuantizedModel q = shift_quantize_model(fspec, fparams, n, frame);
    const ShiftAddEngine engine(q, EngineConfig{activation_bits, false});
    const EngineEvaluation ev = evaluate_engine(engine, samples, norm);
    QuantSweepRow row;
    row.terms = n;
    row.accuracy = ev.accuracy;
    row.float_accuracy = float_acc;
    row.max_abs_weight_error = max_weight_error(fparams, dequantize_model(q));
    for (auto s : ev.saturations) row.saturations += s;
    rows.push_back(row);
  }
  return rows;
}

int lossless_bits(const QuantizedModel &q) {
  int spread = 0;
  for (const auto &l : q.layers) {
    int lo = 255, hi = 0;
    for (const auto &p : l.params)
      for (auto s : p.shifts) {
        lo = std::min<int>(lo, s);
        hi = std::max<int>(hi, s);
      }
    if (hi >= lo) spread = std::max(spread, hi - lo);
  }
  return std::max(1, static_cast<int>(std::bit_width(static_cast<unsigned>(spread))));
}

std::vector<EncodeSweepRow> encode_sweep(const QuantizedModel &q,
                                         const std::vector<LabeledSample> &samples,
                                         const Normalization &norm, int max_bits,
                                         int activation_bits) {
  if (max_bits < 1 || max_bits > 8) throw ConfigError("encoding sweep covers 1..8 bits");
  std::vector<EncodeSweepRow> rows;
  for (int bits = 1; bits <= max_bits; ++bits) {
    const QuantizedModel enc = encode_model(q, bits);
    const ShiftAddEngine engine(enc, EngineConfig{activation_bits, false});
    EncodeSweepRow row;
    row.bits = bits;
    row.accuracy = evaluate_engine(engine, samples, norm).accuracy;
    for (const auto &l : enc.layers) row.clamp_count += l.clamp_count;
    row.lossless = row.clamp_count == 0;
    row.ratio_percent = compression_report(q.spec, q.terms, bits).ratio_percent;
    rows.push_back(row);
  }
  return rows;
}

std::string format_number(double v) {
  char buf[32];
  const auto r = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, r.ptr);
}

std::string export_features(const ModelSpec &spec, const ModelParams<double> &params,
                            const std::vector<LabeledSample> &samples,
                            const Normalization &norm, const std::string &layer) {
  const int index = spec.index_of(layer);
  if (index < 0) throw ConfigError("unknown layer tag '" + layer + "'");
  std::string out;
  for (const auto &s : samples) {
    const auto trace = model_trace(spec, params, norm.apply_double(s.frame));
    out += s.id;
    out += ',';
    out += std::to_string(s.label);
    for (double v : trace[static_cast<std::size_t>(index)].flat()) {
      out += ',';
      out += format_number(v);
    }
    out += '\n';
  }
  return out;
}

}  // namespace shiftadd
