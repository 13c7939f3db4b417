// SPDX-License-Identifier: Apache-2.0
#include "cli.hpp"

#include <Eigen/Core>

#include <CLI11.hpp>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <functional>
#include <json.hpp>
#include <optional>
#include <ostream>
#include <sstream>

#include "shiftadd/binary_io.hpp"
#include "shiftadd/config.hpp"
#include "shiftadd/nn.hpp"
#include "shiftadd/pipeline.hpp"
#include "shiftadd/saqm.hpp"
#include "shiftadd/stream.hpp"
#include "shiftadd/trainer.hpp"
#include "shiftadd/weights_io.hpp"

namespace shiftadd::cli {
namespace {

namespace fs = std::filesystem;
using nlohmann::json;

struct Context {
  RunConfig cfg;
  fs::path out_dir;
  int threads = 1;

  fs::path output(const std::string &given, const char *fallback) const {
    return given.empty() ? out_dir / fallback : fs::path(given);
  }
};

int thread_cap() {
  const char *env = std::getenv("SHIFTADD_DVS_THREADS");
  if (env == nullptr || *env == '\0') return 1;
  char *end = nullptr;
  const long n = std::strtol(env, &end, 10);
  if (*end != '\0' || n < 1 || n > 1024)
    throw ConfigError(std::string("SHIFTADD_DVS_THREADS must be a positive integer, got '") +
                      env + "'");
  return static_cast<int>(n);
}

std::vector<LabeledSample> load_samples(const std::string &data, const std::string &frame) {
  if (!data.empty() && !frame.empty()) throw ConfigError("give either --data or --frame");
  if (!frame.empty()) {
    std::vector<LabeledSample> v;
    v.push_back(read_dvsf(frame, fs::path(frame).stem().string()));
    return v;
  }
  if (data.empty()) throw ConfigError("--data or --frame is required");
  return dataset_ingest(data).samples;
}

json counts_json(const DatasetManifest &m) {
  json j = json::object();
  for (std::size_t c = 0; c < kClassNames.size(); ++c) j[kClassNames[c]] = m.counts[c];
  return j;
}

void write_model(const fs::path &path, const ModelSpec &spec, const ModelParams<float> &params,
                 const Normalization &norm) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  write_sacw(path, spec, params.cast<double>());
  write_normalization(normalization_path(path), norm);
}

ShiftAddEngine make_engine(const Context &ctx, const LoadedModel &m) {
  if (m.quantized) return ShiftAddEngine(*m.quantized, ctx.cfg.engine);
  const auto [fspec, fparams] = fold_model_batchnorm(m.spec, m.params);
  return ShiftAddEngine(shift_quantize_model(fspec, fparams, ctx.cfg.quant.terms, ctx.cfg.quant.frame),
                        ctx.cfg.engine);
}

std::string resolve_engine(const std::string &engine, const LoadedModel &m) {
  if (engine == "auto") return m.quantized ? "shift" : "float";
  return engine;
}

json to_json(const ThroughputReport &t) {
  return {{"cycles", t.cycles},
          {"clock_hz", t.clock_hz},
          {"inference_time_s", t.inference_time_s},
          {"inference_time_ms", t.inference_time_ms},
          {"frame_period_s", t.frame_period_s},
          {"frames_per_period", t.frames_per_period},
          {"frame_span_m", t.frame_span_m},
          {"realtime_fiber_m", t.realtime_fiber_m},
          {"rounding", to_string(t.rounding)}};
}

std::string throughput_summary(const ThroughputReport &t) {
  char buf[128];
  std::snprintf(buf, sizeof buf, "%.3f ms, %llu frames, %.0f m", t.inference_time_ms,
                static_cast<unsigned long long>(t.frames_per_period), t.realtime_fiber_m);
  return buf;
}

json to_json(const CompressionReport &r) {
  return {{"terms", r.terms},
          {"bits", r.bits},
          {"stored_bits_per_weight", r.stored_bits_per_weight},
          {"baseline_bits", r.baseline_bits},
          {"ratio", r.ratio},
          {"ratio_percent", r.ratio_percent},
          {"exceeds_baseline", r.exceeds_baseline},
          {"param_count", r.param_count},
          {"total_stored_bits", r.total_stored_bits},
          {"total_stored_bits_with_overhead", r.total_stored_bits_with_overhead},
          {"baseline_total_bits", r.baseline_total_bits}};
}

// --- gen-data, convert -----------------------------------------------------

struct GenDataOptions {
  std::size_t per_class = 100;
  std::string dir;
  double noise = SynthConfig{}.noise;
  double shifted_noise = SynthConfig{}.shifted_noise;
};

json run_gen_data(const Context &ctx, const GenDataOptions &o) {
  if (o.per_class < 1) throw ConfigError("--per-class must be >= 1");
  const fs::path dir = ctx.output(o.dir, "data");
  const SynthOutput out =
      synth_dataset_generate(ctx.cfg.seed, o.per_class, dir, SynthConfig{o.noise, o.shifted_noise});
  return {{"base", {{"path", (dir / "base").string()}, {"counts", counts_json(out.base)}}},
          {"shifted", {{"path", (dir / "shifted").string()}, {"counts", counts_json(out.shifted)}}},
          {"per_class", o.per_class},
          {"noise", o.noise},
          {"shifted_noise", o.shifted_noise}};
}

struct ConvertOptions {
  std::string csv;
  std::string dir;
};

json run_convert(const Context &ctx, const ConvertOptions &o) {
  const fs::path dir = ctx.output(o.dir, "converted");
  const DatasetManifest m = convert_csv(o.csv, dir);
  return {{"path", dir.string()}, {"samples", m.samples.size()}, {"counts", counts_json(m)}};
}

// --- train, distill ----------------------------------------------------------

struct TrainOptions {
  std::string data;
  std::string test;
  int folds = 5;
  std::string folds_file;
  int epochs = 100;
  int batch = 64;
  double lr = 1e-3;
  double min_lr = 1e-6;
  int patience = 5;
  std::string weights;
};

struct DistillOptions {
  TrainOptions train;
  std::string teacher_logits;
  bool grid = false;
  std::vector<double> alphas{0.0, 0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9, 1.0};
  std::vector<double> temperatures{1, 2, 3, 4, 5, 6, 7, 8, 9, 10};
};

std::vector<int> fold_assignment(const Context &ctx, const TrainOptions &o, const Dataset &d) {
  const std::vector<std::string> ids = d.ids();
  if (!o.folds_file.empty() && fs::exists(o.folds_file)) {
    json j;
    try {
      j = json::parse(read_file_text(o.folds_file));
    } catch (const json::parse_error &e) {
      throw ConfigError(o.folds_file + ": " + e.what());
    }
    if (j.value("k", 0) != o.folds)
      throw ConfigError(o.folds_file + ": stored fold count differs from --folds");
    const json &table = j.at("folds");
    std::vector<int> a;
    a.reserve(ids.size());
    for (const auto &id : ids) {
      if (!table.contains(id)) throw ConfigError(o.folds_file + ": no fold for sample '" + id + "'");
      a.push_back(table[id].get<int>());
    }
    if (table.size() != ids.size())
      throw ConfigError(o.folds_file + ": fold table does not match the dataset");
    return a;
  }
  std::vector<int> a = assign_folds(d.labels(), o.folds, ctx.cfg.seed);
  if (!o.folds_file.empty()) {
    json table = json::object();
    for (std::size_t i = 0; i < ids.size(); ++i) table[ids[i]] = a[i];
    write_file_atomic(o.folds_file, json{{"k", o.folds}, {"folds", table}}.dump(1) + "\n");
  }
  return a;
}

TrainConfig train_config(const Context &ctx, const TrainOptions &o) {
  if (o.epochs < 1 || o.batch < 1 || !(o.lr > 0) || o.patience < 1)
    throw ConfigError("epochs, batch size, learning rate and patience must be positive");
  TrainConfig tc;
  tc.batch_size = o.batch;
  tc.max_epochs = o.epochs;
  tc.lr = o.lr;
  tc.min_lr = o.min_lr;
  tc.patience = o.patience;
  tc.kd = ctx.cfg.kd;
  return tc;
}

json history_json(const TrainResult &r) {
  json h = json::array();
  for (const auto &e : r.history)
    h.push_back({{"epoch", e.epoch}, {"train_loss", e.train_loss}, {"lr", e.lr}});
  return h;
}

// Runs the fold protocol (or a single fit for --folds 1) and optionally
// keeps the best fold's model.
json fit(const Context &ctx, const TrainOptions &o, TrainConfig tc, const Dataset &d1,
         const std::vector<LabeledSample> &d2, const TeacherLogits *teacher, bool save) {
  const ModelSpec spec = resolve_spec(ctx.cfg.model_spec);
  tc.use_teacher = teacher != nullptr;
  json r;
  const TrainResult *chosen = nullptr;
  TrainResult single;
  KFoldResult kf;
  if (o.folds == 1) {
    std::vector<std::size_t> idx(d1.samples.size());
    for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
    const Normalization norm = compute_normalization(d1.samples, idx);
    single = train_model(spec, d1.samples, idx, norm, tc, ctx.cfg.seed, teacher);
    chosen = &single;
    r["train_accuracy"] = evaluate(spec, single.params, d1.samples, {}, norm).accuracy;
    if (!d2.empty()) r["test_accuracy"] = evaluate(spec, single.params, d2, {}, norm).accuracy;
    r["history"] = history_json(single);
  } else if (o.folds >= 2) {
    const std::vector<int> assignment = fold_assignment(ctx, o, d1);
    kf = kfold_train(d1.samples, d2, spec, tc, ctx.cfg.seed, o.folds, teacher, &assignment);
    json folds = json::array();
    std::size_t best = 0;
    for (std::size_t f = 0; f < kf.folds.size(); ++f) {
      const FoldResult &fr = kf.folds[f];
      json fj{{"fold", fr.fold}, {"val_accuracy", fr.val_accuracy}, {"history", history_json(fr.train)}};
      if (!d2.empty()) fj["test_accuracy"] = fr.test_accuracy;
      folds.push_back(std::move(fj));
      if (fr.val_accuracy > kf.folds[best].val_accuracy) best = f;
    }
    r["folds"] = std::move(folds);
    r["mean_val_accuracy"] = kf.mean_val_accuracy;
    if (!d2.empty()) r["mean_test_accuracy"] = kf.mean_test_accuracy;
    r["selected_fold"] = best;
    chosen = &kf.folds[best].train;
  } else {
    throw ConfigError("--folds must be >= 1");
  }
  r["model_spec"] = spec_to_json(spec);
  r["param_count"] = count_report(spec).param_count;
  if (save) {
    const fs::path w = ctx.output(o.weights, "model.sacw");
    write_model(w, spec, chosen->params, chosen->norm);
    r["weights"] = w.string();
    r["normalization"] = {{"mean", chosen->norm.mean}, {"std", chosen->norm.stddev}};
  }
  return r;
}

Dataset load_dataset(const std::string &path) {
  if (path.empty()) throw ConfigError("--data is required");
  return dataset_ingest(path);
}

json run_train(const Context &ctx, const TrainOptions &o) {
  const Dataset d1 = load_dataset(o.data);
  const std::vector<LabeledSample> d2 = o.test.empty() ? std::vector<LabeledSample>{}
                                                       : dataset_ingest(o.test).samples;
  json r = fit(ctx, o, train_config(ctx, o), d1, d2, nullptr, true);
  r["dataset"] = {{"name", d1.manifest.name}, {"counts", counts_json(d1.manifest)}};
  return r;
}

json run_distill(const Context &ctx, const DistillOptions &o) {
  const Dataset d1 = load_dataset(o.train.data);
  const std::vector<LabeledSample> d2 = o.train.test.empty()
                                            ? std::vector<LabeledSample>{}
                                            : dataset_ingest(o.train.test).samples;
  if (o.teacher_logits.empty()) throw ConfigError("--teacher-logits is required");
  const TeacherLogits teacher = teacher_logits_load(o.teacher_logits, d1.ids());
  TrainConfig tc = train_config(ctx, o.train);
  if (!o.grid) {
    json r = fit(ctx, o.train, tc, d1, d2, &teacher, true);
    r["alpha"] = tc.kd.alpha;
    r["temperature"] = tc.kd.temperature;
    return r;
  }
  if (o.alphas.empty() || o.temperatures.empty()) throw ConfigError("empty grid");
  json cells = json::array();
  std::optional<std::size_t> best;
  double best_score = -1;
  for (double a : o.alphas) {
    for (double t : o.temperatures) {
      tc.kd.alpha = a;
      tc.kd.temperature = t;
      tc.kd.validate();
      json cell = fit(ctx, o.train, tc, d1, d2, &teacher, false);
      const double score = cell.value("mean_val_accuracy", cell.value("train_accuracy", 0.0));
      json row{{"alpha", a}, {"temperature", t}, {"mean_val_accuracy", score}};
      if (cell.contains("mean_test_accuracy")) row["mean_test_accuracy"] = cell["mean_test_accuracy"];
      if (cell.contains("test_accuracy")) row["mean_test_accuracy"] = cell["test_accuracy"];
      if (score > best_score) {
        best_score = score;
        best = cells.size();
      }
      cells.push_back(std::move(row));
    }
  }
  return {{"grid", cells}, {"best", cells[*best]}};
}

struct TeacherOptions {
  std::string weights;
  std::string data;
  std::string output;
};

json run_teacher_logits(const Context &ctx, const TeacherOptions &o) {
  const LoadedModel m = load_model(o.weights);
  const Dataset d = load_dataset(o.data);
  const ReferenceEvaluation ev = evaluate_reference(m.spec, m.params, d.samples, m.norm);
  const fs::path out = ctx.output(o.output, "teacher_logits.csv");
  teacher_logits_write(out, d.ids(), ev.logits);
  return {{"output", out.string()},
          {"count", d.samples.size()},
          {"accuracy", ev.accuracy},
          {"normalization_found", m.norm_found}};
}

// --- quantize, encode ----------------------------------------------------------

struct QuantizeOptions {
  std::string weights;
  std::string data;
  int max_n = 10;
  std::string output;
};

json run_quantize(const Context &ctx, const QuantizeOptions &o) {
  const LoadedModel m = load_model(o.weights);
  if (m.quantized) throw ConfigError(o.weights + ": already quantized");
  const Dataset d = load_dataset(o.data);
  const int fa = ctx.cfg.engine.activation_bits;
  const auto sweep = quantize_sweep(m.spec, m.params, d.samples, m.norm, o.max_n,
                                    ctx.cfg.quant.frame, fa);
  json rows = json::array();
  for (const auto &row : sweep)
    rows.push_back({{"n", row.terms},
                    {"accuracy", row.accuracy},
                    {"float_accuracy", row.float_accuracy},
                    {"max_abs_weight_error", row.max_abs_weight_error},
                    {"saturations", row.saturations}});

  const auto [fspec, fparams] = fold_model_batchnorm(m.spec, m.params);
  QuantizedModel q = shift_quantize_model(fspec, fparams, ctx.cfg.quant.terms, ctx.cfg.quant.frame);
  q.activation_bits = fa;
  const int bits = lossless_bits(q);
  q = encode_model(q, bits);
  const fs::path out = ctx.output(o.output, "model.saqm");
  if (out.has_parent_path()) fs::create_directories(out.parent_path());
  write_saqm(out, q);
  if (m.norm_found) write_normalization(normalization_path(out), m.norm);
  return {{"sweep", rows},
          {"n", ctx.cfg.quant.terms},
          {"output", out.string()},
          {"code_bits", bits},
          {"compression", to_json(compression_report(fspec, ctx.cfg.quant.terms, bits))}};
}

struct EncodeOptions {
  std::string model;
  std::string data;
  int max_bits = 8;
  std::string output;
};

json run_encode(const Context &ctx, const EncodeOptions &o) {
  const LoadedModel m = load_model(o.model);
  if (!m.quantized) throw ConfigError(o.model + ": encode needs a quantized model");
  const Dataset d = load_dataset(o.data);
  const auto sweep = encode_sweep(*m.quantized, d.samples, m.norm, o.max_bits,
                                  ctx.cfg.engine.activation_bits);
  json rows = json::array();
  for (const auto &row : sweep)
    rows.push_back({{"bits", row.bits},
                    {"accuracy", row.accuracy},
                    {"clamp_count", row.clamp_count},
                    {"lossless", row.lossless},
                    {"ratio_percent", row.ratio_percent}});
  json r{{"sweep", rows},
         {"lossless_bits", lossless_bits(*m.quantized)},
         {"compression", to_json(compression_report(m.spec, m.quantized->terms, ctx.cfg.quant.bits))}};
  if (!o.output.empty()) {
    const QuantizedModel enc = encode_model(*m.quantized, ctx.cfg.quant.bits);
    write_saqm(o.output, enc);
    if (m.norm_found) write_normalization(normalization_path(o.output), m.norm);
    std::size_t clamps = 0;
    for (const auto &l : enc.layers) clamps += l.clamp_count;
    r["output"] = o.output;
    r["bits"] = ctx.cfg.quant.bits;
    r["clamp_count"] = clamps;
  }
  return r;
}

// --- infer, simulate, report ---------------------------------------------------

struct InferOptions {
  std::string model;
  std::string data;
  std::string frame;
  std::string engine = "auto";
  std::string output;
};

json run_infer(const Context &ctx, const InferOptions &o) {
  const LoadedModel m = load_model(o.model);
  const auto samples = load_samples(o.data, o.frame);
  const std::string engine = resolve_engine(o.engine, m);
  std::optional<ShiftAddEngine> eng;
  if (engine == "shift") eng.emplace(make_engine(ctx, m));

  std::string csv = "frame_id,logit0,logit1,logit2,argmax,saturations\n";
  json preds = json::array();
  std::size_t correct = 0;
  for (const auto &s : samples) {
    const TensorD x = m.norm.apply_double(s.frame);
    std::vector<double> logits;
    int arg = 0;
    std::size_t sat = 0;
    if (eng) {
      const InferenceResult r = eng->forward(x);
      logits = r.real_logits(eng->config().activation_bits);
      arg = r.argmax;
      sat = r.total_saturations;
    } else {
      const VectorX<double> z = model_forward(m.spec, m.params, x);
      logits.assign(z.data(), z.data() + z.size());
      arg = argmax(z);
    }
    correct += arg == s.label;
    csv += s.id;
    for (double v : logits) csv += "," + format_number(v);
    csv += "," + std::to_string(arg) + "," + std::to_string(sat) + "\n";
    preds.push_back({{"id", s.id}, {"argmax", arg}});
  }
  const fs::path out = ctx.output(o.output, "infer.csv");
  write_file_atomic(out, csv);
  return {{"engine", engine},
          {"count", samples.size()},
          {"accuracy", samples.empty() ? 0.0 : static_cast<double>(correct) / samples.size()},
          {"output", out.string()},
          {"normalization_found", m.norm_found},
          {"predictions", preds}};
}

struct ThroughputOptions {
  double clock_mhz = 303;
  std::string rounding = "paper";
  double frame_period = 0.256;
  double span = 12.5;
};

ThroughputReport throughput(std::uint64_t cycles, const ThroughputOptions &o) {
  return throughput_report(cycles, o.clock_mhz * 1e6, o.frame_period, o.span,
                           rounding_from_string(o.rounding));
}

struct SimulateOptions {
  std::string model;
  std::string data;
  std::string frame;
  int index = -1;
  std::string engine = "auto";
  ThroughputOptions tp;
};

json stage_json(const StageStats &s) {
  json j{{"name", s.name},
         {"peak_occupancy", s.peak_occupancy},
         {"capacity", s.capacity},
         {"elements_in", s.elements_in},
         {"elements_out", s.elements_out},
         {"events", s.events}};
  j["first_output_at"] = s.first_output_at ? json(*s.first_output_at) : json(nullptr);
  return j;
}

json run_simulate(const Context &ctx, const SimulateOptions &o) {
  const LoadedModel m = load_model(o.model);
  auto samples = load_samples(o.data, o.frame);
  if (o.index >= 0) {
    if (static_cast<std::size_t>(o.index) >= samples.size())
      throw ConfigError("--index past the end of the dataset");
    samples = {samples[static_cast<std::size_t>(o.index)]};
  }
  if (samples.empty()) throw ConfigError("no frames to simulate");
  const std::string engine = resolve_engine(o.engine, m);
  std::optional<ShiftAddEngine> eng;
  if (engine == "shift") eng.emplace(make_engine(ctx, m));

  json frames = json::array();
  std::vector<StageStats> stages;
  std::size_t cycles = 0;
  for (const auto &s : samples) {
    const TensorD x = m.norm.apply_double(s.frame);
    std::vector<double> logits;
    std::size_t sat = 0;
    if (eng) {
      std::vector<std::size_t> sats;
      const auto r = stream_model_forward(*eng, eng->condition_input(x), &sats);
      for (auto v : r.logits)
        logits.push_back(std::ldexp(static_cast<double>(v), -eng->config().activation_bits));
      for (auto v : sats) sat += v;
      if (stages.empty()) stages = r.stages, cycles = r.modeled_cycles;
    } else {
      const auto r = stream_model_forward(m.spec, m.params, x);
      logits = r.logits;
      if (stages.empty()) stages = r.stages, cycles = r.modeled_cycles;
    }
    const auto arg = static_cast<int>(std::max_element(logits.begin(), logits.end()) - logits.begin());
    frames.push_back({{"id", s.id}, {"argmax", arg}, {"logits", logits}, {"saturations", sat}});
  }

  json st = json::array();
  for (const auto &s : stages) st.push_back(stage_json(s));
  json buffers = json::array();
  const ModelSpec &spec = eng ? eng->spec() : m.spec;
  for (std::size_t i = 0; i < spec.layers.size(); ++i) {
    const LayerSpec &l = spec.layers[i];
    if (l.kind != LayerKind::Conv && !l.is_pool()) continue;
    const Shape in = spec.input_of(i);
    const BufferRequirement b = buffer_requirement(l.kernel_h, l.stride, in.cols, l.kernel_w);
    buffers.push_back({{"layer", l.name},
                       {"paper_formula", b.paper_formula},
                       {"functional_minimum", b.functional_minimum},
                       {"negative_warning", b.negative_warning}});
  }
  const ThroughputReport t = throughput(cycles, o.tp);
  return {{"engine", engine},
          {"frames", frames},
          {"stages", st},
          {"buffers", buffers},
          {"modeled_cycles", cycles},
          {"throughput", to_json(t)},
          {"summary", throughput_summary(t)}};
}

struct ReportOptions {
  std::optional<std::uint64_t> cycles;
  ThroughputOptions tp;
};

json run_report(const Context &ctx, const ReportOptions &o) {
  const ModelSpec spec = resolve_spec(ctx.cfg.model_spec);
  const CompressionReport c = compression_report(spec, ctx.cfg.quant.terms, ctx.cfg.quant.bits);
  const CountReport with = count_report(spec);
  const CountReport without = count_report(spec.without_batchnorm());
  json r{{"compression", to_json(c)},
         {"counts",
          {{"params", with.param_count},
           {"params_without_batchnorm", without.param_count},
           {"flops", with.flop_count},
           {"macs", with.mac_count},
           {"convention", with.convention}}}};
  if (o.cycles) {
    const ThroughputReport t = throughput(*o.cycles, o.tp);
    r["throughput"] = to_json(t);
    r["summary"] = throughput_summary(t);
  }
  return r;
}

struct ExportOptions {
  std::string model;
  std::string data;
  std::string layer = "flatten";
  std::string output;
};

json run_export_features(const Context &ctx, const ExportOptions &o) {
  const LoadedModel m = load_model(o.model);
  const Dataset d = load_dataset(o.data);
  const std::string text = export_features(m.spec, m.params, d.samples, m.norm, o.layer);
  const fs::path out = ctx.output(o.output, "features.csv");
  write_file_atomic(out, text);
  return {{"output", out.string()},
          {"layer", o.layer},
          {"rows", d.samples.size()},
          {"width", m.spec.shapes()[static_cast<std::size_t>(m.spec.index_of(o.layer))].size()}};
}

// --- wiring --------------------------------------------------------------------

struct Overrides {
  std::string config;
  std::string out_dir;
  std::string result;
  std::string spec;
  std::optional<std::uint64_t> seed;
  std::optional<int> n, bits, fraction_bits, integer_bits, activation_bits;
  std::optional<double> alpha, temperature;
  bool t2 = false;
};

RunConfig resolve_config(const Overrides &ov) {
  RunConfig c = ov.config.empty() ? RunConfig{} : load_run_config(ov.config);
  if (ov.seed) c.seed = *ov.seed;
  if (!ov.spec.empty()) c.model_spec = ov.spec;
  if (!ov.out_dir.empty()) c.output_dir = ov.out_dir;
  if (ov.n) c.quant.terms = *ov.n;
  if (ov.bits) c.quant.bits = *ov.bits;
  if (ov.fraction_bits) c.quant.frame.fraction_bits = *ov.fraction_bits;
  if (ov.integer_bits) c.quant.frame.integer_bits = *ov.integer_bits;
  if (ov.activation_bits) c.engine.activation_bits = *ov.activation_bits;
  if (ov.alpha) c.kd.alpha = *ov.alpha;
  if (ov.temperature) c.kd.temperature = *ov.temperature;
  if (ov.t2) c.kd.scale_kl_by_t2 = true;
  c.kd.validate();
  c.quant.frame.validate();
  if (c.quant.terms < 1) throw ConfigError("--n must be >= 1");
  if (c.quant.bits < 1 || c.quant.bits > 8) throw ConfigError("--bits must be in 1..8");
  return c;
}

void add_train_options(CLI::App *sub, TrainOptions &o) {
  sub->add_option("--data", o.data, "Training dataset (directory, manifest or CSV)")->required();
  sub->add_option("--test", o.test, "Independent test dataset");
  sub->add_option("--folds", o.folds, "Number of folds; 1 trains on all samples");
  sub->add_option("--folds-file", o.folds_file, "Fold assignment, read if present else written");
  sub->add_option("--epochs", o.epochs, "Maximum epochs");
  sub->add_option("--batch", o.batch, "Mini-batch size");
  sub->add_option("--lr", o.lr, "Initial learning rate");
  sub->add_option("--min-lr", o.min_lr, "Stop once the schedule falls below");
  sub->add_option("--patience", o.patience, "Plateau patience in epochs");
  sub->add_option("--weights", o.weights, "Output weights (default <out-dir>/model.sacw)");
}

void add_throughput_options(CLI::App *sub, ThroughputOptions &o) {
  sub->add_option("--clock-mhz", o.clock_mhz, "Clock frequency in MHz");
  sub->add_option("--rounding", o.rounding, "paper or exact")
      ->check(CLI::IsMember({"paper", "exact"}));
  sub->add_option("--frame-period", o.frame_period, "Frame period in seconds");
  sub->add_option("--span", o.span, "Fiber span per frame in metres");
}

}  // namespace

int run_command(const std::vector<std::string> &args, std::ostream &out, std::ostream &err) {
  CLI::App app{"Shift-add DVS classifier toolkit", "shiftadd"};
  app.require_subcommand(1);
  app.fallthrough();
  app.set_version_flag("--version", kToolVersion);

  Overrides ov;
  app.add_option("--config", ov.config, "Run configuration JSON");
  app.add_option("--seed", ov.seed, "Seed for every random stream");
  app.add_option("--out-dir", ov.out_dir, "Directory for default outputs");
  app.add_option("--result", ov.result, "Also write the result document here");
  app.add_option("--spec", ov.spec, "Model spec: student, student-nobn, wide, wide-nobn, reduced or a JSON path");
  app.add_option("--n", ov.n, "Shift parameters per weight");
  app.add_option("--bits", ov.bits, "Code width for encoded shifts");
  app.add_option("--fraction-bits", ov.fraction_bits, "Fixed-point fraction bits F");
  app.add_option("--integer-bits", ov.integer_bits, "Fixed-point integer bits I");
  app.add_option("--activation-bits", ov.activation_bits, "Activation fraction bits");

  std::function<json(const Context &)> action;
  std::string command;
  auto bind = [&](CLI::App *sub, auto fn) {
    sub->callback([&, sub, fn] {
      command = sub->get_name();
      action = fn;
    });
  };

  GenDataOptions gen;
  auto *s_gen = app.add_subcommand("gen-data", "Generate the synthetic base and shifted datasets");
  s_gen->add_option("--per-class", gen.per_class, "Samples per class");
  s_gen->add_option("--dir", gen.dir, "Output directory (default <out-dir>/data)");
  s_gen->add_option("--noise", gen.noise, "Base noise level");
  s_gen->add_option("--shifted-noise", gen.shifted_noise, "Shifted variant noise level");
  bind(s_gen, [&](const Context &c) { return run_gen_data(c, gen); });

  ConvertOptions conv;
  auto *s_conv = app.add_subcommand("convert", "Convert a CSV dataset to sample files");
  s_conv->add_option("--csv", conv.csv, "Input CSV")->required();
  s_conv->add_option("--dir", conv.dir, "Output directory");
  bind(s_conv, [&](const Context &c) { return run_convert(c, conv); });

  TrainOptions train;
  auto *s_train = app.add_subcommand("train", "Train the student with k-fold validation");
  add_train_options(s_train, train);
  bind(s_train, [&](const Context &c) { return run_train(c, train); });

  TeacherOptions teach;
  auto *s_teach = app.add_subcommand("teacher-logits", "Write a model's logits for a dataset");
  s_teach->add_option("--weights", teach.weights, "Teacher model file")->required();
  s_teach->add_option("--data", teach.data, "Dataset")->required();
  s_teach->add_option("--output", teach.output, "Logits file (default <out-dir>/teacher_logits.csv)");
  bind(s_teach, [&](const Context &c) { return run_teacher_logits(c, teach); });

  DistillOptions dist;
  auto *s_dist = app.add_subcommand("distill", "Train the student against teacher logits");
  add_train_options(s_dist, dist.train);
  s_dist->add_option("--teacher-logits", dist.teacher_logits, "Teacher logits file")->required();
  s_dist->add_option("--alpha", ov.alpha, "Weight of the hard-label term");
  s_dist->add_option("--temperature", ov.temperature, "Softmax temperature");
  s_dist->add_flag("--scale-t2", ov.t2, "Scale the soft term by T^2");
  s_dist->add_flag("--grid", dist.grid, "Sweep alpha x temperature");
  s_dist->add_option("--alphas", dist.alphas, "Grid alphas")->delimiter(',');
  s_dist->add_option("--temperatures", dist.temperatures, "Grid temperatures")->delimiter(',');
  bind(s_dist, [&](const Context &c) { return run_distill(c, dist); });

  QuantizeOptions quant;
  auto *s_quant = app.add_subcommand("quantize", "Sweep shift parameter counts and write a quantized model");
  s_quant->add_option("--weights", quant.weights, "Float model file")->required();
  s_quant->add_option("--data", quant.data, "Validation dataset")->required();
  s_quant->add_option("--max-n", quant.max_n, "Largest N in the sweep");
  s_quant->add_option("--output", quant.output, "Quantized model (default <out-dir>/model.saqm)");
  bind(s_quant, [&](const Context &c) { return run_quantize(c, quant); });

  EncodeOptions enc;
  auto *s_enc = app.add_subcommand("encode", "Sweep shift code widths");
  s_enc->add_option("--model", enc.model, "Quantized model file")->required();
  s_enc->add_option("--data", enc.data, "Validation dataset")->required();
  s_enc->add_option("--max-bits", enc.max_bits, "Largest code width in the sweep");
  s_enc->add_option("--output", enc.output, "Write the model encoded at --bits");
  bind(s_enc, [&](const Context &c) { return run_encode(c, enc); });

  InferOptions inf;
  auto *s_inf = app.add_subcommand("infer", "Classify frames");
  s_inf->add_option("--model", inf.model, "Model file (float or quantized)")->required();
  s_inf->add_option("--data", inf.data, "Dataset");
  s_inf->add_option("--frame", inf.frame, "Single sample file");
  s_inf->add_option("--engine", inf.engine, "float, shift or auto")
      ->check(CLI::IsMember({"auto", "float", "shift"}));
  s_inf->add_option("--output", inf.output, "Per-frame records (default <out-dir>/infer.csv)");
  bind(s_inf, [&](const Context &c) { return run_infer(c, inf); });

  SimulateOptions sim;
  auto *s_sim = app.add_subcommand("simulate", "Stream frames through the line-buffer pipeline");
  s_sim->add_option("--model", sim.model, "Model file (float or quantized)")->required();
  s_sim->add_option("--data", sim.data, "Dataset");
  s_sim->add_option("--frame", sim.frame, "Single sample file");
  s_sim->add_option("--index", sim.index, "Only this sample of the dataset");
  s_sim->add_option("--engine", sim.engine, "float, shift or auto")
      ->check(CLI::IsMember({"auto", "float", "shift"}));
  add_throughput_options(s_sim, sim.tp);
  bind(s_sim, [&](const Context &c) { return run_simulate(c, sim); });

  ReportOptions rep;
  auto *s_rep = app.add_subcommand("report", "Compression and throughput tables");
  s_rep->add_option("--cycles", rep.cycles, "Latency in clock cycles");
  add_throughput_options(s_rep, rep.tp);
  bind(s_rep, [&](const Context &c) { return run_report(c, rep); });

  ExportOptions exp;
  auto *s_exp = app.add_subcommand("export-features", "Write per-sample activations of one layer");
  s_exp->add_option("--model", exp.model, "Model file")->required();
  s_exp->add_option("--data", exp.data, "Dataset")->required();
  s_exp->add_option("--layer", exp.layer, "Layer name");
  s_exp->add_option("--output", exp.output, "Feature table (default <out-dir>/features.csv)");
  bind(s_exp, [&](const Context &c) { return run_export_features(c, exp); });

  std::vector<std::string> reversed(args.rbegin(), args.rend());
  try {
    app.parse(reversed);
  } catch (const CLI::CallForHelp &) {
    out << app.help();
    return 0;
  } catch (const CLI::CallForAllHelp &) {
    out << app.help("", CLI::AppFormatMode::All);
    return 0;
  } catch (const CLI::CallForVersion &) {
    out << kToolVersion << "\n";
    return 0;
  } catch (const CLI::ParseError &e) {
    err << json{{"error", {{"kind", "usage"}, {"message", e.what()}}}}.dump() << "\n";
    return 2;
  }

  try {
    Context ctx;
    ctx.cfg = resolve_config(ov);
    ctx.out_dir = ctx.cfg.output_dir;
    ctx.threads = thread_cap();
    Eigen::setNbThreads(ctx.threads);
    fs::create_directories(ctx.out_dir);
    json result = action(ctx);
    const json doc{{"command", command},
                   {"tool_version", kToolVersion},
                   {"config", to_json(ctx.cfg)},
                   {"threads", ctx.threads},
                   {"result", std::move(result)}};
    const std::string text = doc.dump(2) + "\n";
    if (!ov.result.empty()) write_file_atomic(ov.result, text);
    out << text;
    return 0;
  } catch (const Error &e) {
    err << json{{"error", {{"kind", e.kind()}, {"message", e.what()}}}}.dump() << "\n";
  } catch (const json::exception &e) {
    err << json{{"error", {{"kind", "format"}, {"message", e.what()}}}}.dump() << "\n";
  } catch (const std::exception &e) {
    err << json{{"error", {{"kind", "internal"}, {"message", e.what()}}}}.dump() << "\n";
  }
  return 1;
}

}  // namespace shiftadd::cli
