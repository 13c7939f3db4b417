// SPDX-License-Identifier: Apache-2.0
#include "shiftadd/stream.hpp"

#include <cmath>
#include <limits>

namespace shiftadd {

BufferRequirement buffer_requirement(int kernel_h, int stride, int width,
                                     int kernel_w) {
  if (kernel_h < 1 || kernel_w < 1 || stride < 1 || width < 1)
    throw ConfigError("buffer_requirement: geometry values must be >= 1");
  BufferRequirement r;
  r.paper_formula = static_cast<long>(kernel_h - 1 - stride) * width + kernel_w;
  r.functional_minimum = static_cast<long>(kernel_h - 1) * width + kernel_w;
  r.negative_warning = r.paper_formula <= 0;
  return r;
}

FloatStreamKernels::FloatStreamKernels(const ModelSpec &spec,
                                       const ModelParams<double> &params)
    : spec_(spec), params_(params) {
  check_params(spec, params);
}

void FloatStreamKernels::conv(std::size_t layer, const LineBuffer<double> &buf,
                              const WindowPos &w, std::span<double> out) {
  const LayerSpec &l = spec_.layers[layer];
  const LayerParams<double> &lp = params_.layers[layer];
  const ConvLayerParams<double> &c = *lp.conv;
  for (int m = 0; m < c.out_channels(); ++m) {
    double acc = 0;
    for (int n = 0; n < c.in_channels; ++n)
      for (int p = 0; p < c.kernel_h; ++p)
        for (int q = 0; q < c.kernel_w; ++q)
          if (buf.is_real(w, p, q)) acc += buf.value(w, n, p, q) * c.k(m, n, p, q);
    double v = acc + c.bias(m);
    if (l.batchnorm) {
      const BatchNormParams<double> &bn = *lp.bn;
      const double scale = bn.gamma(m) / std::sqrt(bn.var(m) + bn.epsilon);
      v = (v - bn.mean(m)) * scale + bn.beta(m);
    }
    if (l.relu) v = std::max(v, 0.0);
    out[static_cast<std::size_t>(m)] = v;
  }
}

void FloatStreamKernels::pool(std::size_t layer, const LineBuffer<double> &buf,
                              const WindowPos &w, std::span<double> out) {
  const PoolSpec ps = spec_.layers[layer].pool();
  const double area = static_cast<double>(ps.window_h * ps.window_w);
  for (int ch = 0; ch < buf.channels(); ++ch) {
    double acc = ps.mode == PoolMode::Max ? -std::numeric_limits<double>::infinity() : 0.0;
    for (int p = 0; p < ps.window_h; ++p)
      for (int q = 0; q < ps.window_w; ++q) {
        const double v = buf.value(w, ch, p, q);
        acc = ps.mode == PoolMode::Max ? std::max(acc, v) : acc + v;
      }
    out[static_cast<std::size_t>(ch)] = ps.mode == PoolMode::Max ? acc : acc / area;
  }
}

void FloatStreamKernels::dense_begin(std::size_t layer) {
  acc_.assign(static_cast<std::size_t>(spec_.layers[layer].out_channels), 0.0);
}

void FloatStreamKernels::dense_accumulate(std::size_t layer, std::size_t j,
                                          double value) {
  const auto &wts = params_.layers[layer].dense->weights;
  for (std::size_t i = 0; i < acc_.size(); ++i)
    acc_[i] += wts(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) * value;
}

std::vector<double> FloatStreamKernels::dense_finish(std::size_t layer) {
  const auto &b = params_.layers[layer].dense->bias;
  std::vector<double> out(acc_.size());
  for (std::size_t i = 0; i < acc_.size(); ++i) {
    out[i] = acc_[i] + b(static_cast<Eigen::Index>(i));
    if (spec_.layers[layer].relu) out[i] = std::max(out[i], 0.0);
  }
  return out;
}

IntStreamKernels::IntStreamKernels(const ShiftAddEngine &engine)
    : saturations(engine.spec().layers.size(), 0), engine_(engine) {}

void IntStreamKernels::conv(std::size_t layer, const LineBuffer<std::int32_t> &buf,
                            const WindowPos &w, std::span<std::int32_t> out) {
  const PreparedLayer &pl = *engine_.prepared(layer);
  const LayerSpec &l = pl.spec();
  SaturationCounter sat{engine_.config().diagnostic, 0};
  for (int m = 0; m < l.out_channels; ++m) {
    std::int64_t acc = 0;
    for (int n = 0; n < buf.channels(); ++n)
      for (int p = 0; p < l.kernel_h; ++p)
        for (int q = 0; q < l.kernel_w; ++q)
          if (buf.is_real(w, p, q))
            acc += pl.mul(pl.weight_index(m, n, p, q), buf.value(w, n, p, q));
    out[static_cast<std::size_t>(m)] = pl.finish(acc + pl.bias(m), sat);
  }
  saturations[layer] += sat.count;
}

void IntStreamKernels::pool(std::size_t layer, const LineBuffer<std::int32_t> &buf,
                            const WindowPos &w, std::span<std::int32_t> out) {
  const PoolSpec ps = engine_.spec().layers[layer].pool();
  const int area = ps.window_h * ps.window_w;
  for (int ch = 0; ch < buf.channels(); ++ch) {
    std::int64_t acc = ps.mode == PoolMode::Max ? INT64_MIN : 0;
    for (int p = 0; p < ps.window_h; ++p)
      for (int q = 0; q < ps.window_w; ++q) {
        const std::int64_t v = buf.value(w, ch, p, q);
        acc = ps.mode == PoolMode::Max ? std::max(acc, v) : acc + v;
      }
    out[static_cast<std::size_t>(ch)] = ps.mode == PoolMode::Max
                                            ? static_cast<std::int32_t>(acc)
                                            : integer_average(acc, area);
  }
}

void IntStreamKernels::dense_begin(std::size_t layer) {
  acc_.assign(static_cast<std::size_t>(engine_.spec().layers[layer].out_channels), 0);
}

void IntStreamKernels::dense_accumulate(std::size_t layer, std::size_t j,
                                        std::int32_t value) {
  const PreparedLayer &pl = *engine_.prepared(layer);
  const std::size_t fan_in = engine_.spec().input_of(layer).size();
  for (std::size_t i = 0; i < acc_.size(); ++i) acc_[i] += pl.mul(i * fan_in + j, value);
}

std::vector<std::int32_t> IntStreamKernels::dense_finish(std::size_t layer) {
  const PreparedLayer &pl = *engine_.prepared(layer);
  SaturationCounter sat{engine_.config().diagnostic, 0};
  std::vector<std::int32_t> out(acc_.size());
  for (std::size_t i = 0; i < acc_.size(); ++i)
    out[i] = pl.finish(acc_[i] + pl.bias(static_cast<int>(i)), sat);
  saturations[layer] += sat.count;
  return out;
}

template <typename Scalar>
struct StreamSession<Scalar>::Stage {
  LayerKind kind = LayerKind::Conv;
  std::size_t layer = 0;
  Shape in;   // shape of the element stream this stage receives
  Shape out;  // shape of the element stream it emits
  std::optional<LineBuffer<Scalar>> buffer;
  std::vector<Scalar> scratch;
  StageStats stats;
};

template <typename Scalar>
StreamSession<Scalar>::StreamSession(const ModelSpec &spec,
                                     StreamKernels<Scalar> &kernels)
    : spec_(spec), kernels_(kernels), shapes_(spec.shapes()) {
  Shape stream = spec.input;
  bool dense_started = false;
  for (std::size_t i = 0; i < spec.layers.size(); ++i) {
    const LayerSpec &l = spec.layers[i];
    auto st = std::make_unique<Stage>();
    st->kind = l.kind;
    st->layer = i;
    st->in = stream;
    st->stats.name = l.name;
    switch (l.kind) {
      case LayerKind::Conv:
      case LayerKind::MaxPool:
      case LayerKind::AvgPool: {
        WindowGeometry g{l.kernel_h, l.kernel_w, l.stride,
                         l.kind == LayerKind::Conv ? l.padding : 0};
        st->buffer.emplace(stream.channels, stream.rows, stream.cols, g);
        st->stats.capacity = st->buffer->capacity();
        st->out = shapes_[i];
        break;
      }
      case LayerKind::Flatten:
        st->out = stream;
        break;
      case LayerKind::Dense:
        st->out = shapes_[i];
        // Kernels hold one accumulator; later dense layers begin when the
        // previous one finishes.
        if (!dense_started) kernels_.dense_begin(i);
        dense_started = true;
        break;
      case LayerKind::Input:
        throw ConfigError("input pseudo-layer inside graph");
    }
    st->scratch.resize(static_cast<std::size_t>(st->out.channels));
    stream = st->out;
    stages_.push_back(std::move(st));
  }
}

template <typename Scalar>
StreamSession<Scalar>::~StreamSession() = default;

template <typename Scalar>
void StreamSession<Scalar>::push(std::span<const Scalar> element) {
  if (finished_) throw ProtocolError("stream: push after finish");
  const std::size_t total = spec_.input.plane();
  if (consumed_ >= total)
    throw ProtocolError("stream: frame has more than " + std::to_string(total) +
                        " elements");
  if (element.size() != static_cast<std::size_t>(spec_.input.channels))
    throw ProtocolError("stream: element has " + std::to_string(element.size()) +
                        " channels, expected " +
                        std::to_string(spec_.input.channels));
  const int row = static_cast<int>(consumed_) / spec_.input.cols;
  const int col = static_cast<int>(consumed_) % spec_.input.cols;
  ++consumed_;
  deliver(0, row, col, element);
}

template <typename Scalar>
void StreamSession<Scalar>::deliver(std::size_t index, int row, int col,
                                    std::span<const Scalar> v) {
  if (index == stages_.size()) {
    logits_.assign(v.begin(), v.end());
    return;
  }
  Stage &st = *stages_[index];
  ++st.stats.elements_in;
  auto emit = [&](int r, int c) {
    ++st.stats.elements_out;
    if (!st.stats.first_output_at) st.stats.first_output_at = st.stats.elements_in;
    deliver(index + 1, r, c, st.scratch);
  };
  switch (st.kind) {
    case LayerKind::Conv:
    case LayerKind::MaxPool:
    case LayerKind::AvgPool: {
      LineBuffer<Scalar> &buf = *st.buffer;
      if (static_cast<std::size_t>(row) * st.in.cols + col != buf.real_consumed())
        throw ProtocolError("stream: stage '" + st.stats.name + "' got (" +
                            std::to_string(row) + "," + std::to_string(col) +
                            ") out of row-major order");
      while (!buf.next_is_real()) {
        if (auto w = buf.advance({})) {
          if (st.kind == LayerKind::Conv)
            kernels_.conv(st.layer, buf, *w, st.scratch);
          else
            kernels_.pool(st.layer, buf, *w, st.scratch);
          emit(w->out_row, w->out_col);
        }
      }
      if (auto w = buf.advance(v)) {
        if (st.kind == LayerKind::Conv)
          kernels_.conv(st.layer, buf, *w, st.scratch);
        else
          kernels_.pool(st.layer, buf, *w, st.scratch);
        emit(w->out_row, w->out_col);
      }
      break;
    }
    case LayerKind::Flatten:
      std::copy(v.begin(), v.end(), st.scratch.begin());
      emit(row, col);
      break;
    case LayerKind::Dense: {
      const std::size_t plane = st.in.plane();
      const std::size_t pos = static_cast<std::size_t>(row) * st.in.cols + col;
      if (pos + 1 != st.stats.elements_in)
        throw ProtocolError("stream: dense stage '" + st.stats.name +
                            "' got an element out of order");
      for (int ch = 0; ch < st.in.channels; ++ch)
        kernels_.dense_accumulate(st.layer, static_cast<std::size_t>(ch) * plane + pos,
                                  v[static_cast<std::size_t>(ch)]);
      if (st.stats.elements_in == plane) {
        const std::vector<Scalar> out = kernels_.dense_finish(st.layer);
        std::copy(out.begin(), out.end(), st.scratch.begin());
        if (index + 1 < stages_.size() && stages_[index + 1]->kind == LayerKind::Dense)
          kernels_.dense_begin(stages_[index + 1]->layer);
        emit(0, 0);
      }
      break;
    }
    case LayerKind::Input:
      break;
  }
}

template <typename Scalar>
void StreamSession<Scalar>::flush(std::size_t index) {
  if (index == stages_.size()) return;
  Stage &st = *stages_[index];
  if (st.buffer) {
    LineBuffer<Scalar> &buf = *st.buffer;
    while (!buf.done()) {
      if (buf.next_is_real())
        throw ProtocolError("stream: stage '" + st.stats.name +
                            "' flushed before its input was complete");
      if (auto w = buf.advance({})) {
        if (st.kind == LayerKind::Conv)
          kernels_.conv(st.layer, buf, *w, st.scratch);
        else
          kernels_.pool(st.layer, buf, *w, st.scratch);
        ++st.stats.elements_out;
        if (!st.stats.first_output_at) st.stats.first_output_at = st.stats.elements_in;
        deliver(index + 1, w->out_row, w->out_col, st.scratch);
      }
    }
    st.stats.events = buf.events();
    st.stats.peak_occupancy = buf.peak_occupancy();
  } else {
    if (st.stats.elements_in != st.in.plane())
      throw ProtocolError("stream: stage '" + st.stats.name + "' received " +
                          std::to_string(st.stats.elements_in) + " of " +
                          std::to_string(st.in.plane()) + " elements");
    st.stats.events = st.stats.elements_in;
  }
  flush(index + 1);
}

template <typename Scalar>
StreamResult<Scalar> StreamSession<Scalar>::finish() {
  if (finished_) throw ProtocolError("stream: finish called twice");
  if (consumed_ != spec_.input.plane())
    throw ProtocolError("stream: frame ended after " + std::to_string(consumed_) +
                        " of " + std::to_string(spec_.input.plane()) + " elements");
  finished_ = true;
  flush(0);
  StreamResult<Scalar> r;
  r.logits = logits_;
  for (const auto &st : stages_) {
    r.stages.push_back(st->stats);
    r.modeled_cycles = std::max(r.modeled_cycles, st->stats.events);
  }
  return r;
}

template class StreamSession<double>;
template class StreamSession<std::int32_t>;

namespace {

template <typename Scalar>
StreamResult<Scalar> run_frame(const ModelSpec &spec, StreamKernels<Scalar> &k,
                               const Tensor<Scalar> &frame) {
  if (frame.shape() != spec.input)
    throw ConfigError("frame shape " + frame.shape().str() + " != model input " +
                      spec.input.str());
  StreamSession<Scalar> session(spec, k);
  std::vector<Scalar> element(static_cast<std::size_t>(spec.input.channels));
  for (int r = 0; r < spec.input.rows; ++r)
    for (int c = 0; c < spec.input.cols; ++c) {
      for (int ch = 0; ch < spec.input.channels; ++ch)
        element[static_cast<std::size_t>(ch)] = frame(ch, r, c);
      session.push(element);
    }
  return session.finish();
}

}  // namespace

StreamResult<double> stream_model_forward(const ModelSpec &spec,
                                          const ModelParams<double> &params,
                                          const TensorD &frame) {
  FloatStreamKernels k(spec, params);
  return run_frame<double>(spec, k, frame);
}

StreamResult<std::int32_t> stream_model_forward(const ShiftAddEngine &engine,
                                                const IntTensor &frame,
                                                std::vector<std::size_t> *saturations) {
  IntStreamKernels k(engine);
  auto r = run_frame<std::int32_t>(engine.spec(), k, frame);
  if (saturations) *saturations = k.saturations;
  return r;
}

ThroughputReport throughput_report(std::uint64_t cycles, double clock_hz,
                                   double frame_period_s, double frame_span_m,
                                   Rounding rounding) {
  if (cycles == 0) throw ConfigError("cycle count must be positive");
  if (!(clock_hz > 0) || !std::isfinite(clock_hz))
    throw ConfigError("clock frequency must be positive");
  if (!(frame_period_s > 0) || !(frame_span_m > 0))
    throw ConfigError("frame period and span must be positive");
  ThroughputReport r;
  r.cycles = cycles;
  r.clock_hz = clock_hz;
  r.frame_period_s = frame_period_s;
  r.frame_span_m = frame_span_m;
  r.rounding = rounding;
  r.inference_time_s = static_cast<double>(cycles) / clock_hz;
  const double exact_ms = r.inference_time_s * 1e3;
  r.inference_time_ms =
      rounding == Rounding::Paper ? std::round(exact_ms * 1e3) / 1e3 : exact_ms;
  if (!(r.inference_time_ms > 0))
    throw DomainError("inference time rounds to 0 ms; use exact rounding");
  // The relative nudge keeps exact multiples (period = k * time) from
  // flooring to k - 1 through representation error.
  const double ratio = frame_period_s * 1e3 / r.inference_time_ms;
  r.frames_per_period = static_cast<std::uint64_t>(std::floor(ratio * (1 + 1e-12)));
  r.realtime_fiber_m = static_cast<double>(r.frames_per_period) * frame_span_m;
  return r;
}

const char *to_string(Rounding r) {
  return r == Rounding::Paper ? "paper" : "exact";
}

Rounding rounding_from_string(const std::string &s) {
  if (s == "paper") return Rounding::Paper;
  if (s == "exact") return Rounding::Exact;
  throw ConfigError("rounding must be 'paper' or 'exact', got '" + s + "'");
}

}  // namespace shiftadd
