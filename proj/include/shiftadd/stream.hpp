// SPDX-License-Identifier: Apache-2.0
#pragma once

// Row-major streaming execution of the layer graph. Every conv and pool
// layer is a stage fed one spatial element (all channels at one row/col)
// at a time through a P-row line buffer; dense layers accumulate as
// elements arrive. Zero padding is virtual: border positions advance the
// window cursor but are never stored.

#include <algorithm>
#include <cstdint>
#include <functional>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "shiftadd/engine.hpp"
#include "shiftadd/model.hpp"
#include "shiftadd/nn.hpp"

namespace shiftadd {

struct WindowGeometry {
  int kernel_h = 1;
  int kernel_w = 1;
  int stride = 1;
  int padding = 0;
};

/// Completed window, identified by its output coordinate. Its top-left
/// corner in padded input coordinates is (out_row, out_col) * stride.
struct WindowPos {
  int out_row = 0;
  int out_col = 0;
};

template <typename Scalar>
class LineBuffer {
 public:
  LineBuffer(int channels, int rows, int cols, WindowGeometry g)
      : channels_(channels), rows_(rows), cols_(cols), g_(g) {
    if (channels < 1 || rows < 1 || cols < 1 || g.kernel_h < 1 ||
        g.kernel_w < 1 || g.stride < 1 || g.padding < 0)
      throw ConfigError("line buffer: invalid geometry");
    padded_rows_ = rows + 2 * g.padding;
    padded_cols_ = cols + 2 * g.padding;
    if (padded_rows_ < g.kernel_h || padded_cols_ < g.kernel_w)
      throw ConfigError("line buffer: window larger than padded input");
    ring_.assign(static_cast<std::size_t>(g.kernel_h) * cols * channels, Scalar(0));
  }

  /// True when the next padded position holds a real input element.
  bool next_is_real() const {
    const int r = cursor_ / padded_cols_ - g_.padding;
    const int c = cursor_ % padded_cols_ - g_.padding;
    return r >= 0 && r < rows_ && c >= 0 && c < cols_;
  }
  bool done() const { return cursor_ == padded_rows_ * padded_cols_; }

  /// Advances one padded position. `element` (length = channels) must be
  /// given exactly when the position is real.
  std::optional<WindowPos> advance(std::span<const Scalar> element) {
    if (done()) throw ProtocolError("line buffer: element past end of frame");
    const bool real = next_is_real();
    if (real != !element.empty())
      throw ProtocolError(real ? "line buffer: real element expected"
                               : "line buffer: virtual position expected");
    const int pr = cursor_ / padded_cols_;
    const int pc = cursor_ % padded_cols_;
    if (real) {
      if (element.size() != static_cast<std::size_t>(channels_))
        throw ProtocolError("line buffer: element has wrong channel count");
      const int r = pr - g_.padding;
      const int c = pc - g_.padding;
      std::copy(element.begin(), element.end(), ring_.begin() + offset(r, c));
      ++real_written_;
      filled_ = std::min<std::size_t>(real_written_, capacity());
      peak_ = std::max(peak_, filled_);
    }
    ++cursor_;
    ++events_;
    const int top = pr - g_.kernel_h + 1;
    const int left = pc - g_.kernel_w + 1;
    if (top < 0 || left < 0 || top % g_.stride != 0 || left % g_.stride != 0)
      return std::nullopt;
    if (left + g_.kernel_w > padded_cols_) return std::nullopt;
    return WindowPos{top / g_.stride, left / g_.stride};
  }

  /// Feeds a real element at (row, col); positions must arrive in
  /// row-major order. Only valid without padding.
  std::optional<WindowPos> step(int row, int col, std::span<const Scalar> element) {
    if (g_.padding != 0)
      throw ConfigError("line buffer: step() needs padding 0, use advance()");
    const int expected = static_cast<int>(real_written_);
    if (row * cols_ + col != expected || col < 0 || col >= cols_)
      throw ProtocolError("line buffer: element (" + std::to_string(row) + "," +
                          std::to_string(col) + ") out of row-major order");
    return advance(element);
  }

  /// Value at channel c, offset (p, q) inside window w; zero on padding.
  Scalar value(const WindowPos &w, int c, int p, int q) const {
    const int r = w.out_row * g_.stride + p - g_.padding;
    const int col = w.out_col * g_.stride + q - g_.padding;
    if (r < 0 || r >= rows_ || col < 0 || col >= cols_) return Scalar(0);
    return ring_[offset(r, col) + static_cast<std::size_t>(c)];
  }
  bool is_real(const WindowPos &w, int p, int q) const {
    const int r = w.out_row * g_.stride + p - g_.padding;
    const int col = w.out_col * g_.stride + q - g_.padding;
    return r >= 0 && r < rows_ && col >= 0 && col < cols_;
  }

  /// Storage capacity per channel: P rows of W real columns.
  std::size_t capacity() const {
    return static_cast<std::size_t>(g_.kernel_h) * cols_;
  }
  std::size_t occupancy() const { return filled_; }
  std::size_t peak_occupancy() const { return peak_; }
  std::size_t real_consumed() const { return real_written_; }
  std::size_t events() const { return events_; }
  const WindowGeometry &geometry() const { return g_; }
  int channels() const { return channels_; }

 private:
  std::size_t offset(int r, int c) const {
    return (static_cast<std::size_t>(r % g_.kernel_h) * cols_ + c) * channels_;
  }

  int channels_, rows_, cols_;
  WindowGeometry g_;
  int padded_rows_ = 0, padded_cols_ = 0;
  int cursor_ = 0;
  std::vector<Scalar> ring_;
  std::size_t real_written_ = 0;
  std::size_t filled_ = 0;
  std::size_t peak_ = 0;
  std::size_t events_ = 0;
};

struct BufferRequirement {
  /// (P - 1 - S) * W + Q, reported as computed even when <= 0.
  long paper_formula = 0;
  /// (P - 1) * W + Q: elements consumed when the first unpadded window
  /// completes.
  long functional_minimum = 0;
  bool negative_warning = false;
};

BufferRequirement buffer_requirement(int kernel_h, int stride, int width,
                                     int kernel_w);

struct StageStats {
  std::string name;
  std::size_t peak_occupancy = 0;  // elements per channel
  std::size_t capacity = 0;
  std::size_t elements_in = 0;
  std::size_t elements_out = 0;
  std::size_t events = 0;  // one per cycle under initiation interval 1
  std::optional<std::size_t> first_output_at;  // elements_in at first emit
};

template <typename Scalar>
struct StreamResult {
  std::vector<Scalar> logits;
  std::vector<StageStats> stages;
  /// Bottleneck stage event count under the one-element-per-cycle model.
  std::size_t modeled_cycles = 0;
};

/// Arithmetic the stages delegate to: float reference or integer engine.
template <typename Scalar>
class StreamKernels {
 public:
  virtual ~StreamKernels() = default;
  /// All M outputs of the conv at `layer` for one completed window.
  virtual void conv(std::size_t layer, const LineBuffer<Scalar> &buf,
                    const WindowPos &w, std::span<Scalar> out) = 0;
  virtual void pool(std::size_t layer, const LineBuffer<Scalar> &buf,
                    const WindowPos &w, std::span<Scalar> out) = 0;
  /// Adds the contribution of input feature j = value to every output.
  virtual void dense_accumulate(std::size_t layer, std::size_t j, Scalar value) = 0;
  virtual std::vector<Scalar> dense_finish(std::size_t layer) = 0;
  virtual void dense_begin(std::size_t layer) = 0;
};

class FloatStreamKernels final : public StreamKernels<double> {
 public:
  FloatStreamKernels(const ModelSpec &spec, const ModelParams<double> &params);
  void conv(std::size_t layer, const LineBuffer<double> &buf, const WindowPos &w,
            std::span<double> out) override;
  void pool(std::size_t layer, const LineBuffer<double> &buf, const WindowPos &w,
            std::span<double> out) override;
  void dense_begin(std::size_t layer) override;
  void dense_accumulate(std::size_t layer, std::size_t j, double value) override;
  std::vector<double> dense_finish(std::size_t layer) override;

 private:
  const ModelSpec &spec_;
  const ModelParams<double> &params_;
  std::vector<double> acc_;
};

class IntStreamKernels final : public StreamKernels<std::int32_t> {
 public:
  explicit IntStreamKernels(const ShiftAddEngine &engine);
  void conv(std::size_t layer, const LineBuffer<std::int32_t> &buf,
            const WindowPos &w, std::span<std::int32_t> out) override;
  void pool(std::size_t layer, const LineBuffer<std::int32_t> &buf,
            const WindowPos &w, std::span<std::int32_t> out) override;
  void dense_begin(std::size_t layer) override;
  void dense_accumulate(std::size_t layer, std::size_t j, std::int32_t value) override;
  std::vector<std::int32_t> dense_finish(std::size_t layer) override;

  std::vector<std::size_t> saturations;  // per spec layer

 private:
  const ShiftAddEngine &engine_;
  std::vector<std::int64_t> acc_;
};

/// One frame pushed element by element through the stage chain. Stages are
/// advanced depth-first: an emitted element is consumed downstream before
/// the next input element enters.
template <typename Scalar>
class StreamSession {
 public:
  StreamSession(const ModelSpec &spec, StreamKernels<Scalar> &kernels);
  ~StreamSession();
  StreamSession(const StreamSession &) = delete;
  StreamSession &operator=(const StreamSession &) = delete;

  /// Next input element in row-major order (length = input channels).
  void push(std::span<const Scalar> element);
  /// Flushes virtual padding and returns logits plus per-stage stats.
  /// ProtocolError if the frame is incomplete.
  StreamResult<Scalar> finish();

  std::size_t consumed() const { return consumed_; }

 private:
  struct Stage;
  void deliver(std::size_t stage, int row, int col, std::span<const Scalar> v);
  void flush(std::size_t stage);

  const ModelSpec &spec_;
  StreamKernels<Scalar> &kernels_;
  std::vector<Shape> shapes_;
  std::vector<std::unique_ptr<Stage>> stages_;
  std::size_t consumed_ = 0;
  std::vector<Scalar> logits_;
  bool finished_ = false;
};

/// Streams a normalized frame through the float reference arithmetic.
StreamResult<double> stream_model_forward(const ModelSpec &spec,
                                          const ModelParams<double> &params,
                                          const TensorD &frame);
/// Streams a conditioned integer frame through the shift-add engine.
StreamResult<std::int32_t> stream_model_forward(const ShiftAddEngine &engine,
                                                const IntTensor &frame,
                                                std::vector<std::size_t> *saturations = nullptr);

enum class Rounding { Paper, Exact };

struct ThroughputReport {
  std::uint64_t cycles = 0;
  double clock_hz = 0;
  double inference_time_s = 0;
  /// Inference time as used for the frame count: rounded to 3 decimals of
  /// a millisecond in paper mode, unrounded otherwise.
  double inference_time_ms = 0;
  double frame_period_s = 0.256;
  std::uint64_t frames_per_period = 0;
  double frame_span_m = 12.5;
  double realtime_fiber_m = 0;
  Rounding rounding = Rounding::Paper;
};

ThroughputReport throughput_report(std::uint64_t cycles, double clock_hz,
                                   double frame_period_s = 0.256,
                                   double frame_span_m = 12.5,
                                   Rounding rounding = Rounding::Paper);

const char *to_string(Rounding r);
Rounding rounding_from_string(const std::string &s);

}  // namespace shiftadd
