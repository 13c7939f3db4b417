// SPDX-License-Identifier: Apache-2.0
#include <doctest.h>

#include <cmath>

#include "helpers.hpp"
#include "shiftadd/stream.hpp"

using namespace shiftadd;

namespace {

// Feeds a rows x cols single-channel frame (padded positions included) and
// returns the real elements consumed when the first window appears.
std::size_t first_window_at(int rows, int cols, WindowGeometry g) {
  LineBuffer<double> buf(1, rows, cols, g);
  const double one = 1.0;
  while (!buf.done()) {
    const bool real = buf.next_is_real();
    const auto w = buf.advance(real ? std::span<const double>(&one, 1) : std::span<const double>{});
    if (w) return buf.real_consumed();
  }
  return 0;
}

}  // namespace

TEST_CASE("first window position") {
  CHECK(first_window_at(256, 11, {3, 3, 1, 1}) == 13);
  CHECK(first_window_at(256, 11, {3, 3, 1, 0}) == 25);
  CHECK(first_window_at(8, 6, {2, 2, 2, 0}) == 8);
}

TEST_CASE("buffer requirement surfaces both readings") {
  const auto r = buffer_requirement(3, 1, 11, 3);
  CHECK(r.paper_formula == 14);
  CHECK(r.functional_minimum == 25);
  CHECK_FALSE(r.negative_warning);
  CHECK(buffer_requirement(2, 2, 11, 2).negative_warning);
  CHECK_THROWS_AS(buffer_requirement(0, 1, 11, 3), ConfigError);
}

TEST_CASE("line buffer enforces order and bounds occupancy") {
  LineBuffer<int> buf(1, 4, 5, {3, 3, 1, 0});
  CHECK(buf.capacity() == 15);
  const int v = 1;
  CHECK_THROWS_AS(buf.step(0, 1, std::span<const int>(&v, 1)), ProtocolError);
  int windows = 0;
  for (int r = 0; r < 4; ++r)
    for (int c = 0; c < 5; ++c) {
      const int x = r * 5 + c;
      if (buf.step(r, c, std::span<const int>(&x, 1))) {
        ++windows;
        CHECK(buf.occupancy() <= buf.capacity());
      }
    }
  CHECK(windows == 2 * 3);
  CHECK(buf.peak_occupancy() == 15);
  CHECK(buf.done());
  CHECK_THROWS_AS(buf.advance(std::span<const int>(&v, 1)), ProtocolError);

  LineBuffer<int> padded(1, 3, 3, {3, 3, 1, 1});
  CHECK_FALSE(padded.next_is_real());
  CHECK_THROWS_AS(padded.advance(std::span<const int>(&v, 1)), ProtocolError);
  CHECK_THROWS_AS(padded.step(0, 0, std::span<const int>(&v, 1)), ConfigError);
}

TEST_CASE("window values read the ring correctly") {
  LineBuffer<int> buf(1, 5, 4, {2, 2, 1, 0});
  for (int r = 0; r < 5; ++r)
    for (int c = 0; c < 4; ++c) {
      const int x = 10 * r + c;
      if (auto w = buf.step(r, c, std::span<const int>(&x, 1))) {
        for (int p = 0; p < 2; ++p)
          for (int q = 0; q < 2; ++q)
            REQUIRE(buf.value(*w, 0, p, q) == 10 * (w->out_row + p) + w->out_col + q);
      }
    }
}

TEST_CASE("student stream stats") {
  const ModelSpec spec = ModelSpec::student();
  const auto params = testing::random_params(spec, 1);
  std::mt19937_64 rng = named_stream(1, "stream");
  const TensorD x = testing::random_tensor(spec.input, rng);
  const auto r = stream_model_forward(spec, params, x);
  REQUIRE(r.stages.size() == spec.layers.size());
  CHECK(r.stages[0].name == "conv1");
  CHECK(r.stages[0].first_output_at == 13);
  CHECK(r.stages[0].elements_in == 256 * 11);
  CHECK(r.stages[0].elements_out == 256 * 11);
  CHECK(r.stages[0].peak_occupancy <= r.stages[0].capacity);
  CHECK(r.modeled_cycles == 258 * 13);
  CHECK(r.stages.back().elements_out == 1);
  CHECK(r.logits.size() == 3);
}

TEST_CASE("stream equivalence on random models") {
  std::mt19937_64 rng = named_stream(2, "stream-eq");
  for (int trial = 0; trial < 30; ++trial) {
    const ModelSpec spec = testing::random_spec(rng, trial % 2 == 0);
    const auto params = testing::random_params(spec, 500 + trial);
    const TensorD x = testing::random_tensor(spec.input, rng);
    const auto batch = model_forward(spec, params, x);
    const auto streamed = stream_model_forward(spec, params, x);
    for (std::size_t k = 0; k < streamed.logits.size(); ++k)
      REQUIRE(std::fabs(streamed.logits[k] - batch(static_cast<Eigen::Index>(k))) < 1e-9);

    const auto [fspec, fparams] = fold_model_batchnorm(spec, params);
    const ShiftAddEngine engine(shift_quantize_model(fspec, fparams, 3, FixedFrame{}));
    const IntTensor xi = engine.condition_input(x);
    const auto ib = engine.forward_integer(xi);
    const auto is = stream_model_forward(engine, xi);
    REQUIRE(is.logits == ib.logits);
  }
}

TEST_CASE("stream session protocol") {
  const ModelSpec spec = ModelSpec::reduced();
  const auto params = testing::random_params(spec, 3);
  FloatStreamKernels k(spec, params);
  StreamSession<double> s(spec, k);
  const double v = 0.5;
  for (std::size_t i = 0; i + 1 < spec.input.size(); ++i) s.push(std::span<const double>(&v, 1));
  CHECK_THROWS_AS(s.finish(), ProtocolError);
  StreamSession<double> s2(spec, k);
  for (std::size_t i = 0; i < spec.input.size(); ++i) s2.push(std::span<const double>(&v, 1));
  CHECK_THROWS_AS(s2.push(std::span<const double>(&v, 1)), ProtocolError);
  const auto r = s2.finish();
  CHECK(r.logits.size() == 3);
  CHECK_THROWS_AS(s2.finish(), ProtocolError);
}

TEST_CASE("throughput report") {
  const auto p = throughput_report(25112, 303e6);
  CHECK(p.inference_time_ms == 0.083);
  CHECK(p.frames_per_period == 3084);
  CHECK(p.realtime_fiber_m == 38550);
  const auto e = throughput_report(25112, 303e6, 0.256, 12.5, Rounding::Exact);
  CHECK(e.frames_per_period == static_cast<std::uint64_t>(std::floor(0.256 / (25112 / 303e6))));
  CHECK(rounding_from_string("exact") == Rounding::Exact);
  CHECK_THROWS_AS(rounding_from_string("banker"), ConfigError);
  CHECK_THROWS_AS(throughput_report(0, 303e6), Error);
}
