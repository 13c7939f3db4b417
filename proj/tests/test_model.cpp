// SPDX-License-Identifier: Apache-2.0
#include <doctest.h>

#include "helpers.hpp"
#include "shiftadd/config.hpp"
#include "shiftadd/nn.hpp"
#include "shiftadd/weights_io.hpp"

using namespace shiftadd;
using testing::random_params;
using testing::random_tensor;

namespace {

// Zero-pads explicitly, then runs the textbook six nested loops.
TensorD six_loop_conv(const TensorD &in, const ConvLayerParams<double> &c) {
  const int pad = c.padding;
  TensorD padded(in.channels(), in.rows() + 2 * pad, in.cols() + 2 * pad);
  for (int n = 0; n < in.channels(); ++n)
    for (int r = 0; r < in.rows(); ++r)
      for (int w = 0; w < in.cols(); ++w) padded(n, r + pad, w + pad) = in(n, r, w);
  const int oh = (padded.rows() - c.kernel_h) / c.stride + 1;
  const int ow = (padded.cols() - c.kernel_w) / c.stride + 1;
  TensorD out(c.out_channels(), oh, ow);
  for (int m = 0; m < c.out_channels(); ++m)
    for (int x = 0; x < oh; ++x)
      for (int y = 0; y < ow; ++y) {
        double acc = c.bias(m);
        for (int n = 0; n < c.in_channels; ++n)
          for (int p = 0; p < c.kernel_h; ++p)
            for (int q = 0; q < c.kernel_w; ++q)
              acc += c.k(m, n, p, q) * padded(n, x * c.stride + p, y * c.stride + q);
        out(m, x, y) = acc;
      }
  return out;
}

}  // namespace

TEST_CASE("student parameter counts") {
  CHECK(count_report(ModelSpec::student(false)).param_count == 30531);
  CHECK(count_report(ModelSpec::student(true)).param_count == 30771);
  const auto shapes = ModelSpec::student().shapes();
  const ModelSpec s = ModelSpec::student();
  CHECK(shapes[static_cast<std::size_t>(s.index_of("flatten"))].size() == 2048);
  CHECK(shapes.back().size() == 3);
  CHECK(s.index_of("nope") == -1);
}

TEST_CASE("invalid geometry is rejected") {
  ModelSpec s = ModelSpec::reduced({1, 2, 2});
  CHECK_THROWS_AS(s.shapes(), ConfigError);
  CHECK_THROWS_AS(TensorD(0, 1, 1), ConfigError);
}

TEST_CASE("conv matches the padded six-loop oracle") {
  std::mt19937_64 rng = named_stream(7, "conv-oracle");
  for (int trial = 0; trial < 50; ++trial) {
    const int in_ch = 1 + static_cast<int>(uniform_index(rng, 3));
    const int kh = 1 + static_cast<int>(uniform_index(rng, 3));
    const int kw = 1 + static_cast<int>(uniform_index(rng, 3));
    const int stride = 1 + static_cast<int>(uniform_index(rng, 2));
    const int pad = static_cast<int>(uniform_index(rng, 2));
    auto c = ConvLayerParams<double>::zeros(1 + static_cast<int>(uniform_index(rng, 4)), in_ch, kh,
                                            kw, stride, pad);
    for (Eigen::Index i = 0; i < c.kernel.size(); ++i) c.kernel.data()[i] = uniform01(rng) - 0.5;
    for (Eigen::Index i = 0; i < c.bias.size(); ++i) c.bias(i) = uniform01(rng) - 0.5;
    const TensorD x = random_tensor({in_ch, 4 + static_cast<int>(uniform_index(rng, 5)),
                                     4 + static_cast<int>(uniform_index(rng, 5))},
                                    rng);
    const TensorD got = conv2d_forward(x, c);
    const TensorD want = six_loop_conv(x, c);
    REQUIRE(got.shape() == want.shape());
    CHECK((got.matrix() - want.matrix()).cwiseAbs().maxCoeff() < 1e-12);
  }
}

TEST_CASE("pooling") {
  TensorD x(1, 2, 4);
  for (int i = 0; i < 8; ++i) x.flat()[static_cast<std::size_t>(i)] = i;
  const TensorD mx = pool2d_forward(x, PoolSpec{PoolMode::Max, 2, 2, 2});
  const TensorD av = pool2d_forward(x, PoolSpec{PoolMode::Avg, 2, 2, 2});
  CHECK(mx(0, 0, 0) == 5);
  CHECK(mx(0, 0, 1) == 7);
  CHECK(av(0, 0, 0) == doctest::Approx(2.5));
  CHECK(av(0, 0, 1) == doctest::Approx(4.5));
}

TEST_CASE("folding batchnorm preserves the function") {
  std::mt19937_64 rng = named_stream(3, "fold");
  for (int trial = 0; trial < 20; ++trial) {
    const ModelSpec spec = testing::random_spec(rng, true);
    const auto params = random_params(spec, 100 + trial);
    const auto [fspec, fparams] = fold_model_batchnorm(spec, params);
    for (const auto &l : fspec.layers) CHECK_FALSE(l.batchnorm);
    const TensorD x = random_tensor(spec.input, rng);
    const auto a = model_forward(spec, params, x);
    const auto b = model_forward(fspec, fparams, x);
    CHECK((a - b).cwiseAbs().maxCoeff() < 1e-10);
  }
}

TEST_CASE("batched network agrees with the reference forward") {
  std::mt19937_64 rng = named_stream(4, "network");
  for (int trial = 0; trial < 10; ++trial) {
    const ModelSpec spec = testing::random_spec(rng, trial % 2 == 0);
    const auto params = random_params(spec, 200 + trial);
    std::vector<TensorD> xs;
    for (int b = 0; b < 3; ++b) xs.push_back(random_tensor(spec.input, rng));
    std::vector<const TensorD *> ptrs;
    for (const auto &x : xs) ptrs.push_back(&x);
    Network<double> net(spec, params);
    const MatrixX<double> logits =
        net.forward(pack_batch<double, TensorD>(ptrs), 3, false);
    for (int b = 0; b < 3; ++b) {
      const auto ref = model_forward(spec, params, xs[static_cast<std::size_t>(b)]);
      CHECK((logits.col(b) - ref).cwiseAbs().maxCoeff() < 1e-10);
    }
  }
}

TEST_CASE("init_params is seeded") {
  const ModelSpec spec = ModelSpec::reduced();
  const auto a = init_params<float>(spec, 1);
  const auto b = init_params<float>(spec, 1);
  const auto c = init_params<float>(spec, 2);
  CHECK(a.layers[0].conv->kernel == b.layers[0].conv->kernel);
  CHECK(a.layers[0].conv->kernel != c.layers[0].conv->kernel);
}

TEST_CASE("spec JSON round trip") {
  for (const ModelSpec &spec : {ModelSpec::student(), ModelSpec::wide_student(false),
                                ModelSpec::reduced()}) {
    const ModelSpec back = spec_from_json(spec_to_json(spec));
    CHECK(spec_to_json(back) == spec_to_json(spec));
    CHECK(count_report(back).param_count == count_report(spec).param_count);
  }
  CHECK(resolve_spec("student-nobn").layers[0].batchnorm == false);
  CHECK_THROWS_AS(spec_from_json(nlohmann::json{{"layers", 1}}), ConfigError);
  CHECK_THROWS_AS(resolve_spec("/nonexistent/spec.json"), Error);
}

TEST_CASE("SACW weight files round trip") {
  const ModelSpec spec = ModelSpec::reduced();
  const auto params = random_params(spec, 9);
  const auto bytes = encode_sacw(spec, params.cast<float>().cast<double>());
  const WeightFile wf = decode_sacw(bytes);
  CHECK(spec_to_json(wf.spec) == spec_to_json(spec));
  for (std::size_t i = 0; i < spec.layers.size(); ++i) {
    const auto &a = params.layers[i];
    const auto &b = wf.params.layers[i];
    if (a.conv) CHECK((a.conv->kernel.cast<float>().cast<double>() - b.conv->kernel).norm() == 0);
    if (a.bn) CHECK((a.bn->var.cast<float>().cast<double>() - b.bn->var).norm() == 0);
    if (a.dense) CHECK((a.dense->weights.cast<float>().cast<double>() - b.dense->weights).norm() == 0);
  }
  auto truncated = bytes;
  truncated.resize(bytes.size() - 3);
  CHECK_THROWS_AS(decode_sacw(truncated), FormatError);
  auto bad = bytes;
  bad[0] = 'X';
  CHECK_THROWS_AS(decode_sacw(bad), FormatError);
}
