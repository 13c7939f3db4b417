// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <filesystem>
#include <random>
#include <string>

#include "shiftadd/model.hpp"
#include "shiftadd/network.hpp"
#include "shiftadd/rng.hpp"

namespace testing {

using namespace shiftadd;

inline TensorD random_tensor(Shape s, std::mt19937_64 &rng, double scale = 1.0) {
  TensorD t(s);
  for (auto &v : t.flat()) v = scale * (2 * uniform01(rng) - 1);
  return t;
}

/// Random parameters with non-trivial batchnorm statistics.
inline ModelParams<double> random_params(const ModelSpec &spec, std::uint64_t seed,
                                         double scale = 0.5) {
  std::mt19937_64 rng = named_stream(seed, "test-params");
  ModelParams<double> p = ModelParams<double>::zeros(spec);
  for (auto &l : p.layers) {
    if (l.conv) {
      for (Eigen::Index i = 0; i < l.conv->kernel.size(); ++i)
        l.conv->kernel.data()[i] = scale * (2 * uniform01(rng) - 1);
      for (Eigen::Index i = 0; i < l.conv->bias.size(); ++i)
        l.conv->bias(i) = 0.1 * (2 * uniform01(rng) - 1);
    }
    if (l.bn) {
      for (int c = 0; c < l.bn->channels(); ++c) {
        l.bn->gamma(c) = 0.5 + uniform01(rng);
        l.bn->beta(c) = 0.2 * (2 * uniform01(rng) - 1);
        l.bn->mean(c) = 0.1 * (2 * uniform01(rng) - 1);
        l.bn->var(c) = 0.5 + uniform01(rng);
      }
    }
    if (l.dense) {
      for (Eigen::Index i = 0; i < l.dense->weights.size(); ++i)
        l.dense->weights.data()[i] = scale * (2 * uniform01(rng) - 1);
      for (Eigen::Index i = 0; i < l.dense->bias.size(); ++i)
        l.dense->bias(i) = 0.1 * (2 * uniform01(rng) - 1);
    }
  }
  return p;
}

/// Small random conv/pool/dense chain with valid shapes.
inline ModelSpec random_spec(std::mt19937_64 &rng, bool batchnorm) {
  for (;;) {
    ModelSpec spec;
    spec.input = Shape{1 + static_cast<int>(uniform_index(rng, 2)),
                       5 + static_cast<int>(uniform_index(rng, 8)),
                       4 + static_cast<int>(uniform_index(rng, 6))};
    const int convs = 1 + static_cast<int>(uniform_index(rng, 2));
    for (int i = 0; i < convs; ++i) {
      LayerSpec c;
      c.kind = LayerKind::Conv;
      c.name = "conv" + std::to_string(i + 1);
      c.out_channels = 1 + static_cast<int>(uniform_index(rng, 4));
      c.kernel_h = 1 + static_cast<int>(uniform_index(rng, 3));
      c.kernel_w = 1 + static_cast<int>(uniform_index(rng, 3));
      c.stride = 1 + static_cast<int>(uniform_index(rng, 2));
      c.padding = static_cast<int>(uniform_index(rng, 2));
      c.relu = true;
      c.batchnorm = batchnorm;
      spec.layers.push_back(c);
      if (uniform_index(rng, 2) == 0) {
        LayerSpec pl;
        pl.kind = uniform_index(rng, 2) == 0 ? LayerKind::MaxPool : LayerKind::AvgPool;
        pl.name = "pool" + std::to_string(i + 1);
        pl.kernel_h = pl.kernel_w = pl.stride = 2;
        spec.layers.push_back(pl);
      }
    }
    LayerSpec f;
    f.kind = LayerKind::Flatten;
    f.name = "flatten";
    spec.layers.push_back(f);
    LayerSpec d;
    d.kind = LayerKind::Dense;
    d.name = "fc1";
    d.out_channels = 3;
    spec.layers.push_back(d);
    try {
      spec.shapes();
      return spec;
    } catch (const ConfigError &) {
    }
  }
}

/// Fresh empty directory under the system temp dir.
inline std::filesystem::path scratch_dir(const std::string &name) {
  const auto dir = std::filesystem::temp_directory_path() / ("shiftadd-test-" + name);
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

}  // namespace testing

namespace testing {

struct GradCheck {
  double worst_relative = 0;
  std::size_t checked = 0;
  std::size_t failures = 0;
};

/// Central differences of the KD batch loss against backward_gradients on
/// `coords` randomly chosen trainable coordinates (all if 0).
inline GradCheck check_kd_gradients(const ModelSpec &spec, std::uint64_t seed, int batch,
                                    std::size_t coords, double tolerance = 1e-4) {
  std::mt19937_64 rng = named_stream(seed, "gradcheck");
  ModelParams<double> params = random_params(spec, seed);
  std::vector<TensorD> xs;
  std::vector<const TensorD *> ptrs;
  for (int b = 0; b < batch; ++b) xs.push_back(random_tensor(spec.input, rng));
  for (const auto &x : xs) ptrs.push_back(&x);
  const MatrixX<double> input = pack_batch<double, TensorD>(ptrs);
  std::vector<int> labels;
  for (int b = 0; b < batch; ++b) labels.push_back(static_cast<int>(uniform_index(rng, 3)));
  MatrixX<double> teacher(3, batch);
  for (Eigen::Index i = 0; i < teacher.size(); ++i) teacher.data()[i] = 4 * uniform01(rng) - 2;
  KDConfig cfg;
  cfg.alpha = uniform01(rng);
  cfg.temperature = 1 + 9 * uniform01(rng);
  cfg.scale_kl_by_t2 = uniform_index(rng, 2) == 1;

  const Gradients g = backward_gradients(spec, params, input, labels, &teacher, cfg);
  ModelParams<double> grads = g.grads;
  auto pviews = trainable_views(params);
  auto gviews = trainable_views(grads);
  std::vector<std::pair<std::size_t, std::size_t>> picks;
  for (std::size_t t = 0; t < pviews.size(); ++t)
    for (std::size_t i = 0; i < pviews[t].size(); ++i) picks.emplace_back(t, i);
  if (coords && coords < picks.size()) {
    portable_shuffle(picks.begin(), picks.end(), rng);
    picks.resize(coords);
  }
  GradCheck r;
  const double h = 1e-5;
  for (auto [t, i] : picks) {
    const double keep = pviews[t][i];
    pviews[t][i] = keep + h;
    const double up = backward_gradients(spec, params, input, labels, &teacher, cfg).loss;
    pviews[t][i] = keep - h;
    const double down = backward_gradients(spec, params, input, labels, &teacher, cfg).loss;
    pviews[t][i] = keep;
    const double numeric = (up - down) / (2 * h);
    const double analytic = gviews[t][i];
    const double scale = std::max({std::fabs(numeric), std::fabs(analytic), 1e-3});
    const double rel = std::fabs(numeric - analytic) / scale;
    r.worst_relative = std::max(r.worst_relative, rel);
    ++r.checked;
    if (rel > tolerance) ++r.failures;
  }
  return r;
}

}  // namespace testing
