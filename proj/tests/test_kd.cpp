// SPDX-License-Identifier: Apache-2.0
#include <doctest.h>

#include <cmath>

#include "helpers.hpp"
#include "shiftadd/kd.hpp"
#include "shiftadd/network.hpp"
#include "shiftadd/nn.hpp"

using namespace shiftadd;

namespace {

VectorX<double> vec(std::initializer_list<double> v) {
  VectorX<double> out(static_cast<Eigen::Index>(v.size()));
  Eigen::Index i = 0;
  for (double x : v) out(i++) = x;
  return out;
}

}  // namespace

TEST_CASE("softmax with temperature") {
  const auto p = softmax_temperature(vec({1, 2, 3}), 1.0);
  CHECK(p.sum() == doctest::Approx(1.0));
  CHECK(p(2) > p(1));
  const auto flat = softmax_temperature(vec({1, 2, 3}), 1e6);
  CHECK(flat(0) == doctest::Approx(1.0 / 3).epsilon(1e-5));
  const auto big = softmax_temperature(vec({1000, 0, -1000}), 1.0);
  CHECK(big.allFinite());
  CHECK_THROWS_AS(softmax_temperature(vec({1, 2}), 0.0), DomainError);
}

TEST_CASE("KD degenerate forms") {
  std::mt19937_64 rng = named_stream(1, "kd");
  for (int i = 0; i < 1000; ++i) {
    const VectorX<double> s = vec({4 * uniform01(rng) - 2, 4 * uniform01(rng) - 2, 4 * uniform01(rng) - 2});
    const VectorX<double> t = vec({4 * uniform01(rng) - 2, 4 * uniform01(rng) - 2, 4 * uniform01(rng) - 2});
    const int label = static_cast<int>(uniform_index(rng, 3));
    KDConfig hard{1.0, 1 + 9 * uniform01(rng), false};
    REQUIRE(kd_loss(s, t, label, hard) == cross_entropy(s, label));
    KDConfig soft{0.0, 1 + 9 * uniform01(rng), false};
    REQUIRE(kd_loss(s, s, label, soft) == 0.0);
    REQUIRE(kl_divergence_tempered(s, t, soft.temperature) >= 0.0);
  }
}

TEST_CASE("KD configuration and label errors") {
  CHECK_THROWS_AS((KDConfig{1.5, 5, false}.validate()), DomainError);
  CHECK_THROWS_AS((KDConfig{0.5, 0, false}.validate()), DomainError);
  CHECK_THROWS_AS(cross_entropy(vec({1, 2, 3}), 3), DomainError);
  CHECK_THROWS_AS(kd_loss(vec({1, 2, 3}), vec({1, 2}), 0, KDConfig{}), ConfigError);
}

TEST_CASE("T squared scaling multiplies the soft term") {
  const auto s = vec({0.3, -1.0, 2.0});
  const auto t = vec({1.0, 0.5, -0.5});
  const double kl = kl_divergence_tempered(s, t, 4.0);
  CHECK(kd_loss(s, t, 1, KDConfig{0.0, 4.0, true}) == doctest::Approx(16 * kl));
  CHECK(kd_loss(s, t, 1, KDConfig{0.0, 4.0, false}) == doctest::Approx(kl));
}

TEST_CASE("KD loss gradient matches finite differences") {
  std::mt19937_64 rng = named_stream(2, "kdgrad");
  for (int i = 0; i < 200; ++i) {
    VectorX<double> s = vec({4 * uniform01(rng) - 2, 4 * uniform01(rng) - 2, 4 * uniform01(rng) - 2});
    const VectorX<double> t = vec({4 * uniform01(rng) - 2, 4 * uniform01(rng) - 2, 4 * uniform01(rng) - 2});
    const int label = static_cast<int>(uniform_index(rng, 3));
    const KDConfig cfg{uniform01(rng), 1 + 9 * uniform01(rng), uniform_index(rng, 2) == 1};
    const VectorX<double> g = kd_loss_gradient(s, t, label, cfg);
    for (Eigen::Index k = 0; k < 3; ++k) {
      const double keep = s(k);
      s(k) = keep + 1e-6;
      const double up = kd_loss(s, t, label, cfg);
      s(k) = keep - 1e-6;
      const double down = kd_loss(s, t, label, cfg);
      s(k) = keep;
      REQUIRE(std::fabs((up - down) / 2e-6 - g(k)) < 1e-6);
    }
  }
}

TEST_CASE("batch loss averages and names bad samples") {
  MatrixX<double> logits(3, 2);
  logits << 1, 0, 2, 0, 3, 0;
  const std::vector<int> labels{2, 0};
  const BatchLoss bl = batch_kd_loss(logits, labels, nullptr, KDConfig{});
  const double want = (cross_entropy(logits.col(0), 2) + cross_entropy(logits.col(1), 0)) / 2;
  CHECK(bl.loss == doctest::Approx(want));
  CHECK((bl.dlogits.col(0) - cross_entropy_gradient(logits.col(0), 2) / 2).norm() < 1e-15);
  logits(1, 1) = std::nan("");
  const std::vector<std::string> ids{"a", "frame-7"};
  try {
    batch_kd_loss(logits, labels, nullptr, KDConfig{}, ids);
    FAIL("expected NumericError");
  } catch (const NumericError &e) {
    CHECK(std::string(e.what()).find("frame-7") != std::string::npos);
  }
}

TEST_CASE("network gradients match central differences") {
  for (std::uint64_t seed = 1; seed <= 4; ++seed) {
    const auto r = testing::check_kd_gradients(ModelSpec::reduced({1, 8, 6}, seed % 2 == 0),
                                               seed, 4, 60);
    CAPTURE(r.worst_relative);
    CHECK(r.failures == 0);
  }
}
