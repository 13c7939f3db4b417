// SPDX-License-Identifier: Apache-2.0
#include <doctest.h>

#include <cmath>
#include <vector>

#include "shiftadd/optim.hpp"

using namespace shiftadd;

TEST_CASE("Adam first steps by hand") {
  std::vector<double> p{1.0, -2.0};
  std::vector<double> g{0.5, -0.1};
  std::vector<std::span<double>> ps{p}, gs{g};
  Adam adam;
  adam.step<double>(ps, gs);
  // With bias correction the first update is lr * g / (|g| + eps).
  CHECK(p[0] == doctest::Approx(1.0 - 1e-3 * 0.5 / (0.5 + 1e-8)));
  CHECK(p[1] == doctest::Approx(-2.0 + 1e-3 * 0.1 / (0.1 + 1e-8)));
  g = {0.25, 0.3};
  adam.step<double>(ps, gs);
  const double m = 0.9 * 0.05 + 0.1 * 0.25;
  const double v = 0.999 * 0.001 * 0.25 + 0.001 * 0.0625;
  CHECK(adam.first_moments()[0][0] == doctest::Approx(m));
  CHECK(adam.second_moments()[0][0] == doctest::Approx(v));
  const double mhat = m / (1 - 0.81);
  const double vhat = v / (1 - 0.999 * 0.999);
  CHECK(p[0] == doctest::Approx(1.0 - 1e-3 * 0.5 / (0.5 + 1e-8) - 1e-3 * mhat / (std::sqrt(vhat) + 1e-8)));
  CHECK(adam.step_count() == 2);
}

TEST_CASE("Adam rejects bad configuration") {
  CHECK_THROWS_AS(Adam(AdamConfig{0.0}), ConfigError);
  Adam adam;
  std::vector<double> p{1.0}, g{1.0, 2.0};
  std::vector<std::span<double>> ps{p}, gs{g};
  CHECK_THROWS_AS(adam.step<double>(ps, gs), ConfigError);
  CHECK_THROWS_AS(adam.set_lr(-1), ConfigError);
}

TEST_CASE("plateau schedule halves after five flat epochs") {
  PlateauSchedule s;
  s.best = 1.0;
  for (int e = 1; e <= 4; ++e) CHECK_FALSE(s.update(1.0));
  CHECK(s.update(1.0));
  CHECK(s.lr == doctest::Approx(5e-4));
  CHECK(s.counter == 0);
  CHECK_FALSE(s.update(0.9));
  CHECK(s.best == 0.9);
  for (int e = 1; e <= 4; ++e) CHECK_FALSE(s.update(0.95));
  CHECK(s.update(0.9));
  CHECK(s.lr == doctest::Approx(2.5e-4));
  CHECK_THROWS_AS(s.update(std::nan("")), NumericError);
}
