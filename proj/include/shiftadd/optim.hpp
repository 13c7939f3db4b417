// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cmath>
#include <limits>
#include <span>
#include <vector>

#include "shiftadd/errors.hpp"

namespace shiftadd {

struct AdamConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

/// Adam with bias correction. Moments are kept in double whatever the
/// parameter type.
class Adam {
 public:
  explicit Adam(AdamConfig cfg = {}) : cfg_(cfg) {
    if (!(cfg.lr > 0)) throw ConfigError("learning rate must be > 0");
  }

  template <typename Scalar>
  void step(std::span<const std::span<Scalar>> params,
            std::span<const std::span<Scalar>> grads) {
    if (params.size() != grads.size())
      throw ConfigError("adam: parameter and gradient lists differ in length");
    if (m_.empty()) {
      for (const auto &p : params) {
        m_.emplace_back(p.size(), 0.0);
        v_.emplace_back(p.size(), 0.0);
      }
    }
    if (m_.size() != params.size()) throw ConfigError("adam: parameter set changed");
    ++step_;
    const double c1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(step_));
    const double c2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(step_));
    for (std::size_t t = 0; t < params.size(); ++t) {
      if (params[t].size() != grads[t].size() || params[t].size() != m_[t].size())
        throw ConfigError("adam: tensor shape mismatch");
      for (std::size_t i = 0; i < params[t].size(); ++i) {
        const double g = static_cast<double>(grads[t][i]);
        double &m = m_[t][i];
        double &v = v_[t][i];
        m = cfg_.beta1 * m + (1 - cfg_.beta1) * g;
        v = cfg_.beta2 * v + (1 - cfg_.beta2) * g * g;
        const double update = cfg_.lr * (m / c1) / (std::sqrt(v / c2) + cfg_.epsilon);
        params[t][i] = static_cast<Scalar>(static_cast<double>(params[t][i]) - update);
      }
    }
  }

  double lr() const { return cfg_.lr; }
  void set_lr(double lr) {
    if (!(lr > 0)) throw ConfigError("learning rate must be > 0");
    cfg_.lr = lr;
  }
  long step_count() const { return step_; }
  const std::vector<std::vector<double>> &first_moments() const { return m_; }
  const std::vector<std::vector<double>> &second_moments() const { return v_; }

 private:
  AdamConfig cfg_;
  long step_ = 0;
  std::vector<std::vector<double>> m_, v_;
};

/// Halves the learning rate when the epoch training loss has not strictly
/// improved on the best value for `patience` consecutive epochs. The best
/// value starts at the loss of the untrained model when one is supplied.
struct PlateauSchedule {
  double lr = 1e-3;
  int patience = 5;
  double factor = 0.5;
  double best = std::numeric_limits<double>::infinity();
  int counter = 0;

  /// Returns true when the learning rate was reduced.
  bool update(double epoch_loss) {
    if (!std::isfinite(epoch_loss)) throw NumericError("non-finite epoch loss");
    if (epoch_loss < best) {
      best = epoch_loss;
      counter = 0;
      return false;
    }
    if (++counter >= patience) {
      lr *= factor;
      counter = 0;
      return true;
    }
    return false;
  }
};

}  // namespace shiftadd
