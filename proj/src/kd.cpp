// SPDX-License-Identifier: Apache-2.0
#include "shiftadd/kd.hpp"

#include <cmath>
#include <string>

#include "shiftadd/nn.hpp"

namespace shiftadd {

namespace {

void check_label(const VectorX<double> &logits, int label) {
  if (label < 0 || label >= logits.size())
    throw DomainError("label " + std::to_string(label) + " outside [0, " +
                      std::to_string(logits.size()) + ")");
}

VectorX<double> log_softmax(const VectorX<double> &x) {
  if (!x.allFinite()) throw DomainError("non-finite logit");
  const double top = x.maxCoeff();
  const double lse = top + std::log((x.array() - top).exp().sum());
  return (x.array() - lse).matrix();
}

}  // namespace

void KDConfig::validate() const {
  if (!(alpha >= 0.0 && alpha <= 1.0))
    throw DomainError("kd alpha must lie in [0, 1]");
  if (!(temperature > 0.0) || !std::isfinite(temperature))
    throw DomainError("kd temperature must be > 0");
}

double cross_entropy(const VectorX<double> &logits, int label) {
  check_label(logits, label);
  return -log_softmax(logits)(label);
}

double kl_divergence_tempered(const VectorX<double> &student,
                              const VectorX<double> &teacher,
                              double temperature) {
  if (student.size() != teacher.size())
    throw ConfigError("kd: student has " + std::to_string(student.size()) +
                      " logits, teacher has " + std::to_string(teacher.size()));
  if (!(temperature > 0.0)) throw DomainError("kd temperature must be > 0");
  const VectorX<double> log_pt = log_softmax(teacher / temperature);
  const VectorX<double> log_ps = log_softmax(student / temperature);
  double kl = 0.0;
  for (Eigen::Index i = 0; i < log_pt.size(); ++i) {
    const double pt = std::exp(log_pt(i));
    if (pt > 0.0) kl += pt * (log_pt(i) - log_ps(i));
  }
  return kl;
}

double kd_loss(const VectorX<double> &student, const VectorX<double> &teacher,
               int label, const KDConfig &cfg) {
  cfg.validate();
  if (student.size() != teacher.size())
    throw ConfigError("kd: student has " + std::to_string(student.size()) +
                      " logits, teacher has " + std::to_string(teacher.size()));
  const double ce = cross_entropy(student, label);
  if (cfg.alpha == 1.0) return ce;
  double kl = kl_divergence_tempered(student, teacher, cfg.temperature);
  if (cfg.scale_kl_by_t2) kl *= cfg.temperature * cfg.temperature;
  return cfg.alpha * ce + (1.0 - cfg.alpha) * kl;
}

VectorX<double> cross_entropy_gradient(const VectorX<double> &logits,
                                       int label) {
  check_label(logits, label);
  VectorX<double> g = softmax_temperature(logits, 1.0);
  g(label) -= 1.0;
  return g;
}

VectorX<double> kd_loss_gradient(const VectorX<double> &student,
                                 const VectorX<double> &teacher, int label,
                                 const KDConfig &cfg) {
  cfg.validate();
  if (student.size() != teacher.size())
    throw ConfigError("kd: student/teacher logit length mismatch");
  VectorX<double> g = cfg.alpha * cross_entropy_gradient(student, label);
  if (cfg.alpha == 1.0) return g;
  const double t = cfg.temperature;
  double kl_scale = (1.0 - cfg.alpha) / t;
  if (cfg.scale_kl_by_t2) kl_scale *= t * t;
  g += kl_scale * (softmax_temperature(student, t) - softmax_temperature(teacher, t));
  return g;
}

}  // namespace shiftadd
