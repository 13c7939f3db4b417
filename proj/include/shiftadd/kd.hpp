// SPDX-License-Identifier: Apache-2.0
#pragma once

#include "shiftadd/model.hpp"

namespace shiftadd {

/// Weighting and temperature of the distillation loss
///   alpha * CE(student, label) + (1 - alpha) * KL(p_teacher || p_student),
/// with p = softmax(logits / T). The KL term is unscaled unless
/// `scale_kl_by_t2` is set.
struct KDConfig {
  double alpha = 0.1;
  double temperature = 5.0;
  bool scale_kl_by_t2 = false;

  void validate() const;
};

/// -log softmax(logits)[label], in log-sum-exp form.
double cross_entropy(const VectorX<double> &logits, int label);

/// KL(softmax(teacher/T) || softmax(student/T)).
double kl_divergence_tempered(const VectorX<double> &student,
                              const VectorX<double> &teacher, double temperature);

double kd_loss(const VectorX<double> &student, const VectorX<double> &teacher,
               int label, const KDConfig &cfg);

/// d kd_loss / d student_logits.
VectorX<double> kd_loss_gradient(const VectorX<double> &student,
                                 const VectorX<double> &teacher, int label,
                                 const KDConfig &cfg);

/// d cross_entropy / d logits = softmax(logits) - onehot(label).
VectorX<double> cross_entropy_gradient(const VectorX<double> &logits, int label);

}  // namespace shiftadd
