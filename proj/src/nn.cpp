// SPDX-License-Identifier: Apache-2.0
#include "shiftadd/nn.hpp"

namespace shiftadd {

VectorX<double> softmax_temperature(const VectorX<double> &logits,
                                    double temperature) {
  if (!(temperature > 0) || !std::isfinite(temperature))
    throw DomainError("softmax temperature must be a positive finite real");
  if (logits.size() == 0) throw DomainError("softmax of an empty vector");
  if (!logits.allFinite()) throw DomainError("softmax: non-finite logit");
  const VectorX<double> scaled = logits / temperature;
  const double top = scaled.maxCoeff();
  VectorX<double> e = (scaled.array() - top).exp().matrix();
  return e / e.sum();
}

std::vector<double> softmax_temperature(std::span<const double> logits,
                                        double temperature) {
  const VectorX<double> v = Eigen::Map<const VectorX<double>>(
      logits.data(), static_cast<Eigen::Index>(logits.size()));
  const VectorX<double> s = softmax_temperature(v, temperature);
  return {s.data(), s.data() + s.size()};
}

}  // namespace shiftadd
