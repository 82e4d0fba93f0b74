#pragma once

#include <stdexcept>

#include "hta/tensor.hpp"

namespace hta {

struct ProxParams {
  double lambda = 0.0;   // regularization weight
  double step_len = 1.0; // 1/L, the reciprocal Lipschitz surrogate

  void validate() const {
    if (!(lambda >= 0.0))
      throw std::invalid_argument("ProxParams: lambda must be >= 0");
    if (!(step_len > 0.0))
      throw std::invalid_argument("ProxParams: step_len must be > 0");
  }
};

/// Gradient shift s = delta - step_len * grad, the point the prox acts on.
inline Tensor shifted_point(const Tensor& delta, const Tensor& grad,
                            double step_len) {
  check_same_shape(delta, grad, "shifted_point");
  if (!(step_len > 0.0))
    throw std::invalid_argument("shifted_point: step_len must be > 0");
  Tensor out(delta.shape());
  for (std::size_t i = 0; i < out.size(); ++i)
    out[i] = delta[i] - step_len * grad[i];
  return out;
}

/// Exact minimizer of (L/2)||d - s||^2 + lambda*||d||_0 + I_[l,u](d) with
/// L = 1/step_len. Per entry: keep the clamped value when
/// s_i^2 - (clamp(s_i) - s_i)^2 > 2*lambda/L, otherwise zero. The inequality
/// is strict; ties zero the entry.
inline Tensor prox_l0_box(const Tensor& s, const BoxBounds& b,
                          const ProxParams& p) {
  check_same_shape(s, b.lower(), "prox_l0_box");
  p.validate();
  const double threshold = 2.0 * p.lambda * p.step_len; // == 2*lambda/L
  Tensor out(s.shape());
  for (std::size_t i = 0; i < s.size(); ++i) {
    const double pi = b.clamp(i, s[i]);
    const double resid = pi - s[i];
    out[i] = (s[i] * s[i] - resid * resid > threshold) ? pi : 0.0;
  }
  return out;
}

/// Exact minimizer of (L/2)||d - s||^2 + lambda*||d||_{2,0} + I_[l,u](d).
/// Each group is kept as the clamped s restricted to it when
/// ||s_G||^2 - ||clamp(s)_G - s_G||^2 > 2*lambda/L, otherwise zeroed whole.
inline Tensor prox_group_l20_box(const Tensor& s, const BoxBounds& b,
                                 const GroupPartition& partition,
                                 const ProxParams& p) {
  check_same_shape(s, b.lower(), "prox_group_l20_box");
  check_partition(partition, s, "prox_group_l20_box");
  p.validate();
  const double threshold = 2.0 * p.lambda * p.step_len;
  Tensor out(s.shape());
  for (const auto& g : partition.groups()) {
    double s_sq = 0.0, resid_sq = 0.0;
    for (std::size_t i : g) {
      const double pi = b.clamp(i, s[i]);
      const double r = pi - s[i];
      s_sq += s[i] * s[i];
      resid_sq += r * r;
    }
    if (s_sq - resid_sq > threshold)
      for (std::size_t i : g) out[i] = b.clamp(i, s[i]);
  }
  return out;
}

}  // namespace hta
