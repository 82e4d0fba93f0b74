#pragma once

#include <cmath>
#include <stdexcept>
#include <string>

#include "hta/image_io.hpp"
#include "hta/tensor.hpp"

namespace hta {

/// Perturbation-position map for a 3-channel perturbation: each output
/// channel is full intensity where that channel is perturbed and 0 where it
/// is not. Black = untouched pixel, white = all three channels perturbed,
/// pure red/green/blue = one channel, additive mixes = two channels.
inline Tensor position_map(const Tensor& delta, double zero_tol = kZeroTol) {
  if (delta.shape().size() != 3 || delta.shape()[2] != 3)
    throw std::invalid_argument(
        "position_map: need an (H, W, 3) perturbation, got " +
        shape_to_string(delta.shape()));
  Tensor out(delta.shape());
  for (std::size_t i = 0; i < delta.size(); ++i)
    out[i] = std::abs(delta[i]) > zero_tol ? 1.0 : 0.0;
  return out;
}

inline void render_position_map(const Tensor& delta, const std::string& out_png,
                                double zero_tol = kZeroTol) {
  write_png(out_png, position_map(delta, zero_tol));
}

}  // namespace hta
