#pragma once

// Shared test utilities: random instance generators and the independent
// oracles (coordinate grids, finite differences, exhaustive support search)
// the suites check the library against. Everything here must stay independent
// of the implementation path it verifies.

#include <algorithm>
#include <cmath>
#include <limits>
#include <vector>

#include "hta/loss.hpp"
#include "hta/model.hpp"
#include "hta/rng.hpp"
#include "hta/tensor.hpp"

namespace testutil {

inline hta::Tensor random_tensor(hta::Rng& rng, std::size_t n, double lo,
                                 double hi) {
  hta::Tensor t(hta::Shape{n});
  for (std::size_t i = 0; i < n; ++i) t[i] = rng.uniform(lo, hi);
  return t;
}

// Random box with 0 in [l, u].
inline hta::BoxBounds random_box(hta::Rng& rng, std::size_t n, double scale) {
  hta::Tensor lo(hta::Shape{n}), hi(hta::Shape{n});
  for (std::size_t i = 0; i < n; ++i) {
    lo[i] = -rng.uniform(0.0, scale);
    hi[i] = rng.uniform(0.0, scale);
  }
  return hta::BoxBounds(std::move(lo), std::move(hi));
}

// Scalar branch objective of the elementwise prox: (L/2)(d - s)^2 + lambda*[d != 0].
inline double prox_pointwise_objective(double d, double s, double lambda,
                                       double L) {
  return 0.5 * L * (d - s) * (d - s) + (d != 0.0 ? lambda : 0.0);
}

// Brute-force minimum of the scalar prox objective over {0, clamp(s)} plus a
// uniform grid over [lo, hi].
inline double prox_grid_minimum(double s, double lo, double hi, double lambda,
                                double L, int grid_points = 1001) {
  double best = prox_pointwise_objective(0.0, s, lambda, L);
  const double pi = std::min(std::max(s, lo), hi);
  best = std::min(best, prox_pointwise_objective(pi, s, lambda, L));
  for (int g = 0; g < grid_points; ++g) {
    const double d = lo + (hi - lo) * static_cast<double>(g) /
                              static_cast<double>(grid_points - 1);
    best = std::min(best, prox_pointwise_objective(d, s, lambda, L));
  }
  return best;
}

// Central finite-difference gradient of a loss at delta, one coordinate.
inline double central_difference(const hta::SmoothLoss& loss,
                                 const hta::Tensor& delta, std::size_t i,
                                 double h) {
  hta::Tensor plus = delta, minus = delta;
  plus[i] += h;
  minus[i] -= h;
  return (loss.evaluate(plus).value - loss.evaluate(minus).value) / (2.0 * h);
}

// Relative l2 error between the analytic gradient and central differences on
// a coordinate subset.
inline double gradient_check(const hta::SmoothLoss& loss,
                             const hta::Tensor& delta,
                             const std::vector<std::size_t>& coords,
                             double h = 1e-5) {
  const hta::LossEval ev = loss.evaluate(delta);
  double num = 0.0, den = 0.0;
  for (std::size_t i : coords) {
    const double fd = central_difference(loss, delta, i, h);
    const double d = fd - ev.grad[i];
    num += d * d;
    den += fd * fd;
  }
  if (den == 0.0) return std::sqrt(num);
  return std::sqrt(num / den);
}

// Independent layer-stack evaluation with different loop structure from
// Model::forward, for the dual-implementation check.
inline std::vector<double> naive_forward(const hta::Model& m,
                                         const hta::Tensor& x) {
  std::vector<double> cur(x.data().begin(), x.data().end());
  hta::Shape shape = x.shape();
  for (const hta::Layer& l : m.layers()) {
    if (const auto* a = std::get_if<hta::AffineLayer>(&l)) {
      std::vector<double> next(a->out_dim, 0.0);
      for (std::size_t i = 0; i < a->in_dim; ++i)
        for (std::size_t o = 0; o < a->out_dim; ++o)
          next[o] += a->weights[o * a->in_dim + i] * cur[i];
      for (std::size_t o = 0; o < a->out_dim; ++o) next[o] += a->bias[o];
      cur = std::move(next);
      shape = {a->out_dim};
    } else if (std::holds_alternative<hta::ReluLayer>(l)) {
      for (double& v : cur) v = std::max(0.0, v);
    } else if (std::holds_alternative<hta::FlattenLayer>(l)) {
      shape = {cur.size()};
    } else {
      const auto& c = std::get<hta::Conv2dLayer>(l);
      const std::size_t oh = c.out_h(), ow = c.out_w();
      std::vector<double> next(oh * ow * c.out_c, 0.0);
      // channel-major accumulation order, unlike the library's spatial-major
      for (std::size_t o = 0; o < c.out_c; ++o)
        for (std::size_t ch = 0; ch < c.in_c; ++ch)
          for (std::size_t di = 0; di < c.kernel; ++di)
            for (std::size_t dj = 0; dj < c.kernel; ++dj) {
              const double w =
                  c.weights[((o * c.kernel + di) * c.kernel + dj) * c.in_c + ch];
              for (std::size_t i = 0; i < oh; ++i)
                for (std::size_t j = 0; j < ow; ++j)
                  next[(i * ow + j) * c.out_c + o] +=
                      w * cur[((i + di) * c.in_w + (j + dj)) * c.in_c + ch];
            }
      for (std::size_t i = 0; i < oh * ow; ++i)
        for (std::size_t o = 0; o < c.out_c; ++o) next[i * c.out_c + o] += c.bias[o];
      cur = std::move(next);
      shape = {oh, ow, c.out_c};
    }
  }
  return cur;
}

// Random small MLP with weights scaled to keep logits O(1), so loss
// gradients stay healthy for finite-difference checks.
inline hta::Model random_mlp(hta::Rng& rng, const hta::Shape& input,
                             std::size_t hidden, std::size_t classes,
                             double weight_scale = 0.2) {
  const std::size_t n = hta::shape_size(input);
  hta::AffineLayer a1{n, hidden, std::vector<double>(n * hidden),
                      std::vector<double>(hidden)};
  for (double& w : a1.weights) w = rng.uniform(-weight_scale, weight_scale) /
                                   std::sqrt(static_cast<double>(n));
  for (double& b : a1.bias) b = rng.uniform(-0.1, 0.1);
  hta::AffineLayer a2{hidden, classes, std::vector<double>(hidden * classes),
                      std::vector<double>(classes)};
  for (double& w : a2.weights) w = rng.uniform(-weight_scale, weight_scale) /
                                   std::sqrt(static_cast<double>(hidden));
  for (double& b : a2.bias) b = rng.uniform(-0.1, 0.1);
  std::vector<hta::Layer> layers;
  layers.emplace_back(hta::FlattenLayer{});
  layers.emplace_back(std::move(a1));
  layers.emplace_back(hta::ReluLayer{});
  layers.emplace_back(std::move(a2));
  return hta::Model(input, std::move(layers));
}

// Box-constrained diagonal quadratic f(d) = 0.5 * sum q_i (d_i - a_i)^2; the
// exact box-constrained minimizer is the coordinate-wise clamp of a.
class DiagQuadratic : public hta::SmoothLoss {
 public:
  DiagQuadratic(hta::Tensor q, hta::Tensor a) : q_(std::move(q)), a_(std::move(a)) {}

  hta::LossEval evaluate(const hta::Tensor& d) const override {
    hta::LossEval ev;
    ev.grad = hta::Tensor(d.shape());
    for (std::size_t i = 0; i < d.size(); ++i) {
      const double r = d[i] - a_[i];
      ev.value += 0.5 * q_[i] * r * r;
      ev.grad[i] = q_[i] * r;
    }
    return ev;
  }

  double min_over_box(const hta::BoxBounds& b) const {
    double acc = 0.0;
    for (std::size_t i = 0; i < a_.size(); ++i) {
      const double d = b.clamp(i, a_[i]) - a_[i];
      acc += 0.5 * q_[i] * d * d;
    }
    return acc;
  }

  const hta::Tensor& target() const { return a_; }

 private:
  hta::Tensor q_, a_;
};

// Fixed linear loss f(d) = g . d, used by the weight-search threshold tests.
class LinearLoss : public hta::SmoothLoss {
 public:
  explicit LinearLoss(hta::Tensor g) : g_(std::move(g)) {}
  hta::LossEval evaluate(const hta::Tensor& d) const override {
    return hta::LossEval{hta::dot(g_, d), g_};
  }

 private:
  hta::Tensor g_;
};

// 4-dimensional affine two-class toy instance whose minimum-support attack
// can be found by exhaustive search over all 15 supports.
struct ToyInstance {
  hta::Model model;
  hta::Tensor x0;
  int y0;     // predicted (true) class
  int target; // the other class
};

inline ToyInstance make_toy(hta::Rng& rng) {
  while (true) {
    hta::AffineLayer a{4, 2, std::vector<double>(8), std::vector<double>(2)};
    for (double& w : a.weights) w = rng.uniform(-1.0, 1.0);
    for (double& b : a.bias) b = rng.uniform(-0.3, 0.3);
    hta::Model model(hta::Shape{4}, {hta::Layer{std::move(a)}});
    hta::Tensor x0(hta::Shape{4});
    for (std::size_t i = 0; i < 4; ++i) x0[i] = rng.uniform(0.2, 0.8);
    const int y0 = hta::predict_class(model, x0);
    ToyInstance inst{std::move(model), std::move(x0), y0, 1 - y0};
    // keep instances away from a decision-boundary tie
    const hta::Tensor logits = inst.model.forward(inst.x0);
    if (std::abs(logits[0] - logits[1]) > 1e-3) return inst;
  }
}

// True iff perturbing exactly the entries of `support` (within the box) can
// reach the target class; affine model, so the best margin is attained at a
// box corner.
inline bool toy_support_attackable(const ToyInstance& inst,
                                   const hta::BoxBounds& box,
                                   unsigned support_mask) {
  const auto& a = std::get<hta::AffineLayer>(inst.model.layers()[0]);
  const std::size_t t = static_cast<std::size_t>(inst.target);
  const std::size_t y = static_cast<std::size_t>(inst.y0);
  double margin = a.bias[t] - a.bias[y];
  for (std::size_t i = 0; i < 4; ++i) {
    const double d = a.weights[t * 4 + i] - a.weights[y * 4 + i];
    margin += d * inst.x0[i];
    if (support_mask & (1u << i))
      margin += std::max(d * box.lower()[i], d * box.upper()[i]);
  }
  // argmax ties break toward the lower class index
  return inst.target < inst.y0 ? margin >= 0.0 : margin > 0.0;
}

// Exhaustive minimum support size over all 15 nonempty supports; 0 when the
// benign point already flips, 5 when no support works.
inline std::size_t toy_brute_force_min_l0(const ToyInstance& inst,
                                          double epsilon) {
  const hta::BoxBounds box = hta::compute_box_bounds(inst.x0, epsilon);
  if (toy_support_attackable(inst, box, 0u)) return 0;
  std::size_t best = 5;
  for (unsigned mask = 1; mask < 16; ++mask) {
    if (!toy_support_attackable(inst, box, mask)) continue;
    best = std::min(best, static_cast<std::size_t>(__builtin_popcount(mask)));
  }
  return best;
}

}  // namespace testutil
