#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "hta/loss.hpp"
#include "hta/prox.hpp"
#include "hta/tensor.hpp"

namespace hta {

// Nonmonotone accelerated proximal gradient solver for
//   F(d) = f(x0 + d) + lambda * (||d||_0 or ||d||_{2,0}) + I_[l,u](d).
// Steps are accepted against a decaying average c_k of past objective values
// instead of strict descent; a monitor step falls back to a plain proximal
// step from x_k whenever the extrapolated candidate fails the c_k test.

struct NmapgParams {
  double eta = 0.8;           // nonmonotone averaging weight, in [0, 1)
  double descent_delta = 1e-5; // sufficient-descent coefficient
  double rho = 0.5;           // line-search shrink factor, in (0, 1)
  std::size_t max_iter = 50;
  double step_init = 1.0;     // fallback step when no BB history exists
  double step_min = 1e-8;     // BB step clamp
  double step_max = 1e8;

  void validate() const {
    if (!(eta >= 0.0 && eta < 1.0))
      throw std::invalid_argument("NmapgParams: eta must be in [0, 1)");
    if (!(descent_delta > 0.0))
      throw std::invalid_argument("NmapgParams: descent_delta must be > 0");
    if (!(rho > 0.0 && rho < 1.0))
      throw std::invalid_argument("NmapgParams: rho must be in (0, 1)");
    if (max_iter == 0)
      throw std::invalid_argument("NmapgParams: max_iter must be >= 1");
    if (!(step_init > 0.0))
      throw std::invalid_argument("NmapgParams: step_init must be > 0");
    if (!(step_min > 0.0 && step_min <= step_max))
      throw std::invalid_argument("NmapgParams: need 0 < step_min <= step_max");
  }
};

enum class SparsityMode { kElement, kGroup };

/// The composite objective the solver minimizes. Group mode requires a
/// partition; the indicator of the box makes F infinite outside it.
struct CompositeObjective {
  const SmoothLoss* loss = nullptr;
  double lambda = 0.0;
  const BoxBounds* bounds = nullptr;
  SparsityMode mode = SparsityMode::kElement;
  const GroupPartition* partition = nullptr;
  double zero_tol = kZeroTol;

  void validate() const {
    if (!loss || !bounds)
      throw std::invalid_argument("CompositeObjective: loss and bounds required");
    if (!(lambda >= 0.0))
      throw std::invalid_argument("CompositeObjective: lambda must be >= 0");
    if (mode == SparsityMode::kGroup && !partition)
      throw std::invalid_argument("CompositeObjective: group mode needs a partition");
  }

  std::size_t sparsity_count(const Tensor& d) const {
    return mode == SparsityMode::kElement
               ? l0_count(d, zero_tol)
               : group_l20_count(d, *partition, zero_tol);
  }

  double penalty(const Tensor& d) const {
    return lambda * static_cast<double>(sparsity_count(d));
  }

  // F at a point whose smooth part is already known.
  double composite_value(double f_value, const Tensor& d) const {
    if (!bounds->contains(d)) return std::numeric_limits<double>::infinity();
    return f_value + penalty(d);
  }

  Tensor prox(const Tensor& s, double step_len) const {
    const ProxParams p{lambda, step_len};
    return mode == SparsityMode::kElement
               ? prox_l0_box(s, *bounds, p)
               : prox_group_l20_box(s, *bounds, *partition, p);
  }
};

/// Cap on how far the sparsity count may grow inside one solver call: after
/// every accepted iterate, at most base_l0 + budget entries (or groups) stay.
struct TruncationPolicy {
  bool enabled = true;
  std::size_t base_l0 = 0; // r: sparsity of the input perturbation
  std::size_t budget = 0;  // v: allowed growth

  static TruncationPolicy none() { return TruncationPolicy{false, 0, 0}; }

  std::size_t cap() const { return base_l0 + budget; }

  Tensor apply(const Tensor& d, const CompositeObjective& obj) const {
    if (!enabled) return d;
    return obj.mode == SparsityMode::kElement
               ? truncate_top_k(d, cap())
               : truncate_top_k_groups(d, *obj.partition, cap());
  }
};

enum class StepBranch {
  kExtrapolated, // z passed the monitor test directly
  kMonitorZ,     // monitor ran; z still won the argmin
  kMonitorV,     // monitor ran; the x_k proximal step won
};

inline const char* step_branch_name(StepBranch b) {
  switch (b) {
    case StepBranch::kExtrapolated: return "z";
    case StepBranch::kMonitorZ: return "mz";
    case StepBranch::kMonitorV: return "mv";
  }
  return "?";
}

struct IterRecord {
  std::size_t iter = 0;     // 1-based
  double F = 0.0;           // composite objective at the accepted iterate
  double f = 0.0;           // smooth part at the accepted iterate
  std::size_t sparsity = 0; // l0 (element mode) or group count (group mode)
  double step = 0.0;        // step length of the winning branch
  StepBranch branch = StepBranch::kExtrapolated;
  bool stalled = false;     // winning line search hit the shrink cap
  double c = 0.0;           // nonmonotone average after the update
  bool z_passed_monitor = false;
  std::size_t cap = SIZE_MAX; // truncation cap in effect (SIZE_MAX = none)
};

struct NmapgTrace {
  std::vector<IterRecord> iters;
};

struct NmapgResult {
  Tensor delta;
  double objective = 0.0; // F at the final iterate
  std::size_t iterations = 0;
  bool converged = false; // early-stopped on the iterate-change tolerance
};

inline constexpr double kIterateChangeTol = 1e-9;
inline constexpr int kLineSearchMaxShrinks = 60;

/// BB step length clamp(<dx,dx>/<dx,dg>) with fallback to step_init whenever
/// the curvature estimate is unusable (nonpositive or degenerate).
inline double bb_step(const Tensor& dx, const Tensor& dg,
                      const NmapgParams& params) {
  const double num = dot(dx, dx);
  const double den = dot(dx, dg);
  if (!(num > 0.0) || !(den > 0.0) || !std::isfinite(num) || !std::isfinite(den))
    return params.step_init;
  return std::clamp(num / den, params.step_min, params.step_max);
}

struct LineSearchResult {
  Tensor candidate;
  double step_used = 0.0;
  double F = 0.0;     // composite value at the candidate
  double f = 0.0;     // smooth part at the candidate
  Tensor grad;        // gradient at the candidate (free byproduct)
  bool accepted = false;
};

namespace detail {

inline LossEval checked_eval(const SmoothLoss& loss, const Tensor& point) {
  LossEval ev = loss.evaluate(point);
  if (!std::isfinite(ev.value) || !all_finite(ev.grad))
    throw std::runtime_error("nmapg: loss oracle returned a non-finite value");
  return ev;
}

}  // namespace detail

/// Backtracking proximal line search from `point`: try
/// prox(point - alpha * grad_f(point)) for alpha = alpha_init * rho^j until
/// F(candidate) <= anchor_value - descent_delta * ||candidate - point||^2.
/// After kLineSearchMaxShrinks shrinks the best candidate seen is returned
/// with accepted = false, signalling a critical point or tolerance floor.
inline LineSearchResult line_search_prox_step(
    const Tensor& point, const CompositeObjective& obj, double anchor_value,
    const NmapgParams& params, double alpha_init,
    const LossEval* eval_at_point = nullptr) {
  obj.validate();
  params.validate();
  LossEval base;
  if (eval_at_point == nullptr) {
    base = detail::checked_eval(*obj.loss, point);
    eval_at_point = &base;
  }
  const Tensor& g = eval_at_point->grad;
  std::optional<LineSearchResult> best;
  double alpha = alpha_init;
  for (int j = 0; j <= kLineSearchMaxShrinks; ++j, alpha *= params.rho) {
    Tensor cand = obj.prox(shifted_point(point, g, alpha), alpha);
    LossEval ev = detail::checked_eval(*obj.loss, cand);
    const double Fc = ev.value + obj.penalty(cand); // candidate is feasible
    const double dist2 = sum_sq_dist(cand, point);
    if (Fc <= anchor_value - params.descent_delta * dist2)
      return LineSearchResult{std::move(cand), alpha, Fc, ev.value,
                              std::move(ev.grad), true};
    if (!best || Fc < best->F)
      best = LineSearchResult{std::move(cand), alpha, Fc, ev.value,
                              std::move(ev.grad), false};
  }
  return std::move(*best);
}

/// Run the solver from delta0. Iteration k:
///   (a) extrapolate y from (x_k, x_{k-1}, z_k) with the usual t-sequence;
///   (b) z_{k+1} = proximal line search at y, anchored at max(F(y), c_k);
///   (c) monitor: accept z_{k+1} if F(z_{k+1}) <= c_k - delta*||z_{k+1}-y||^2,
///       else take the better of z_{k+1} and a proximal step from x_k;
///   (d) truncate the accepted iterate to the sparsity cap (never the
///       exploratory candidates, so the line search sees untruncated
///       geometry);
///   (e) update the t-sequence and the nonmonotone average c.
/// Stops after max_iter iterations or when the iterate moves less than
/// kIterateChangeTol in l_inf.
inline NmapgResult nmapg_solve(const Tensor& delta0,
                               const CompositeObjective& obj,
                               const NmapgParams& params,
                               const TruncationPolicy& trunc,
                               NmapgTrace* trace = nullptr) {
  obj.validate();
  params.validate();
  if (!obj.bounds->contains(delta0))
    throw std::invalid_argument("nmapg_solve: infeasible starting point");
  if (trunc.enabled && obj.sparsity_count(delta0) > trunc.base_l0)
    throw std::invalid_argument(
        "nmapg_solve: starting sparsity exceeds the policy's base count");

  Tensor x = delta0, x_prev = delta0, z = delta0;
  double t_prev = 0.0, t = 1.0;
  double F_x = obj.composite_value(detail::checked_eval(*obj.loss, x).value, x);
  double c = F_x, q = 1.0;

  // BB pairs come from successive line-search base points and their gradients.
  bool have_ls_hist = false;
  Tensor ls_base_prev, ls_grad_prev;

  NmapgResult result{x, F_x, 0, false};
  for (std::size_t k = 1; k <= params.max_iter; ++k) {
    // (a) extrapolation; degenerates to y = x at k = 1.
    Tensor y(x.shape());
    {
      const double a = t_prev / t, b = (t_prev - 1.0) / t;
      for (std::size_t i = 0; i < y.size(); ++i)
        y[i] = x[i] + a * (z[i] - x[i]) + b * (x[i] - x_prev[i]);
    }
    LossEval ev_y = detail::checked_eval(*obj.loss, y);
    const double F_y = obj.composite_value(ev_y.value, y);
    const double anchor_z = std::max(F_y, c);
    const double alpha_z =
        have_ls_hist ? bb_step(sub(y, ls_base_prev), sub(ev_y.grad, ls_grad_prev), params)
                     : params.step_init;
    ls_base_prev = y;
    ls_grad_prev = ev_y.grad;
    have_ls_hist = true;

    // (b) exploratory step from the extrapolated point.
    LineSearchResult zr =
        line_search_prox_step(y, obj, anchor_z, params, alpha_z, &ev_y);

    // (c) monitor against the nonmonotone average.
    Tensor accepted;
    double F_acc, f_acc, step_used;
    StepBranch branch;
    bool stalled;
    const bool z_ok =
        zr.F <= c - params.descent_delta * sum_sq_dist(zr.candidate, y);
    if (z_ok) {
      accepted = zr.candidate;
      F_acc = zr.F;
      f_acc = zr.f;
      step_used = zr.step_used;
      branch = StepBranch::kExtrapolated;
      stalled = !zr.accepted;
    } else {
      LossEval ev_x = detail::checked_eval(*obj.loss, x);
      const double alpha_v =
          bb_step(sub(x, ls_base_prev), sub(ev_x.grad, ls_grad_prev), params);
      ls_base_prev = x;
      ls_grad_prev = ev_x.grad;
      LineSearchResult vr =
          line_search_prox_step(x, obj, c, params, alpha_v, &ev_x);
      if (zr.F <= vr.F) {
        accepted = zr.candidate;
        F_acc = zr.F;
        f_acc = zr.f;
        step_used = zr.step_used;
        branch = StepBranch::kMonitorZ;
        stalled = !zr.accepted;
      } else {
        accepted = vr.candidate;
        F_acc = vr.F;
        f_acc = vr.f;
        step_used = vr.step_used;
        branch = StepBranch::kMonitorV;
        stalled = !vr.accepted;
      }
    }

    // (d) sparsity-change control on the accepted iterate only.
    Tensor x_next = trunc.apply(accepted, obj);
    if (!(x_next == accepted)) {
      const LossEval ev_t = detail::checked_eval(*obj.loss, x_next);
      f_acc = ev_t.value;
      F_acc = ev_t.value + obj.penalty(x_next);
    }

    if (!obj.bounds->contains(x_next))
      throw std::logic_error("nmapg_solve: accepted iterate left the box");
    const std::size_t sparsity = obj.sparsity_count(x_next);
    if (trunc.enabled && sparsity > trunc.cap())
      throw std::logic_error("nmapg_solve: sparsity cap violated");

    // (e) t-sequence and nonmonotone average updates.
    const double t_next = (std::sqrt(4.0 * t * t + 1.0) + 1.0) / 2.0;
    const double q_next = params.eta * q + 1.0;
    c = (params.eta * q * c + F_acc) / q_next;
    q = q_next;

    if (trace)
      trace->iters.push_back(IterRecord{k, F_acc, f_acc, sparsity, step_used,
                                        branch, stalled, c, z_ok,
                                        trunc.enabled ? trunc.cap() : SIZE_MAX});

    const bool small_move = linf_dist(x_next, x) < kIterateChangeTol;
    x_prev = std::move(x);
    x = std::move(x_next);
    z = std::move(zr.candidate);
    t_prev = t;
    t = t_next;
    F_x = F_acc;
    result.iterations = k;
    if (small_move) {
      result.converged = true;
      break;
    }
  }
  result.delta = std::move(x);
  result.objective = F_x;
  return result;
}

}  // namespace hta
