#pragma once

#include <chrono>
#include <cmath>
#include <cstddef>
#include <limits>
#include <stdexcept>
#include <string>
#include <vector>

#include "hta/loss.hpp"
#include "hta/nmapg.hpp"
#include "hta/tensor.hpp"

namespace hta {

// Outer attack driver: search the initial regularization weight, then loop
// nmAPG stages over a decreasing weight, with a sparsity-change budget per
// stage and an optional support-restricted "push" stage that fires when the
// perturbation's average magnitude falls under a fraction of the budget.

struct HomotopyParams {
  double c = 10.0;          // initial-weight multiplier, > 1
  std::size_t v = 12;       // sparsity growth budget per stage
  double beta = 1e-2;       // coarse search increment
  double gamma = 0.9;       // trigger threshold, in (0, 1)
  double lambda_decay = 0.75;
  double fine_decay = 0.5;  // fine-phase decrease factor
  std::size_t v_small = 1;  // temporary budget while triggered
  std::size_t max_outer = 200;

  void validate() const {
    if (!(c > 1.0)) throw std::invalid_argument("HomotopyParams: c must be > 1");
    if (v == 0) throw std::invalid_argument("HomotopyParams: v must be >= 1");
    if (!(beta > 0.0)) throw std::invalid_argument("HomotopyParams: beta must be > 0");
    if (!(gamma > 0.0 && gamma < 1.0))
      throw std::invalid_argument("HomotopyParams: gamma must be in (0, 1)");
    if (!(lambda_decay > 0.0 && lambda_decay < 1.0))
      throw std::invalid_argument("HomotopyParams: lambda_decay must be in (0, 1)");
    if (!(fine_decay > 0.0 && fine_decay < 1.0))
      throw std::invalid_argument("HomotopyParams: fine_decay must be in (0, 1)");
    if (v_small == 0 || v_small > v)
      throw std::invalid_argument("HomotopyParams: need 1 <= v_small <= v");
    if (max_outer == 0)
      throw std::invalid_argument("HomotopyParams: max_outer must be >= 1");
  }
};

enum class PushNorm { kL1, kL2, kLinf };

struct PostAttackParams {
  double w1 = 100.0; // adversarial-loss weight
  double w2 = 1.0;   // norm weight, w1/w2 >= 100
  PushNorm p = PushNorm::kL2;
  double step_size = 1e-3;
  double iters_per_l0 = 1.0; // iteration count = ceil(iters_per_l0 * l0)

  void validate() const {
    if (!(w1 > 0.0 && w2 > 0.0))
      throw std::invalid_argument("PostAttackParams: w1, w2 must be > 0");
    if (!(w1 / w2 >= 100.0))
      throw std::invalid_argument("PostAttackParams: need w1/w2 >= 100");
    if (!(step_size > 0.0))
      throw std::invalid_argument("PostAttackParams: step_size must be > 0");
    if (!(iters_per_l0 > 0.0))
      throw std::invalid_argument("PostAttackParams: iters_per_l0 must be > 0");
  }
};

enum class AttackMode { kFull, kPureHomotopy, kNmapgOnly };

inline const char* attack_mode_name(AttackMode m) {
  switch (m) {
    case AttackMode::kFull: return "full";
    case AttackMode::kPureHomotopy: return "pure_homotopy";
    case AttackMode::kNmapgOnly: return "nmapg_only";
  }
  return "?";
}

inline AttackMode attack_mode_from_string(const std::string& s) {
  if (s == "full") return AttackMode::kFull;
  if (s == "pure_homotopy") return AttackMode::kPureHomotopy;
  if (s == "nmapg_only") return AttackMode::kNmapgOnly;
  throw std::invalid_argument("unknown attack mode '" + s + "'");
}

struct AttackReport {
  bool success = false;
  Tensor delta;
  NormReport norms;
  std::size_t group_l20 = 0; // group-sparsity count (0 in element mode)
  std::size_t outer_iterations = 0;
  std::vector<double> lambda_path;
  std::size_t post_attack_invocations = 0;
  int predicted_class = -1;
  double wall_seconds = 0.0; // informational only; never serialized
};

/// Local-minimum trigger: true iff the perturbation is nonempty and its mean
/// absolute nonzero magnitude l1/l0 is at most epsilon * gamma. An empty
/// perturbation returns false (the ratio is undefined there).
inline bool trigger_check(const Tensor& delta, double epsilon, double gamma,
                          double zero_tol = kZeroTol) {
  const NormReport n = lp_norms(delta, zero_tol);
  if (n.l0 == 0) return false;
  return n.l1 / static_cast<double>(n.l0) <= epsilon * gamma;
}

namespace detail {

// One nmAPG iteration from delta = 0, the probe both phases of the initial
// weight search rely on.
inline Tensor single_iteration_probe(const SmoothLoss& oracle,
                                     const BoxBounds& bounds, double lambda,
                                     const HomotopyParams& hp,
                                     const NmapgParams& np, SparsityMode mode,
                                     const GroupPartition* partition,
                                     double zero_tol) {
  CompositeObjective obj{&oracle, lambda, &bounds, mode, partition, zero_tol};
  NmapgParams probe = np;
  probe.max_iter = 1;
  TruncationPolicy trunc{true, 0, hp.v};
  return nmapg_solve(Tensor(bounds.lower().shape()), obj, probe, trunc).delta;
}

inline void check_gradient_signal(const SmoothLoss& oracle,
                                  const Tensor& zero) {
  const LossEval ev = oracle.evaluate(zero);
  if (is_zero(ev.grad))
    throw std::runtime_error(
        "lambda_search: gradient vanishes at the benign image; "
        "the oracle gives no signal to threshold");
}

// Coarse phase of the weight search: grow lambda arithmetically until one
// nmAPG iteration leaves delta = 0 untouched.
inline double coarse_lambda_threshold(const SmoothLoss& oracle,
                                      const BoxBounds& bounds,
                                      const HomotopyParams& hp,
                                      const NmapgParams& np, SparsityMode mode,
                                      const GroupPartition* partition,
                                      double zero_tol) {
  check_gradient_signal(oracle, Tensor(bounds.lower().shape()));
  double lambda = hp.beta;
  const double cap = 1e6 * hp.beta;
  while (true) {
    const Tensor d1 = single_iteration_probe(oracle, bounds, lambda, hp, np,
                                             mode, partition, zero_tol);
    if (is_zero(d1)) return lambda;
    lambda += hp.beta;
    if (lambda > cap)
      throw std::runtime_error(
          "lambda_search: coarse phase exceeded its cap without zeroing the "
          "update; the oracle looks degenerate");
  }
}

}  // namespace detail

/// Initial weight search: raise lambda coarsely (increments of beta) until a
/// single nmAPG iteration from zero returns zero, then shrink it by
/// fine_decay until that iteration first updates again; the result is scaled
/// by c.
inline double lambda_search(const SmoothLoss& oracle, const BoxBounds& bounds,
                            const HomotopyParams& hp, const NmapgParams& np,
                            SparsityMode mode = SparsityMode::kElement,
                            const GroupPartition* partition = nullptr,
                            double zero_tol = kZeroTol) {
  hp.validate();
  np.validate();
  double lambda = detail::coarse_lambda_threshold(oracle, bounds, hp, np, mode,
                                                  partition, zero_tol);
  for (int fine = 0; fine < 4096; ++fine) {
    lambda *= hp.fine_decay;
    const Tensor d1 = detail::single_iteration_probe(oracle, bounds, lambda,
                                                     hp, np, mode, partition,
                                                     zero_tol);
    if (!is_zero(d1)) return hp.c * lambda;
  }
  throw std::runtime_error(
      "lambda_search: fine phase never produced an update; the oracle looks "
      "degenerate");
}

/// Support-restricted escape stage: gradient descent on
/// w1 * f(x0 + d) + w2 * ||d||_p over the nonzero entries of delta only,
/// projected into the box after every step. Zero entries never activate, so
/// the support can only shrink. Runs ceil(iters_per_l0 * l0) steps.
inline Tensor post_attack(const Tensor& delta, const SmoothLoss& oracle,
                          const BoxBounds& bounds, const PostAttackParams& pp,
                          double zero_tol = kZeroTol) {
  pp.validate();
  check_same_shape(delta, bounds.lower(), "post_attack");
  std::vector<std::size_t> support;
  for (std::size_t i = 0; i < delta.size(); ++i)
    if (std::abs(delta[i]) > zero_tol) support.push_back(i);
  if (support.empty()) return delta;

  const std::size_t iters = static_cast<std::size_t>(
      std::ceil(pp.iters_per_l0 * static_cast<double>(support.size())));
  Tensor d = delta;
  for (std::size_t it = 0; it < iters; ++it) {
    const LossEval ev = oracle.evaluate(d);
    Tensor push(d.shape());
    switch (pp.p) {
      case PushNorm::kL1:
        for (std::size_t i : support)
          push[i] = d[i] > 0.0 ? 1.0 : (d[i] < 0.0 ? -1.0 : 0.0);
        break;
      case PushNorm::kL2: {
        double norm = 0.0;
        for (std::size_t i : support) norm += d[i] * d[i];
        norm = std::sqrt(norm);
        if (norm > 0.0)
          for (std::size_t i : support) push[i] = d[i] / norm;
        break;
      }
      case PushNorm::kLinf: {
        // max-entry subgradient, lowest index on ties
        std::size_t arg = support[0];
        for (std::size_t i : support)
          if (std::abs(d[i]) > std::abs(d[arg])) arg = i;
        if (d[arg] != 0.0) push[arg] = d[arg] > 0.0 ? 1.0 : -1.0;
        break;
      }
    }
    for (std::size_t i : support)
      d[i] = bounds.clamp(i, d[i] - pp.step_size * (pp.w1 * ev.grad[i] +
                                                    pp.w2 * push[i]));
  }
  for (std::size_t i = 0; i < d.size(); ++i)
    if (std::abs(delta[i]) <= zero_tol && d[i] != 0.0)
      throw std::logic_error("post_attack: support grew");
  return d;
}

struct AttackProblem {
  const Model* model = nullptr;
  Tensor x0;
  AttackGoal goal;
  double epsilon = 0.05;
  SparsityMode sparsity = SparsityMode::kElement;
  const GroupPartition* partition = nullptr;
  double zero_tol = kZeroTol;
};

namespace detail {

inline void finalize_report(AttackReport& r, const LossOracle& oracle,
                            const BoxBounds& bounds, const AttackProblem& prob) {
  r.norms = lp_norms(r.delta, prob.zero_tol);
  if (prob.sparsity == SparsityMode::kGroup)
    r.group_l20 = group_l20_count(r.delta, *prob.partition, prob.zero_tol);
  r.predicted_class = oracle.predict_perturbed(r.delta);
  if (r.success && !prob.goal.satisfied_by(r.predicted_class))
    throw std::logic_error("attack report claims success but the goal fails");
  if (!bounds.contains(r.delta))
    throw std::logic_error("attack report carries an infeasible perturbation");
}

// Inner-iteration budget for fixed-weight probes in nmapg_only mode; there is
// no outer loop to spread iterations over, so each probe gets a comparable
// total budget.
inline constexpr std::size_t kNmapgOnlyInnerFactor = 20;

}  // namespace detail

/// Full attack driver. Modes:
///  - kFull: weight search, homotopy loop with sparsity-change control,
///    trigger check and post-attack escape stage;
///  - kPureHomotopy: the homotopy loop alone (no truncation, no
///    post-attack);
///  - kNmapgOnly: no homotopy; a fixed weight found by bisecting 20 times
///    between 0 and the coarse search threshold for the largest weight that
///    still succeeds.
inline AttackReport homotopy_attack(const AttackProblem& prob,
                                    const HomotopyParams& hp,
                                    const NmapgParams& np,
                                    const PostAttackParams& pp,
                                    AttackMode mode = AttackMode::kFull,
                                    NmapgTrace* trace = nullptr) {
  hp.validate();
  np.validate();
  pp.validate();
  if (prob.model == nullptr)
    throw std::invalid_argument("homotopy_attack: model required");
  if (prob.sparsity == SparsityMode::kGroup && prob.partition == nullptr)
    throw std::invalid_argument("homotopy_attack: group sparsity needs a partition");
  const auto t0 = std::chrono::steady_clock::now();
  const BoxBounds bounds = compute_box_bounds(prob.x0, prob.epsilon);
  const LossOracle oracle(*prob.model, prob.x0, prob.goal);

  AttackReport report;
  report.delta = Tensor(prob.x0.shape());

  const auto finish = [&](AttackReport& r) {
    detail::finalize_report(r, oracle, bounds, prob);
    r.wall_seconds = std::chrono::duration<double>(
                         std::chrono::steady_clock::now() - t0)
                         .count();
    return r;
  };

  // The benign image may already satisfy the goal.
  if (prob.goal.satisfied_by(oracle.predict(prob.x0))) {
    report.success = true;
    return finish(report);
  }

  CompositeObjective obj{&oracle, 0.0, &bounds, prob.sparsity, prob.partition,
                         prob.zero_tol};

  if (mode == AttackMode::kNmapgOnly) {
    NmapgParams probe_np = np;
    probe_np.max_iter = np.max_iter * detail::kNmapgOnlyInnerFactor;
    const auto probe = [&](double lambda) {
      obj.lambda = lambda;
      NmapgResult r = nmapg_solve(Tensor(prob.x0.shape()), obj, probe_np,
                                  TruncationPolicy::none(), trace);
      ++report.outer_iterations;
      return r;
    };
    double hi = detail::coarse_lambda_threshold(oracle, bounds, hp, np,
                                                prob.sparsity, prob.partition,
                                                prob.zero_tol);
    double lo = 0.0;
    NmapgResult lo_result = probe(lo);
    if (!prob.goal.satisfied_by(oracle.predict_perturbed(lo_result.delta))) {
      report.delta = std::move(lo_result.delta);
      report.lambda_path = {lo};
      return finish(report); // even the unregularized solve fails
    }
    double best_lambda = lo;
    Tensor best_delta = std::move(lo_result.delta);
    NmapgResult hi_result = probe(hi);
    if (prob.goal.satisfied_by(oracle.predict_perturbed(hi_result.delta))) {
      best_lambda = hi;
      best_delta = std::move(hi_result.delta);
    } else {
      for (int step = 0; step < 20; ++step) {
        const double mid = 0.5 * (lo + hi);
        NmapgResult mr = probe(mid);
        if (prob.goal.satisfied_by(oracle.predict_perturbed(mr.delta))) {
          lo = mid;
          best_lambda = mid;
          best_delta = std::move(mr.delta);
        } else {
          hi = mid;
        }
      }
    }
    report.success = true;
    report.delta = std::move(best_delta);
    report.lambda_path = {best_lambda};
    return finish(report);
  }

  // Homotopy loop (full or pure).
  double lambda = lambda_search(oracle, bounds, hp, np, prob.sparsity,
                                prob.partition, prob.zero_tol);
  Tensor delta(prob.x0.shape());
  Tensor best_delta = delta; // lowest attack loss seen, kept for failures
  double best_loss = std::numeric_limits<double>::infinity();
  std::size_t v_current = hp.v;
  for (std::size_t outer = 0; outer < hp.max_outer; ++outer) {
    report.lambda_path.push_back(lambda);
    obj.lambda = lambda;
    TruncationPolicy policy = TruncationPolicy::none();
    if (mode == AttackMode::kFull)
      policy = TruncationPolicy{true, obj.sparsity_count(delta), v_current};
    delta = nmapg_solve(delta, obj, np, policy, trace).delta;
    v_current = hp.v;
    ++report.outer_iterations;
    if (prob.goal.satisfied_by(oracle.predict_perturbed(delta))) {
      report.success = true;
      report.delta = std::move(delta);
      return finish(report);
    }
    const double loss = oracle.evaluate(delta).value;
    if (loss < best_loss) {
      best_loss = loss;
      best_delta = delta;
    }
    if (mode == AttackMode::kFull &&
        trigger_check(delta, prob.epsilon, hp.gamma, prob.zero_tol)) {
      v_current = hp.v_small;
      delta = post_attack(delta, oracle, bounds, pp, prob.zero_tol);
      ++report.post_attack_invocations;
    }
    lambda *= hp.lambda_decay;
  }
  report.delta = std::move(best_delta);
  return finish(report);
}

}  // namespace hta
