#pragma once

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>

#include "hta/model.hpp"
#include "hta/tensor.hpp"

namespace hta {

struct LossEval {
  double value = 0.0;
  Tensor grad; // same shape as the perturbation
};

/// Differentiable objective f(delta) with gradient; the inner solver's whole
/// view of the problem. Implementations must be pure so evaluations can run
/// concurrently on shared immutable state.
class SmoothLoss {
 public:
  virtual ~SmoothLoss() = default;
  virtual LossEval evaluate(const Tensor& delta) const = 0;
};

struct AttackGoal {
  enum class Mode { kTargeted, kNontargeted };
  Mode mode = Mode::kNontargeted;
  int target_class = -1; // targeted: class the attack must reach
  int true_class = -1;   // nontargeted: class the attack must leave
  double kappa = 0.0;    // nontargeted confidence margin

  static AttackGoal targeted(int t) {
    AttackGoal g;
    g.mode = Mode::kTargeted;
    g.target_class = t;
    return g;
  }

  static AttackGoal nontargeted(int y0, double kappa = 0.0) {
    AttackGoal g;
    g.mode = Mode::kNontargeted;
    g.true_class = y0;
    g.kappa = kappa;
    return g;
  }

  bool targeted() const { return mode == Mode::kTargeted; }

  bool satisfied_by(int predicted) const {
    return targeted() ? predicted == target_class : predicted != true_class;
  }
};

/// Argmax class with ties broken toward the lowest index.
inline int argmax_class(const Tensor& logits) {
  int best = 0;
  for (std::size_t i = 1; i < logits.size(); ++i)
    if (logits[i] > logits[best]) best = static_cast<int>(i);
  return best;
}

inline int predict_class(const Model& m, const Tensor& x) {
  return argmax_class(m.forward(x));
}

namespace detail {

// max-subtracted for overflow safety
inline double log_sum_exp(const Tensor& logits) {
  double m = logits[0];
  for (double v : logits.data()) m = std::max(m, v);
  double acc = 0.0;
  for (double v : logits.data()) acc += std::exp(v - m);
  return m + std::log(acc);
}

inline void check_class(int c, std::size_t num_classes, const char* what) {
  if (c < 0 || static_cast<std::size_t>(c) >= num_classes)
    throw std::invalid_argument(std::string(what) + " class " +
                                std::to_string(c) + " out of range [0, " +
                                std::to_string(num_classes) + ")");
}

}  // namespace detail

/// Attack loss bound to (model, benign image, goal): evaluate() returns the
/// loss and its gradient w.r.t. the perturbation, predict() classifies an
/// arbitrary input. Targeted goals use cross entropy against the target
/// class; nontargeted goals use the margin loss
/// max{ D(x)_{y0} - max_{i != y0} D(x)_i, -kappa }.
class LossOracle : public SmoothLoss {
 public:
  LossOracle(const Model& model, Tensor x0, AttackGoal goal)
      : model_(&model), x0_(std::move(x0)), goal_(goal) {
    if (x0_.shape() != model.input_shape())
      throw std::invalid_argument("LossOracle: image does not match model input");
    if (goal_.targeted()) {
      detail::check_class(goal_.target_class, model.num_classes(), "target");
    } else {
      if (model.num_classes() < 2)
        throw std::invalid_argument("margin loss needs at least 2 classes");
      detail::check_class(goal_.true_class, model.num_classes(), "true");
      if (!(goal_.kappa >= 0.0))
        throw std::invalid_argument("kappa must be >= 0");
    }
  }

  LossEval evaluate(const Tensor& delta) const override {
    check_same_shape(delta, x0_, "LossOracle::evaluate");
    const Tensor x = add(x0_, delta);
    const std::vector<Tensor> acts = model_->forward_activations(x);
    const Tensor& logits = acts.back();
    LossEval out;
    Tensor grad_logits(logits.shape());
    if (goal_.targeted()) {
      const double lse = detail::log_sum_exp(logits);
      out.value = lse - logits[static_cast<std::size_t>(goal_.target_class)];
      double m = logits[0];
      for (double v : logits.data()) m = std::max(m, v);
      double z = 0.0;
      for (double v : logits.data()) z += std::exp(v - m);
      for (std::size_t i = 0; i < logits.size(); ++i)
        grad_logits[i] = std::exp(logits[i] - m) / z;
      grad_logits[static_cast<std::size_t>(goal_.target_class)] -= 1.0;
    } else {
      const std::size_t y0 = static_cast<std::size_t>(goal_.true_class);
      std::size_t runner = y0 == 0 ? 1 : 0;
      for (std::size_t i = 0; i < logits.size(); ++i)
        if (i != y0 && logits[i] > logits[runner]) runner = i;
      const double margin = logits[y0] - logits[runner];
      if (margin > -goal_.kappa) {
        out.value = margin;
        grad_logits[y0] = 1.0;
        grad_logits[runner] -= 1.0;
      } else {
        out.value = -goal_.kappa; // floored; subgradient 0
        out.grad = Tensor(x0_.shape());
        return out;
      }
    }
    out.grad = model_->backward(acts, grad_logits);
    return out;
  }

  int predict(const Tensor& x) const { return predict_class(*model_, x); }
  int predict_perturbed(const Tensor& delta) const {
    return predict(add(x0_, delta));
  }

  const Tensor& x0() const { return x0_; }
  const AttackGoal& goal() const { return goal_; }
  const Model& model() const { return *model_; }

 private:
  const Model* model_;
  Tensor x0_;
  AttackGoal goal_;
};

}  // namespace hta
