#pragma once

#include <cmath>
#include <cstdint>
#include <numeric>
#include <stdexcept>
#include <string>
#include <variant>
#include <vector>

#include "hta/loss.hpp"
#include "hta/model.hpp"
#include "hta/rng.hpp"
#include "hta/synth.hpp"

namespace hta {

enum class Arch { kMlp, kSmallConv };

enum class Optimizer { kSgdMomentum, kAdam };

struct TrainConfig {
  Arch arch = Arch::kMlp;
  std::uint64_t seed = 0;
  std::size_t epochs = 40;
  std::size_t batch_size = 32;
  Optimizer optimizer = Optimizer::kAdam;
  double learning_rate = 1e-3;
  double momentum = 0.9;         // sgd only
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double adam_eps = 1e-8;
  double init_scale = 1.0;       // multiplier on the uniform init range
  std::size_t hidden = 64;       // mlp hidden width
  std::size_t conv_filters = 8;  // conv output channels
  std::size_t conv_kernel = 3;
};

struct TrainResult {
  Model model;
  double test_accuracy = 0.0;
  double final_train_loss = 0.0;
};

namespace detail {

inline void init_uniform(std::vector<double>& w, std::size_t fan_in,
                         std::size_t fan_out, double scale, Rng& rng) {
  const double s =
      scale * std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
  for (double& v : w) v = rng.uniform(-s, s);
}

}  // namespace detail

inline Model make_untrained(Arch arch, const Shape& input_shape,
                            std::size_t classes, const TrainConfig& cfg,
                            Rng& rng) {
  std::vector<Layer> layers;
  const std::size_t n = shape_size(input_shape);
  if (arch == Arch::kMlp) {
    AffineLayer a1{n, cfg.hidden, std::vector<double>(n * cfg.hidden),
                   std::vector<double>(cfg.hidden, 0.0)};
    detail::init_uniform(a1.weights, n, cfg.hidden, cfg.init_scale, rng);
    AffineLayer a2{cfg.hidden, classes,
                   std::vector<double>(cfg.hidden * classes),
                   std::vector<double>(classes, 0.0)};
    detail::init_uniform(a2.weights, cfg.hidden, classes, cfg.init_scale, rng);
    layers.emplace_back(FlattenLayer{});
    layers.emplace_back(std::move(a1));
    layers.emplace_back(ReluLayer{});
    layers.emplace_back(std::move(a2));
  } else {
    if (input_shape.size() != 3)
      throw std::invalid_argument("conv arch needs an (H, W, C) input");
    Conv2dLayer c{input_shape[0], input_shape[1], input_shape[2],
                  cfg.conv_kernel, cfg.conv_filters,
                  std::vector<double>(cfg.conv_filters * cfg.conv_kernel *
                                      cfg.conv_kernel * input_shape[2]),
                  std::vector<double>(cfg.conv_filters, 0.0)};
    const std::size_t fan_in = cfg.conv_kernel * cfg.conv_kernel * input_shape[2];
    detail::init_uniform(c.weights, fan_in, cfg.conv_filters, cfg.init_scale, rng);
    const std::size_t flat = c.out_h() * c.out_w() * cfg.conv_filters;
    AffineLayer a{flat, classes, std::vector<double>(flat * classes),
                  std::vector<double>(classes, 0.0)};
    detail::init_uniform(a.weights, flat, classes, cfg.init_scale, rng);
    layers.emplace_back(std::move(c));
    layers.emplace_back(ReluLayer{});
    layers.emplace_back(FlattenLayer{});
    layers.emplace_back(std::move(a));
  }
  return Model(input_shape, std::move(layers));
}

inline double evaluate_accuracy(const Model& m,
                                const std::vector<LabeledImage>& split) {
  if (split.empty()) return 0.0;
  std::size_t hits = 0;
  for (const LabeledImage& s : split)
    if (predict_class(m, s.image) == s.label) ++hits;
  return static_cast<double>(hits) / static_cast<double>(split.size());
}

/// Plain minibatch SGD on softmax cross entropy. Single-threaded with a fixed
/// shuffle stream so the same (seed, epochs) always yields bit-identical
/// weights. Aborts if the loss stops being finite.
inline TrainResult train_model(const SyntheticDataset& data,
                               const TrainConfig& cfg) {
  Rng rng(cfg.seed);
  Model model = make_untrained(cfg.arch, data.image_shape(), data.classes(),
                               cfg, rng);
  const auto& train = data.train();
  std::vector<std::size_t> order(train.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::vector<Layer> velocity = model.zero_grads(); // sgd momentum / adam m
  std::vector<Layer> second = model.zero_grads();   // adam v
  std::size_t adam_t = 0;

  double last_loss = 0.0;
  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    rng.shuffle(order);
    double epoch_loss = 0.0;
    for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
      const std::size_t stop = std::min(order.size(), start + cfg.batch_size);
      std::vector<Layer> grads = model.zero_grads();
      double batch_loss = 0.0;
      for (std::size_t bi = start; bi < stop; ++bi) {
        const LabeledImage& s = train[order[bi]];
        const auto acts = model.forward_activations(s.image);
        const Tensor& logits = acts.back();
        const double lse = detail::log_sum_exp(logits);
        batch_loss += lse - logits[static_cast<std::size_t>(s.label)];
        Tensor glog(logits.shape());
        double mx = logits[0];
        for (double v : logits.data()) mx = std::max(mx, v);
        double z = 0.0;
        for (double v : logits.data()) z += std::exp(v - mx);
        for (std::size_t i = 0; i < logits.size(); ++i)
          glog[i] = std::exp(logits[i] - mx) / z;
        glog[static_cast<std::size_t>(s.label)] -= 1.0;
        model.backward(acts, glog, &grads);
      }
      if (!std::isfinite(batch_loss))
        throw std::runtime_error(
            "train_model: loss diverged (non-finite) at epoch " +
            std::to_string(epoch) + ", batch offset " + std::to_string(start));
      const double inv_batch = 1.0 / static_cast<double>(stop - start);
      ++adam_t;
      const auto update = [&](std::vector<double>& w, const std::vector<double>& g,
                              std::vector<double>& m1, std::vector<double>& m2) {
        if (cfg.optimizer == Optimizer::kSgdMomentum) {
          const double scale = cfg.learning_rate * inv_batch;
          for (std::size_t i = 0; i < w.size(); ++i) {
            m1[i] = cfg.momentum * m1[i] - scale * g[i];
            w[i] += m1[i];
          }
          return;
        }
        const double bc1 = 1.0 - std::pow(cfg.adam_beta1, static_cast<double>(adam_t));
        const double bc2 = 1.0 - std::pow(cfg.adam_beta2, static_cast<double>(adam_t));
        for (std::size_t i = 0; i < w.size(); ++i) {
          const double gi = g[i] * inv_batch;
          m1[i] = cfg.adam_beta1 * m1[i] + (1.0 - cfg.adam_beta1) * gi;
          m2[i] = cfg.adam_beta2 * m2[i] + (1.0 - cfg.adam_beta2) * gi * gi;
          w[i] -= cfg.learning_rate * (m1[i] / bc1) /
                  (std::sqrt(m2[i] / bc2) + cfg.adam_eps);
        }
      };
      for (std::size_t li = 0; li < model.layers().size(); ++li) {
        if (auto* a = std::get_if<AffineLayer>(&model.layers()[li])) {
          const auto& ga = std::get<AffineLayer>(grads[li]);
          auto& va = std::get<AffineLayer>(velocity[li]);
          auto& sa = std::get<AffineLayer>(second[li]);
          update(a->weights, ga.weights, va.weights, sa.weights);
          update(a->bias, ga.bias, va.bias, sa.bias);
        } else if (auto* cl = std::get_if<Conv2dLayer>(&model.layers()[li])) {
          const auto& gc = std::get<Conv2dLayer>(grads[li]);
          auto& vc = std::get<Conv2dLayer>(velocity[li]);
          auto& sc = std::get<Conv2dLayer>(second[li]);
          update(cl->weights, gc.weights, vc.weights, sc.weights);
          update(cl->bias, gc.bias, vc.bias, sc.bias);
        }
      }
      epoch_loss += batch_loss;
    }
    last_loss = epoch_loss / static_cast<double>(train.size());
  }
  TrainResult out{std::move(model), 0.0, last_loss};
  out.test_accuracy = evaluate_accuracy(out.model, data.test());
  return out;
}

}  // namespace hta
