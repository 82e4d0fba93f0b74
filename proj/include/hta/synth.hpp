#pragma once

#include <cstdint>
#include <vector>

#include "hta/rng.hpp"
#include "hta/tensor.hpp"

namespace hta {

// Built-in synthetic image classification task: every class shares one fixed
// random base pattern and differs from the others by a narrow per-pixel
// offset, plus uniform pixel noise per image. Offsets are heavy-tailed
// (signed squared uniform), so a few pixels carry most of each class's
// signature. The offset width sets the inter-class margins, chosen so a
// classifier separates the classes cleanly while small box-bounded
// perturbations can still cross the boundaries.

struct SyntheticSpec {
  std::size_t classes = 10;
  Shape image_shape{12, 12, 3};
  double template_lo = 0.02;   // all templates stay inside [lo, hi]
  double template_hi = 0.98;
  double class_spread = 0.035; // per-class offset half-range around the base
  double noise_amplitude = 0.1;
  std::size_t train_per_class = 500;
  std::size_t test_per_class = 100;
  std::uint64_t seed = 0;
};

struct LabeledImage {
  Tensor image;
  int label = 0;
};

class SyntheticDataset {
 public:
  explicit SyntheticDataset(const SyntheticSpec& spec) : spec_(spec) {
    Rng rng(spec.seed);
    const std::size_t n = shape_size(spec.image_shape);
    Tensor base(spec.image_shape);
    for (std::size_t i = 0; i < n; ++i)
      base[i] = rng.uniform(spec.template_lo + spec.class_spread,
                            spec.template_hi - spec.class_spread);
    templates_.reserve(spec.classes);
    for (std::size_t c = 0; c < spec.classes; ++c) {
      Tensor t = base;
      for (std::size_t i = 0; i < n; ++i) {
        const double u = rng.uniform();
        const double sign = rng.uniform() < 0.5 ? -1.0 : 1.0;
        t[i] += sign * spec.class_spread * u * u;
      }
      templates_.push_back(std::move(t));
    }
    // Per-class pools generated class by class, then interleaved round-robin
    // so a prefix of either split is class-balanced.
    std::vector<std::vector<Tensor>> train_pool(spec.classes), test_pool(spec.classes);
    for (std::size_t c = 0; c < spec.classes; ++c)
      for (std::size_t k = 0; k < spec.train_per_class; ++k)
        train_pool[c].push_back(noisy(templates_[c], rng));
    for (std::size_t c = 0; c < spec.classes; ++c)
      for (std::size_t k = 0; k < spec.test_per_class; ++k)
        test_pool[c].push_back(noisy(templates_[c], rng));
    interleave(train_pool, train_);
    interleave(test_pool, test_);
  }

  const SyntheticSpec& spec() const { return spec_; }
  const std::vector<LabeledImage>& train() const { return train_; }
  const std::vector<LabeledImage>& test() const { return test_; }
  const std::vector<Tensor>& templates() const { return templates_; }
  std::size_t classes() const { return spec_.classes; }
  const Shape& image_shape() const { return spec_.image_shape; }

 private:
  Tensor noisy(const Tensor& base, Rng& rng) const {
    Tensor img = base;
    for (double& v : img.data()) {
      v += rng.uniform(-spec_.noise_amplitude, spec_.noise_amplitude);
      v = std::min(std::max(v, 0.0), 1.0);
    }
    return img;
  }

  static void interleave(std::vector<std::vector<Tensor>>& pools,
                         std::vector<LabeledImage>& out) {
    const std::size_t per_class = pools.empty() ? 0 : pools[0].size();
    for (std::size_t k = 0; k < per_class; ++k)
      for (std::size_t c = 0; c < pools.size(); ++c)
        out.push_back(LabeledImage{std::move(pools[c][k]), static_cast<int>(c)});
  }

  SyntheticSpec spec_;
  std::vector<Tensor> templates_;
  std::vector<LabeledImage> train_;
  std::vector<LabeledImage> test_;
};

}  // namespace hta
