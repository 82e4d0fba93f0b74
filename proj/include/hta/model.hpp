#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <variant>
#include <vector>

#include "hta/tensor.hpp"

namespace hta {

// Small feed-forward classifier built from explicit layers with hand-written
// forward and backward passes. No autodiff framework: gradients w.r.t. the
// input drive the attack loop, gradients w.r.t. the parameters drive training.

struct AffineLayer {
  std::size_t in_dim = 0;
  std::size_t out_dim = 0;
  std::vector<double> weights; // out_dim x in_dim, row-major
  std::vector<double> bias;    // out_dim
};

struct ReluLayer {};

struct FlattenLayer {};

// Valid (no padding) stride-1 convolution on an (H, W, C) channel-last input.
struct Conv2dLayer {
  std::size_t in_h = 0, in_w = 0, in_c = 0;
  std::size_t kernel = 0; // square
  std::size_t out_c = 0;
  std::vector<double> weights; // out_c x kernel x kernel x in_c
  std::vector<double> bias;    // out_c

  std::size_t out_h() const { return in_h - kernel + 1; }
  std::size_t out_w() const { return in_w - kernel + 1; }
};

using Layer = std::variant<AffineLayer, ReluLayer, FlattenLayer, Conv2dLayer>;

inline Shape layer_output_shape(const Layer& layer, const Shape& in) {
  if (const auto* a = std::get_if<AffineLayer>(&layer)) {
    if (in.size() != 1 || in[0] != a->in_dim)
      throw std::invalid_argument("affine layer expects 1-d input of length " +
                                  std::to_string(a->in_dim) + ", got " +
                                  shape_to_string(in));
    return {a->out_dim};
  }
  if (std::holds_alternative<ReluLayer>(layer)) return in;
  if (std::holds_alternative<FlattenLayer>(layer)) return {shape_size(in)};
  const auto& c = std::get<Conv2dLayer>(layer);
  if (in.size() != 3 || in[0] != c.in_h || in[1] != c.in_w || in[2] != c.in_c)
    throw std::invalid_argument("conv layer expects input " +
                                shape_to_string({c.in_h, c.in_w, c.in_c}) +
                                ", got " + shape_to_string(in));
  if (c.kernel == 0 || c.kernel > c.in_h || c.kernel > c.in_w)
    throw std::invalid_argument("conv kernel larger than input");
  return {c.out_h(), c.out_w(), c.out_c};
}

class Model {
 public:
  Model(Shape input_shape, std::vector<Layer> layers)
      : input_shape_(std::move(input_shape)), layers_(std::move(layers)) {
    Shape cur = input_shape_;
    for (const Layer& l : layers_) cur = layer_output_shape(l, cur);
    if (cur.size() != 1 || cur[0] < 1)
      throw std::invalid_argument("model must end in a 1-d logit vector");
    num_classes_ = cur[0];
  }

  const Shape& input_shape() const { return input_shape_; }
  std::size_t num_classes() const { return num_classes_; }
  const std::vector<Layer>& layers() const { return layers_; }
  std::vector<Layer>& layers() { return layers_; }

  Tensor forward(const Tensor& x) const {
    check_input(x);
    Tensor cur = x;
    for (const Layer& l : layers_) cur = apply(l, cur);
    return cur;
  }

  // Forward pass keeping every intermediate activation; acts[0] is the input
  // and acts.back() the logits.
  std::vector<Tensor> forward_activations(const Tensor& x) const {
    check_input(x);
    std::vector<Tensor> acts;
    acts.reserve(layers_.size() + 1);
    acts.push_back(x);
    for (const Layer& l : layers_) acts.push_back(apply(l, acts.back()));
    return acts;
  }

  // Backpropagate a gradient w.r.t. the logits down to the input. When
  // param_grads is non-null it must mirror layers() and receives accumulated
  // parameter gradients.
  Tensor backward(const std::vector<Tensor>& acts, const Tensor& grad_logits,
                  std::vector<Layer>* param_grads = nullptr) const {
    if (acts.size() != layers_.size() + 1)
      throw std::invalid_argument("backward: activation stack size mismatch");
    check_same_shape(grad_logits, acts.back(), "backward");
    Tensor grad = grad_logits;
    for (std::size_t li = layers_.size(); li-- > 0;) {
      Layer* pg = param_grads ? &(*param_grads)[li] : nullptr;
      grad = backward_layer(layers_[li], acts[li], grad, pg);
    }
    return grad;
  }

  // Zero-valued parameter gradient mirror of the layer stack.
  std::vector<Layer> zero_grads() const {
    std::vector<Layer> gs = layers_;
    for (Layer& l : gs) {
      if (auto* a = std::get_if<AffineLayer>(&l)) {
        std::fill(a->weights.begin(), a->weights.end(), 0.0);
        std::fill(a->bias.begin(), a->bias.end(), 0.0);
      } else if (auto* c = std::get_if<Conv2dLayer>(&l)) {
        std::fill(c->weights.begin(), c->weights.end(), 0.0);
        std::fill(c->bias.begin(), c->bias.end(), 0.0);
      }
    }
    return gs;
  }

 private:
  void check_input(const Tensor& x) const {
    if (x.shape() != input_shape_)
      throw std::invalid_argument("model input shape mismatch: expected " +
                                  shape_to_string(input_shape_) + ", got " +
                                  shape_to_string(x.shape()));
  }

  static Tensor apply(const Layer& layer, const Tensor& x) {
    if (const auto* a = std::get_if<AffineLayer>(&layer)) {
      Tensor y(Shape{a->out_dim});
      for (std::size_t o = 0; o < a->out_dim; ++o) {
        double acc = a->bias[o];
        const double* w = &a->weights[o * a->in_dim];
        for (std::size_t i = 0; i < a->in_dim; ++i) acc += w[i] * x[i];
        y[o] = acc;
      }
      return y;
    }
    if (std::holds_alternative<ReluLayer>(layer)) {
      Tensor y = x;
      for (double& v : y.data()) v = v > 0.0 ? v : 0.0;
      return y;
    }
    if (std::holds_alternative<FlattenLayer>(layer))
      return Tensor(Shape{x.size()}, x.data());
    const auto& c = std::get<Conv2dLayer>(layer);
    const std::size_t oh = c.out_h(), ow = c.out_w();
    Tensor y(Shape{oh, ow, c.out_c});
    for (std::size_t i = 0; i < oh; ++i)
      for (std::size_t j = 0; j < ow; ++j)
        for (std::size_t o = 0; o < c.out_c; ++o) {
          double acc = c.bias[o];
          for (std::size_t di = 0; di < c.kernel; ++di)
            for (std::size_t dj = 0; dj < c.kernel; ++dj)
              for (std::size_t ch = 0; ch < c.in_c; ++ch)
                acc += x[((i + di) * c.in_w + (j + dj)) * c.in_c + ch] *
                       c.weights[((o * c.kernel + di) * c.kernel + dj) * c.in_c + ch];
          y[(i * ow + j) * c.out_c + o] = acc;
        }
    return y;
  }

  static Tensor backward_layer(const Layer& layer, const Tensor& x,
                               const Tensor& grad_out, Layer* param_grad) {
    if (const auto* a = std::get_if<AffineLayer>(&layer)) {
      Tensor gx(Shape{a->in_dim});
      AffineLayer* ga = param_grad ? &std::get<AffineLayer>(*param_grad) : nullptr;
      for (std::size_t o = 0; o < a->out_dim; ++o) {
        const double g = grad_out[o];
        const double* w = &a->weights[o * a->in_dim];
        for (std::size_t i = 0; i < a->in_dim; ++i) gx[i] += g * w[i];
        if (ga) {
          double* gw = &ga->weights[o * a->in_dim];
          for (std::size_t i = 0; i < a->in_dim; ++i) gw[i] += g * x[i];
          ga->bias[o] += g;
        }
      }
      return gx;
    }
    if (std::holds_alternative<ReluLayer>(layer)) {
      Tensor gx = grad_out;
      for (std::size_t i = 0; i < gx.size(); ++i)
        if (!(x[i] > 0.0)) gx[i] = 0.0; // subgradient 0 at the kink
      return gx;
    }
    if (std::holds_alternative<FlattenLayer>(layer))
      return Tensor(x.shape(), grad_out.data());
    const auto& c = std::get<Conv2dLayer>(layer);
    Conv2dLayer* gc = param_grad ? &std::get<Conv2dLayer>(*param_grad) : nullptr;
    const std::size_t oh = c.out_h(), ow = c.out_w();
    Tensor gx(x.shape());
    for (std::size_t i = 0; i < oh; ++i)
      for (std::size_t j = 0; j < ow; ++j)
        for (std::size_t o = 0; o < c.out_c; ++o) {
          const double g = grad_out[(i * ow + j) * c.out_c + o];
          if (gc) gc->bias[o] += g;
          for (std::size_t di = 0; di < c.kernel; ++di)
            for (std::size_t dj = 0; dj < c.kernel; ++dj)
              for (std::size_t ch = 0; ch < c.in_c; ++ch) {
                const std::size_t xi = ((i + di) * c.in_w + (j + dj)) * c.in_c + ch;
                const std::size_t wi = ((o * c.kernel + di) * c.kernel + dj) * c.in_c + ch;
                gx[xi] += g * c.weights[wi];
                if (gc) gc->weights[wi] += g * x[xi];
              }
        }
    return gx;
  }

  Shape input_shape_;
  std::vector<Layer> layers_;
  std::size_t num_classes_ = 0;
};

// ---------------------------------------------------------------------------
// Weight file format: magic "MDL1", u32 version, a length-prefixed UTF-8
// architecture descriptor (one line per layer), then per-layer f64
// little-endian weight/bias blobs in declaration order.

namespace detail {

inline void write_u32_m(std::ostream& os, std::uint32_t v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof(v));
}

inline std::uint32_t read_u32_m(std::istream& is, const char* what) {
  std::uint32_t v = 0;
  is.read(reinterpret_cast<char*>(&v), sizeof(v));
  if (!is) throw std::runtime_error(std::string("model read: truncated ") + what);
  return v;
}

inline void write_doubles(std::ostream& os, const std::vector<double>& v) {
  os.write(reinterpret_cast<const char*>(v.data()),
           static_cast<std::streamsize>(v.size() * sizeof(double)));
}

inline void read_doubles(std::istream& is, std::vector<double>& v,
                         const char* what) {
  is.read(reinterpret_cast<char*>(v.data()),
          static_cast<std::streamsize>(v.size() * sizeof(double)));
  if (!is) throw std::runtime_error(std::string("model read: truncated ") + what);
}

}  // namespace detail

inline constexpr std::uint32_t kModelFormatVersion = 1;

inline std::string model_descriptor(const Model& m) {
  std::ostringstream os;
  os << "input";
  for (std::size_t e : m.input_shape()) os << ' ' << e;
  os << '\n';
  for (const Layer& l : m.layers()) {
    if (const auto* a = std::get_if<AffineLayer>(&l))
      os << "affine " << a->in_dim << ' ' << a->out_dim << '\n';
    else if (std::holds_alternative<ReluLayer>(l))
      os << "relu\n";
    else if (std::holds_alternative<FlattenLayer>(l))
      os << "flatten\n";
    else {
      const auto& c = std::get<Conv2dLayer>(l);
      os << "conv " << c.in_h << ' ' << c.in_w << ' ' << c.in_c << ' '
         << c.kernel << ' ' << c.out_c << '\n';
    }
  }
  return os.str();
}

inline void save_model(std::ostream& os, const Model& m) {
  os.write("MDL1", 4);
  detail::write_u32_m(os, kModelFormatVersion);
  const std::string desc = model_descriptor(m);
  detail::write_u32_m(os, static_cast<std::uint32_t>(desc.size()));
  os.write(desc.data(), static_cast<std::streamsize>(desc.size()));
  for (const Layer& l : m.layers()) {
    if (const auto* a = std::get_if<AffineLayer>(&l)) {
      detail::write_doubles(os, a->weights);
      detail::write_doubles(os, a->bias);
    } else if (const auto* c = std::get_if<Conv2dLayer>(&l)) {
      detail::write_doubles(os, c->weights);
      detail::write_doubles(os, c->bias);
    }
  }
  if (!os) throw std::runtime_error("model write failed");
}

inline Model load_model(std::istream& is) {
  char magic[4] = {};
  is.read(magic, 4);
  if (!is || std::memcmp(magic, "MDL1", 4) != 0)
    throw std::runtime_error("model read: bad magic, not an MDL1 file");
  const std::uint32_t version = detail::read_u32_m(is, "version");
  if (version != kModelFormatVersion)
    throw std::runtime_error("model read: unsupported format version " +
                             std::to_string(version));
  const std::uint32_t desc_len = detail::read_u32_m(is, "descriptor length");
  if (desc_len > (1u << 20))
    throw std::runtime_error("model read: implausible descriptor length");
  std::string desc(desc_len, '\0');
  is.read(desc.data(), desc_len);
  if (!is) throw std::runtime_error("model read: truncated descriptor");

  std::istringstream lines(desc);
  std::string line;
  Shape input_shape;
  std::vector<Layer> layers;
  bool have_input = false;
  while (std::getline(lines, line)) {
    if (line.empty()) continue;
    std::istringstream ls(line);
    std::string kind;
    ls >> kind;
    if (kind == "input") {
      std::size_t e;
      while (ls >> e) input_shape.push_back(e);
      have_input = true;
    } else if (kind == "affine") {
      AffineLayer a;
      if (!(ls >> a.in_dim >> a.out_dim))
        throw std::runtime_error("model read: malformed affine descriptor");
      a.weights.resize(a.in_dim * a.out_dim);
      a.bias.resize(a.out_dim);
      layers.emplace_back(std::move(a));
    } else if (kind == "relu") {
      layers.emplace_back(ReluLayer{});
    } else if (kind == "flatten") {
      layers.emplace_back(FlattenLayer{});
    } else if (kind == "conv") {
      Conv2dLayer c;
      if (!(ls >> c.in_h >> c.in_w >> c.in_c >> c.kernel >> c.out_c))
        throw std::runtime_error("model read: malformed conv descriptor");
      c.weights.resize(c.out_c * c.kernel * c.kernel * c.in_c);
      c.bias.resize(c.out_c);
      layers.emplace_back(std::move(c));
    } else {
      throw std::runtime_error("model read: unknown layer kind '" + kind + "'");
    }
  }
  if (!have_input)
    throw std::runtime_error("model read: descriptor missing input line");
  for (Layer& l : layers) {
    if (auto* a = std::get_if<AffineLayer>(&l)) {
      detail::read_doubles(is, a->weights, "affine weights");
      detail::read_doubles(is, a->bias, "affine bias");
    } else if (auto* c = std::get_if<Conv2dLayer>(&l)) {
      detail::read_doubles(is, c->weights, "conv weights");
      detail::read_doubles(is, c->bias, "conv bias");
    }
  }
  return Model(std::move(input_shape), std::move(layers));
}

inline void save_model(const std::string& path, const Model& m) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("cannot open for write: " + path);
  save_model(os, m);
}

inline Model load_model(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("cannot open for read: " + path);
  return load_model(is);
}

}  // namespace hta
