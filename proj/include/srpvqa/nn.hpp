#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "srpvqa/autodiff.hpp"

namespace srpvqa {

// Seeded generator shared by every stochastic component.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  double uniform(double lo = 0.0, double hi = 1.0) { return std::uniform_real_distribution<double>(lo, hi)(engine_); }
  double normal(double mean = 0.0, double stddev = 1.0) {
    return std::normal_distribution<double>(mean, stddev)(engine_);
  }
  std::size_t index(std::size_t n) { return std::uniform_int_distribution<std::size_t>(0, n - 1)(engine_); }
  bool bernoulli(double p) { return uniform() < p; }
  std::uint64_t next() { return engine_(); }

  template <class T>
  void shuffle(std::vector<T>& v) {
    for (std::size_t i = v.size(); i > 1; --i) std::swap(v[i - 1], v[index(i)]);
  }

  std::mt19937_64& engine() { return engine_; }

 private:
  std::mt19937_64 engine_;
};

// Derives an independent stream seed from a base seed and a salt.
inline std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t salt) {
  std::uint64_t z = seed + 0x9e3779b97f4a7c15ULL * (salt + 1);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

inline Tensor random_normal(std::size_t rows, std::size_t cols, double stddev, Rng& rng) {
  Tensor t = Tensor::zeros(rows, cols);
  for (double& v : t.data()) v = rng.normal(0.0, stddev);
  return t;
}

// Glorot-uniform weight matrix.
inline Tensor glorot(std::size_t fan_in, std::size_t fan_out, Rng& rng) {
  const double limit = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
  Tensor t = Tensor::zeros(fan_in, fan_out);
  for (double& v : t.data()) v = rng.uniform(-limit, limit);
  return t;
}

/// Affine map x W + b with W stored as in x out.
struct Dense {
  Tensor weight;
  Tensor bias;

  static Dense init(std::size_t in, std::size_t out, Rng& rng) {
    return Dense{glorot(in, out, rng), Tensor::zeros(1, out)};
  }
  std::size_t in() const { return weight.rows(); }
  std::size_t out() const { return weight.cols(); }

  template <class F>
  void visit(const std::string& prefix, F&& f) {
    f(prefix + ".weight", weight);
    f(prefix + ".bias", bias);
  }
};

// Bias-free linear map.
struct Projection {
  Tensor weight;

  static Projection init(std::size_t in, std::size_t out, Rng& rng) { return Projection{glorot(in, out, rng)}; }

  template <class F>
  void visit(const std::string& prefix, F&& f) {
    f(prefix + ".weight", weight);
  }
};

struct LayerNormParams {
  Tensor gain;
  Tensor bias;

  static LayerNormParams init(std::size_t width) {
    return LayerNormParams{Tensor(Shape{1, width}, 1.0), Tensor::zeros(1, width)};
  }

  template <class F>
  void visit(const std::string& prefix, F&& f) {
    f(prefix + ".gain", gain);
    f(prefix + ".bias", bias);
  }
};

/// Stack of Dense layers with ReLU between them and a linear final layer.
struct LayerStack {
  std::vector<Dense> layers;

  // widths = {in, hidden..., out}
  static LayerStack init(const std::vector<std::size_t>& widths, Rng& rng) {
    if (widths.size() < 2) throw DimensionError("LayerStack: need at least input and output width");
    LayerStack s;
    for (std::size_t i = 0; i + 1 < widths.size(); ++i) s.layers.push_back(Dense::init(widths[i], widths[i + 1], rng));
    return s;
  }

  std::size_t in() const { return layers.front().in(); }
  std::size_t out() const { return layers.back().out(); }

  template <class F>
  void visit(const std::string& prefix, F&& f) {
    for (std::size_t i = 0; i < layers.size(); ++i) layers[i].visit(prefix + "." + std::to_string(i), f);
  }
};

inline Var dense_forward(Tape& tape, const Dense& layer, Var x) {
  return ops::add_row(ops::matmul(x, tape.bind(layer.weight)), tape.bind(layer.bias));
}

inline Var projection_forward(Tape& tape, const Projection& p, Var x) { return ops::matmul(x, tape.bind(p.weight)); }

inline Var layer_norm_forward(Tape& tape, const LayerNormParams& ln, Var x) {
  return ops::layer_norm(x, tape.bind(ln.gain), tape.bind(ln.bias));
}

inline Var mlp_forward(Tape& tape, const LayerStack& params, Var x) {
  if (params.layers.empty()) throw DimensionError("mlp_forward: empty layer stack");
  for (std::size_t i = 0; i < params.layers.size(); ++i) {
    const Dense& layer = params.layers[i];
    if (x.cols() != layer.in()) {
      throw DimensionError("mlp_forward: layer " + std::to_string(i) + " expects width " +
                           std::to_string(layer.in()) + ", got " + std::to_string(x.cols()));
    }
    if (i > 0 && layer.in() != params.layers[i - 1].out()) throw DimensionError("mlp_forward: widths do not chain");
    x = dense_forward(tape, layer, x);
    if (i + 1 < params.layers.size()) x = ops::relu(x);
  }
  return x;
}

/// Collects raw pointers to every tensor a params struct exposes through visit().
template <class Params>
std::vector<Tensor*> parameter_list(Params& params) {
  std::vector<Tensor*> out;
  params.visit("", [&](const std::string&, Tensor& t) { out.push_back(&t); });
  return out;
}

template <class Params>
std::vector<std::pair<std::string, Tensor*>> named_parameters(Params& params, const std::string& prefix = "") {
  std::vector<std::pair<std::string, Tensor*>> out;
  params.visit(prefix, [&](const std::string& name, Tensor& t) { out.emplace_back(name, &t); });
  return out;
}

template <class Params>
std::size_t parameter_count(Params& params) {
  std::size_t n = 0;
  params.visit("", [&](const std::string&, Tensor& t) { n += t.size(); });
  return n;
}

/// Adam with bias correction.
struct AdamState {
  std::vector<Tensor> first_moment;
  std::vector<Tensor> second_moment;
  std::uint64_t step = 0;
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.98;
  double eps = 1e-9;

  AdamState() = default;
  AdamState(const std::vector<Tensor*>& params, double lr_, double beta1_ = 0.9, double beta2_ = 0.98,
            double eps_ = 1e-9)
      : lr(lr_), beta1(beta1_), beta2(beta2_), eps(eps_) {
    for (const Tensor* p : params) {
      first_moment.emplace_back(p->shape());
      second_moment.emplace_back(p->shape());
    }
  }
};

inline void adam_step(const std::vector<Tensor*>& params, const std::vector<Tensor>& grads, AdamState& state) {
  if (params.size() != grads.size() || params.size() != state.first_moment.size()) {
    throw DimensionError("adam_step: parameter/gradient/state counts differ");
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (params[i]->shape() != grads[i].shape() || params[i]->shape() != state.first_moment[i].shape()) {
      throw DimensionError("adam_step: shape mismatch for parameter " + std::to_string(i));
    }
  }
  ++state.step;
  const double t = static_cast<double>(state.step);
  const double c1 = 1.0 - std::pow(state.beta1, t);
  const double c2 = 1.0 - std::pow(state.beta2, t);
  for (std::size_t i = 0; i < params.size(); ++i) {
    Tensor& p = *params[i];
    Tensor& m = state.first_moment[i];
    Tensor& v = state.second_moment[i];
    const Tensor& g = grads[i];
    for (std::size_t k = 0; k < p.size(); ++k) {
      m[k] = state.beta1 * m[k] + (1.0 - state.beta1) * g[k];
      v[k] = state.beta2 * v[k] + (1.0 - state.beta2) * g[k] * g[k];
      const double m_hat = m[k] / c1;
      const double v_hat = v[k] / c2;
      p[k] -= state.lr * m_hat / (std::sqrt(v_hat) + state.eps);
    }
  }
}

/// Largest relative disagreement between reverse-mode and central-difference gradients.
///
/// `fn` builds a scalar on the tape it is given from the bound inputs. Each
/// coordinate of every input is perturbed by +-eps in place and restored.
/// Relative error is |g_ad - g_fd| / (|g_ad| + |g_fd|); differences below 1e-9
/// count as zero, since central differences cannot resolve them.
template <class Fn>
double grad_check(Fn&& fn, const std::vector<Tensor*>& inputs, double eps = 1e-5) {
  std::vector<Tensor> analytic;
  {
    Tape tape;
    std::vector<Var> vars;
    for (Tensor* in : inputs) vars.push_back(tape.bind(*in));
    Var out = fn(tape, vars);
    tape.backward(out);
    for (Tensor* in : inputs) {
      const Tensor* g = tape.grad_of(*in);
      analytic.push_back(g ? *g : Tensor(in->shape()));
    }
  }
  auto evaluate = [&]() {
    Tape tape(false);
    std::vector<Var> vars;
    for (Tensor* in : inputs) vars.push_back(tape.bind(*in));
    return fn(tape, vars).value().item();
  };
  double worst = 0.0;
  for (std::size_t i = 0; i < inputs.size(); ++i) {
    Tensor& x = *inputs[i];
    for (std::size_t k = 0; k < x.size(); ++k) {
      const double saved = x[k];
      x[k] = saved + eps;
      const double up = evaluate();
      x[k] = saved - eps;
      const double down = evaluate();
      x[k] = saved;
      const double fd = (up - down) / (2.0 * eps);
      const double ad = analytic[i][k];
      const double diff = std::abs(ad - fd);
      const double rel = diff < 1e-9 ? 0.0 : diff / (std::abs(ad) + std::abs(fd));
      worst = std::max(worst, rel);
    }
  }
  return worst;
}

}  // namespace srpvqa
