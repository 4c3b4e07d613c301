#include "rle/mlp.hpp"

#include <cmath>
#include <string>

#include "rle/errors.hpp"
#include "rle/kernels.hpp"

namespace rle {

double leaky_relu(double x, double slope) noexcept {
  return x >= 0.0 ? x : slope * x;
}

double leaky_relu_grad(double x, double slope) noexcept {
  return x >= 0.0 ? 1.0 : slope;
}

double sigmoid(double x) noexcept {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

std::size_t MlpParams::in_width() const {
  return layers.empty() ? 0 : layers.front().in();
}

std::size_t MlpParams::out_width() const {
  return layers.empty() ? 0 : layers.back().out();
}

void MlpParams::validate() const {
  if (layers.empty()) throw ShapeError("MlpParams: no layers");
  for (std::size_t l = 0; l < layers.size(); ++l) {
    const auto& L = layers[l];
    if (L.bias.size() != L.out()) {
      throw ShapeError("MlpParams: layer " + std::to_string(l) +
                       " bias width mismatch");
    }
    if (l + 1 < layers.size() && L.out() != layers[l + 1].in()) {
      throw ShapeError("MlpParams: layer " + std::to_string(l) +
                       " output width does not match next input");
    }
  }
}

MlpParams make_mlp(std::span<const std::size_t> widths, Rng& rng,
                   OutputInit out_init, double slope,
                   OutputActivation out_act) {
  if (widths.size() < 2) throw ShapeError("make_mlp: need at least in and out");
  MlpParams p;
  p.slope = slope;
  p.output_activation = out_act;
  for (std::size_t l = 0; l + 1 < widths.size(); ++l) {
    const std::size_t in = widths[l];
    const std::size_t out = widths[l + 1];
    if (in == 0 || out == 0) throw ShapeError("make_mlp: zero width");
    DenseLayer layer{Tensor2(out, in), std::vector<double>(out, 0.0)};
    const bool last = (l + 2 == widths.size());
    if (!(last && out_init == OutputInit::zero)) {
      const double bound = std::sqrt(1.0 / static_cast<double>(in));
      std::uniform_real_distribution<double> u(-bound, bound);
      for (double& w : layer.weight.flat()) w = u(rng);
      for (double& b : layer.bias) b = u(rng);
    }
    p.layers.push_back(std::move(layer));
  }
  return p;
}

std::size_t param_count(const MlpParams& p) {
  std::size_t n = 0;
  for (const auto& L : p.layers) n += L.weight.size() + L.bias.size();
  return n;
}

void flatten_into(const MlpParams& p, std::span<double> out) {
  if (out.size() != param_count(p)) throw ShapeError("flatten_into: size");
  std::size_t o = 0;
  for (const auto& L : p.layers) {
    for (double w : L.weight.flat()) out[o++] = w;
    for (double b : L.bias) out[o++] = b;
  }
}

std::vector<double> flatten(const MlpParams& p) {
  std::vector<double> v(param_count(p));
  flatten_into(p, v);
  return v;
}

void assign_from(MlpParams& p, std::span<const double> in) {
  if (in.size() != param_count(p)) throw ShapeError("assign_from: size");
  std::size_t o = 0;
  for (auto& L : p.layers) {
    for (double& w : L.weight.flat()) w = in[o++];
    for (double& b : L.bias) b = in[o++];
  }
}

namespace {

void check_input(const MlpParams& p, const Tensor2& input) {
  if (p.layers.empty()) throw ShapeError("mlp_forward: no layers");
  if (input.cols() != p.in_width()) {
    throw ShapeError("mlp_forward: input width " +
                     std::to_string(input.cols()) + " != " +
                     std::to_string(p.in_width()));
  }
}

// Runs layer l on `x` and returns the pre-activation.
Tensor2 layer_pre(const DenseLayer& L, const Tensor2& x) {
  Tensor2 y(x.rows(), L.out());
  kernels::gemm_nt(x.flat(), L.weight.flat(), y.flat(), x.rows(), L.out(),
                   L.in());
  kernels::add_row_bias(y.flat(), L.bias, x.rows(), L.out());
  return y;
}

OutputActivation activation_of(const MlpParams& p, std::size_t l) {
  return l + 1 < p.layers.size() ? OutputActivation::leaky_relu
                                 : p.output_activation;
}

void activate(const MlpParams& p, std::size_t l, Tensor2& x) {
  switch (activation_of(p, l)) {
    case OutputActivation::identity:
      break;
    case OutputActivation::leaky_relu:
      kernels::leaky_relu_inplace(x.flat(), p.slope);
      break;
    case OutputActivation::tanh:
      for (double& v : x.flat()) v = std::tanh(v);
      break;
  }
}

void activate_backward(const MlpParams& p, std::size_t l, const Tensor2& pre,
                       Tensor2& grad) {
  switch (activation_of(p, l)) {
    case OutputActivation::identity:
      break;
    case OutputActivation::leaky_relu:
      kernels::leaky_relu_backward_inplace(pre.flat(), grad.flat(), p.slope);
      break;
    case OutputActivation::tanh:
      for (std::size_t i = 0; i < grad.size(); ++i) {
        const double t = std::tanh(pre.flat()[i]);
        grad.flat()[i] *= 1.0 - t * t;
      }
      break;
  }
}

}  // namespace

MlpForward mlp_forward(const MlpParams& p, const Tensor2& input) {
  check_input(p, input);
  MlpForward f;
  f.cache.inputs.reserve(p.layers.size());
  f.cache.pre.reserve(p.layers.size());
  Tensor2 x = input;
  for (std::size_t l = 0; l < p.layers.size(); ++l) {
    Tensor2 pre = layer_pre(p.layers[l], x);
    Tensor2 act = pre;
    activate(p, l, act);
    f.cache.inputs.push_back(std::move(x));
    f.cache.pre.push_back(std::move(pre));
    x = std::move(act);
  }
  f.output = std::move(x);
  return f;
}

Tensor2 mlp_apply(const MlpParams& p, const Tensor2& input) {
  check_input(p, input);
  Tensor2 x = layer_pre(p.layers[0], input);
  for (std::size_t l = 0; l < p.layers.size(); ++l) {
    if (l > 0) x = layer_pre(p.layers[l], x);
    activate(p, l, x);
  }
  return x;
}

MlpSingleForward mlp_forward(const MlpParams& p, std::span<const double> input) {
  MlpForward f = mlp_forward(p, Tensor2::row_vector(input));
  return {f.output.values(), std::move(f.cache)};
}

Tensor2 mlp_backward(const MlpParams& p, const MlpCache& cache,
                     const Tensor2& output_grad,
                     std::span<double> param_grad_acc) {
  if (cache.inputs.size() != p.layers.size() ||
      cache.pre.size() != p.layers.size()) {
    throw ShapeError("mlp_backward: cache does not match network depth");
  }
  const std::size_t batch = cache.batch();
  for (std::size_t l = 0; l < p.layers.size(); ++l) {
    const auto& L = p.layers[l];
    if (cache.inputs[l].cols() != L.in() || cache.pre[l].cols() != L.out() ||
        cache.inputs[l].rows() != batch || cache.pre[l].rows() != batch) {
      throw ShapeError("mlp_backward: stale cache for layer " +
                       std::to_string(l));
    }
  }
  if (output_grad.rows() != batch || output_grad.cols() != p.out_width()) {
    throw ShapeError("mlp_backward: output_grad shape mismatch");
  }
  if (param_grad_acc.size() != param_count(p)) {
    throw ShapeError("mlp_backward: gradient buffer size mismatch");
  }

  // Offsets of each layer's block in the flat vector.
  std::vector<std::size_t> offset(p.layers.size());
  std::size_t o = 0;
  for (std::size_t l = 0; l < p.layers.size(); ++l) {
    offset[l] = o;
    o += p.layers[l].weight.size() + p.layers[l].bias.size();
  }

  Tensor2 delta = output_grad;
  for (std::size_t li = p.layers.size(); li-- > 0;) {
    const auto& L = p.layers[li];
    activate_backward(p, li, cache.pre[li], delta);
    auto wgrad = param_grad_acc.subspan(offset[li], L.weight.size());
    auto bgrad = param_grad_acc.subspan(offset[li] + L.weight.size(), L.out());
    // dW[out x in] += delta^T[out x B] * x[B x in]
    kernels::gemm_tn_acc(delta.flat(), cache.inputs[li].flat(), wgrad, batch,
                         L.in(), L.out());
    kernels::col_sum_acc(delta.flat(), bgrad, batch, L.out());
    Tensor2 dx(batch, L.in());
    kernels::gemm_nn(delta.flat(), L.weight.flat(), dx.flat(), batch, L.in(),
                     L.out());
    delta = std::move(dx);
  }
  return delta;
}

MlpGrads mlp_backward(const MlpParams& p, const MlpCache& cache,
                      std::span<const double> output_grad) {
  MlpGrads g;
  g.params.assign(param_count(p), 0.0);
  Tensor2 dx = mlp_backward(p, cache, Tensor2::row_vector(output_grad), g.params);
  g.input = dx.values();
  return g;
}

}  // namespace rle
