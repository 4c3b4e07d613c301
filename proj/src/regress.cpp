#include "rle/regress.hpp"

#include <cassert>
#include <cmath>

#include "rle/errors.hpp"

namespace rle {

void RegressionHead::validate() const {
  trunk.validate();
  mu_head.validate();
  sigma_head.validate();
  if (mu_head.in_width() != trunk.out_width() ||
      sigma_head.in_width() != trunk.out_width()) {
    throw ShapeError("RegressionHead: head input width != trunk width");
  }
  if (mu_head.out_width() != sigma_head.out_width()) {
    throw ShapeError("RegressionHead: mu and sigma heads differ in width");
  }
  if (!(sigma_max > 0.0)) throw DomainError("RegressionHead: sigma_max must be > 0");
}

RegressionHead make_head(std::size_t feature_dim, std::size_t output_dim,
                         const TrunkArch& arch, double sigma_max, Rng& rng) {
  if (arch.layers < 1 || arch.width < 1) throw ShapeError("make_head: empty trunk");
  RegressionHead h;
  h.sigma_max = sigma_max;
  std::vector<std::size_t> widths{feature_dim};
  for (std::size_t l = 0; l < arch.layers; ++l) widths.push_back(arch.width);
  h.trunk = make_mlp(widths, rng, OutputInit::uniform, arch.slope,
                     OutputActivation::leaky_relu);
  const std::size_t head_widths[] = {arch.width, output_dim};
  h.mu_head = make_mlp(head_widths, rng, OutputInit::uniform, arch.slope);
  h.sigma_head = make_mlp(head_widths, rng, OutputInit::uniform, arch.slope);
  h.validate();
  return h;
}

std::size_t param_count(const RegressionHead& h) {
  return param_count(h.trunk) + param_count(h.mu_head) + param_count(h.sigma_head);
}

void flatten_into(const RegressionHead& h, std::span<double> out) {
  if (out.size() != param_count(h)) throw ShapeError("flatten_into(head): size");
  const std::size_t a = param_count(h.trunk);
  const std::size_t b = param_count(h.mu_head);
  flatten_into(h.trunk, out.subspan(0, a));
  flatten_into(h.mu_head, out.subspan(a, b));
  flatten_into(h.sigma_head, out.subspan(a + b));
}

std::vector<double> flatten(const RegressionHead& h) {
  std::vector<double> v(param_count(h));
  flatten_into(h, v);
  return v;
}

void assign_from(RegressionHead& h, std::span<const double> in) {
  if (in.size() != param_count(h)) throw ShapeError("assign_from(head): size");
  const std::size_t a = param_count(h.trunk);
  const std::size_t b = param_count(h.mu_head);
  assign_from(h.trunk, in.subspan(0, a));
  assign_from(h.mu_head, in.subspan(a, b));
  assign_from(h.sigma_head, in.subspan(a + b));
}

namespace {

struct HeadTape {
  MlpForward trunk;
  MlpForward mu;
  MlpForward sigma_pre;
  Tensor2 sig;  // sigmoid(sigma_pre)
};

HeadTape run_head(const RegressionHead& h, const Tensor2& features) {
  if (features.cols() != h.feature_dim()) {
    throw ShapeError("head_forward: feature width mismatch");
  }
  HeadTape t;
  t.trunk = mlp_forward(h.trunk, features);
  t.mu = mlp_forward(h.mu_head, t.trunk.output);
  t.sigma_pre = mlp_forward(h.sigma_head, t.trunk.output);
  t.sig = t.sigma_pre.output;
  for (double& v : t.sig.flat()) v = sigmoid(v);
  return t;
}

// sigma_max * sigmoid(a), kept strictly inside (0, sigma_max) when the
// sigmoid rounds to 0 or 1.
Tensor2 scaled_sigma(const Tensor2& sig, double sigma_max) {
  Tensor2 out = sig;
  const double hi = std::nextafter(sigma_max, 0.0);
  const double lo = std::nextafter(0.0, 1.0);
  for (double& v : out.flat()) {
    v *= sigma_max;
    if (v >= sigma_max) v = hi;
    if (v <= 0.0) v = lo;
    assert(v > 0.0 && v < sigma_max);
  }
  return out;
}

}  // namespace

BatchPrediction head_forward(const RegressionHead& h, const Tensor2& features) {
  HeadTape t = run_head(h, features);
  return {std::move(t.mu.output), scaled_sigma(t.sig, h.sigma_max)};
}

Prediction head_forward(const RegressionHead& h, std::span<const double> features) {
  BatchPrediction b = head_forward(h, Tensor2::row_vector(features));
  return {b.mu_hat.values(), b.sigma_hat.values()};
}

double model_loss(const RegressionHead& h, const FlowModel* flow,
                  const LossKind& kind, const Tensor2& features,
                  const Tensor2& mu_g) {
  if (features.rows() == 0) throw ShapeError("model_loss: empty batch");
  if (features.rows() != mu_g.rows()) throw ShapeError("model_loss: row mismatch");
  BatchPrediction p = head_forward(h, features);
  return batch_loss(kind, flow, mu_g, p.mu_hat, p.sigma_hat, false).mean;
}

double model_loss(const RegressionHead& h, const FlowModel* flow,
                  const LossKind& kind, std::span<const double> features,
                  std::span<const double> mu_g) {
  return model_loss(h, flow, kind, Tensor2::row_vector(features),
                    Tensor2::row_vector(mu_g));
}

ModelGrad model_grad(const RegressionHead& h, const FlowModel* flow,
                     const LossKind& kind, const Tensor2& features,
                     const Tensor2& mu_g) {
  if (features.rows() == 0) throw ShapeError("model_grad: empty batch");
  if (features.rows() != mu_g.rows()) throw ShapeError("model_grad: row mismatch");
  if (mu_g.cols() != h.output_dim()) throw ShapeError("model_grad: target width");
  HeadTape t = run_head(h, features);
  const Tensor2 sigma = scaled_sigma(t.sig, h.sigma_max);
  BatchLoss bl = batch_loss(kind, flow, mu_g, t.mu.output, sigma, true);

  ModelGrad g;
  g.loss = bl.mean;
  g.head.assign(param_count(h), 0.0);
  const std::size_t nt = param_count(h.trunk);
  const std::size_t nm = param_count(h.mu_head);
  const std::size_t ns = param_count(h.sigma_head);
  std::span<double> gh(g.head);

  // d sigma / d pre = sigma_max * s * (1 - s)
  Tensor2 d_pre = bl.d_sigma;
  for (std::size_t i = 0; i < d_pre.size(); ++i) {
    const double s = t.sig.flat()[i];
    d_pre.flat()[i] *= h.sigma_max * s * (1.0 - s);
  }
  Tensor2 d_hidden = mlp_backward(h.mu_head, t.mu.cache, bl.d_mu, gh.subspan(nt, nm));
  Tensor2 d_hidden_s =
      mlp_backward(h.sigma_head, t.sigma_pre.cache, d_pre, gh.subspan(nt + nm, ns));
  for (std::size_t i = 0; i < d_hidden.size(); ++i) {
    d_hidden.flat()[i] += d_hidden_s.flat()[i];
  }
  mlp_backward(h.trunk, t.trunk.cache, d_hidden, gh.subspan(0, nt));

  if (flow != nullptr && kind.needs_flow()) g.flow = std::move(bl.d_flow);
  return g;
}

}  // namespace rle
