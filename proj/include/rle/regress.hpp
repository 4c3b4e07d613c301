#pragma once

// Regression model: a leaky-ReLU trunk feeding two linear heads. The mu head
// is unbounded; the sigma head goes through sigma_max * sigmoid(.) so every
// predicted scale lies in (0, sigma_max).

#include <cstddef>
#include <span>
#include <vector>

#include "rle/flow.hpp"
#include "rle/lik.hpp"
#include "rle/mlp.hpp"
#include "rle/tensor.hpp"

namespace rle {

struct TrunkArch {
  std::size_t layers = 2;   // hidden layers
  std::size_t width = 64;
  double slope = kDefaultLeakySlope;
  friend bool operator==(const TrunkArch&, const TrunkArch&) = default;
};

struct RegressionHead {
  MlpParams trunk;       // F -> hidden, activated output
  MlpParams mu_head;     // hidden -> D, identity
  MlpParams sigma_head;  // hidden -> D, then sigma_max * sigmoid
  double sigma_max = 1.0;

  std::size_t feature_dim() const { return trunk.in_width(); }
  std::size_t output_dim() const { return mu_head.out_width(); }
  void validate() const;
  friend bool operator==(const RegressionHead&, const RegressionHead&) = default;
};

RegressionHead make_head(std::size_t feature_dim, std::size_t output_dim,
                         const TrunkArch& arch, double sigma_max, Rng& rng);

std::size_t param_count(const RegressionHead& h);
/// Flat order: trunk, mu head, sigma head.
std::vector<double> flatten(const RegressionHead& h);
void flatten_into(const RegressionHead& h, std::span<double> out);
void assign_from(RegressionHead& h, std::span<const double> in);

struct Prediction {
  std::vector<double> mu_hat;
  std::vector<double> sigma_hat;
};

Prediction head_forward(const RegressionHead& h, std::span<const double> features);

struct BatchPrediction {
  Tensor2 mu_hat;     // B x D
  Tensor2 sigma_hat;  // B x D
};
BatchPrediction head_forward(const RegressionHead& h, const Tensor2& features);

/// Mean loss of `kind` over the rows of (features, mu_g). `flow` may be null
/// for kinds that do not need it.
double model_loss(const RegressionHead& h, const FlowModel* flow,
                  const LossKind& kind, const Tensor2& features,
                  const Tensor2& mu_g);
double model_loss(const RegressionHead& h, const FlowModel* flow,
                  const LossKind& kind, std::span<const double> features,
                  std::span<const double> mu_g);

struct ModelGrad {
  double loss = 0.0;
  std::vector<double> head;  // flat, param_count(head)
  std::vector<double> flow;  // flat, param_count(flow); empty without a flow
};

ModelGrad model_grad(const RegressionHead& h, const FlowModel* flow,
                     const LossKind& kind, const Tensor2& features,
                     const Tensor2& mu_g);

}  // namespace rle
