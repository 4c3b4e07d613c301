#pragma once

// Regression likelihoods: the constant-variance losses, the Gaussian and
// Laplace negative log-likelihoods with a predicted scale, direct likelihood
// estimation through a flow (DLE) and the residual form (RLE) that adds a
// fixed base density Q in front of the flow term.
//
// Every loss keeps its normalisation constants so values are comparable
// across kinds. Per-sample losses sum over output dimensions.

#include <cstddef>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "rle/flow.hpp"
#include "rle/tensor.hpp"

namespace rle {

/// Below this, a predicted scale is treated as a collapsed head.
inline constexpr double kSigmaFloor = 1e-6;

enum class BaseFamily { gaussian, laplace };

struct BaseDensity {
  BaseFamily family = BaseFamily::laplace;
  std::size_t dim = 2;
};

/// Uniform grid over [lower, upper]^D with `subintervals` cells per axis,
/// sampled at right endpoints a + i*dx, i = 1..N.
struct RiemannCfg {
  double lower = -5.0;
  double upper = 5.0;
  std::size_t subintervals = 200;

  void validate() const;
  double step() const { return (upper - lower) / static_cast<double>(subintervals); }
  friend bool operator==(const RiemannCfg&, const RiemannCfg&) = default;
};

enum class LossType { l2_const, l1_const, gaussian_nll, laplace_nll, dle, rle };

struct LossKind {
  LossType type = LossType::rle;
  BaseFamily q = BaseFamily::laplace;   // rle only
  bool include_log_s = false;           // rle only
  RiemannCfg riemann;                   // rle only, used when include_log_s

  bool needs_flow() const noexcept {
    return type == LossType::dle || type == LossType::rle;
  }
  bool predicts_sigma() const noexcept {
    return type != LossType::l2_const && type != LossType::l1_const;
  }
  friend bool operator==(const LossKind&, const LossKind&) = default;
};

std::string_view loss_type_name(LossType t) noexcept;
std::optional<LossType> parse_loss_type(std::string_view s) noexcept;
std::string_view base_family_name(BaseFamily f) noexcept;
std::optional<BaseFamily> parse_base_family(std::string_view s) noexcept;
/// Short label such as "rle", "rle+s" or "rle[gaussian]".
std::string loss_label(const LossKind& k);

double base_log_prob(const BaseDensity& q, std::span<const double> x);
/// Gradient of base_log_prob with respect to x (sign(0) taken as 0).
std::vector<double> base_log_prob_grad(const BaseDensity& q,
                                       std::span<const double> x);

/// (mu_g - mu_hat) / sigma_hat elementwise. Throws DomainError if any
/// sigma_hat is below kSigmaFloor or not finite.
std::vector<double> standardize(std::span<const double> mu_g,
                                std::span<const double> mu_hat,
                                std::span<const double> sigma_hat);

double nll_gaussian(std::span<const double> mu_g, std::span<const double> mu_hat,
                    std::span<const double> sigma_hat);
double nll_laplace(std::span<const double> mu_g, std::span<const double> mu_hat,
                   std::span<const double> sigma_hat);
/// Gaussian / Laplace NLL with the scale fixed to 1.
double loss_l2_const(std::span<const double> mu_g, std::span<const double> mu_hat);
double loss_l1_const(std::span<const double> mu_g, std::span<const double> mu_hat);

double loss_dle(const FlowModel& flow, std::span<const double> mu_g,
                std::span<const double> mu_hat, std::span<const double> sigma_hat);
double loss_rle(const FlowModel& flow, const BaseDensity& q,
                std::span<const double> mu_g, std::span<const double> mu_hat,
                std::span<const double> sigma_hat, bool include_log_s = false,
                const RiemannCfg& riemann = {});

/// Batched log-density callback: one value per row of the input.
using LogDensityFn = std::function<std::vector<double>(const Tensor2&)>;

/// 1 / sum over the grid of exp(log_g + log Q) * cell volume, for D <= 2.
double compute_s(const LogDensityFn& log_g, std::size_t dim,
                 const BaseDensity& q, const RiemannCfg& riemann);
double compute_s(const FlowModel& flow, const BaseDensity& q,
                 const RiemannCfg& riemann);

/// 1 - mean(sigma_hat / sigma_max). Throws DomainError unless every entry
/// lies in (0, sigma_max).
double confidence(std::span<const double> sigma_hat, double sigma_max);

/// Loss value and gradients for one sample. `d_flow` is empty for kinds that
/// do not use the flow; `d_sigma` is empty for the constant-variance kinds.
struct LossGrad {
  double value = 0.0;
  std::vector<double> d_mu;
  std::vector<double> d_sigma;
  std::vector<double> d_flow;
};

double loss_value(const LossKind& kind, const FlowModel* flow,
                  std::span<const double> mu_g, std::span<const double> mu_hat,
                  std::span<const double> sigma_hat);
LossGrad loss_grad(const LossKind& kind, const FlowModel* flow,
                   std::span<const double> mu_g, std::span<const double> mu_hat,
                   std::span<const double> sigma_hat);

/// Mean loss over a batch (rows are samples) with gradients of that mean.
/// The -log s term, when enabled, is a per-batch constant added once.
struct BatchLoss {
  double mean = 0.0;
  std::vector<double> per_sample;
  Tensor2 d_mu;     // B x D
  Tensor2 d_sigma;  // B x D
  std::vector<double> d_flow;
};

BatchLoss batch_loss(const LossKind& kind, const FlowModel* flow,
                     const Tensor2& mu_g, const Tensor2& mu_hat,
                     const Tensor2& sigma_hat, bool want_grad);

}  // namespace rle
