#pragma once

// RealNVP-style normalizing flow over a standard-normal base.
//
// A coupling block keeps the first d = ceil(D/2) coordinates and maps the rest
// as x_b = z_b * exp(g(z_a)) + h(z_a). Before every block the vector is
// reversed, so with an even block count and zero-initialised g, h output
// layers the whole flow starts as the identity.

#include <cstddef>
#include <span>
#include <vector>

#include "rle/mlp.hpp"
#include "rle/tensor.hpp"

namespace rle {

/// |g| above this aborts with DivergenceError instead of overflowing exp(g).
inline constexpr double kMaxLogScale = 50.0;

struct CouplingBlock {
  std::size_t dim = 2;
  std::size_t split = 1;
  MlpParams scale_net;  // g: R^split -> R^(dim - split)
  MlpParams shift_net;  // h: R^split -> R^(dim - split)

  void validate() const;
  friend bool operator==(const CouplingBlock&, const CouplingBlock&) = default;
};

struct FlowArch {
  std::size_t blocks = 6;     // K
  std::size_t fc_layers = 3;  // dense layers per g / h net
  std::size_t width = 64;     // hidden units per layer
  double slope = kDefaultLeakySlope;
  bool bounded_scale = true;  // tanh on the scale-net output
  friend bool operator==(const FlowArch&, const FlowArch&) = default;
};

struct FlowModel {
  std::size_t dim = 2;
  std::vector<CouplingBlock> blocks;

  void validate() const;
  friend bool operator==(const FlowModel&, const FlowModel&) = default;
};

std::size_t coupling_split(std::size_t dim);

/// Block with g and h drawn by make_mlp; the output layers start at zero
/// unless `zero_output` is false.
CouplingBlock make_coupling_block(std::size_t dim, const FlowArch& arch,
                                  Rng& rng, bool zero_output = true);
FlowModel make_flow(std::size_t dim, const FlowArch& arch, Rng& rng,
                    bool zero_output = true);

std::size_t param_count(const CouplingBlock& b);
std::size_t param_count(const FlowModel& f);
/// Flat order: for each block, scale net then shift net.
std::vector<double> flatten(const FlowModel& f);
void flatten_into(const FlowModel& f, std::span<double> out);
void assign_from(FlowModel& f, std::span<const double> in);

struct CouplingResult {
  std::vector<double> value;
  double log_det = 0.0;
};

CouplingResult coupling_forward(const CouplingBlock& b, std::span<const double> z);
CouplingResult coupling_inverse(const CouplingBlock& b, std::span<const double> x);

/// Batched block maps; `log_det` receives one entry per row.
Tensor2 coupling_forward(const CouplingBlock& b, const Tensor2& z,
                         std::vector<double>& log_det);
Tensor2 coupling_inverse(const CouplingBlock& b, const Tensor2& x,
                         std::vector<double>& log_det_inv);

Tensor2 flow_forward(const FlowModel& f, const Tensor2& z);
std::vector<double> flow_forward(const FlowModel& f, std::span<const double> z);

struct FlowInverse {
  Tensor2 z;
  std::vector<double> log_det_inv;  // summed over blocks, per row
};
FlowInverse flow_inverse(const FlowModel& f, const Tensor2& x);
std::vector<double> flow_inverse(const FlowModel& f, std::span<const double> x);

/// log N(f^-1(x); 0, I) + sum_k log|det d f_k^-1|, one value per row.
std::vector<double> flow_log_prob(const FlowModel& f, const Tensor2& x);
double flow_log_prob(const FlowModel& f, std::span<const double> x);

/// Reverse pass for sum_i weight_i * log p(x_i). Parameter gradients are
/// added into `param_grad_acc` (size param_count(f)); returns d/dx per row.
/// `log_prob_out`, when non-null, receives the forward values.
Tensor2 flow_log_prob_backward(const FlowModel& f, const Tensor2& x,
                               std::span<const double> weight,
                               std::span<double> param_grad_acc,
                               std::vector<double>* log_prob_out = nullptr);

struct FlowGrad {
  std::vector<double> grad_x;
  std::vector<double> grad_params;
};
FlowGrad flow_log_prob_grad(const FlowModel& f, std::span<const double> x);

/// z ~ N(0, I), returns flow_forward(z).
std::vector<double> flow_sample(const FlowModel& f, Rng& rng);

/// log N(z; 0, I) for a D-vector.
double std_normal_log_prob(std::span<const double> z) noexcept;

}  // namespace rle
