#pragma once

// Small fully connected networks with hand-written reverse-mode gradients.
//
// Parameters flatten into one vector in a fixed order: layer by layer, each
// layer's weight matrix (row-major, out x in) followed by its bias. The
// optimizer and the gradient checker only ever see that flat vector.

#include <cstddef>
#include <random>
#include <span>
#include <vector>

#include "rle/tensor.hpp"

namespace rle {

using Rng = std::mt19937_64;

inline constexpr double kDefaultLeakySlope = 0.01;

double leaky_relu(double x, double slope = kDefaultLeakySlope) noexcept;
double leaky_relu_grad(double x, double slope = kDefaultLeakySlope) noexcept;
double sigmoid(double x) noexcept;

enum class OutputActivation { identity, leaky_relu, tanh };

struct DenseLayer {
  Tensor2 weight;             // out x in
  std::vector<double> bias;   // out

  std::size_t in() const noexcept { return weight.cols(); }
  std::size_t out() const noexcept { return weight.rows(); }
  friend bool operator==(const DenseLayer&, const DenseLayer&) = default;
};

struct MlpParams {
  std::vector<DenseLayer> layers;
  double slope = kDefaultLeakySlope;
  OutputActivation output_activation = OutputActivation::identity;

  std::size_t in_width() const;
  std::size_t out_width() const;
  /// Throws ShapeError unless the layer widths chain and there is a layer.
  void validate() const;
  friend bool operator==(const MlpParams&, const MlpParams&) = default;
};

enum class OutputInit { uniform, zero };

/// Builds an MLP over `widths` = {in, hidden..., out}. Weights and biases are
/// uniform in +-sqrt(1/fan_in); with OutputInit::zero the last layer starts at
/// exactly zero.
MlpParams make_mlp(std::span<const std::size_t> widths, Rng& rng,
                   OutputInit out_init = OutputInit::uniform,
                   double slope = kDefaultLeakySlope,
                   OutputActivation out_act = OutputActivation::identity);

std::size_t param_count(const MlpParams& p);
/// Writes the parameters into `out` (size param_count).
void flatten_into(const MlpParams& p, std::span<double> out);
std::vector<double> flatten(const MlpParams& p);
/// Overwrites the parameters from `in` (size param_count).
void assign_from(MlpParams& p, std::span<const double> in);

/// Per-layer activations kept by the forward pass.
struct MlpCache {
  std::vector<Tensor2> inputs;  // input to layer l, batch x in_l
  std::vector<Tensor2> pre;     // pre-activation of layer l, batch x out_l
  std::size_t batch() const noexcept {
    return inputs.empty() ? 0 : inputs.front().rows();
  }
};

struct MlpForward {
  Tensor2 output;  // batch x out
  MlpCache cache;
};

/// Batched forward pass: one sample per row of `input`.
MlpForward mlp_forward(const MlpParams& p, const Tensor2& input);
/// Forward pass without keeping activations.
Tensor2 mlp_apply(const MlpParams& p, const Tensor2& input);

struct MlpSingleForward {
  std::vector<double> output;
  MlpCache cache;
};
MlpSingleForward mlp_forward(const MlpParams& p, std::span<const double> input);

/// Reverse pass for d(sum_rows output . output_grad). Parameter gradients
/// are added into `param_grad_acc` (size param_count, flat order); the return
/// value is the gradient with respect to the input rows.
Tensor2 mlp_backward(const MlpParams& p, const MlpCache& cache,
                     const Tensor2& output_grad,
                     std::span<double> param_grad_acc);

struct MlpGrads {
  std::vector<double> params;
  std::vector<double> input;
};
MlpGrads mlp_backward(const MlpParams& p, const MlpCache& cache,
                      std::span<const double> output_grad);

}  // namespace rle
