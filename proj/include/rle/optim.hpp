#pragma once

#include <cstddef>
#include <functional>
#include <span>
#include <vector>

namespace rle {

/// Adam with the usual bias correction. beta1, beta2 and epsilon are the
/// common defaults; only the learning rate is normally tuned.
struct AdamState {
  std::vector<double> first_moment;
  std::vector<double> second_moment;
  std::size_t step_count = 0;
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;

  AdamState() = default;
  AdamState(std::size_t n, double lr)
      : first_moment(n, 0.0), second_moment(n, 0.0), learning_rate(lr) {}

  /// Throws DomainError on out-of-range hyperparameters.
  void validate() const;
};

/// One Adam update of `params` in place. A non-finite gradient throws
/// DivergenceError and leaves params and state untouched.
void adam_step(AdamState& state, std::span<double> params,
               std::span<const double> grads);

using ScalarFn = std::function<double(std::span<const double>)>;

/// Central-difference gradient of `fn` at `params`, one coordinate at a time.
std::vector<double> finite_diff_grad(const ScalarFn& fn,
                                     std::span<const double> params, double h);

struct GradCompare {
  double max_rel_error = 0.0;
  double max_abs_error = 0.0;
  std::size_t worst_index = 0;
  bool within(double rel_tol) const { return max_rel_error < rel_tol; }
};

/// Compares analytic and numeric gradients entrywise. An entry passes if
/// |a-n| <= max(rel_tol * max(|a|,|n|), abs_floor); `max_rel_error` is the
/// largest relative error among entries whose absolute error exceeds
/// `abs_floor`.
GradCompare compare_gradients(std::span<const double> analytic,
                              std::span<const double> numeric,
                              double abs_floor);

}  // namespace rle
