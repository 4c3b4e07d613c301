#include "rle/optim.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "rle/errors.hpp"

namespace rle {

void AdamState::validate() const {
  if (first_moment.size() != second_moment.size()) {
    throw ShapeError("AdamState: moment arrays differ in length");
  }
  if (!(beta1 > 0.0 && beta1 < 1.0) || !(beta2 > 0.0 && beta2 < 1.0)) {
    throw DomainError("AdamState: betas must lie in (0, 1)");
  }
  if (!(epsilon > 0.0)) throw DomainError("AdamState: epsilon must be > 0");
  if (!(learning_rate > 0.0)) throw DomainError("AdamState: learning rate must be > 0");
}

void adam_step(AdamState& s, std::span<double> params,
               std::span<const double> grads) {
  const std::size_t n = params.size();
  if (grads.size() != n || s.first_moment.size() != n ||
      s.second_moment.size() != n) {
    throw ShapeError("adam_step: parameter/gradient/state length mismatch");
  }
  for (std::size_t i = 0; i < n; ++i) {
    if (!std::isfinite(grads[i])) {
      throw DivergenceError("adam_step: non-finite gradient at index " +
                            std::to_string(i) + " (step " +
                            std::to_string(s.step_count + 1) + ")");
    }
  }
  ++s.step_count;
  const double t = static_cast<double>(s.step_count);
  const double c1 = 1.0 - std::pow(s.beta1, t);
  const double c2 = 1.0 - std::pow(s.beta2, t);
  for (std::size_t i = 0; i < n; ++i) {
    const double g = grads[i];
    s.first_moment[i] = s.beta1 * s.first_moment[i] + (1.0 - s.beta1) * g;
    s.second_moment[i] = s.beta2 * s.second_moment[i] + (1.0 - s.beta2) * g * g;
    const double mhat = s.first_moment[i] / c1;
    const double vhat = s.second_moment[i] / c2;
    params[i] -= s.learning_rate * mhat / (std::sqrt(vhat) + s.epsilon);
  }
}

std::vector<double> finite_diff_grad(const ScalarFn& fn,
                                     std::span<const double> params, double h) {
  if (!(h > 0.0)) throw DomainError("finite_diff_grad: h must be > 0");
  std::vector<double> x(params.begin(), params.end());
  std::vector<double> g(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double x0 = x[i];
    x[i] = x0 + h;
    const double fp = fn(x);
    x[i] = x0 - h;
    const double fm = fn(x);
    x[i] = x0;
    g[i] = (fp - fm) / (2.0 * h);
  }
  return g;
}

GradCompare compare_gradients(std::span<const double> analytic,
                              std::span<const double> numeric,
                              double abs_floor) {
  if (analytic.size() != numeric.size()) {
    throw ShapeError("compare_gradients: length mismatch");
  }
  GradCompare r;
  for (std::size_t i = 0; i < analytic.size(); ++i) {
    const double err = std::abs(analytic[i] - numeric[i]);
    if (!std::isfinite(err)) {
      r.max_rel_error = INFINITY;
      r.max_abs_error = INFINITY;
      r.worst_index = i;
      return r;
    }
    r.max_abs_error = std::max(r.max_abs_error, err);
    if (err <= abs_floor) continue;
    const double scale = std::max(std::abs(analytic[i]), std::abs(numeric[i]));
    const double rel = err / scale;
    if (rel > r.max_rel_error) {
      r.max_rel_error = rel;
      r.worst_index = i;
    }
  }
  return r;
}

}  // namespace rle
