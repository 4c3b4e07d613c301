#include <algorithm>
#include <cmath>
#include <numbers>
#include <random>
#include <vector>

#include "doctest.h"
#include "rle/errors.hpp"
#include "rle/flow.hpp"
#include "rle/optim.hpp"

using namespace rle;

namespace {

const double kLn2Pi = std::log(2.0 * std::numbers::pi);

FlowArch small_arch(std::size_t blocks = 4, std::size_t width = 16) {
  FlowArch a;
  a.blocks = blocks;
  a.width = width;
  return a;
}

FlowModel random_flow(std::size_t dim, std::uint64_t seed, std::size_t blocks = 4,
                      std::size_t width = 16) {
  Rng rng(seed);
  return make_flow(dim, small_arch(blocks, width), rng, /*zero_output=*/false);
}

// Block whose g and h nets output constants regardless of input.
CouplingBlock constant_block(double g, double h) {
  Rng rng(0);
  CouplingBlock b = make_coupling_block(2, small_arch(), rng);
  b.scale_net.output_activation = OutputActivation::identity;
  b.scale_net.layers.back().bias.assign(1, g);
  b.shift_net.layers.back().bias.assign(1, h);
  return b;
}

std::vector<double> normal_point(std::mt19937_64& rng, std::size_t dim, double sd) {
  std::normal_distribution<double> n(0.0, sd);
  std::vector<double> v(dim);
  for (double& x : v) x = n(rng);
  return v;
}

}  // namespace

TEST_CASE("coupling split and arch defaults") {
  CHECK(coupling_split(2) == 1);
  CHECK(coupling_split(3) == 2);
  CHECK(coupling_split(4) == 2);
  const FlowArch a;
  CHECK(a.blocks == 6);
  CHECK(a.fc_layers == 3);
  CHECK(a.width == 64);
  Rng rng(1);
  const FlowModel f = make_flow(2, a, rng);
  CHECK(f.blocks.size() == 6);
  CHECK(f.blocks[0].scale_net.layers.size() == 3);
  CHECK(f.blocks[0].scale_net.layers[0].out() == 64);
  CHECK_THROWS_AS(make_flow(1, a, rng), ShapeError);
}

TEST_CASE("zero-init coupling block is the identity") {
  Rng rng(3);
  const CouplingBlock b = make_coupling_block(2, small_arch(), rng);
  const std::vector<double> z = {1.0, 2.0};
  const CouplingResult fwd = coupling_forward(b, z);
  CHECK(fwd.value == z);
  CHECK(fwd.log_det == 0.0);
  const CouplingResult inv = coupling_inverse(b, z);
  CHECK(inv.value == z);
  CHECK(inv.log_det == 0.0);
}

TEST_CASE("constant nets give the closed-form coupling map") {
  const CouplingBlock b = constant_block(std::log(2.0), 0.0);
  const std::vector<double> z = {1.0, 3.0};
  const CouplingResult fwd = coupling_forward(b, z);
  CHECK(fwd.value[0] == 1.0);
  CHECK(fwd.value[1] == doctest::Approx(6.0).epsilon(1e-15));
  CHECK(fwd.log_det == doctest::Approx(std::log(2.0)).epsilon(1e-15));

  const CouplingBlock c = constant_block(0.5, -1.0);
  const CouplingResult x = coupling_forward(c, z);
  CHECK(x.value[1] == doctest::Approx(3.0 * std::exp(0.5) - 1.0).epsilon(1e-15));
}

TEST_CASE("coupling inverse undoes forward and negates the log-det") {
  const FlowModel f = random_flow(2, 17);
  std::mt19937_64 rng(2);
  for (int t = 0; t < 200; ++t) {
    const auto z = normal_point(rng, 2, 1.5);
    for (const CouplingBlock& b : f.blocks) {
      const CouplingResult fwd = coupling_forward(b, z);
      const CouplingResult inv = coupling_inverse(b, fwd.value);
      CHECK(std::abs(inv.value[0] - z[0]) < 1e-12);
      CHECK(std::abs(inv.value[1] - z[1]) < 1e-12);
      CHECK(inv.log_det == -fwd.log_det);
    }
  }
}

TEST_CASE("batched coupling maps agree with the single-sample path") {
  const FlowModel f = random_flow(3, 4);
  std::mt19937_64 rng(8);
  Tensor2 z(9, 3);
  for (double& v : z.flat()) v = std::normal_distribution<double>(0.0, 1.0)(rng);
  std::vector<double> ld;
  const Tensor2 x = coupling_forward(f.blocks[1], z, ld);
  for (std::size_t r = 0; r < z.rows(); ++r) {
    const CouplingResult one = coupling_forward(f.blocks[1], z.row(r));
    CHECK(ld[r] == doctest::Approx(one.log_det).epsilon(1e-13));
    for (std::size_t j = 0; j < 3; ++j) {
      CHECK(x(r, j) == doctest::Approx(one.value[j]).epsilon(1e-13));
    }
  }
}

TEST_CASE("block log-det matches a finite-difference Jacobian") {
  const FlowModel f = random_flow(2, 23);
  std::mt19937_64 rng(5);
  const double h = 1e-6;
  for (int t = 0; t < 100; ++t) {
    const auto z = normal_point(rng, 2, 1.0);
    const CouplingBlock& b = f.blocks[static_cast<std::size_t>(t) % f.blocks.size()];
    double jac[2][2];
    for (std::size_t j = 0; j < 2; ++j) {
      auto zp = z, zm = z;
      zp[j] += h;
      zm[j] -= h;
      const auto xp = coupling_forward(b, zp).value;
      const auto xm = coupling_forward(b, zm).value;
      for (std::size_t i = 0; i < 2; ++i) jac[i][j] = (xp[i] - xm[i]) / (2.0 * h);
    }
    const double numeric = std::log(std::abs(jac[0][0] * jac[1][1] - jac[0][1] * jac[1][0]));
    const double analytic = coupling_forward(b, z).log_det;
    CHECK(std::abs(numeric - analytic) / std::max(std::abs(analytic), 1e-3) < 1e-5);
  }
}

TEST_CASE("zero-init flow is the identity with a standard-normal density") {
  Rng rng(9);
  const FlowModel f = make_flow(2, FlowArch{}, rng);
  const std::vector<double> z = {0.7, -1.3};
  CHECK(flow_forward(f, z) == z);
  CHECK(flow_inverse(f, z) == z);

  const std::vector<double> origin = {0.0, 0.0};
  const std::vector<double> e1 = {1.0, 0.0};
  CHECK(flow_log_prob(f, origin) == doctest::Approx(-kLn2Pi).epsilon(1e-15));
  CHECK(flow_log_prob(f, origin) == doctest::Approx(-1.837877).epsilon(1e-6));
  CHECK(flow_log_prob(f, e1) == doctest::Approx(-2.337877).epsilon(1e-6));

  std::mt19937_64 g(1);
  for (int t = 0; t < 100; ++t) {
    const auto x = normal_point(g, 2, 2.0);
    CHECK(std::abs(flow_log_prob(f, x) - std_normal_log_prob(x)) < 1e-12);
  }
}

TEST_CASE("single-block flow matches a hand computation") {
  FlowModel f;
  f.dim = 2;
  f.blocks.push_back(constant_block(std::log(3.0), 0.5));
  // The vector is reversed before the block: (a, b) -> (b, a) -> (b, 3a + 0.5).
  const std::vector<double> z = {2.0, -1.0};
  const auto x = flow_forward(f, z);
  CHECK(x[0] == -1.0);
  CHECK(x[1] == doctest::Approx(6.5).epsilon(1e-15));
  const double expected = std_normal_log_prob(z) - std::log(3.0);
  CHECK(flow_log_prob(f, x) == doctest::Approx(expected).epsilon(1e-14));
}

TEST_CASE("flow round-trip over 1000 random points") {
  for (std::size_t dim : {2u, 3u}) {
    const FlowModel f = random_flow(dim, 31 + dim, 6, 32);
    std::mt19937_64 rng(12);
    double worst = 0.0;
    for (int t = 0; t < 1000; ++t) {
      const auto z = normal_point(rng, dim, 2.0);
      const auto back = flow_inverse(f, flow_forward(f, z));
      for (std::size_t i = 0; i < dim; ++i) worst = std::max(worst, std::abs(back[i] - z[i]));
    }
    CHECK(worst < 1e-9);
  }
}

TEST_CASE("batched inverse log-det sums the block terms") {
  const FlowModel f = random_flow(2, 7);
  Tensor2 x(5, 2, {0.1, 0.2, -1.0, 0.5, 2.0, -2.0, 0.0, 0.0, 1.5, 0.3});
  const FlowInverse inv = flow_inverse(f, x);
  const auto lp = flow_log_prob(f, x);
  for (std::size_t r = 0; r < x.rows(); ++r) {
    const auto z1 = flow_inverse(f, x.row(r));
    CHECK(inv.z(r, 0) == doctest::Approx(z1[0]).epsilon(1e-13));
    CHECK(lp[r] == doctest::Approx(std_normal_log_prob(inv.z.row(r)) + inv.log_det_inv[r])
                       .epsilon(1e-13));
    CHECK(lp[r] == doctest::Approx(flow_log_prob(f, x.row(r))).epsilon(1e-13));
  }
}

TEST_CASE("random flow density integrates to one") {
  const FlowModel f = random_flow(2, 41, 6, 16);
  const std::size_t n = 300;
  const double lo = -8.0, hi = 8.0, dx = (hi - lo) / n;
  Tensor2 grid(n * n, 2);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      grid(i * n + j, 0) = lo + (i + 0.5) * dx;
      grid(i * n + j, 1) = lo + (j + 0.5) * dx;
    }
  }
  double mass = 0.0;
  for (double v : flow_log_prob(f, grid)) mass += std::exp(v);
  mass *= dx * dx;
  CHECK(mass > 0.99);
  CHECK(mass < 1.01);
}

TEST_CASE("flow_log_prob_grad: closed form at the identity flow") {
  Rng rng(2);
  const FlowModel f = make_flow(2, FlowArch{}, rng);
  const std::vector<double> e1 = {1.0, 0.0};
  const FlowGrad g = flow_log_prob_grad(f, e1);
  CHECK(g.grad_x[0] == doctest::Approx(-1.0).epsilon(1e-15));
  CHECK(g.grad_x[1] == 0.0);
  const std::vector<double> origin = {0.0, 0.0};
  const FlowGrad g0 = flow_log_prob_grad(f, origin);
  CHECK(g0.grad_x == std::vector<double>{0.0, 0.0});
}

TEST_CASE("flow_log_prob_grad matches central finite differences") {
  for (std::uint64_t seed = 0; seed < 3; ++seed) {
    const FlowModel f0 = random_flow(2, 50 + seed, 2, 8);
    const std::vector<double> x = {0.3, -0.8};
    const FlowGrad g = flow_log_prob_grad(f0, x);

    const ScalarFn by_param = [&](std::span<const double> theta) {
      FlowModel f = f0;
      assign_from(f, theta);
      return flow_log_prob(f, x);
    };
    const auto num = finite_diff_grad(by_param, flatten(f0), 1e-5);
    CHECK(compare_gradients(g.grad_params, num, 1e-9).within(1e-6));

    const ScalarFn by_x = [&](std::span<const double> xi) { return flow_log_prob(f0, xi); };
    const auto num_x = finite_diff_grad(by_x, x, 1e-5);
    CHECK(compare_gradients(g.grad_x, num_x, 1e-9).within(1e-6));
  }
}

TEST_CASE("weighted batched backward equals the weighted sum of single gradients") {
  const FlowModel f = random_flow(2, 77, 3, 8);
  Tensor2 x(3, 2, {0.2, 0.1, -1.0, 0.4, 0.9, -0.6});
  const std::vector<double> w = {0.5, -1.0, 2.0};
  std::vector<double> acc(param_count(f), 0.0);
  std::vector<double> lp;
  const Tensor2 gx = flow_log_prob_backward(f, x, w, acc, &lp);
  std::vector<double> ref(acc.size(), 0.0);
  for (std::size_t r = 0; r < 3; ++r) {
    const FlowGrad g = flow_log_prob_grad(f, x.row(r));
    for (std::size_t i = 0; i < ref.size(); ++i) ref[i] += w[r] * g.grad_params[i];
    CHECK(gx(r, 0) == doctest::Approx(w[r] * g.grad_x[0]).epsilon(1e-12));
    CHECK(lp[r] == doctest::Approx(flow_log_prob(f, x.row(r))).epsilon(1e-13));
  }
  for (std::size_t i = 0; i < ref.size(); ++i) {
    CHECK(acc[i] == doctest::Approx(ref[i]).epsilon(1e-11));
  }
}

TEST_CASE("flow_sample") {
  Rng rng(123);
  const FlowModel f = make_flow(2, FlowArch{}, rng);
  Rng a(5), b(5);
  double mean0 = 0.0, mean1 = 0.0;
  const int n = 100000;
  for (int i = 0; i < n; ++i) {
    const auto s = flow_sample(f, a);
    CHECK(s == flow_sample(f, b));
    mean0 += s[0];
    mean1 += s[1];
  }
  CHECK(std::abs(mean0 / n) < 0.02);
  CHECK(std::abs(mean1 / n) < 0.02);

  const FlowModel r = random_flow(2, 3);
  Rng c(9);
  for (int i = 0; i < 1000; ++i) {
    CHECK(std::isfinite(flow_log_prob(r, flow_sample(r, c))));
  }
}

TEST_CASE("scale guard raises DivergenceError") {
  FlowModel f;
  f.dim = 2;
  f.blocks.push_back(constant_block(60.0, 0.0));
  const std::vector<double> z = {1.0, 1.0};
  CHECK_THROWS_AS(flow_forward(f, z), DivergenceError);
  CHECK_THROWS_AS(flow_log_prob(f, z), DivergenceError);
}

TEST_CASE("bounded scale keeps each block's log-scale within one") {
  const FlowModel f = random_flow(2, 8, 6, 16);
  for (const auto& b : f.blocks) {
    CHECK(b.scale_net.output_activation == OutputActivation::tanh);
  }
  std::mt19937_64 rng(3);
  for (int t = 0; t < 100; ++t) {
    const auto z = normal_point(rng, 2, 50.0);
    for (const auto& b : f.blocks) CHECK(std::abs(coupling_forward(b, z).log_det) <= 1.0);
  }
}

TEST_CASE("flatten and assign_from round-trip the flow") {
  const FlowModel f = random_flow(2, 1);
  FlowModel g = random_flow(2, 2);
  CHECK_FALSE(f == g);
  const auto theta = flatten(f);
  CHECK(theta.size() == param_count(f));
  assign_from(g, theta);
  CHECK(f == g);
  std::vector<double> short_theta(theta.size() - 1);
  CHECK_THROWS_AS(assign_from(g, short_theta), ShapeError);
}
