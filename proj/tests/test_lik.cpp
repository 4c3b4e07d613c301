#include <cmath>
#include <numbers>
#include <random>
#include <vector>

#include "doctest.h"
#include "rle/errors.hpp"
#include "rle/lik.hpp"
#include "rle/optim.hpp"

using namespace rle;

namespace {

const double kLn2 = std::log(2.0);
const double kLn2Pi = std::log(2.0 * std::numbers::pi);

FlowModel identity_flow() {
  Rng rng(0);
  return make_flow(2, FlowArch{}, rng);
}

FlowModel random_flow(std::uint64_t seed) {
  Rng rng(seed);
  FlowArch a;
  a.blocks = 2;
  a.width = 8;
  return make_flow(2, a, rng, false);
}

struct Draw {
  std::vector<double> mu_g, mu_hat, sigma_hat;
};

Draw random_draw(std::mt19937_64& rng) {
  std::normal_distribution<double> n(0.0, 1.0);
  std::uniform_real_distribution<double> s(0.2, 0.9);
  return {{n(rng), n(rng)}, {n(rng), n(rng)}, {s(rng), s(rng)}};
}

const LossType kAllTypes[] = {LossType::l2_const, LossType::l1_const,
                              LossType::gaussian_nll, LossType::laplace_nll,
                              LossType::dle, LossType::rle};

}  // namespace

TEST_CASE("loss type names round-trip") {
  for (LossType t : kAllTypes) CHECK(parse_loss_type(loss_type_name(t)) == t);
  CHECK_FALSE(parse_loss_type("nope").has_value());
  CHECK(parse_base_family("gaussian") == BaseFamily::gaussian);
  CHECK(parse_base_family("laplace") == BaseFamily::laplace);
  LossKind k;
  CHECK(loss_label(k) == "rle");
  k.include_log_s = true;
  CHECK(loss_label(k) == "rle+s");
}

TEST_CASE("base_log_prob") {
  const std::vector<double> origin = {0.0, 0.0};
  CHECK(base_log_prob({BaseFamily::gaussian, 2}, origin) ==
        doctest::Approx(-1.837877).epsilon(1e-6));
  CHECK(base_log_prob({BaseFamily::laplace, 2}, origin) ==
        doctest::Approx(-1.386294).epsilon(1e-6));
  const std::vector<double> three = {3.0};
  CHECK(base_log_prob({BaseFamily::laplace, 1}, three) ==
        doctest::Approx(-3.693147).epsilon(1e-6));
  const std::vector<double> x = {0.5, -2.0};
  const auto g = base_log_prob_grad({BaseFamily::laplace, 2}, x);
  CHECK(g == std::vector<double>{-1.0, 1.0});
  const auto gg = base_log_prob_grad({BaseFamily::gaussian, 2}, x);
  CHECK(gg == std::vector<double>{-0.5, 2.0});
}

TEST_CASE("standardize") {
  const std::vector<double> a = {2.0}, b = {1.0}, s = {0.5};
  CHECK(standardize(a, b, s)[0] == 2.0);
  const std::vector<double> mu = {0.3, -0.4}, sig = {0.2, 0.7};
  CHECK(standardize(mu, mu, sig) == std::vector<double>{0.0, 0.0});

  std::mt19937_64 rng(4);
  for (int t = 0; t < 50; ++t) {
    const Draw d = random_draw(rng);
    const double scale = std::uniform_real_distribution<double>(0.1, 5.0)(rng);
    const double shift = std::normal_distribution<double>(0.0, 3.0)(rng);
    auto map = [&](const std::vector<double>& v, bool is_scale) {
      std::vector<double> out(v.size());
      for (std::size_t i = 0; i < v.size(); ++i) out[i] = scale * v[i] + (is_scale ? 0.0 : shift);
      return out;
    };
    const auto ref = standardize(d.mu_g, d.mu_hat, d.sigma_hat);
    const auto got = standardize(map(d.mu_g, false), map(d.mu_hat, false), map(d.sigma_hat, true));
    for (std::size_t i = 0; i < 2; ++i) CHECK(got[i] == doctest::Approx(ref[i]).epsilon(1e-10));
  }

  const std::vector<double> bad = {0.0};
  CHECK_THROWS_AS(standardize(a, b, bad), DomainError);
  const std::vector<double> tiny = {1e-7};
  CHECK_THROWS_AS(standardize(a, b, tiny), DomainError);
  const std::vector<double> two = {1.0, 1.0};
  CHECK_THROWS_AS(standardize(a, b, two), ShapeError);
}

TEST_CASE("parametric negative log-likelihoods") {
  const std::vector<double> z = {0.0}, one = {1.0}, half = {0.5};
  CHECK(nll_gaussian(z, z, one) == doctest::Approx(0.918939).epsilon(1e-6));
  CHECK(nll_gaussian(one, z, one) == doctest::Approx(1.418939).epsilon(1e-6));
  CHECK(nll_laplace(z, z, one) == doctest::Approx(kLn2).epsilon(1e-15));
  CHECK(nll_laplace(one, z, half) == doctest::Approx(2.0).epsilon(1e-15));
  CHECK(loss_l2_const(one, z) == doctest::Approx(1.418939).epsilon(1e-6));
  CHECK(loss_l1_const(one, z) == doctest::Approx(1.0 + kLn2).epsilon(1e-15));
  CHECK_THROWS_AS(nll_gaussian(z, z, z), DomainError);
  CHECK_THROWS_AS(nll_laplace(z, z, z), DomainError);
}

TEST_CASE("argmin of the parametric losses at fixed scale") {
  // Scan mu_hat on a grid around mu_g; the minimiser is mu_g itself.
  const std::vector<double> target = {0.37};
  const std::vector<double> c = {0.8};
  double best_g = INFINITY, best_l = INFINITY, arg_g = 0, arg_l = 0;
  for (int i = -400; i <= 400; ++i) {
    const std::vector<double> m = {0.37 + i * 1e-3};
    const double g = nll_gaussian(target, m, c);
    const double l = nll_laplace(target, m, c);
    if (g < best_g) best_g = g, arg_g = m[0];
    if (l < best_l) best_l = l, arg_l = m[0];
  }
  CHECK(arg_g == doctest::Approx(0.37).epsilon(1e-12));
  CHECK(arg_l == doctest::Approx(0.37).epsilon(1e-12));

  // With sigma fixed to c the Laplace NLL is the l1 loss over c plus a constant.
  const std::vector<double> a = {0.1}, b = {0.9};
  const double d1 = nll_laplace(target, a, c) - std::abs(0.37 - 0.1) / 0.8;
  const double d2 = nll_laplace(target, b, c) - std::abs(0.37 - 0.9) / 0.8;
  CHECK(d1 == doctest::Approx(d2).epsilon(1e-14));
}

TEST_CASE("dle and rle at the identity flow") {
  const FlowModel f = identity_flow();
  const std::vector<double> z = {0.0, 0.0}, one = {1.0, 1.0};
  CHECK(loss_dle(f, z, z, one) == doctest::Approx(1.837877).epsilon(1e-6));
  CHECK(loss_rle(f, {BaseFamily::laplace, 2}, z, z, one) ==
        doctest::Approx(3.224171).epsilon(1e-6));
  CHECK(loss_rle(f, {BaseFamily::laplace, 2}, z, z, one) ==
        doctest::Approx(2.0 * kLn2 + kLn2Pi).epsilon(1e-15));

  std::mt19937_64 rng(6);
  for (int t = 0; t < 100; ++t) {
    const Draw d = random_draw(rng);
    CHECK(loss_dle(f, d.mu_g, d.mu_hat, d.sigma_hat) ==
          doctest::Approx(nll_gaussian(d.mu_g, d.mu_hat, d.sigma_hat)).epsilon(1e-13));
  }
}

TEST_CASE("dle equals the change-of-variables density of mu_g") {
  // p(mu_g) = p_flow((mu_g - mu_hat) / sigma) / prod sigma, computed here by
  // inverting the flow and summing block log-dets directly.
  const FlowModel f = random_flow(12);
  std::mt19937_64 rng(3);
  for (int t = 0; t < 20; ++t) {
    const Draw d = random_draw(rng);
    const auto u = standardize(d.mu_g, d.mu_hat, d.sigma_hat);
    std::vector<double> x = u;
    double log_det = 0.0;
    for (std::size_t k = f.blocks.size(); k-- > 0;) {
      const CouplingResult inv = coupling_inverse(f.blocks[k], x);
      log_det += inv.log_det;
      x.assign(inv.value.rbegin(), inv.value.rend());
    }
    const double log_p = std_normal_log_prob(x) + log_det -
                         std::log(d.sigma_hat[0]) - std::log(d.sigma_hat[1]);
    CHECK(loss_dle(f, d.mu_g, d.mu_hat, d.sigma_hat) == doctest::Approx(-log_p).epsilon(1e-12));
  }
}

TEST_CASE("rle minus dle is minus log Q") {
  std::mt19937_64 rng(8);
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    const FlowModel f = random_flow(seed);
    for (BaseFamily fam : {BaseFamily::laplace, BaseFamily::gaussian}) {
      for (int t = 0; t < 20; ++t) {
        const Draw d = random_draw(rng);
        const BaseDensity q{fam, 2};
        const double diff = loss_rle(f, q, d.mu_g, d.mu_hat, d.sigma_hat) -
                            loss_dle(f, d.mu_g, d.mu_hat, d.sigma_hat);
        const double log_q = base_log_prob(q, standardize(d.mu_g, d.mu_hat, d.sigma_hat));
        CHECK(std::abs(diff + log_q) < 1e-12);
      }
    }
  }
}

TEST_CASE("log s shifts rle by a constant independent of the inputs") {
  const FlowModel f = random_flow(4);
  const BaseDensity q{BaseFamily::laplace, 2};
  RiemannCfg r;
  r.subintervals = 60;
  const double s = compute_s(f, q, r);
  std::mt19937_64 rng(1);
  for (int t = 0; t < 3; ++t) {
    const Draw d = random_draw(rng);
    const double with = loss_rle(f, q, d.mu_g, d.mu_hat, d.sigma_hat, true, r);
    const double without = loss_rle(f, q, d.mu_g, d.mu_hat, d.sigma_hat, false, r);
    CHECK(with - without == doctest::Approx(-std::log(s)).epsilon(1e-12));
  }
}

TEST_CASE("compute_s with a standard-normal G and Gaussian Q in one dimension") {
  const LogDensityFn normal_1d = [](const Tensor2& x) {
    std::vector<double> out(x.rows());
    for (std::size_t r = 0; r < x.rows(); ++r) {
      out[r] = -0.5 * std::log(2.0 * std::numbers::pi) - 0.5 * x(r, 0) * x(r, 0);
    }
    return out;
  };
  const double exact = 2.0 * std::sqrt(std::numbers::pi);
  const BaseDensity q{BaseFamily::gaussian, 1};
  double prev_err = INFINITY;
  for (std::size_t n : {100u, 1000u, 10000u}) {
    RiemannCfg r;
    r.subintervals = n;
    const double err = std::abs(compute_s(normal_1d, 1, q, r) - exact);
    CHECK(err < prev_err);
    prev_err = err;
  }
  CHECK(prev_err < 1e-3);
  CHECK(exact == doctest::Approx(3.544908).epsilon(1e-6));

  RiemannCfg narrow, wide;
  narrow.subintervals = 10000;
  wide.lower = -8.0;
  wide.upper = 8.0;
  wide.subintervals = 16000;
  CHECK(std::abs(compute_s(normal_1d, 1, q, narrow) - compute_s(normal_1d, 1, q, wide)) < 1e-4);
}

TEST_CASE("compute_s on the identity flow in two dimensions") {
  const FlowModel f = identity_flow();
  const BaseDensity q{BaseFamily::gaussian, 2};
  RiemannCfg r;
  r.subintervals = 200;
  // Integral of N(x)^2 over R^2 is 1 / (4 pi).
  CHECK(compute_s(f, q, r) == doctest::Approx(4.0 * std::numbers::pi).epsilon(1e-3));
}

TEST_CASE("compute_s rejects bad configurations") {
  const FlowModel f = identity_flow();
  RiemannCfg r;
  r.subintervals = 1;
  CHECK_THROWS_AS(compute_s(f, {BaseFamily::laplace, 2}, r), DomainError);
  r.subintervals = 10;
  r.lower = 1.0;
  r.upper = 0.0;
  CHECK_THROWS_AS(compute_s(f, {BaseFamily::laplace, 2}, r), DomainError);
  const LogDensityFn g = [](const Tensor2& x) { return std::vector<double>(x.rows(), 0.0); };
  CHECK_THROWS(compute_s(g, 3, {BaseFamily::laplace, 3}, RiemannCfg{}));
}

TEST_CASE("confidence") {
  const std::vector<double> s = {0.2, 0.4};
  CHECK(confidence(s, 1.0) == doctest::Approx(0.7).epsilon(1e-15));
  const std::vector<double> h = {1.0, 1.0, 1.0};
  CHECK(confidence(h, 2.0) == 0.5);
  const std::vector<double> up = {0.2, 0.5};
  CHECK(confidence(up, 1.0) < confidence(s, 1.0));
  const std::vector<double> out = {1.0, 0.5};
  CHECK_THROWS_AS(confidence(out, 1.0), DomainError);
  const std::vector<double> neg = {-0.1};
  CHECK_THROWS_AS(confidence(neg, 1.0), DomainError);
}

TEST_CASE("loss_grad matches loss_value and finite differences for every kind") {
  const FlowModel f = random_flow(21);
  std::mt19937_64 rng(10);
  for (LossType t : kAllTypes) {
    LossKind kind;
    kind.type = t;
    CAPTURE(loss_type_name(t));
    const FlowModel* flow = kind.needs_flow() ? &f : nullptr;
    for (int rep = 0; rep < 5; ++rep) {
      const Draw d = random_draw(rng);
      const LossGrad g = loss_grad(kind, flow, d.mu_g, d.mu_hat, d.sigma_hat);
      CHECK(g.value == doctest::Approx(loss_value(kind, flow, d.mu_g, d.mu_hat, d.sigma_hat))
                           .epsilon(1e-14));
      CHECK(g.d_sigma.empty() == !kind.predicts_sigma());
      CHECK(g.d_flow.empty() == !kind.needs_flow());

      const ScalarFn by_mu = [&](std::span<const double> m) {
        return loss_value(kind, flow, d.mu_g, m, d.sigma_hat);
      };
      CHECK(compare_gradients(g.d_mu, finite_diff_grad(by_mu, d.mu_hat, 1e-5), 1e-9)
                .within(1e-6));
      if (kind.predicts_sigma()) {
        const ScalarFn by_sigma = [&](std::span<const double> s) {
          return loss_value(kind, flow, d.mu_g, d.mu_hat, s);
        };
        CHECK(compare_gradients(g.d_sigma, finite_diff_grad(by_sigma, d.sigma_hat, 1e-5), 1e-9)
                  .within(1e-6));
      }
      if (kind.needs_flow()) {
        const ScalarFn by_flow = [&](std::span<const double> theta) {
          FlowModel g2 = f;
          assign_from(g2, theta);
          return loss_value(kind, &g2, d.mu_g, d.mu_hat, d.sigma_hat);
        };
        CHECK(compare_gradients(g.d_flow, finite_diff_grad(by_flow, flatten(f), 1e-5), 1e-9)
                  .within(1e-6));
      }
    }
  }
}

TEST_CASE("gaussian nll is stationary in mu at the label") {
  LossKind k;
  k.type = LossType::gaussian_nll;
  const std::vector<double> mu = {0.4, -0.2}, s = {0.3, 0.6};
  const LossGrad g = loss_grad(k, nullptr, mu, mu, s);
  CHECK(g.d_mu == std::vector<double>{0.0, 0.0});
}

TEST_CASE("the log s term has no head gradient") {
  const FlowModel f = random_flow(5);
  LossKind with, without;
  with.include_log_s = true;
  with.riemann.subintervals = 40;
  without.riemann = with.riemann;
  std::mt19937_64 rng(2);
  const Draw d = random_draw(rng);
  const LossGrad a = loss_grad(with, &f, d.mu_g, d.mu_hat, d.sigma_hat);
  const LossGrad b = loss_grad(without, &f, d.mu_g, d.mu_hat, d.sigma_hat);
  for (std::size_t i = 0; i < 2; ++i) {
    CHECK(std::abs(a.d_mu[i] - b.d_mu[i]) < 1e-12);
    CHECK(std::abs(a.d_sigma[i] - b.d_sigma[i]) < 1e-12);
  }
}

TEST_CASE("batch_loss averages per-sample losses") {
  const FlowModel f = random_flow(6);
  LossKind k;
  std::mt19937_64 rng(7);
  Tensor2 g(4, 2), m(4, 2), s(4, 2);
  for (std::size_t r = 0; r < 4; ++r) {
    const Draw d = random_draw(rng);
    for (std::size_t j = 0; j < 2; ++j) {
      g(r, j) = d.mu_g[j];
      m(r, j) = d.mu_hat[j];
      s(r, j) = d.sigma_hat[j];
    }
  }
  const BatchLoss b = batch_loss(k, &f, g, m, s, true);
  double mean = 0.0;
  for (std::size_t r = 0; r < 4; ++r) {
    const double v = loss_value(k, &f, g.row(r), m.row(r), s.row(r));
    CHECK(b.per_sample[r] == doctest::Approx(v).epsilon(1e-13));
    mean += v / 4.0;
    const LossGrad one = loss_grad(k, &f, g.row(r), m.row(r), s.row(r));
    CHECK(b.d_mu(r, 0) == doctest::Approx(one.d_mu[0] / 4.0).epsilon(1e-12));
  }
  CHECK(b.mean == doctest::Approx(mean).epsilon(1e-13));
  CHECK_THROWS_AS(batch_loss(k, nullptr, g, m, s, false), ShapeError);
}
