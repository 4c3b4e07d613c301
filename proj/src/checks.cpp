#include "rle/checks.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <numbers>
#include <random>
#include <sstream>
#include <stdexcept>

#include "rle/flow.hpp"
#include "rle/kernels.hpp"
#include "rle/lik.hpp"
#include "rle/optim.hpp"
#include "rle/regress.hpp"
#include "rle/trainer.hpp"

namespace rle {

namespace {

constexpr double kFdStep = 1e-5;
constexpr double kGradRelTol = 1e-4;
constexpr double kGradAbsFloor = 1e-7;

std::string fmt(double v) {
  std::ostringstream os;
  os.precision(3);
  os << std::scientific << v;
  return os.str();
}

Tensor2 random_tensor(std::size_t r, std::size_t c, Rng& rng, double lo, double hi) {
  std::uniform_real_distribution<double> u(lo, hi);
  Tensor2 t(r, c);
  for (double& v : t.flat()) v = u(rng);
  return t;
}

FlowArch small_flow() {
  FlowArch a;
  a.blocks = 2;
  a.width = 8;
  return a;
}

TrunkArch small_trunk() {
  TrunkArch a;
  a.width = 8;
  return a;
}

CheckResult grad_check(std::string name, LossKind kind, std::uint64_t seed) {
  Rng rng(seed);
  RegressionHead head = make_head(2, 2, small_trunk(), 1.0, rng);
  FlowModel flow = make_flow(2, small_flow(), rng, false);
  const Tensor2 x = random_tensor(3, 2, rng, -std::numbers::pi, std::numbers::pi);
  const Tensor2 y = random_tensor(3, 2, rng, -1.0, 1.0);
  const FlowModel* fp = kind.needs_flow() ? &flow : nullptr;

  const std::size_t nh = param_count(head);
  std::vector<double> theta = flatten(head);
  if (fp) {
    const auto f = flatten(flow);
    theta.insert(theta.end(), f.begin(), f.end());
  }
  const ScalarFn loss = [&](std::span<const double> p) {
    RegressionHead h = head;
    assign_from(h, p.first(nh));
    if (!fp) return model_loss(h, nullptr, kind, x, y);
    FlowModel f = flow;
    assign_from(f, p.subspan(nh));
    return model_loss(h, &f, kind, x, y);
  };
  const ModelGrad g = model_grad(head, fp, kind, x, y);
  std::vector<double> analytic = g.head;
  analytic.insert(analytic.end(), g.flow.begin(), g.flow.end());
  const std::vector<double> numeric = finite_diff_grad(loss, theta, kFdStep);
  const GradCompare c = compare_gradients(analytic, numeric, kGradAbsFloor);
  return {std::move(name), analytic.size() == theta.size() && c.within(kGradRelTol),
          "params " + std::to_string(theta.size()) + ", max rel err " +
              fmt(c.max_rel_error) + " (tol 1e-4, floor 1e-7)"};
}

CheckResult check_kernels(std::uint64_t seed) {
  if (!kernels::avx2_available()) return {"kernels_avx2_vs_scalar", true, "avx2 unavailable, scalar only"};
#if defined(RLE_HAVE_AVX2)
  Rng rng(seed);
  double worst = 0.0;
  const auto cmp = [&](std::span<const double> a, std::span<const double> b) {
    for (std::size_t i = 0; i < a.size(); ++i) {
      worst = std::max(worst, std::abs(a[i] - b[i]) / std::max(1.0, std::abs(a[i])));
    }
  };
  const std::size_t shapes[][3] = {{1, 1, 1}, {7, 13, 5}, {33, 3, 17}, {128, 64, 64}, {5, 64, 1}};
  for (const auto& s : shapes) {
    const std::size_t m = s[0], n = s[1], k = s[2];
    const Tensor2 a = random_tensor(m, k, rng, -1, 1);
    const Tensor2 bt = random_tensor(n, k, rng, -1, 1);
    const Tensor2 b = random_tensor(k, n, rng, -1, 1);
    const Tensor2 g = random_tensor(m, n, rng, -1, 1);
    std::vector<double> c1(m * n), c2(m * n);
    kernels::scalar::gemm_nt(a.flat().data(), bt.flat().data(), c1.data(), m, n, k);
    kernels::avx2::gemm_nt(a.flat().data(), bt.flat().data(), c2.data(), m, n, k);
    cmp(c1, c2);
    kernels::scalar::gemm_nn(a.flat().data(), b.flat().data(), c1.data(), m, n, k);
    kernels::avx2::gemm_nn(a.flat().data(), b.flat().data(), c2.data(), m, n, k);
    cmp(c1, c2);
    std::vector<double> t1(k * n, 0.5), t2(k * n, 0.5);
    kernels::scalar::gemm_tn_acc(a.flat().data(), g.flat().data(), t1.data(), m, n, k);
    kernels::avx2::gemm_tn_acc(a.flat().data(), g.flat().data(), t2.data(), m, n, k);
    cmp(t1, t2);
    std::vector<double> r1(g.flat().begin(), g.flat().end()), r2 = r1;
    kernels::scalar::leaky_relu_inplace(r1.data(), r1.size(), 0.01);
    kernels::avx2::leaky_relu_inplace(r2.data(), r2.size(), 0.01);
    cmp(r1, r2);
    const double d1 = kernels::scalar::dot(a.flat().data(), a.flat().data(), a.size());
    const double d2 = kernels::avx2::dot(a.flat().data(), a.flat().data(), a.size());
    cmp(std::span(&d1, 1), std::span(&d2, 1));
  }
  return {"kernels_avx2_vs_scalar", worst <= 1e-12, "max rel diff " + fmt(worst) + " (tol 1e-12)"};
#else
  (void)seed;
  return {"kernels_avx2_vs_scalar", true, "avx2 not compiled in"};
#endif
}

CheckResult check_roundtrip(std::uint64_t seed) {
  Rng rng(seed);
  FlowModel flow = make_flow(2, FlowArch{}, rng, false);
  std::normal_distribution<double> n(0.0, 2.0);
  Tensor2 z(1000, 2);
  for (double& v : z.flat()) v = n(rng);
  const Tensor2 back = flow_inverse(flow, flow_forward(flow, z)).z;
  double worst = 0.0;
  for (std::size_t i = 0; i < z.size(); ++i) {
    worst = std::max(worst, std::abs(back.flat()[i] - z.flat()[i]));
  }
  return {"flow_roundtrip", worst < 1e-9, "max |f^-1(f(z)) - z| " + fmt(worst) + " (tol 1e-9)"};
}

CheckResult check_log_det(std::uint64_t seed) {
  Rng rng(seed);
  std::normal_distribution<double> n(0.0, 1.5);
  const double h = 1e-6;
  double worst = 0.0;
  for (int trial = 0; trial < 100; ++trial) {
    const FlowModel flow = make_flow(2, small_flow(), rng, false);
    const CouplingBlock& b = flow.blocks[static_cast<std::size_t>(trial) % flow.blocks.size()];
    const std::vector<double> z{n(rng), n(rng)};
    const double analytic = coupling_forward(b, z).log_det;
    double J[2][2];
    for (int j = 0; j < 2; ++j) {
      std::vector<double> zp = z, zm = z;
      zp[j] += h;
      zm[j] -= h;
      const auto fp = coupling_forward(b, zp).value;
      const auto fm = coupling_forward(b, zm).value;
      for (int i = 0; i < 2; ++i) J[i][j] = (fp[i] - fm[i]) / (2 * h);
    }
    const double numeric = std::log(std::abs(J[0][0] * J[1][1] - J[0][1] * J[1][0]));
    const double err = std::abs(analytic - numeric) / std::max(std::abs(numeric), 1e-3);
    worst = std::max(worst, err);
  }
  return {"flow_log_det", worst < 1e-5, "max rel err " + fmt(worst) + " (tol 1e-5)"};
}

CheckResult check_flow_mass(std::uint64_t seed) {
  Rng rng(seed);
  FlowArch arch;
  arch.width = 32;
  const FlowModel flow = make_flow(2, arch, rng, false);
  const double mass = grid_mass([&](const Tensor2& x) { return flow_log_prob(flow, x); });
  return {"flow_mass", mass >= 0.99 && mass <= 1.01,
          "grid integral " + fmt(mass) + " (want [0.99, 1.01])"};
}

CheckResult check_compute_s(std::uint64_t) {
  const LogDensityFn identity_1d = [](const Tensor2& x) {
    std::vector<double> out(x.rows());
    for (std::size_t r = 0; r < x.rows(); ++r) out[r] = std_normal_log_prob(x.row(r));
    return out;
  };
  const BaseDensity q{BaseFamily::gaussian, 1};
  const double target = 2.0 * std::sqrt(std::numbers::pi);
  double prev = INFINITY;
  bool monotone = true;
  double last = 0.0;
  for (std::size_t n : {100u, 1000u, 10000u}) {
    const double err = std::abs(compute_s(identity_1d, 1, q, RiemannCfg{-5.0, 5.0, n}) - target);
    monotone = monotone && err < prev;
    prev = last = err;
  }
  return {"compute_s_convergence", monotone && last < 1e-3,
          "|s - 2 sqrt(pi)| at N=1e4 " + fmt(last) + (monotone ? ", decreasing" : ", NOT decreasing")};
}

CheckResult check_rle_dle_identity(std::uint64_t seed) {
  Rng rng(seed);
  std::uniform_real_distribution<double> u(-1.0, 1.0), us(0.05, 0.9);
  double worst = 0.0;
  for (int trial = 0; trial < 100; ++trial) {
    const FlowModel flow = make_flow(2, small_flow(), rng, false);
    const BaseDensity q{trial % 2 ? BaseFamily::gaussian : BaseFamily::laplace, 2};
    const std::vector<double> g{u(rng), u(rng)}, m{u(rng), u(rng)}, s{us(rng), us(rng)};
    const double diff = loss_rle(flow, q, g, m, s) - loss_dle(flow, g, m, s);
    const double expect = -base_log_prob(q, standardize(g, m, s));
    worst = std::max(worst, std::abs(diff - expect));
  }
  return {"rle_minus_dle_is_log_q", worst < 1e-12, "max abs err " + fmt(worst) + " (tol 1e-12)"};
}

// log s depends on the flow only, so the head gradient must not see it.
CheckResult check_log_s_head(std::uint64_t seed) {
  Rng rng(seed);
  RegressionHead head = make_head(2, 2, small_trunk(), 1.0, rng);
  const FlowModel flow = make_flow(2, small_flow(), rng, false);
  const Tensor2 x = random_tensor(4, 2, rng, -3, 3);
  const Tensor2 y = random_tensor(4, 2, rng, -1, 1);
  LossKind with_s;
  with_s.include_log_s = true;
  with_s.riemann.subintervals = 24;
  const LossKind without_s;
  const std::size_t nh = param_count(head);
  const std::vector<double> theta = flatten(head);
  const ScalarFn log_s_term = [&](std::span<const double> p) {
    RegressionHead h = head;
    assign_from(h, p.first(nh));
    return model_loss(h, &flow, with_s, x, y) - model_loss(h, &flow, without_s, x, y);
  };
  // The term is constant in the head parameters, so any step size is exact
  // up to rounding; a wide one keeps rounding well under the tolerance.
  const auto fd = finite_diff_grad(log_s_term, theta, 1e-2);
  double worst = 0.0;
  for (double v : fd) worst = std::max(worst, std::abs(v));
  const auto ga = model_grad(head, &flow, with_s, x, y).head;
  const auto gb = model_grad(head, &flow, without_s, x, y).head;
  double worst_an = 0.0;
  for (std::size_t i = 0; i < ga.size(); ++i) worst_an = std::max(worst_an, std::abs(ga[i] - gb[i]));
  return {"log_s_head_gradient_zero", worst < 1e-12 && worst_an < 1e-12,
          "fd " + fmt(worst) + ", analytic " + fmt(worst_an) + " (tol 1e-12)"};
}

LossKind kind_of(LossType t) {
  LossKind k;
  k.type = t;
  return k;
}

struct Entry {
  std::string_view name;
  std::function<CheckResult(std::uint64_t)> run;
};

const std::vector<Entry>& registry() {
  static const std::vector<Entry> entries = [] {
    std::vector<Entry> e;
    e.push_back({"kernels_avx2_vs_scalar", check_kernels});
    const std::pair<std::string_view, LossType> plain[] = {
        {"grad_l2_const", LossType::l2_const},         {"grad_l1_const", LossType::l1_const},
        {"grad_gaussian_nll", LossType::gaussian_nll}, {"grad_laplace_nll", LossType::laplace_nll},
        {"grad_dle", LossType::dle},                   {"grad_rle", LossType::rle}};
    for (const auto& [name, type] : plain) {
      e.push_back({name, [name, type](std::uint64_t s) {
                     return grad_check(std::string(name), kind_of(type), s);
                   }});
    }
    e.push_back({"grad_rle_gaussian_q", [](std::uint64_t s) {
                   LossKind k;
                   k.q = BaseFamily::gaussian;
                   return grad_check("grad_rle_gaussian_q", k, s);
                 }});
    e.push_back({"grad_rle_log_s", [](std::uint64_t s) {
                   LossKind k;
                   k.include_log_s = true;
                   k.riemann.subintervals = 24;
                   return grad_check("grad_rle_log_s", k, s);
                 }});
    e.push_back({"flow_roundtrip", check_roundtrip});
    e.push_back({"flow_log_det", check_log_det});
    e.push_back({"flow_mass", check_flow_mass});
    e.push_back({"compute_s_convergence", check_compute_s});
    e.push_back({"rle_minus_dle_is_log_q", check_rle_dle_identity});
    e.push_back({"log_s_head_gradient_zero", check_log_s_head});
    return e;
  }();
  return entries;
}

}  // namespace

std::vector<std::string_view> check_names() {
  std::vector<std::string_view> out;
  for (const auto& e : registry()) out.push_back(e.name);
  return out;
}

CheckResult run_check(std::string_view name, std::uint64_t seed) {
  for (const auto& e : registry()) {
    if (e.name == name) {
      try {
        return e.run(seed);
      } catch (const std::exception& ex) {
        return {std::string(name), false, std::string("threw: ") + ex.what()};
      }
    }
  }
  throw std::invalid_argument("unknown check '" + std::string(name) + "'");
}

}  // namespace rle
