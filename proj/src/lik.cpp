#include "rle/lik.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <string>

#include "rle/errors.hpp"

namespace rle {

namespace {

constexpr double kHalfLog2Pi = 0.91893853320467274178;
constexpr double kLn2 = std::numbers::ln2;
constexpr std::size_t kGridChunk = 8192;

double sign(double x) noexcept { return (x > 0.0) - (x < 0.0); }

void check_same_len(std::span<const double> a, std::span<const double> b,
                    const char* what) {
  if (a.size() != b.size()) {
    throw ShapeError(std::string(what) + ": length mismatch");
  }
}

void check_sigma(std::span<const double> sigma_hat) {
  for (double s : sigma_hat) {
    if (!std::isfinite(s) || s < kSigmaFloor) {
      throw DomainError("sigma_hat " + std::to_string(s) +
                        " below floor " + std::to_string(kSigmaFloor));
    }
  }
}

// Neumaier-compensated running sum.
struct CompensatedSum {
  double sum = 0.0;
  double c = 0.0;
  void add(double v) noexcept {
    const double t = sum + v;
    if (std::abs(sum) >= std::abs(v)) {
      c += (sum - t) + v;
    } else {
      c += (v - t) + sum;
    }
    sum = t;
  }
  double value() const noexcept { return sum + c; }
};

// Visits the right-endpoint grid in row-major chunks.
template <typename Visit>
void for_each_grid_chunk(std::size_t dim, const RiemannCfg& cfg, Visit&& visit) {
  const std::size_t N = cfg.subintervals;
  const double dx = cfg.step();
  std::size_t total = 1;
  for (std::size_t d = 0; d < dim; ++d) total *= N;
  for (std::size_t start = 0; start < total; start += kGridChunk) {
    const std::size_t len = std::min(kGridChunk, total - start);
    Tensor2 pts(len, dim);
    for (std::size_t r = 0; r < len; ++r) {
      std::size_t idx = start + r;
      for (std::size_t d = dim; d-- > 0;) {
        const std::size_t i = idx % N;
        idx /= N;
        pts(r, d) = cfg.lower + static_cast<double>(i + 1) * dx;
      }
    }
    visit(pts);
  }
}

void check_grid_dim(std::size_t dim) {
  if (dim < 1 || dim > 2) {
    throw ShapeError("grid quadrature supports D = 1 or 2, got " +
                     std::to_string(dim));
  }
}

// log of sum_j Q_j G_j dx^D over the grid, max-shifted for range.
double log_residual_mass(const LogDensityFn& log_g, std::size_t dim,
                         const BaseDensity& q, const RiemannCfg& cfg) {
  cfg.validate();
  check_grid_dim(dim);
  if (q.dim != dim) throw ShapeError("compute_s: base density dim mismatch");
  std::vector<double> terms;
  for_each_grid_chunk(dim, cfg, [&](const Tensor2& pts) {
    const std::vector<double> lg = log_g(pts);
    for (std::size_t r = 0; r < pts.rows(); ++r) {
      terms.push_back(lg[r] + base_log_prob(q, pts.row(r)));
    }
  });
  const double mx = *std::max_element(terms.begin(), terms.end());
  if (!std::isfinite(mx)) {
    throw DivergenceError("compute_s: integrand underflows on the whole grid "
                          "(mass lies outside the interval)");
  }
  CompensatedSum acc;
  for (double t : terms) acc.add(std::exp(t - mx));
  const double log_cell = static_cast<double>(dim) * std::log(cfg.step());
  return mx + std::log(acc.value()) + log_cell;
}

// Adds d/dphi of log(sum_j Q_j G_j) into `grad`, scaled by `coeff`.
void add_log_mass_grad(const FlowModel& flow, const BaseDensity& q,
                       const RiemannCfg& cfg, double coeff,
                       std::span<double> grad) {
  check_grid_dim(flow.dim);
  std::vector<Tensor2> chunks;
  std::vector<double> terms;
  for_each_grid_chunk(flow.dim, cfg, [&](const Tensor2& pts) {
    const std::vector<double> lg = flow_log_prob(flow, pts);
    for (std::size_t r = 0; r < pts.rows(); ++r) {
      terms.push_back(lg[r] + base_log_prob(q, pts.row(r)));
    }
    chunks.push_back(pts);
  });
  const double mx = *std::max_element(terms.begin(), terms.end());
  if (!std::isfinite(mx)) {
    throw DivergenceError("log s gradient: integrand underflows on the grid");
  }
  CompensatedSum acc;
  for (double t : terms) acc.add(std::exp(t - mx));
  const double total = acc.value();
  std::size_t j = 0;
  for (const Tensor2& pts : chunks) {
    std::vector<double> w(pts.rows());
    for (std::size_t r = 0; r < pts.rows(); ++r, ++j) {
      w[r] = coeff * std::exp(terms[j] - mx) / total;
    }
    flow_log_prob_backward(flow, pts, w, grad);
  }
}

}  // namespace

void RiemannCfg::validate() const {
  if (!(std::isfinite(lower) && std::isfinite(upper) && lower < upper)) {
    throw DomainError("RiemannCfg: need finite lower < upper");
  }
  if (subintervals < 2) throw DomainError("RiemannCfg: need at least 2 subintervals");
}

std::string_view loss_type_name(LossType t) noexcept {
  switch (t) {
    case LossType::l2_const: return "l2_const";
    case LossType::l1_const: return "l1_const";
    case LossType::gaussian_nll: return "gaussian_nll";
    case LossType::laplace_nll: return "laplace_nll";
    case LossType::dle: return "dle";
    case LossType::rle: return "rle";
  }
  return "?";
}

std::optional<LossType> parse_loss_type(std::string_view s) noexcept {
  for (auto t : {LossType::l2_const, LossType::l1_const, LossType::gaussian_nll,
                 LossType::laplace_nll, LossType::dle, LossType::rle}) {
    if (loss_type_name(t) == s) return t;
  }
  return std::nullopt;
}

std::string_view base_family_name(BaseFamily f) noexcept {
  return f == BaseFamily::gaussian ? "gaussian" : "laplace";
}

std::optional<BaseFamily> parse_base_family(std::string_view s) noexcept {
  if (s == "gaussian") return BaseFamily::gaussian;
  if (s == "laplace") return BaseFamily::laplace;
  return std::nullopt;
}

std::string loss_label(const LossKind& k) {
  std::string s(loss_type_name(k.type));
  if (k.type == LossType::rle) {
    if (k.q != BaseFamily::laplace) s += "[" + std::string(base_family_name(k.q)) + "]";
    if (k.include_log_s) s += "+s";
  }
  return s;
}

double base_log_prob(const BaseDensity& q, std::span<const double> x) {
  if (x.size() != q.dim) throw ShapeError("base_log_prob: dim mismatch");
  double lp = 0.0;
  if (q.family == BaseFamily::gaussian) {
    for (double v : x) lp -= kHalfLog2Pi + 0.5 * v * v;
  } else {
    for (double v : x) lp -= kLn2 + std::abs(v);
  }
  return lp;
}

std::vector<double> base_log_prob_grad(const BaseDensity& q,
                                       std::span<const double> x) {
  if (x.size() != q.dim) throw ShapeError("base_log_prob_grad: dim mismatch");
  std::vector<double> g(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) {
    g[i] = q.family == BaseFamily::gaussian ? -x[i] : -sign(x[i]);
  }
  return g;
}

std::vector<double> standardize(std::span<const double> mu_g,
                                std::span<const double> mu_hat,
                                std::span<const double> sigma_hat) {
  check_same_len(mu_g, mu_hat, "standardize");
  check_same_len(mu_g, sigma_hat, "standardize");
  check_sigma(sigma_hat);
  std::vector<double> out(mu_g.size());
  for (std::size_t i = 0; i < out.size(); ++i) {
    out[i] = (mu_g[i] - mu_hat[i]) / sigma_hat[i];
  }
  return out;
}

double nll_gaussian(std::span<const double> mu_g, std::span<const double> mu_hat,
                    std::span<const double> sigma_hat) {
  const auto z = standardize(mu_g, mu_hat, sigma_hat);
  double v = 0.0;
  for (std::size_t i = 0; i < z.size(); ++i) {
    v += kHalfLog2Pi + std::log(sigma_hat[i]) + 0.5 * z[i] * z[i];
  }
  return v;
}

double nll_laplace(std::span<const double> mu_g, std::span<const double> mu_hat,
                   std::span<const double> sigma_hat) {
  const auto z = standardize(mu_g, mu_hat, sigma_hat);
  double v = 0.0;
  for (std::size_t i = 0; i < z.size(); ++i) {
    v += std::log(2.0 * sigma_hat[i]) + std::abs(z[i]);
  }
  return v;
}

double loss_l2_const(std::span<const double> mu_g, std::span<const double> mu_hat) {
  check_same_len(mu_g, mu_hat, "loss_l2_const");
  double v = 0.0;
  for (std::size_t i = 0; i < mu_g.size(); ++i) {
    const double r = mu_g[i] - mu_hat[i];
    v += kHalfLog2Pi + 0.5 * r * r;
  }
  return v;
}

double loss_l1_const(std::span<const double> mu_g, std::span<const double> mu_hat) {
  check_same_len(mu_g, mu_hat, "loss_l1_const");
  double v = 0.0;
  for (std::size_t i = 0; i < mu_g.size(); ++i) {
    v += kLn2 + std::abs(mu_g[i] - mu_hat[i]);
  }
  return v;
}

double loss_dle(const FlowModel& flow, std::span<const double> mu_g,
                std::span<const double> mu_hat, std::span<const double> sigma_hat) {
  const auto z = standardize(mu_g, mu_hat, sigma_hat);
  if (z.size() != flow.dim) throw ShapeError("loss_dle: flow dim mismatch");
  double v = -flow_log_prob(flow, z);
  for (double s : sigma_hat) v += std::log(s);
  return v;
}

double loss_rle(const FlowModel& flow, const BaseDensity& q,
                std::span<const double> mu_g, std::span<const double> mu_hat,
                std::span<const double> sigma_hat, bool include_log_s,
                const RiemannCfg& riemann) {
  const auto z = standardize(mu_g, mu_hat, sigma_hat);
  if (z.size() != flow.dim || q.dim != flow.dim) {
    throw ShapeError("loss_rle: dim mismatch");
  }
  double v = -base_log_prob(q, z) - flow_log_prob(flow, z);
  for (double s : sigma_hat) v += std::log(s);
  if (include_log_s) v -= std::log(compute_s(flow, q, riemann));
  return v;
}

double compute_s(const LogDensityFn& log_g, std::size_t dim,
                 const BaseDensity& q, const RiemannCfg& riemann) {
  return std::exp(-log_residual_mass(log_g, dim, q, riemann));
}

double compute_s(const FlowModel& flow, const BaseDensity& q,
                 const RiemannCfg& riemann) {
  return compute_s([&flow](const Tensor2& x) { return flow_log_prob(flow, x); },
                   flow.dim, q, riemann);
}

double confidence(std::span<const double> sigma_hat, double sigma_max) {
  if (sigma_hat.empty()) throw ShapeError("confidence: empty sigma");
  if (!(sigma_max > 0.0)) throw DomainError("confidence: sigma_max must be > 0");
  double acc = 0.0;
  for (double s : sigma_hat) {
    if (!(s > 0.0 && s < sigma_max)) {
      throw DomainError("confidence: sigma_hat " + std::to_string(s) +
                        " outside (0, sigma_max)");
    }
    acc += s / sigma_max;
  }
  return 1.0 - acc / static_cast<double>(sigma_hat.size());
}

BatchLoss batch_loss(const LossKind& kind, const FlowModel* flow,
                     const Tensor2& mu_g, const Tensor2& mu_hat,
                     const Tensor2& sigma_hat, bool want_grad) {
  const std::size_t B = mu_g.rows();
  const std::size_t D = mu_g.cols();
  if (B == 0) throw ShapeError("batch_loss: empty batch");
  if (mu_hat.rows() != B || mu_hat.cols() != D || sigma_hat.rows() != B ||
      sigma_hat.cols() != D) {
    throw ShapeError("batch_loss: shape mismatch");
  }
  if (kind.needs_flow()) {
    if (flow == nullptr) throw ShapeError("batch_loss: loss kind needs a flow");
    if (flow->dim != D) throw ShapeError("batch_loss: flow dim mismatch");
  }
  const double invB = 1.0 / static_cast<double>(B);

  BatchLoss out;
  out.per_sample.assign(B, 0.0);
  if (want_grad) {
    out.d_mu = Tensor2(B, D);
    out.d_sigma = Tensor2(B, D);
  }

  if (!kind.needs_flow()) {
    for (std::size_t r = 0; r < B; ++r) {
      const auto g = mu_g.row(r);
      const auto m = mu_hat.row(r);
      const auto s = sigma_hat.row(r);
      double v = 0.0;
      switch (kind.type) {
        case LossType::l2_const: v = loss_l2_const(g, m); break;
        case LossType::l1_const: v = loss_l1_const(g, m); break;
        case LossType::gaussian_nll: v = nll_gaussian(g, m, s); break;
        case LossType::laplace_nll: v = nll_laplace(g, m, s); break;
        default: break;
      }
      out.per_sample[r] = v;
      if (!want_grad) continue;
      for (std::size_t i = 0; i < D; ++i) {
        const double res = g[i] - m[i];
        switch (kind.type) {
          case LossType::l2_const:
            out.d_mu(r, i) = -res * invB;
            break;
          case LossType::l1_const:
            out.d_mu(r, i) = -sign(res) * invB;
            break;
          case LossType::gaussian_nll: {
            const double z = res / s[i];
            out.d_mu(r, i) = -z / s[i] * invB;
            out.d_sigma(r, i) = (1.0 - z * z) / s[i] * invB;
            break;
          }
          case LossType::laplace_nll: {
            const double z = res / s[i];
            out.d_mu(r, i) = -sign(z) / s[i] * invB;
            out.d_sigma(r, i) = (1.0 - std::abs(z)) / s[i] * invB;
            break;
          }
          default: break;
        }
      }
    }
  } else {
    Tensor2 z(B, D);
    for (std::size_t r = 0; r < B; ++r) {
      const auto zr = standardize(mu_g.row(r), mu_hat.row(r), sigma_hat.row(r));
      std::copy(zr.begin(), zr.end(), z.row(r).begin());
    }
    std::vector<double> lp;
    Tensor2 gx;
    if (want_grad) {
      out.d_flow.assign(param_count(*flow), 0.0);
      const std::vector<double> w(B, -invB);
      gx = flow_log_prob_backward(*flow, z, w, out.d_flow, &lp);
    } else {
      lp = flow_log_prob(*flow, z);
    }
    const bool residual = kind.type == LossType::rle;
    const BaseDensity q{kind.q, D};
    for (std::size_t r = 0; r < B; ++r) {
      double v = -lp[r];
      for (std::size_t i = 0; i < D; ++i) v += std::log(sigma_hat(r, i));
      if (residual) v -= base_log_prob(q, z.row(r));
      out.per_sample[r] = v;
      if (!want_grad) continue;
      for (std::size_t i = 0; i < D; ++i) {
        const double zi = z(r, i);
        const double s = sigma_hat(r, i);
        // u = d(mean loss)/d(zbar); gx already holds the flow part.
        double u = gx(r, i);
        if (residual) {
          u += (kind.q == BaseFamily::gaussian ? zi : sign(zi)) * invB;
        }
        out.d_mu(r, i) = -u / s;
        out.d_sigma(r, i) = -u * zi / s + invB / s;
      }
    }
  }

  CompensatedSum acc;
  for (double v : out.per_sample) acc.add(v);
  out.mean = acc.value() * invB;

  if (kind.type == LossType::rle && kind.include_log_s) {
    const BaseDensity q{kind.q, D};
    // -log s = log of the residual mass; constant over the batch.
    const double neg_log_s = log_residual_mass(
        [flow](const Tensor2& x) { return flow_log_prob(*flow, x); }, D, q,
        kind.riemann);
    out.mean += neg_log_s;
    for (double& v : out.per_sample) v += neg_log_s;
    if (want_grad) add_log_mass_grad(*flow, q, kind.riemann, 1.0, out.d_flow);
  }

  if (!std::isfinite(out.mean)) {
    throw DivergenceError("batch_loss: non-finite loss");
  }
  return out;
}

double loss_value(const LossKind& kind, const FlowModel* flow,
                  std::span<const double> mu_g, std::span<const double> mu_hat,
                  std::span<const double> sigma_hat) {
  return batch_loss(kind, flow, Tensor2::row_vector(mu_g),
                    Tensor2::row_vector(mu_hat), Tensor2::row_vector(sigma_hat),
                    false)
      .mean;
}

LossGrad loss_grad(const LossKind& kind, const FlowModel* flow,
                   std::span<const double> mu_g, std::span<const double> mu_hat,
                   std::span<const double> sigma_hat) {
  BatchLoss b = batch_loss(kind, flow, Tensor2::row_vector(mu_g),
                           Tensor2::row_vector(mu_hat),
                           Tensor2::row_vector(sigma_hat), true);
  LossGrad g;
  g.value = b.mean;
  g.d_mu = b.d_mu.values();
  if (kind.predicts_sigma()) g.d_sigma = b.d_sigma.values();
  g.d_flow = std::move(b.d_flow);
  return g;
}

}  // namespace rle
