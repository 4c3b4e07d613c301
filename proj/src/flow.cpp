#include "rle/flow.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <string>

#include "rle/errors.hpp"

namespace rle {

namespace {

constexpr double kHalfLog2Pi = 0.91893853320467274178;  // 0.5 * ln(2*pi)

void check_scale(const Tensor2& s) {
  for (double v : s.flat()) {
    if (!(std::abs(v) <= kMaxLogScale)) {
      throw DivergenceError("coupling block: scale net output " +
                            std::to_string(v) + " outside +-" +
                            std::to_string(kMaxLogScale));
    }
  }
}

Tensor2 take_cols(const Tensor2& m, std::size_t c0, std::size_t c1) {
  Tensor2 out(m.rows(), c1 - c0);
  for (std::size_t r = 0; r < m.rows(); ++r) {
    for (std::size_t c = c0; c < c1; ++c) out(r, c - c0) = m(r, c);
  }
  return out;
}

Tensor2 reversed_cols(const Tensor2& m) {
  Tensor2 out(m.rows(), m.cols());
  const std::size_t D = m.cols();
  for (std::size_t r = 0; r < m.rows(); ++r) {
    for (std::size_t c = 0; c < D; ++c) out(r, c) = m(r, D - 1 - c);
  }
  return out;
}

void check_width(const FlowModel& f, std::size_t cols) {
  if (cols != f.dim) {
    throw ShapeError("flow: input width " + std::to_string(cols) +
                     " != flow dim " + std::to_string(f.dim));
  }
}

}  // namespace

double std_normal_log_prob(std::span<const double> z) noexcept {
  double lp = 0.0;
  for (double v : z) lp -= kHalfLog2Pi + 0.5 * v * v;
  return lp;
}

std::size_t coupling_split(std::size_t dim) { return (dim + 1) / 2; }

void CouplingBlock::validate() const {
  if (dim < 2) throw ShapeError("CouplingBlock: dim must be >= 2");
  if (split < 1 || split >= dim) throw ShapeError("CouplingBlock: bad split");
  scale_net.validate();
  shift_net.validate();
  const std::size_t rest = dim - split;
  if (scale_net.in_width() != split || scale_net.out_width() != rest ||
      shift_net.in_width() != split || shift_net.out_width() != rest) {
    throw ShapeError("CouplingBlock: net widths do not match (d, D-d)");
  }
}

void FlowModel::validate() const {
  if (blocks.empty()) throw ShapeError("FlowModel: needs at least one block");
  for (const auto& b : blocks) {
    if (b.dim != dim) throw ShapeError("FlowModel: block dim mismatch");
    b.validate();
  }
}

CouplingBlock make_coupling_block(std::size_t dim, const FlowArch& arch,
                                  Rng& rng, bool zero_output) {
  if (dim < 2) throw ShapeError("make_coupling_block: dim must be >= 2");
  if (arch.fc_layers < 1 || arch.width < 1) {
    throw ShapeError("make_coupling_block: empty architecture");
  }
  CouplingBlock b;
  b.dim = dim;
  b.split = coupling_split(dim);
  std::vector<std::size_t> widths{b.split};
  for (std::size_t l = 1; l < arch.fc_layers; ++l) widths.push_back(arch.width);
  widths.push_back(dim - b.split);
  const auto init = zero_output ? OutputInit::zero : OutputInit::uniform;
  b.scale_net = make_mlp(widths, rng, init, arch.slope,
                         arch.bounded_scale ? OutputActivation::tanh
                                            : OutputActivation::identity);
  b.shift_net = make_mlp(widths, rng, init, arch.slope);
  return b;
}

FlowModel make_flow(std::size_t dim, const FlowArch& arch, Rng& rng,
                    bool zero_output) {
  if (arch.blocks < 1) throw ShapeError("make_flow: need at least one block");
  FlowModel f;
  f.dim = dim;
  for (std::size_t k = 0; k < arch.blocks; ++k) {
    f.blocks.push_back(make_coupling_block(dim, arch, rng, zero_output));
  }
  return f;
}

std::size_t param_count(const CouplingBlock& b) {
  return param_count(b.scale_net) + param_count(b.shift_net);
}

std::size_t param_count(const FlowModel& f) {
  std::size_t n = 0;
  for (const auto& b : f.blocks) n += param_count(b);
  return n;
}

void flatten_into(const FlowModel& f, std::span<double> out) {
  if (out.size() != param_count(f)) throw ShapeError("flatten_into(flow): size");
  std::size_t o = 0;
  for (const auto& b : f.blocks) {
    const std::size_t ns = param_count(b.scale_net);
    const std::size_t nh = param_count(b.shift_net);
    flatten_into(b.scale_net, out.subspan(o, ns));
    flatten_into(b.shift_net, out.subspan(o + ns, nh));
    o += ns + nh;
  }
}

std::vector<double> flatten(const FlowModel& f) {
  std::vector<double> v(param_count(f));
  flatten_into(f, v);
  return v;
}

void assign_from(FlowModel& f, std::span<const double> in) {
  if (in.size() != param_count(f)) throw ShapeError("assign_from(flow): size");
  std::size_t o = 0;
  for (auto& b : f.blocks) {
    const std::size_t ns = param_count(b.scale_net);
    const std::size_t nh = param_count(b.shift_net);
    assign_from(b.scale_net, in.subspan(o, ns));
    assign_from(b.shift_net, in.subspan(o + ns, nh));
    o += ns + nh;
  }
}

Tensor2 coupling_forward(const CouplingBlock& b, const Tensor2& z,
                         std::vector<double>& log_det) {
  if (z.cols() != b.dim) throw ShapeError("coupling_forward: width mismatch");
  const Tensor2 za = take_cols(z, 0, b.split);
  const Tensor2 s = mlp_apply(b.scale_net, za);
  const Tensor2 t = mlp_apply(b.shift_net, za);
  check_scale(s);
  Tensor2 x = z;
  log_det.assign(z.rows(), 0.0);
  const std::size_t rest = b.dim - b.split;
  for (std::size_t r = 0; r < z.rows(); ++r) {
    for (std::size_t j = 0; j < rest; ++j) {
      x(r, b.split + j) = z(r, b.split + j) * std::exp(s(r, j)) + t(r, j);
      log_det[r] += s(r, j);
    }
  }
  return x;
}

Tensor2 coupling_inverse(const CouplingBlock& b, const Tensor2& x,
                         std::vector<double>& log_det_inv) {
  if (x.cols() != b.dim) throw ShapeError("coupling_inverse: width mismatch");
  const Tensor2 xa = take_cols(x, 0, b.split);
  const Tensor2 s = mlp_apply(b.scale_net, xa);
  const Tensor2 t = mlp_apply(b.shift_net, xa);
  check_scale(s);
  Tensor2 z = x;
  log_det_inv.assign(x.rows(), 0.0);
  const std::size_t rest = b.dim - b.split;
  for (std::size_t r = 0; r < x.rows(); ++r) {
    for (std::size_t j = 0; j < rest; ++j) {
      z(r, b.split + j) = (x(r, b.split + j) - t(r, j)) * std::exp(-s(r, j));
      log_det_inv[r] -= s(r, j);
    }
  }
  return z;
}

CouplingResult coupling_forward(const CouplingBlock& b, std::span<const double> z) {
  std::vector<double> ld;
  Tensor2 x = coupling_forward(b, Tensor2::row_vector(z), ld);
  return {x.values(), ld[0]};
}

CouplingResult coupling_inverse(const CouplingBlock& b, std::span<const double> x) {
  std::vector<double> ld;
  Tensor2 z = coupling_inverse(b, Tensor2::row_vector(x), ld);
  return {z.values(), ld[0]};
}

Tensor2 flow_forward(const FlowModel& f, const Tensor2& z) {
  check_width(f, z.cols());
  Tensor2 v = z;
  std::vector<double> ld;
  for (const auto& b : f.blocks) {
    v = coupling_forward(b, reversed_cols(v), ld);
  }
  return v;
}

std::vector<double> flow_forward(const FlowModel& f, std::span<const double> z) {
  return flow_forward(f, Tensor2::row_vector(z)).values();
}

FlowInverse flow_inverse(const FlowModel& f, const Tensor2& x) {
  check_width(f, x.cols());
  FlowInverse out;
  out.log_det_inv.assign(x.rows(), 0.0);
  Tensor2 v = x;
  std::vector<double> ld;
  for (std::size_t k = f.blocks.size(); k-- > 0;) {
    v = reversed_cols(coupling_inverse(f.blocks[k], v, ld));
    for (std::size_t r = 0; r < x.rows(); ++r) out.log_det_inv[r] += ld[r];
  }
  out.z = std::move(v);
  return out;
}

std::vector<double> flow_inverse(const FlowModel& f, std::span<const double> x) {
  return flow_inverse(f, Tensor2::row_vector(x)).z.values();
}

std::vector<double> flow_log_prob(const FlowModel& f, const Tensor2& x) {
  FlowInverse inv = flow_inverse(f, x);
  std::vector<double> lp(x.rows());
  for (std::size_t r = 0; r < x.rows(); ++r) {
    lp[r] = std_normal_log_prob(inv.z.row(r)) + inv.log_det_inv[r];
  }
  return lp;
}

double flow_log_prob(const FlowModel& f, std::span<const double> x) {
  return flow_log_prob(f, Tensor2::row_vector(x))[0];
}

namespace {

// Everything the reverse pass needs from one inverse block.
struct BlockTape {
  Tensor2 s;         // scale net output, B x rest
  Tensor2 zb;        // transformed half, B x rest
  MlpCache g_cache;
  MlpCache h_cache;
};

}  // namespace

Tensor2 flow_log_prob_backward(const FlowModel& f, const Tensor2& x,
                               std::span<const double> weight,
                               std::span<double> param_grad_acc,
                               std::vector<double>* log_prob_out) {
  check_width(f, x.cols());
  const std::size_t B = x.rows();
  if (weight.size() != B) throw ShapeError("flow backward: weight length");
  if (param_grad_acc.size() != param_count(f)) {
    throw ShapeError("flow backward: gradient buffer size");
  }
  const std::size_t K = f.blocks.size();
  const std::size_t D = f.dim;

  // Inverse pass, recording each block in evaluation order (k = K-1 .. 0).
  std::vector<BlockTape> tape(K);
  std::vector<double> ldi_total(B, 0.0);
  Tensor2 v = x;
  for (std::size_t k = K; k-- > 0;) {
    const auto& b = f.blocks[k];
    const std::size_t rest = D - b.split;
    Tensor2 va = take_cols(v, 0, b.split);
    MlpForward gs = mlp_forward(b.scale_net, va);
    MlpForward ht = mlp_forward(b.shift_net, va);
    check_scale(gs.output);
    Tensor2 u = v;
    Tensor2 zb(B, rest);
    for (std::size_t r = 0; r < B; ++r) {
      for (std::size_t j = 0; j < rest; ++j) {
        const double s = gs.output(r, j);
        const double val = (v(r, b.split + j) - ht.output(r, j)) * std::exp(-s);
        zb(r, j) = val;
        u(r, b.split + j) = val;
        ldi_total[r] -= s;
      }
    }
    tape[k] = BlockTape{std::move(gs.output), std::move(zb),
                        std::move(gs.cache), std::move(ht.cache)};
    v = reversed_cols(u);
  }

  // d/dz of weight * log N(z) is -weight * z.
  Tensor2 dv(B, D);
  for (std::size_t r = 0; r < B; ++r) {
    for (std::size_t c = 0; c < D; ++c) dv(r, c) = -weight[r] * v(r, c);
  }
  if (log_prob_out) {
    log_prob_out->resize(B);
    for (std::size_t r = 0; r < B; ++r) {
      (*log_prob_out)[r] = std_normal_log_prob(v.row(r)) + ldi_total[r];
    }
  }

  // Offsets of each block in the flat parameter vector.
  std::vector<std::size_t> offset(K);
  std::size_t o = 0;
  for (std::size_t k = 0; k < K; ++k) {
    offset[k] = o;
    o += param_count(f.blocks[k]);
  }

  for (std::size_t k = 0; k < K; ++k) {
    const auto& b = f.blocks[k];
    const auto& tp = tape[k];
    const std::size_t rest = D - b.split;
    const Tensor2 du = reversed_cols(dv);  // gradient w.r.t. block output
    Tensor2 ds(B, rest);
    Tensor2 dt(B, rest);
    Tensor2 din(B, D);
    for (std::size_t r = 0; r < B; ++r) {
      for (std::size_t j = 0; j < rest; ++j) {
        const double e = std::exp(-tp.s(r, j));
        const double dzb = du(r, b.split + j);
        din(r, b.split + j) = dzb * e;
        dt(r, j) = -dzb * e;
        ds(r, j) = -dzb * tp.zb(r, j) - weight[r];
      }
      for (std::size_t c = 0; c < b.split; ++c) din(r, c) = du(r, c);
    }
    const std::size_t ns = param_count(b.scale_net);
    const std::size_t nh = param_count(b.shift_net);
    Tensor2 da_g = mlp_backward(b.scale_net, tp.g_cache, ds,
                                param_grad_acc.subspan(offset[k], ns));
    Tensor2 da_h = mlp_backward(b.shift_net, tp.h_cache, dt,
                                param_grad_acc.subspan(offset[k] + ns, nh));
    for (std::size_t r = 0; r < B; ++r) {
      for (std::size_t c = 0; c < b.split; ++c) {
        din(r, c) += da_g(r, c) + da_h(r, c);
      }
    }
    dv = std::move(din);
  }
  return dv;
}

FlowGrad flow_log_prob_grad(const FlowModel& f, std::span<const double> x) {
  FlowGrad g;
  g.grad_params.assign(param_count(f), 0.0);
  const double w = 1.0;
  Tensor2 gx = flow_log_prob_backward(f, Tensor2::row_vector(x), {&w, 1},
                                      g.grad_params);
  g.grad_x = gx.values();
  return g;
}

std::vector<double> flow_sample(const FlowModel& f, Rng& rng) {
  std::normal_distribution<double> n01(0.0, 1.0);
  std::vector<double> z(f.dim);
  for (double& v : z) v = n01(rng);
  return flow_forward(f, z);
}

}  // namespace rle
