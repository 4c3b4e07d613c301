#include "rle/trainer.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <numeric>
#include <string>
#include <thread>

#include "rle/errors.hpp"
#include "rle/optim.hpp"

namespace rle {

namespace {

constexpr std::size_t kEvalChunk = 8192;

Tensor2 gather_rows(const Tensor2& m, std::span<const std::size_t> idx) {
  Tensor2 out(idx.size(), m.cols());
  for (std::size_t r = 0; r < idx.size(); ++r) {
    std::copy_n(m.row(idx[r]).begin(), m.cols(), out.row(r).begin());
  }
  return out;
}

// Evaluates `fn` over the cell centres of `grid` (x1 outer, x2 inner).
std::vector<double> eval_on_grid(const GridDensityFn& fn, const DensityGrid& grid) {
  grid.validate();
  const std::size_t P = grid.points;
  const std::size_t total = P * P;
  std::vector<double> out;
  out.reserve(total);
  for (std::size_t start = 0; start < total; start += kEvalChunk) {
    const std::size_t len = std::min(kEvalChunk, total - start);
    Tensor2 pts(len, 2);
    for (std::size_t r = 0; r < len; ++r) {
      pts(r, 0) = grid.coord((start + r) / P);
      pts(r, 1) = grid.coord((start + r) % P);
    }
    const std::vector<double> v = fn(pts);
    out.insert(out.end(), v.begin(), v.end());
  }
  return out;
}

// log(sum_i exp(v_i)) for a long vector.
double log_sum_exp(std::span<const double> v) {
  const double mx = *std::max_element(v.begin(), v.end());
  if (!std::isfinite(mx)) return mx;
  double acc = 0.0;
  for (double x : v) acc += std::exp(x - mx);
  return mx + std::log(acc);
}

}  // namespace

void TrainConfig::validate() const {
  if (epochs < 1) throw DomainError("TrainConfig: epochs must be >= 1");
  if (batch_size < 1) throw DomainError("TrainConfig: batch_size must be >= 1");
  if (!(learning_rate > 0.0)) throw DomainError("TrainConfig: learning_rate must be > 0");
  if (!(sigma_max > 0.0)) throw DomainError("TrainConfig: sigma_max must be > 0");
  if (loss.type == LossType::rle && loss.include_log_s) loss.riemann.validate();
}

void DensityGrid::validate() const {
  if (!(std::isfinite(lower) && std::isfinite(upper) && lower < upper)) {
    throw DomainError("DensityGrid: need finite lower < upper");
  }
  if (points < 1) throw DomainError("DensityGrid: need at least one point");
}

RunReport train_run(const TrainConfig& cfg, const Dataset& train,
                    const Dataset& test) {
  const auto t0 = std::chrono::steady_clock::now();
  cfg.validate();
  train.validate();
  test.validate();
  if (train.size() == 0) throw ShapeError("train_run: empty training set");
  if (test.features.cols() != train.features.cols() ||
      test.targets.cols() != train.targets.cols()) {
    throw ShapeError("train_run: train/test widths differ");
  }
  const std::size_t F = train.features.cols();
  const std::size_t D = train.targets.cols();

  Rng rng(cfg.seed);
  RunReport rep;
  rep.config = cfg;
  rep.model.loss = cfg.loss;
  rep.model.head = make_head(F, D, cfg.trunk_arch, cfg.sigma_max, rng);
  if (cfg.loss.needs_flow()) rep.model.flow = make_flow(D, cfg.flow_arch, rng);

  RegressionHead& head = rep.model.head;
  FlowModel* flow = rep.model.flow ? &*rep.model.flow : nullptr;
  const std::size_t nh = param_count(head);
  const std::size_t nf = flow ? param_count(*flow) : 0;
  std::vector<double> params(nh + nf);
  flatten_into(head, std::span(params).first(nh));
  if (flow) flatten_into(*flow, std::span(params).subspan(nh));
  std::vector<double> grads(nh + nf);
  AdamState adam(params.size(), cfg.learning_rate);

  const std::size_t n = train.size();
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});

  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    double epoch_sum = 0.0;
    std::size_t batch_no = 0;
    for (std::size_t start = 0; start < n; start += cfg.batch_size, ++batch_no) {
      const std::size_t len = std::min(cfg.batch_size, n - start);
      const std::span<const std::size_t> idx(order.data() + start, len);
      const Tensor2 X = gather_rows(train.features, idx);
      const Tensor2 Y = gather_rows(train.targets, idx);
      try {
        ModelGrad g = model_grad(head, flow, cfg.loss, X, Y);
        if (!std::isfinite(g.loss)) throw DivergenceError("non-finite loss");
        std::copy(g.head.begin(), g.head.end(), grads.begin());
        if (flow) std::copy(g.flow.begin(), g.flow.end(), grads.begin() + nh);
        adam_step(adam, params, grads);
        epoch_sum += g.loss * static_cast<double>(len);
      } catch (const std::exception& e) {
        if (!dynamic_cast<const DivergenceError*>(&e) &&
            !dynamic_cast<const DomainError*>(&e)) {
          throw;
        }
        throw DivergenceError("training diverged at epoch " +
                              std::to_string(epoch + 1) + ", batch " +
                              std::to_string(batch_no + 1) + ": " + e.what());
      }
      assign_from(head, std::span<const double>(params).first(nh));
      if (flow) assign_from(*flow, std::span<const double>(params).subspan(nh));
      ++rep.optimizer_steps;
    }
    rep.train_loss.push_back(epoch_sum / static_cast<double>(n));
    if (cfg.eval_every > 0 && (epoch + 1) % cfg.eval_every == 0 &&
        epoch + 1 < cfg.epochs) {
      rep.evals.push_back({epoch + 1, eval_metrics(rep.model, test, cfg.kl_grid)});
    }
  }
  rep.final_metrics = eval_metrics(rep.model, test, cfg.kl_grid);
  if (cfg.eval_every > 0) rep.evals.push_back({cfg.epochs, rep.final_metrics});
  rep.wall_seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return rep;
}

GridDensityFn learned_log_density(const LossKind& kind, const FlowModel* flow) {
  const auto family_density = [](BaseFamily fam) -> GridDensityFn {
    return [fam](const Tensor2& x) {
      const BaseDensity q{fam, x.cols()};
      std::vector<double> out(x.rows());
      for (std::size_t r = 0; r < x.rows(); ++r) out[r] = base_log_prob(q, x.row(r));
      return out;
    };
  };
  switch (kind.type) {
    case LossType::l2_const:
    case LossType::gaussian_nll:
      return family_density(BaseFamily::gaussian);
    case LossType::l1_const:
    case LossType::laplace_nll:
      return family_density(BaseFamily::laplace);
    case LossType::dle:
    case LossType::rle:
      break;
  }
  if (flow == nullptr) throw ShapeError("learned_log_density: flow required");
  if (kind.type == LossType::dle) {
    return [flow](const Tensor2& x) { return flow_log_prob(*flow, x); };
  }
  const BaseDensity q{kind.q, flow->dim};
  const double log_s = std::log(compute_s(*flow, q, kind.riemann));
  return [flow, q, log_s](const Tensor2& x) {
    std::vector<double> lp = flow_log_prob(*flow, x);
    for (std::size_t r = 0; r < x.rows(); ++r) lp[r] += base_log_prob(q, x.row(r)) + log_s;
    return lp;
  };
}

double grid_kl(const GridDensityFn& log_p, const GridDensityFn& log_q,
               const DensityGrid& grid) {
  const std::vector<double> lp = eval_on_grid(log_p, grid);
  std::vector<double> lq = eval_on_grid(log_q, grid);
  const double floor = std::log(1e-300);
  for (double& v : lq) v = std::max(v, floor);
  const double zp = log_sum_exp(lp);
  const double zq = log_sum_exp(lq);
  if (!std::isfinite(zp) || !std::isfinite(zq)) {
    throw DivergenceError("grid_kl: density vanishes on the grid");
  }
  double kl = 0.0;
  for (std::size_t i = 0; i < lp.size(); ++i) {
    const double a = lp[i] - zp;
    const double p = std::exp(a);
    if (p == 0.0) continue;
    kl += p * (a - (lq[i] - zq));
  }
  return std::max(kl, 0.0);
}

double grid_mass(const GridDensityFn& log_p, const DensityGrid& grid) {
  const std::vector<double> lp = eval_on_grid(log_p, grid);
  const double area = grid.step() * grid.step();
  double acc = 0.0;
  for (double v : lp) acc += std::exp(v);
  return acc * area;
}

std::optional<double> pearson(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) throw ShapeError("pearson: length mismatch");
  if (a.size() < 2) return std::nullopt;
  const double n = static_cast<double>(a.size());
  const double ma = std::accumulate(a.begin(), a.end(), 0.0) / n;
  const double mb = std::accumulate(b.begin(), b.end(), 0.0) / n;
  double sab = 0.0, saa = 0.0, sbb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    sab += (a[i] - ma) * (b[i] - mb);
    saa += (a[i] - ma) * (a[i] - ma);
    sbb += (b[i] - mb) * (b[i] - mb);
  }
  if (saa == 0.0 || sbb == 0.0) return std::nullopt;
  return std::clamp(sab / std::sqrt(saa * sbb), -1.0, 1.0);
}

Metrics eval_metrics(const TrainedModel& model, const Dataset& test,
                     const DensityGrid& kl_grid) {
  test.validate();
  if (test.size() < 2) throw DomainError("eval_metrics: need at least 2 test rows");
  const FlowModel* flow = model.flow ? &*model.flow : nullptr;
  const BatchPrediction pred = head_forward(model.head, test.features);
  const std::size_t n = test.size();
  const std::size_t D = test.targets.cols();

  Metrics m;
  std::vector<double> conf(n), neg_err(n);
  double mae_acc = 0.0;
  for (std::size_t r = 0; r < n; ++r) {
    const auto clean = mean_function(test.features.row(r));
    double clean_err = 0.0, label_err = 0.0;
    for (std::size_t i = 0; i < D; ++i) {
      clean_err += std::abs(pred.mu_hat(r, i) - clean[i]);
      label_err += std::abs(pred.mu_hat(r, i) - test.targets(r, i));
    }
    mae_acc += clean_err / static_cast<double>(D);
    neg_err[r] = -label_err / static_cast<double>(D);
    conf[r] = confidence(pred.sigma_hat.row(r), model.head.sigma_max);
  }
  m.mae = mae_acc / static_cast<double>(n);
  m.pearson = pearson(conf, neg_err);

  LossKind nll_kind = model.loss;
  if (nll_kind.type == LossType::rle) nll_kind.include_log_s = true;
  m.test_nll = batch_loss(nll_kind, flow, test.targets, pred.mu_hat,
                          pred.sigma_hat, false)
                   .mean;

  if (test.noise != NoiseKind::noise_free && D == 2) {
    const NoiseKind noise = test.noise;
    const GridDensityFn truth = [noise](const Tensor2& x) {
      std::vector<double> out(x.rows());
      for (std::size_t r = 0; r < x.rows(); ++r) {
        out[r] = true_noise_log_density(noise, x.row(r));
      }
      return out;
    };
    m.grid_kl = grid_kl(truth, learned_log_density(model.loss, flow), kl_grid);
  }
  return m;
}

std::vector<DensityRow> export_density_grid(const LossKind& kind,
                                            const FlowModel* flow,
                                            const DensityGrid& grid) {
  if (flow != nullptr && flow->dim != 2) {
    throw ShapeError("export_density_grid: needs a 2-D model");
  }
  const std::vector<double> lp = eval_on_grid(learned_log_density(kind, flow), grid);
  std::vector<DensityRow> rows(lp.size());
  for (std::size_t i = 0; i < lp.size(); ++i) {
    rows[i] = {grid.coord(i / grid.points), grid.coord(i % grid.points), lp[i]};
  }
  return rows;
}

FlowModel fit_flow_density(const Tensor2& samples, const DensityFitConfig& cfg) {
  if (samples.rows() == 0) throw ShapeError("fit_flow_density: no samples");
  if (cfg.epochs < 1 || cfg.batch_size < 1 || !(cfg.learning_rate > 0.0)) {
    throw DomainError("fit_flow_density: bad optimiser settings");
  }
  Rng rng(cfg.seed);
  FlowModel flow = make_flow(samples.cols(), cfg.arch, rng);
  std::vector<double> params = flatten(flow);
  std::vector<double> grads(params.size());
  AdamState adam(params.size(), cfg.learning_rate);
  const std::size_t n = samples.rows();
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    for (std::size_t start = 0; start < n; start += cfg.batch_size) {
      const std::size_t len = std::min(cfg.batch_size, n - start);
      const Tensor2 x = gather_rows(samples, {order.data() + start, len});
      std::fill(grads.begin(), grads.end(), 0.0);
      const std::vector<double> w(len, -1.0 / static_cast<double>(len));
      flow_log_prob_backward(flow, x, w, grads);
      adam_step(adam, params, grads);
      assign_from(flow, params);
    }
  }
  return flow;
}

Split bench_data(NoiseKind noise, std::size_t n_train, std::size_t n_test,
                 std::uint64_t seed) {
  return {gen_dataset(noise, n_train, seed),
          gen_dataset(noise, n_test, seed ^ 0x9E3779B97F4A7C15ULL)};
}

double median(std::vector<double> v) {
  if (v.empty()) throw DomainError("median of empty set");
  std::sort(v.begin(), v.end());
  const std::size_t h = v.size() / 2;
  return v.size() % 2 ? v[h] : 0.5 * (v[h - 1] + v[h]);
}

namespace {

SummaryStat summarize(const std::vector<double>& v) {
  SummaryStat s;
  if (v.empty()) return s;
  s.median = median(v);
  s.min = *std::min_element(v.begin(), v.end());
  s.max = *std::max_element(v.begin(), v.end());
  return s;
}

BenchRun run_one(const BenchSpec& spec, std::uint64_t seed, const LossKind& kind) {
  BenchRun run;
  run.seed = seed;
  run.loss = loss_label(kind);
  TrainConfig cfg = spec.base;
  cfg.loss = kind;
  cfg.seed = seed;
  const Split data = bench_data(spec.noise, spec.n_train, spec.n_test, seed);
  try {
    RunReport rep = train_run(cfg, data.train, data.test);
    run.metrics = rep.final_metrics;
    run.train_loss = rep.train_loss;
    if (rep.model.flow) {
      const FlowModel& f = *rep.model.flow;
      run.flow_mass = grid_mass(
          [&f](const Tensor2& x) { return flow_log_prob(f, x); }, spec.mass_grid);
    }
  } catch (const DivergenceError& e) {
    run.failed = true;
    run.failure = e.what();
  } catch (const DomainError& e) {
    run.failed = true;
    run.failure = e.what();
  }
  return run;
}

}  // namespace

BenchTable bench_suite(const BenchSpec& spec) {
  if (spec.seeds.empty() || spec.kinds.empty()) {
    throw DomainError("bench_suite: need at least one seed and one loss kind");
  }
  spec.base.validate();
  spec.mass_grid.validate();
  const std::size_t K = spec.kinds.size();
  const std::size_t total = spec.seeds.size() * K;
  BenchTable table;
  table.runs.resize(total);

  std::atomic<std::size_t> next{0};
  const auto worker = [&] {
    for (std::size_t i = next++; i < total; i = next++) {
      table.runs[i] = run_one(spec, spec.seeds[i / K], spec.kinds[i % K]);
    }
  };
  const std::size_t jobs = std::clamp<std::size_t>(spec.jobs, 1, total);
  if (jobs == 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (std::size_t j = 0; j < jobs; ++j) pool.emplace_back(worker);
    for (auto& t : pool) t.join();
  }

  for (std::size_t k = 0; k < K; ++k) {
    BenchSummary s;
    s.loss = loss_label(spec.kinds[k]);
    std::vector<double> mae, nll, pr, kl;
    for (std::size_t i = k; i < total; i += K) {
      const BenchRun& r = table.runs[i];
      if (r.failed) {
        ++s.failed;
        continue;
      }
      ++s.completed;
      mae.push_back(r.metrics.mae);
      nll.push_back(r.metrics.test_nll);
      if (r.metrics.pearson) pr.push_back(*r.metrics.pearson);
      if (r.metrics.grid_kl) kl.push_back(*r.metrics.grid_kl);
    }
    s.mae = summarize(mae);
    s.test_nll = summarize(nll);
    s.pearson = summarize(pr);
    s.grid_kl = summarize(kl);
    table.summary.push_back(std::move(s));
  }
  return table;
}

}  // namespace rle
