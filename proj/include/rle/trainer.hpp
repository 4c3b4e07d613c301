#pragma once

// Joint training of a regression head and (for the flow losses) a RealNVP
// density, evaluation metrics, density grids and the multi-seed benchmark.

#include <cstddef>
#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "rle/flow.hpp"
#include "rle/lik.hpp"
#include "rle/regress.hpp"
#include "rle/synth.hpp"

namespace rle {

/// Cell-centred uniform grid over [lower, upper]^2 with `points` per axis.
struct DensityGrid {
  double lower = -8.0;
  double upper = 8.0;
  std::size_t points = 400;

  double step() const { return (upper - lower) / static_cast<double>(points); }
  double coord(std::size_t i) const {
    return lower + (static_cast<double>(i) + 0.5) * step();
  }
  void validate() const;
  friend bool operator==(const DensityGrid&, const DensityGrid&) = default;
};

struct TrainConfig {
  LossKind loss;
  std::size_t epochs = 500;
  std::size_t batch_size = 128;
  double learning_rate = 1e-3;
  std::uint64_t seed = 0;
  double sigma_max = 1.0;
  FlowArch flow_arch;
  TrunkArch trunk_arch;
  std::size_t eval_every = 0;  // 0: evaluate only at the end
  DensityGrid kl_grid;         // quadrature grid for grid_kl

  void validate() const;
  friend bool operator==(const TrainConfig&, const TrainConfig&) = default;
};

struct Metrics {
  double mae = 0.0;
  double test_nll = 0.0;
  std::optional<double> pearson;   // absent when either series is constant
  std::optional<double> grid_kl;   // absent for noise_free data
};

struct EvalPoint {
  std::size_t epoch = 0;
  Metrics metrics;
};

struct TrainedModel {
  LossKind loss;
  RegressionHead head;
  std::optional<FlowModel> flow;
};

struct RunReport {
  TrainConfig config;
  std::vector<double> train_loss;   // one entry per epoch
  std::size_t optimizer_steps = 0;
  std::vector<EvalPoint> evals;     // cadence evaluations
  Metrics final_metrics;
  double wall_seconds = 0.0;        // not serialised; outputs stay reproducible
  TrainedModel model;
};

/// Seeded head (then flow) init, shuffled mini-batches, Adam on the joint
/// parameter vector. Throws DivergenceError with an epoch/batch diagnostic if
/// the loss or a gradient turns non-finite.
RunReport train_run(const TrainConfig& cfg, const Dataset& train,
                    const Dataset& test);

/// Batched log-density over the rows of x.
using GridDensityFn = std::function<std::vector<double>(const Tensor2&)>;

/// Standardized density the trained model assigns to (mu_g - mu_hat)/sigma_hat,
/// normalised: the unit Gaussian / Laplace for the parametric kinds, the flow
/// for DLE and Q * G * s for RLE.
GridDensityFn learned_log_density(const LossKind& kind, const FlowModel* flow);

/// KL(p || q) by quadrature over `grid`. Both densities are renormalised on the
/// grid and q is floored at 1e-300, so the result is never negative.
double grid_kl(const GridDensityFn& log_p, const GridDensityFn& log_q,
               const DensityGrid& grid = {});

/// Sum of exp(log_p) * cell area over `grid`.
double grid_mass(const GridDensityFn& log_p, const DensityGrid& grid = {});

std::optional<double> pearson(std::span<const double> a, std::span<const double> b);

Metrics eval_metrics(const TrainedModel& model, const Dataset& test,
                     const DensityGrid& kl_grid = {});

struct DensityRow {
  double x1 = 0.0;
  double x2 = 0.0;
  double log_p = 0.0;
};

/// Row-major (x1 outer, x2 inner) evaluation of learned_log_density.
std::vector<DensityRow> export_density_grid(const LossKind& kind,
                                            const FlowModel* flow,
                                            const DensityGrid& grid);

/// Trains the flow alone on standardized samples (mu_hat = 0, sigma_hat = 1,
/// so the DLE loss reduces to -log p(eta)).
struct DensityFitConfig {
  FlowArch arch;
  std::size_t epochs = 60;
  std::size_t batch_size = 256;
  double learning_rate = 1e-3;
  std::uint64_t seed = 0;
};
FlowModel fit_flow_density(const Tensor2& samples, const DensityFitConfig& cfg);

struct BenchRun {
  std::uint64_t seed = 0;
  std::string loss;
  bool failed = false;
  std::string failure;
  Metrics metrics;
  std::optional<double> flow_mass;   // grid integral of exp(flow log-prob)
  std::vector<double> train_loss;
};

struct SummaryStat {
  std::optional<double> median;
  std::optional<double> min;
  std::optional<double> max;
};

struct BenchSummary {
  std::string loss;
  std::size_t completed = 0;
  std::size_t failed = 0;
  SummaryStat mae, test_nll, pearson, grid_kl;
};

struct BenchTable {
  std::vector<BenchRun> runs;          // seed-major, then kind order
  std::vector<BenchSummary> summary;   // one per kind
};

struct BenchSpec {
  NoiseKind noise = NoiseKind::laplace_hetero;
  std::size_t n_train = 2000;
  std::size_t n_test = 1000;
  std::vector<std::uint64_t> seeds;
  std::vector<LossKind> kinds;
  TrainConfig base;         // loss and seed are overwritten per run
  std::size_t jobs = 1;
  DensityGrid mass_grid;    // for flow_mass
};

/// Train/test data for one benchmark seed.
Split bench_data(NoiseKind noise, std::size_t n_train, std::size_t n_test,
                 std::uint64_t seed);

BenchTable bench_suite(const BenchSpec& spec);

double median(std::vector<double> v);

}  // namespace rle
