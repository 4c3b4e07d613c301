#pragma once

// JSON documents: the experiment config, the model snapshot and run reports,
// plus the CSV tables the CLI writes.
//
// Parsers reject unknown keys and wrong types with a SchemaError that carries
// the JSON path of the offending value, e.g. "train.flow.width".

#include <cstddef>
#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "rle/lik.hpp"
#include "rle/synth.hpp"
#include "rle/trainer.hpp"

namespace rle {

class SchemaError : public std::invalid_argument {
 public:
  SchemaError(std::string path, const std::string& what)
      : std::invalid_argument(path + ": " + what), path_(std::move(path)) {}
  const std::string& path() const noexcept { return path_; }

 private:
  std::string path_;
};

inline constexpr int kConfigSchemaVersion = 1;
inline constexpr int kModelFormatVersion = 1;
inline constexpr int kReportFormatVersion = 1;

struct ExperimentConfig {
  int schema_version = kConfigSchemaVersion;
  NoiseKind noise = NoiseKind::laplace_hetero;
  std::size_t n_train = 2000;
  std::size_t n_test = 1000;
  std::vector<std::uint64_t> seeds{0, 1, 2, 3, 4};
  std::vector<LossKind> losses;   // bench matrix; empty means train.loss only
  TrainConfig train;
  std::size_t jobs = 1;
  DensityGrid grid;               // flow-mass evaluation in bench
  std::string output_dir;         // empty: use the --out flag

  friend bool operator==(const ExperimentConfig&, const ExperimentConfig&) = default;
};

ExperimentConfig parse_experiment_config(std::string_view json_text);
std::string to_json(const ExperimentConfig& cfg);

/// "rle" / {"type": "rle", "q": "gaussian", "include_log_s": true, ...}
LossKind parse_loss_kind(std::string_view json_text);
std::string to_json(const LossKind& k);

std::string to_json(const TrainedModel& m);
TrainedModel parse_model(std::string_view json_text);

std::string to_json(const FlowModel& f);
FlowModel parse_flow(std::string_view json_text);

/// Report document; wall-clock time is left out so reruns are byte-identical.
/// `model_ref` names the snapshot file written next to it.
std::string to_json(const RunReport& r, std::string_view model_ref = "model.json");

/// One row per evaluation point (cadence plus final): epoch, train_loss,
/// mae, test_nll, pearson, grid_kl. Absent values are empty cells.
std::string metrics_csv(const RunReport& r);

std::string density_csv(const std::vector<DensityRow>& rows);

struct BenchVerdict {
  std::string name;
  std::optional<bool> holds;   // absent when a median is missing
};

/// MAE ladder rle <= laplace_nll <= gaussian_nll <= l2_const and
/// NLL rle <= dle, over the kinds present in the table.
std::vector<BenchVerdict> bench_verdicts(const BenchTable& t);

/// Run rows followed by one summary row per kind.
std::string bench_csv(const BenchTable& t);
std::string bench_summary_json(const BenchTable& t, const ExperimentConfig& cfg);

/// Shortest round-trip decimal form.
std::string format_double(double v);

}  // namespace rle
