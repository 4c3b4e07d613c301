#include "rle/cli.hpp"

#include <chrono>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <ostream>
#include <sstream>
#include <string>

#include "CLI11.hpp"
#include "rle/checks.hpp"
#include "rle/errors.hpp"
#include "rle/serialize.hpp"
#include "rle/synth.hpp"
#include "rle/trainer.hpp"

namespace rle {

namespace fs = std::filesystem;

namespace {

// Raised for anything the user can fix: bad paths, schema violations.
struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

std::string read_file(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  if (!in) throw UsageError("cannot read " + p.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_file(const fs::path& p, const std::string& text) {
  std::ofstream out(p, std::ios::binary | std::ios::trunc);
  if (!out) throw UsageError("cannot write " + p.string());
  out << text;
  if (!out.flush()) throw UsageError("write failed: " + p.string());
}

fs::path prepare_out_dir(const std::string& dir) {
  if (dir.empty()) throw UsageError("no output directory (--out or config output_dir)");
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec || !fs::is_directory(dir)) throw UsageError("cannot create output directory " + dir);
  return fs::path(dir);
}

ExperimentConfig load_config(const std::string& path) {
  if (!fs::is_regular_file(path)) throw UsageError("config file not found: " + path);
  return parse_experiment_config(read_file(path));
}

Dataset load_dataset(const std::string& path) {
  if (!fs::is_regular_file(path)) throw UsageError("dataset not found: " + path);
  try {
    return read_dataset(path);
  } catch (const std::invalid_argument& e) {
    throw UsageError(path + ": " + e.what());
  } catch (const std::runtime_error& e) {
    throw UsageError(path + ": " + e.what());
  }
}

LossKind parse_loss_flag(const std::string& s) {
  const std::string text = !s.empty() && s.front() == '{' ? s : "\"" + s + "\"";
  return parse_loss_kind(text);
}

std::string describe(const Metrics& m) {
  std::ostringstream os;
  os << std::setprecision(6) << "mae=" << m.mae << " test_nll=" << m.test_nll;
  os << " pearson=";
  if (m.pearson) os << *m.pearson; else os << "n/a";
  os << " grid_kl=";
  if (m.grid_kl) os << *m.grid_kl; else os << "n/a";
  return os.str();
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

// ---- subcommands -------------------------------------------------------------

struct GenDataArgs {
  std::string kind, out, name;
  std::size_t n = 0;
  std::uint64_t seed = 0;
};

int cmd_gen_data(const GenDataArgs& a, std::ostream& out, std::ostream& err) {
  const auto kind = parse_noise_kind(a.kind);
  if (!kind) {
    err << "error: unknown --kind '" << a.kind << "'; valid kinds: " << noise_kind_choices() << "\n";
    return kExitUsage;
  }
  if (a.n == 0) {
    err << "error: --n must be >= 1\n";
    return kExitUsage;
  }
  const fs::path dir = prepare_out_dir(a.out);
  const std::string stem =
      a.name.empty() ? std::string(noise_kind_name(*kind)) + "_s" + std::to_string(a.seed) : a.name;
  if (stem.find('/') != std::string::npos || stem == "." || stem == "..") {
    throw UsageError("--name must be a plain file stem");
  }
  const Dataset ds = gen_dataset(*kind, a.n, a.seed);
  const fs::path csv = dir / (stem + ".csv");
  const fs::path side = dir / (stem + ".json");
  try {
    write_dataset(ds, csv, side);
  } catch (const std::runtime_error& e) {
    throw UsageError(e.what());
  }
  out << "wrote " << ds.size() << " rows (" << noise_kind_name(*kind) << ", seed " << a.seed
      << ") to " << csv.string() << " and " << side.string() << "\n";
  return kExitOk;
}

struct TrainArgs {
  std::string config, train, test, loss, out;
};

int cmd_train(const TrainArgs& a, std::ostream& out) {
  const ExperimentConfig cfg = load_config(a.config);
  TrainConfig tc = cfg.train;
  if (!a.loss.empty()) tc.loss = parse_loss_flag(a.loss);
  const Dataset train = load_dataset(a.train);
  const Dataset test = load_dataset(a.test);
  if (train.features.cols() != test.features.cols() ||
      train.targets.cols() != test.targets.cols()) {
    throw UsageError("train and test datasets differ in width");
  }
  if (test.size() < 2) throw UsageError("test set needs at least 2 rows");
  const fs::path dir = prepare_out_dir(a.out.empty() ? cfg.output_dir : a.out);

  RunReport rep = train_run(tc, train, test);
  write_file(dir / "model.json", to_json(rep.model));
  write_file(dir / "report.json", to_json(rep, "model.json"));
  write_file(dir / "metrics.csv", metrics_csv(rep));
  out << loss_label(tc.loss) << ": " << describe(rep.final_metrics) << " ("
      << rep.optimizer_steps << " steps, " << std::fixed << std::setprecision(2)
      << rep.wall_seconds << " s)\n";
  out << "wrote report.json, metrics.csv, model.json to " << dir.string() << "\n";
  return kExitOk;
}

struct BenchArgs {
  std::string config, out;
  std::size_t jobs = 0;
};

std::vector<LossKind> default_bench_kinds() {
  std::vector<LossKind> out;
  for (auto t : {LossType::l2_const, LossType::l1_const, LossType::gaussian_nll,
                 LossType::laplace_nll, LossType::dle, LossType::rle}) {
    LossKind k;
    k.type = t;
    out.push_back(k);
  }
  return out;
}

int cmd_bench(const BenchArgs& a, std::ostream& out) {
  ExperimentConfig cfg = load_config(a.config);
  if (cfg.losses.empty()) cfg.losses = default_bench_kinds();
  const fs::path dir = prepare_out_dir(a.out.empty() ? cfg.output_dir : a.out);

  BenchSpec spec;
  spec.noise = cfg.noise;
  spec.n_train = cfg.n_train;
  spec.n_test = cfg.n_test;
  spec.seeds = cfg.seeds;
  spec.kinds = cfg.losses;
  spec.base = cfg.train;
  spec.jobs = a.jobs > 0 ? a.jobs : cfg.jobs;
  spec.mass_grid = cfg.grid;

  const auto t0 = std::chrono::steady_clock::now();
  const BenchTable table = bench_suite(spec);
  write_file(dir / "bench_runs.csv", bench_csv(table));
  write_file(dir / "bench_summary.json", bench_summary_json(table, cfg));

  out << std::left;
  for (const auto& s : table.summary) {
    out << std::setw(14) << s.loss << " completed " << s.completed << "/" << (s.completed + s.failed)
        << "  median mae=" << (s.mae.median ? format_double(*s.mae.median) : "n/a")
        << " test_nll=" << (s.test_nll.median ? format_double(*s.test_nll.median) : "n/a") << "\n";
  }
  for (const auto& v : bench_verdicts(table)) {
    out << (v.holds ? (*v.holds ? "HOLDS  " : "FAILS  ") : "N/A    ") << v.name << "\n";
  }
  out << "wrote bench_runs.csv and bench_summary.json to " << dir.string() << " ("
      << std::fixed << std::setprecision(1) << seconds_since(t0) << " s)\n";
  return kExitOk;
}

struct DensityArgs {
  std::string model, out;
  std::size_t points = 200;
  double lower = -8.0, upper = 8.0;
};

int cmd_density(const DensityArgs& a, std::ostream& out) {
  if (!fs::is_regular_file(a.model)) throw UsageError("model snapshot not found: " + a.model);
  const TrainedModel m = parse_model(read_file(a.model));
  if (m.head.output_dim() != 2) throw UsageError("density export needs a 2-D model");
  DensityGrid grid{a.lower, a.upper, a.points};
  try {
    grid.validate();
  } catch (const std::invalid_argument& e) {
    throw UsageError(e.what());
  }
  const fs::path dir = prepare_out_dir(a.out);
  const auto rows = export_density_grid(m.loss, m.flow ? &*m.flow : nullptr, grid);
  write_file(dir / "density.csv", density_csv(rows));
  out << "wrote " << rows.size() << " grid rows (" << loss_label(m.loss) << ") to "
      << (dir / "density.csv").string() << "\n";
  return kExitOk;
}

struct CheckArgs {
  std::uint64_t seed = 0;
  bool list = false;
  std::vector<std::string> only;
};

int cmd_check(const CheckArgs& a, std::ostream& out, std::ostream& err) {
  const auto names = check_names();
  if (a.list) {
    for (auto n : names) out << n << "\n";
    return kExitOk;
  }
  std::vector<std::string_view> todo;
  if (a.only.empty()) {
    todo = names;
  } else {
    for (const auto& o : a.only) {
      if (std::find(names.begin(), names.end(), o) == names.end()) {
        err << "error: unknown check '" << o << "' (see --list)\n";
        return kExitUsage;
      }
      todo.push_back(o);
    }
  }
  int failed = 0;
  for (auto n : todo) {
    const auto t0 = std::chrono::steady_clock::now();
    const CheckResult r = run_check(n, a.seed);
    out << (r.passed ? "PASS  " : "FAIL  ") << std::left << std::setw(28) << r.name << r.detail
        << "  [" << std::fixed << std::setprecision(2) << seconds_since(t0) << " s]\n";
    failed += r.passed ? 0 : 1;
  }
  out << (failed == 0 ? "all checks passed" : std::to_string(failed) + " check(s) failed")
      << " (seed " << a.seed << ")\n";
  return failed == 0 ? kExitOk : kExitFailure;
}

}  // namespace

int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Residual log-likelihood regression experiments", "rle"};
  app.require_subcommand(1);

  GenDataArgs gen;
  auto* g = app.add_subcommand("gen-data", "Generate a synthetic dataset (CSV plus JSON sidecar)");
  g->add_option("--kind", gen.kind, "Noise kind: " + std::string(noise_kind_choices()))->required();
  g->add_option("--n", gen.n, "Number of rows")->required();
  g->add_option("--seed", gen.seed, "Random seed")->required();
  g->add_option("--out", gen.out, "Output directory")->required();
  g->add_option("--name", gen.name, "File stem (default <kind>_s<seed>)");

  TrainArgs tr;
  auto* t = app.add_subcommand("train", "Train one model from a config file");
  t->add_option("--config", tr.config, "Experiment config JSON")->required();
  t->add_option("--train", tr.train, "Training dataset CSV")->required();
  t->add_option("--test", tr.test, "Test dataset CSV")->required();
  t->add_option("--loss", tr.loss, "Override the loss kind (name or JSON object)");
  t->add_option("--out", tr.out, "Output directory (default: config output_dir)");

  BenchArgs be;
  auto* b = app.add_subcommand("bench", "Run the multi-seed loss comparison");
  b->add_option("--config", be.config, "Experiment config JSON")->required();
  b->add_option("--out", be.out, "Output directory (default: config output_dir)");
  b->add_option("--jobs", be.jobs, "Concurrent runs (default: config jobs)");

  DensityArgs de;
  auto* d = app.add_subcommand("density", "Export the learned standardized density on a grid");
  d->add_option("--model", de.model, "Model snapshot JSON")->required();
  d->add_option("--out", de.out, "Output directory")->required();
  d->add_option("--points", de.points, "Grid points per axis")->capture_default_str();
  d->add_option("--lower", de.lower, "Grid lower bound")->capture_default_str();
  d->add_option("--upper", de.upper, "Grid upper bound")->capture_default_str();

  CheckArgs ch;
  auto* c = app.add_subcommand("check", "Run the numerical self-checks");
  c->add_option("--seed", ch.seed, "Seed for the random draws")->capture_default_str();
  c->add_flag("--list", ch.list, "List check names without running them");
  c->add_option("--only", ch.only, "Run only the named checks");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return kExitOk;
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << "\n";
    return kExitUsage;
  }

  try {
    if (g->parsed()) return cmd_gen_data(gen, out, err);
    if (t->parsed()) return cmd_train(tr, out);
    if (b->parsed()) return cmd_bench(be, out);
    if (d->parsed()) return cmd_density(de, out);
    if (c->parsed()) return cmd_check(ch, out, err);
  } catch (const SchemaError& e) {
    err << "error: schema violation at " << e.what() << "\n";
    return kExitUsage;
  } catch (const UsageError& e) {
    err << "error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const DivergenceError& e) {
    err << "error: " << e.what() << "\n";
    return kExitDivergence;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kExitUsage;
  }
  return kExitUsage;
}

}  // namespace rle
