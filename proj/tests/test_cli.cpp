#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <numbers>
#include <sstream>
#include <string>
#include <vector>

#include "doctest.h"
#include "json.hpp"
#include "rle/cli.hpp"
#include "rle/serialize.hpp"
#include "rle/synth.hpp"

using namespace rle;
namespace fs = std::filesystem;
using json = nlohmann::json;

namespace {

struct Result {
  int code = -1;
  std::string out, err;
};

Result run(std::vector<std::string> args) {
  args.insert(args.begin(), "rle");
  std::vector<const char*> argv;
  for (const auto& a : args) argv.push_back(a.c_str());
  std::ostringstream out, err;
  Result r;
  r.code = run_cli(static_cast<int>(argv.size()), argv.data(), out, err);
  r.out = out.str();
  r.err = err.str();
  return r;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void put(const fs::path& p, const std::string& text) {
  std::ofstream out(p, std::ios::binary);
  out << text;
}

std::size_t count_lines(const std::string& s) {
  std::size_t n = 0;
  for (char c : s) n += c == '\n';
  return n;
}

// Per-test scratch directory with a small train/test pair and a smoke config.
struct Workspace {
  fs::path root;
  explicit Workspace(const std::string& name) {
    root = fs::temp_directory_path() / ("rle_test_cli_" + name);
    fs::remove_all(root);
    fs::create_directories(root);
    put(root / "smoke.json",
        R"({"schema_version": 1, "train": {"epochs": 5, "kl_grid": {"points": 100}}})");
  }
  ~Workspace() { fs::remove_all(root); }
  std::string p(const std::string& rel) const { return (root / rel).string(); }
  void make_data() const {
    REQUIRE(run({"gen-data", "--kind", "laplace_hetero", "--n", "600", "--seed", "1", "--out",
                 p("data"), "--name", "train"})
                .code == kExitOk);
    REQUIRE(run({"gen-data", "--kind", "laplace_hetero", "--n", "200", "--seed", "2", "--out",
                 p("data"), "--name", "test"})
                .code == kExitOk);
  }
};

}  // namespace

TEST_CASE("gen-data writes two files and is byte-stable") {
  Workspace w("gen");
  const Result r = run({"gen-data", "--kind", "laplace_hetero", "--n", "3000", "--seed", "7",
                        "--out", w.p("data")});
  CHECK(r.code == kExitOk);
  CHECK(fs::exists(w.root / "data" / "laplace_hetero_s7.csv"));
  CHECK(fs::exists(w.root / "data" / "laplace_hetero_s7.json"));
  std::size_t files = 0;
  for ([[maybe_unused]] const auto& e : fs::directory_iterator(w.root / "data")) ++files;
  CHECK(files == 2);
  CHECK(count_lines(slurp(w.root / "data" / "laplace_hetero_s7.csv")) == 3001);

  const std::string csv = slurp(w.root / "data" / "laplace_hetero_s7.csv");
  const std::string side = slurp(w.root / "data" / "laplace_hetero_s7.json");
  const Result again = run({"gen-data", "--kind", "laplace_hetero", "--n", "3000", "--seed", "7",
                            "--out", w.p("data")});
  CHECK(again.code == kExitOk);
  CHECK(again.out == r.out);
  CHECK(slurp(w.root / "data" / "laplace_hetero_s7.csv") == csv);
  CHECK(slurp(w.root / "data" / "laplace_hetero_s7.json") == side);
}

TEST_CASE("gen-data rejects an unknown kind with the valid list") {
  Workspace w("badkind");
  const Result r = run({"gen-data", "--kind", "cauchy", "--n", "10", "--seed", "1", "--out",
                        w.p("data")});
  CHECK(r.code == kExitUsage);
  CHECK(r.err.find("laplace_hetero") != std::string::npos);
  CHECK(r.err.find("skew_mixture") != std::string::npos);
  CHECK_FALSE(fs::exists(w.root / "data"));
}

TEST_CASE("usage errors exit with code 2") {
  CHECK(run({}).code == kExitUsage);
  CHECK(run({"frobnicate"}).code == kExitUsage);
  CHECK(run({"gen-data", "--kind", "noise_free"}).code == kExitUsage);
  CHECK(run({"--help"}).code == kExitOk);
}

TEST_CASE("train writes report, metrics and model") {
  Workspace w("train");
  w.make_data();
  const Result r = run({"train", "--config", w.p("smoke.json"), "--train", w.p("data/train.csv"),
                        "--test", w.p("data/test.csv"), "--out", w.p("run")});
  REQUIRE(r.code == kExitOk);
  for (const char* f : {"report.json", "metrics.csv", "model.json"}) {
    CHECK(fs::exists(w.root / "run" / f));
  }
  const json report = json::parse(slurp(w.root / "run" / "report.json"));
  CHECK(report["format"] == "rle-report");
  CHECK(report["train_loss"].size() == 5);
  CHECK(report["config"]["loss"] == "rle");
  CHECK(report["model"] == "model.json");
  CHECK(slurp(w.root / "run" / "metrics.csv").rfind("epoch,train_loss,mae,test_nll,pearson,grid_kl\n", 0) == 0);

  // The snapshot parses back into the model that produced the report.
  const TrainedModel m = parse_model(slurp(w.root / "run" / "model.json"));
  CHECK(m.flow.has_value());
  CHECK(to_json(m) == slurp(w.root / "run" / "model.json"));
}

TEST_CASE("train outputs are byte-identical across reruns") {
  Workspace w("determinism");
  w.make_data();
  const std::vector<std::string> args = {"train",  "--config", w.p("smoke.json"),
                                         "--train", w.p("data/train.csv"),
                                         "--test", w.p("data/test.csv")};
  auto a = args, b = args;
  a.insert(a.end(), {"--out", w.p("a")});
  b.insert(b.end(), {"--out", w.p("b")});
  REQUIRE(run(a).code == kExitOk);
  REQUIRE(run(b).code == kExitOk);
  for (const char* f : {"report.json", "metrics.csv", "model.json"}) {
    CHECK(slurp(w.root / "a" / f) == slurp(w.root / "b" / f));
  }
}

TEST_CASE("--loss changes only the loss field of the config echo") {
  Workspace w("lossflag");
  w.make_data();
  const auto train_with = [&](const std::string& loss, const std::string& out) {
    const Result r = run({"train", "--config", w.p("smoke.json"), "--train", w.p("data/train.csv"),
                          "--test", w.p("data/test.csv"), "--loss", loss, "--out", w.p(out)});
    REQUIRE(r.code == kExitOk);
    return json::parse(slurp(w.root / out / "report.json"))["config"];
  };
  json rle = train_with("rle", "r");
  json dle = train_with("dle", "d");
  CHECK(rle["loss"] == "rle");
  CHECK(dle["loss"] == "dle");
  rle.erase("loss");
  dle.erase("loss");
  CHECK(rle == dle);

  const json obj = train_with(R"({"type": "rle", "q": "gaussian"})", "g")["loss"];
  CHECK(obj["type"] == "rle");
  CHECK(obj["q"] == "gaussian");
}

TEST_CASE("train reports missing inputs and schema violations with code 2") {
  Workspace w("trainerr");
  w.make_data();
  Result r = run({"train", "--config", w.p("smoke.json"), "--train", w.p("data/nope.csv"),
                  "--test", w.p("data/test.csv"), "--out", w.p("run")});
  CHECK(r.code == kExitUsage);
  CHECK(r.err.find("nope.csv") != std::string::npos);

  put(w.root / "bad.json", R"({"schema_version": 1, "train": {"epochs": 5, "flow": {"depth": 3}}})");
  r = run({"train", "--config", w.p("bad.json"), "--train", w.p("data/train.csv"), "--test",
           w.p("data/test.csv"), "--out", w.p("run")});
  CHECK(r.code == kExitUsage);
  CHECK(r.err.find("train.flow.depth") != std::string::npos);

  put(w.root / "nover.json", R"({"train": {"epochs": 5}})");
  r = run({"train", "--config", w.p("nover.json"), "--train", w.p("data/train.csv"), "--test",
           w.p("data/test.csv"), "--out", w.p("run")});
  CHECK(r.code == kExitUsage);
  CHECK(r.err.find("schema_version") != std::string::npos);

  r = run({"train", "--config", w.p("missing.json"), "--train", w.p("data/train.csv"), "--test",
           w.p("data/test.csv"), "--out", w.p("run")});
  CHECK(r.code == kExitUsage);
}

TEST_CASE("train divergence exits with code 3") {
  Workspace w("diverge");
  w.make_data();
  // Targets large enough that the squared error overflows.
  Dataset huge = gen_dataset(NoiseKind::gaussian_hetero, 20, 1);
  for (double& v : huge.targets.flat()) v = 1e200;
  write_dataset(huge, w.root / "data" / "huge.csv", w.root / "data" / "huge.json");
  put(w.root / "l2.json", R"({"schema_version": 1, "train": {"loss": "l2_const", "epochs": 1}})");
  const Result r = run({"train", "--config", w.p("l2.json"), "--train", w.p("data/huge.csv"),
                        "--test", w.p("data/test.csv"), "--out", w.p("run")});
  CHECK(r.code == kExitDivergence);
  CHECK(r.err.find("diverged") != std::string::npos);
}

TEST_CASE("density export of a zero-init snapshot") {
  Workspace w("density");
  w.make_data();
  // Train one epoch, then zero the flow output layers to get an identity-flow
  // snapshot.
  put(w.root / "one.json",
      R"({"schema_version": 1, "train": {"loss": "dle", "epochs": 1, "kl_grid": {"points": 50}}})");
  REQUIRE(run({"train", "--config", w.p("one.json"), "--train", w.p("data/train.csv"), "--test",
               w.p("data/test.csv"), "--out", w.p("run")})
              .code == kExitOk);
  TrainedModel m = parse_model(slurp(w.root / "run" / "model.json"));
  for (auto& b : m.flow->blocks) {
    for (MlpParams* net : {&b.scale_net, &b.shift_net}) {
      net->layers.back().weight.fill(0.0);
      std::fill(net->layers.back().bias.begin(), net->layers.back().bias.end(), 0.0);
    }
  }
  put(w.root / "zero.json", to_json(m));

  const Result r = run({"density", "--model", w.p("zero.json"), "--out", w.p("dens")});
  REQUIRE(r.code == kExitOk);
  std::istringstream in(slurp(w.root / "dens" / "density.csv"));
  std::string line;
  std::getline(in, line);
  CHECK(line == "x1,x2,log_p");
  std::size_t rows = 0;
  double worst = 0.0, mass = 0.0;
  const double step = 16.0 / 200.0;
  while (std::getline(in, line)) {
    ++rows;
    double x1, x2, lp;
    char c1, c2;
    std::istringstream ls(line);
    ls >> x1 >> c1 >> x2 >> c2 >> lp;
    const double exact = -std::log(2.0 * std::numbers::pi) - 0.5 * (x1 * x1 + x2 * x2);
    worst = std::max(worst, std::abs(lp - exact));
    mass += std::exp(lp) * step * step;
  }
  CHECK(rows == 40000);
  CHECK(worst < 1e-12);
  CHECK(mass > 0.99);
  CHECK(mass < 1.01);

  CHECK(run({"density", "--model", w.p("nope.json"), "--out", w.p("dens")}).code == kExitUsage);
  put(w.root / "broken.json", R"({"format": "rle-model", "version": 99})");
  CHECK(run({"density", "--model", w.p("broken.json"), "--out", w.p("dens")}).code == kExitUsage);
}

TEST_CASE("bench writes the comparison table and verdicts") {
  Workspace w("bench");
  put(w.root / "bench.json", R"({
    "schema_version": 1, "n_train": 120, "n_test": 40, "seeds": [0, 1, 2],
    "losses": ["l2_const", "gaussian_nll", "laplace_nll", "dle", "rle"],
    "train": {"epochs": 2, "flow": {"blocks": 2, "width": 8}, "kl_grid": {"points": 40}},
    "grid": {"points": 100}
  })");
  const Result r = run({"bench", "--config", w.p("bench.json"), "--out", w.p("out")});
  REQUIRE(r.code == kExitOk);
  const std::string csv = slurp(w.root / "out" / "bench_runs.csv");
  CHECK(count_lines(csv) == 1 + 15 + 5);
  const json summary = json::parse(slurp(w.root / "out" / "bench_summary.json"));
  CHECK(summary["format"] == "rle-bench");
  CHECK(summary["summary"].size() == 5);
  for (const auto& s : summary["summary"]) {
    for (const char* key : {"mae", "test_nll", "pearson", "grid_kl"}) CHECK(s.contains(key));
  }
  CHECK(summary["verdicts"].size() == 4);
  CHECK(r.out.find("median mae: rle <= laplace_nll") != std::string::npos);

  const std::string first = slurp(w.root / "out" / "bench_summary.json");
  REQUIRE(run({"bench", "--config", w.p("bench.json"), "--out", w.p("out2"), "--jobs", "2"}).code ==
          kExitOk);
  CHECK(slurp(w.root / "out2" / "bench_summary.json") == first);
  CHECK(slurp(w.root / "out2" / "bench_runs.csv") == csv);
}

TEST_CASE("check subcommand") {
  const Result list = run({"check", "--list"});
  CHECK(list.code == kExitOk);
  CHECK(list.out.find("flow_roundtrip") != std::string::npos);
  CHECK(list.out.find("PASS") == std::string::npos);

  const Result one = run({"check", "--only", "flow_roundtrip", "--only", "grad_rle", "--seed", "3"});
  CHECK(one.code == kExitOk);
  CHECK(one.out.find("PASS  flow_roundtrip") != std::string::npos);
  CHECK(one.out.find("PASS  grad_rle") != std::string::npos);

  CHECK(run({"check", "--only", "nonsense"}).code == kExitUsage);
}

TEST_CASE("the installed binary maps exit codes") {
  const char* bin = std::getenv("RLE_BIN");
  if (bin == nullptr) {
    MESSAGE("RLE_BIN not set; process-level test skipped");
    return;
  }
  const std::string b = bin;
  CHECK(std::system((b + " check --list > /dev/null").c_str()) == 0);
  const int bad = std::system((b + " gen-data --kind nope --n 1 --seed 1 --out /tmp 2> /dev/null").c_str());
  CHECK(WEXITSTATUS(bad) == kExitUsage);
}
