#include "rle/serialize.hpp"

#include <charconv>
#include <cmath>
#include <limits>
#include <set>
#include <sstream>

#include "json.hpp"
#include "rle/errors.hpp"

namespace rle {

using json = nlohmann::ordered_json;

namespace {

std::string child_path(const std::string& parent, std::string_view key) {
  return parent.empty() ? std::string(key) : parent + "." + std::string(key);
}

std::string index_path(const std::string& parent, std::size_t i) {
  return parent + "[" + std::to_string(i) + "]";
}

json parse_text(std::string_view text) {
  try {
    return json::parse(text);
  } catch (const json::parse_error& e) {
    throw SchemaError("$", std::string("invalid JSON: ") + e.what());
  }
}

double read_double(const json& v, const std::string& path) {
  if (!v.is_number()) throw SchemaError(path, "expected a number");
  const double d = v.get<double>();
  if (!std::isfinite(d)) throw SchemaError(path, "expected a finite number");
  return d;
}

std::uint64_t read_u64(const json& v, const std::string& path) {
  if (v.is_number_unsigned()) return v.get<std::uint64_t>();
  if (v.is_number_integer() && v.get<std::int64_t>() >= 0) {
    return static_cast<std::uint64_t>(v.get<std::int64_t>());
  }
  throw SchemaError(path, "expected a non-negative integer");
}

std::size_t read_size(const json& v, const std::string& path) {
  return static_cast<std::size_t>(read_u64(v, path));
}

std::string read_string(const json& v, const std::string& path) {
  if (!v.is_string()) throw SchemaError(path, "expected a string");
  return v.get<std::string>();
}

bool read_bool(const json& v, const std::string& path) {
  if (!v.is_boolean()) throw SchemaError(path, "expected true or false");
  return v.get<bool>();
}

// Tracks which keys of an object were consumed; finish() rejects the rest.
class ObjectReader {
 public:
  ObjectReader(const json& j, std::string path) : j_(j), path_(std::move(path)) {
    if (!j_.is_object()) {
      throw SchemaError(path_.empty() ? "$" : path_, "expected an object");
    }
  }

  const json* get(std::string_view key) {
    seen_.emplace(key);
    auto it = j_.find(std::string(key));
    return it == j_.end() ? nullptr : &*it;
  }

  const json& need(std::string_view key) {
    const json* v = get(key);
    if (v == nullptr) throw SchemaError(path(key), "required key missing");
    return *v;
  }

  std::string path(std::string_view key) const { return child_path(path_, key); }

  void finish() const {
    for (auto it = j_.begin(); it != j_.end(); ++it) {
      if (!seen_.contains(it.key())) throw SchemaError(path(it.key()), "unknown key");
    }
  }

 private:
  const json& j_;
  std::string path_;
  std::set<std::string, std::less<>> seen_;
};

template <class F>
void opt(ObjectReader& r, std::string_view key, F&& assign) {
  if (const json* v = r.get(key)) assign(*v, r.path(key));
}

// Runs `fn`, converting library validation errors into SchemaError at `path`.
template <class F>
auto at_path(const std::string& path, F&& fn) {
  try {
    return fn();
  } catch (const SchemaError&) {
    throw;
  } catch (const std::invalid_argument& e) {
    throw SchemaError(path.empty() ? "$" : path, e.what());
  }
}

// ---- loss kind -------------------------------------------------------------

json loss_to_json(const LossKind& k) {
  LossKind plain;
  plain.type = k.type;
  if (k == plain) return std::string(loss_type_name(k.type));
  json j;
  j["type"] = loss_type_name(k.type);
  j["q"] = base_family_name(k.q);
  j["include_log_s"] = k.include_log_s;
  j["riemann"] = {{"lower", k.riemann.lower},
                  {"upper", k.riemann.upper},
                  {"subintervals", k.riemann.subintervals}};
  return j;
}

LossType read_loss_type(const json& v, const std::string& path) {
  const std::string s = read_string(v, path);
  const auto t = parse_loss_type(s);
  if (!t) {
    throw SchemaError(path, "unknown loss type '" + s +
                                "' (expected l2_const, l1_const, gaussian_nll, "
                                "laplace_nll, dle or rle)");
  }
  return *t;
}

LossKind loss_from_json(const json& v, const std::string& path) {
  LossKind k;
  if (v.is_string()) {
    k.type = read_loss_type(v, path);
    return k;
  }
  ObjectReader r(v, path);
  k.type = read_loss_type(r.need("type"), r.path("type"));
  opt(r, "q", [&](const json& x, const std::string& p) {
    const std::string s = read_string(x, p);
    const auto f = parse_base_family(s);
    if (!f) throw SchemaError(p, "unknown base family '" + s + "'");
    k.q = *f;
  });
  opt(r, "include_log_s", [&](const json& x, const std::string& p) {
    k.include_log_s = read_bool(x, p);
  });
  opt(r, "riemann", [&](const json& x, const std::string& p) {
    ObjectReader rr(x, p);
    opt(rr, "lower", [&](const json& y, const std::string& q) { k.riemann.lower = read_double(y, q); });
    opt(rr, "upper", [&](const json& y, const std::string& q) { k.riemann.upper = read_double(y, q); });
    opt(rr, "subintervals", [&](const json& y, const std::string& q) {
      k.riemann.subintervals = read_size(y, q);
    });
    rr.finish();
    at_path(p, [&] { k.riemann.validate(); });
  });
  r.finish();
  return k;
}

// ---- train config -----------------------------------------------------------

json grid_to_json(const DensityGrid& g) {
  return {{"lower", g.lower}, {"upper", g.upper}, {"points", g.points}};
}

DensityGrid grid_from_json(const json& v, const std::string& path) {
  DensityGrid g;
  ObjectReader r(v, path);
  opt(r, "lower", [&](const json& y, const std::string& q) { g.lower = read_double(y, q); });
  opt(r, "upper", [&](const json& y, const std::string& q) { g.upper = read_double(y, q); });
  opt(r, "points", [&](const json& y, const std::string& q) { g.points = read_size(y, q); });
  r.finish();
  at_path(path, [&] { g.validate(); });
  return g;
}

json train_to_json(const TrainConfig& c) {
  json j;
  j["loss"] = loss_to_json(c.loss);
  j["epochs"] = c.epochs;
  j["batch_size"] = c.batch_size;
  j["learning_rate"] = c.learning_rate;
  j["seed"] = c.seed;
  j["sigma_max"] = c.sigma_max;
  j["eval_every"] = c.eval_every;
  j["flow"] = {{"blocks", c.flow_arch.blocks},
               {"fc_layers", c.flow_arch.fc_layers},
               {"width", c.flow_arch.width},
               {"slope", c.flow_arch.slope},
               {"bounded_scale", c.flow_arch.bounded_scale}};
  j["trunk"] = {{"layers", c.trunk_arch.layers},
                {"width", c.trunk_arch.width},
                {"slope", c.trunk_arch.slope}};
  j["kl_grid"] = grid_to_json(c.kl_grid);
  return j;
}

TrainConfig train_from_json(const json& v, const std::string& path) {
  TrainConfig c;
  ObjectReader r(v, path);
  opt(r, "loss", [&](const json& x, const std::string& p) { c.loss = loss_from_json(x, p); });
  opt(r, "epochs", [&](const json& x, const std::string& p) { c.epochs = read_size(x, p); });
  opt(r, "batch_size", [&](const json& x, const std::string& p) { c.batch_size = read_size(x, p); });
  opt(r, "learning_rate", [&](const json& x, const std::string& p) { c.learning_rate = read_double(x, p); });
  opt(r, "seed", [&](const json& x, const std::string& p) { c.seed = read_u64(x, p); });
  opt(r, "sigma_max", [&](const json& x, const std::string& p) { c.sigma_max = read_double(x, p); });
  opt(r, "eval_every", [&](const json& x, const std::string& p) { c.eval_every = read_size(x, p); });
  opt(r, "flow", [&](const json& x, const std::string& p) {
    ObjectReader f(x, p);
    opt(f, "blocks", [&](const json& y, const std::string& q) { c.flow_arch.blocks = read_size(y, q); });
    opt(f, "fc_layers", [&](const json& y, const std::string& q) { c.flow_arch.fc_layers = read_size(y, q); });
    opt(f, "width", [&](const json& y, const std::string& q) { c.flow_arch.width = read_size(y, q); });
    opt(f, "slope", [&](const json& y, const std::string& q) { c.flow_arch.slope = read_double(y, q); });
    opt(f, "bounded_scale", [&](const json& y, const std::string& q) { c.flow_arch.bounded_scale = read_bool(y, q); });
    f.finish();
    if (c.flow_arch.blocks < 1) throw SchemaError(f.path("blocks"), "must be >= 1");
    if (c.flow_arch.fc_layers < 1) throw SchemaError(f.path("fc_layers"), "must be >= 1");
    if (c.flow_arch.width < 1) throw SchemaError(f.path("width"), "must be >= 1");
  });
  opt(r, "trunk", [&](const json& x, const std::string& p) {
    ObjectReader t(x, p);
    opt(t, "layers", [&](const json& y, const std::string& q) { c.trunk_arch.layers = read_size(y, q); });
    opt(t, "width", [&](const json& y, const std::string& q) { c.trunk_arch.width = read_size(y, q); });
    opt(t, "slope", [&](const json& y, const std::string& q) { c.trunk_arch.slope = read_double(y, q); });
    t.finish();
    if (c.trunk_arch.layers < 1) throw SchemaError(t.path("layers"), "must be >= 1");
    if (c.trunk_arch.width < 1) throw SchemaError(t.path("width"), "must be >= 1");
  });
  opt(r, "kl_grid", [&](const json& x, const std::string& p) { c.kl_grid = grid_from_json(x, p); });
  r.finish();
  if (c.epochs < 1) throw SchemaError(r.path("epochs"), "must be >= 1");
  if (c.batch_size < 1) throw SchemaError(r.path("batch_size"), "must be >= 1");
  if (!(c.learning_rate > 0.0)) throw SchemaError(r.path("learning_rate"), "must be > 0");
  if (!(c.sigma_max > 0.0)) throw SchemaError(r.path("sigma_max"), "must be > 0");
  return c;
}

// ---- networks ----------------------------------------------------------------

std::string_view activation_name(OutputActivation a) {
  switch (a) {
    case OutputActivation::identity: return "identity";
    case OutputActivation::leaky_relu: return "leaky_relu";
    case OutputActivation::tanh: return "tanh";
  }
  return "?";
}

json mlp_to_json(const MlpParams& p) {
  json j;
  j["slope"] = p.slope;
  j["output_activation"] = activation_name(p.output_activation);
  json layers = json::array();
  for (const auto& L : p.layers) {
    json w = json::array();
    for (std::size_t o = 0; o < L.out(); ++o) {
      const auto row = L.weight.row(o);
      w.push_back(std::vector<double>(row.begin(), row.end()));
    }
    layers.push_back({{"weight", std::move(w)}, {"bias", L.bias}});
  }
  j["layers"] = std::move(layers);
  return j;
}

std::vector<double> read_vector(const json& v, const std::string& path) {
  if (!v.is_array()) throw SchemaError(path, "expected an array");
  std::vector<double> out;
  out.reserve(v.size());
  for (std::size_t i = 0; i < v.size(); ++i) out.push_back(read_double(v[i], index_path(path, i)));
  return out;
}

MlpParams mlp_from_json(const json& v, const std::string& path) {
  MlpParams p;
  ObjectReader r(v, path);
  p.slope = read_double(r.need("slope"), r.path("slope"));
  {
    const std::string a = read_string(r.need("output_activation"), r.path("output_activation"));
    if (a == "identity") p.output_activation = OutputActivation::identity;
    else if (a == "leaky_relu") p.output_activation = OutputActivation::leaky_relu;
    else if (a == "tanh") p.output_activation = OutputActivation::tanh;
    else throw SchemaError(r.path("output_activation"), "unknown activation '" + a + "'");
  }
  const json& layers = r.need("layers");
  const std::string lpath = r.path("layers");
  if (!layers.is_array()) throw SchemaError(lpath, "expected an array");
  for (std::size_t l = 0; l < layers.size(); ++l) {
    const std::string ip = index_path(lpath, l);
    ObjectReader lr(layers[l], ip);
    const json& w = lr.need("weight");
    if (!w.is_array() || w.empty()) throw SchemaError(lr.path("weight"), "expected a non-empty array");
    std::vector<double> flat;
    std::size_t cols = 0;
    for (std::size_t o = 0; o < w.size(); ++o) {
      const std::string rp = index_path(lr.path("weight"), o);
      std::vector<double> row = read_vector(w[o], rp);
      if (o == 0) cols = row.size();
      if (row.size() != cols || cols == 0) throw SchemaError(rp, "ragged or empty weight row");
      flat.insert(flat.end(), row.begin(), row.end());
    }
    DenseLayer L;
    L.weight = Tensor2(w.size(), cols, std::move(flat));
    L.bias = read_vector(lr.need("bias"), lr.path("bias"));
    if (L.bias.size() != L.out()) throw SchemaError(lr.path("bias"), "length differs from weight rows");
    lr.finish();
    p.layers.push_back(std::move(L));
  }
  r.finish();
  at_path(path, [&] { p.validate(); });
  return p;
}

json flow_to_json_doc(const FlowModel& f) {
  json j;
  j["format"] = "rle-flow";
  j["version"] = kModelFormatVersion;
  j["dim"] = f.dim;
  json blocks = json::array();
  for (const auto& b : f.blocks) {
    blocks.push_back({{"split", b.split},
                      {"scale", mlp_to_json(b.scale_net)},
                      {"shift", mlp_to_json(b.shift_net)}});
  }
  j["blocks"] = std::move(blocks);
  return j;
}

void check_format(ObjectReader& r, std::string_view format) {
  const std::string fmt = read_string(r.need("format"), r.path("format"));
  if (fmt != format) {
    throw SchemaError(r.path("format"), "expected '" + std::string(format) + "', got '" + fmt + "'");
  }
  const std::uint64_t ver = read_u64(r.need("version"), r.path("version"));
  if (ver != static_cast<std::uint64_t>(kModelFormatVersion)) {
    throw SchemaError(r.path("version"), "unsupported version " + std::to_string(ver));
  }
}

FlowModel flow_from_json_doc(const json& v, const std::string& path) {
  ObjectReader r(v, path);
  check_format(r, "rle-flow");
  FlowModel f;
  f.dim = read_size(r.need("dim"), r.path("dim"));
  const json& blocks = r.need("blocks");
  if (!blocks.is_array()) throw SchemaError(r.path("blocks"), "expected an array");
  for (std::size_t i = 0; i < blocks.size(); ++i) {
    const std::string bp = index_path(r.path("blocks"), i);
    ObjectReader br(blocks[i], bp);
    CouplingBlock b;
    b.dim = f.dim;
    b.split = read_size(br.need("split"), br.path("split"));
    b.scale_net = mlp_from_json(br.need("scale"), br.path("scale"));
    b.shift_net = mlp_from_json(br.need("shift"), br.path("shift"));
    br.finish();
    at_path(bp, [&] { b.validate(); });
    f.blocks.push_back(std::move(b));
  }
  r.finish();
  at_path(path, [&] { f.validate(); });
  return f;
}

json metrics_to_json(const Metrics& m) {
  json j;
  j["mae"] = m.mae;
  j["test_nll"] = m.test_nll;
  j["pearson"] = m.pearson ? json(*m.pearson) : json(nullptr);
  j["grid_kl"] = m.grid_kl ? json(*m.grid_kl) : json(nullptr);
  return j;
}

json stat_to_json(const SummaryStat& s) {
  const auto o = [](const std::optional<double>& v) { return v ? json(*v) : json(nullptr); };
  return {{"median", o(s.median)}, {"min", o(s.min)}, {"max", o(s.max)}};
}

std::string opt_cell(const std::optional<double>& v) {
  return v ? format_double(*v) : std::string();
}

std::string dump(const json& j) { return j.dump(2) + "\n"; }

}  // namespace

std::string format_double(double v) {
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

// ---- experiment config ----------------------------------------------------------

ExperimentConfig parse_experiment_config(std::string_view text) {
  const json j = parse_text(text);
  ExperimentConfig c;
  ObjectReader r(j, "");
  const std::uint64_t ver = read_u64(r.need("schema_version"), "schema_version");
  if (ver != static_cast<std::uint64_t>(kConfigSchemaVersion)) {
    throw SchemaError("schema_version", "unsupported version " + std::to_string(ver));
  }
  opt(r, "noise", [&](const json& x, const std::string& p) {
    const std::string s = read_string(x, p);
    const auto k = parse_noise_kind(s);
    if (!k) {
      throw SchemaError(p, "unknown noise kind '" + s + "' (expected one of " +
                               std::string(noise_kind_choices()) + ")");
    }
    c.noise = *k;
  });
  opt(r, "n_train", [&](const json& x, const std::string& p) { c.n_train = read_size(x, p); });
  opt(r, "n_test", [&](const json& x, const std::string& p) { c.n_test = read_size(x, p); });
  opt(r, "seeds", [&](const json& x, const std::string& p) {
    if (!x.is_array()) throw SchemaError(p, "expected an array");
    c.seeds.clear();
    for (std::size_t i = 0; i < x.size(); ++i) c.seeds.push_back(read_u64(x[i], index_path(p, i)));
  });
  opt(r, "losses", [&](const json& x, const std::string& p) {
    if (!x.is_array()) throw SchemaError(p, "expected an array");
    for (std::size_t i = 0; i < x.size(); ++i) c.losses.push_back(loss_from_json(x[i], index_path(p, i)));
  });
  opt(r, "train", [&](const json& x, const std::string& p) { c.train = train_from_json(x, p); });
  opt(r, "jobs", [&](const json& x, const std::string& p) { c.jobs = read_size(x, p); });
  opt(r, "grid", [&](const json& x, const std::string& p) { c.grid = grid_from_json(x, p); });
  opt(r, "output_dir", [&](const json& x, const std::string& p) { c.output_dir = read_string(x, p); });
  r.finish();
  if (c.n_train < 1) throw SchemaError("n_train", "must be >= 1");
  if (c.n_test < 2) throw SchemaError("n_test", "must be >= 2");
  if (c.seeds.empty()) throw SchemaError("seeds", "must list at least one seed");
  if (c.jobs < 1) throw SchemaError("jobs", "must be >= 1");
  return c;
}

std::string to_json(const ExperimentConfig& c) {
  json j;
  j["schema_version"] = c.schema_version;
  j["noise"] = noise_kind_name(c.noise);
  j["n_train"] = c.n_train;
  j["n_test"] = c.n_test;
  j["seeds"] = c.seeds;
  json losses = json::array();
  for (const auto& k : c.losses) losses.push_back(loss_to_json(k));
  j["losses"] = std::move(losses);
  j["train"] = train_to_json(c.train);
  j["jobs"] = c.jobs;
  j["grid"] = grid_to_json(c.grid);
  j["output_dir"] = c.output_dir;
  return dump(j);
}

LossKind parse_loss_kind(std::string_view text) {
  return loss_from_json(parse_text(text), "");
}

std::string to_json(const LossKind& k) { return loss_to_json(k).dump(); }

// ---- model snapshot -------------------------------------------------------------

std::string to_json(const FlowModel& f) { return dump(flow_to_json_doc(f)); }

FlowModel parse_flow(std::string_view text) {
  return flow_from_json_doc(parse_text(text), "");
}

std::string to_json(const TrainedModel& m) {
  json j;
  j["format"] = "rle-model";
  j["version"] = kModelFormatVersion;
  j["loss"] = loss_to_json(m.loss);
  j["sigma_max"] = m.head.sigma_max;
  j["head"] = {{"trunk", mlp_to_json(m.head.trunk)},
               {"mu", mlp_to_json(m.head.mu_head)},
               {"sigma", mlp_to_json(m.head.sigma_head)}};
  j["flow"] = m.flow ? flow_to_json_doc(*m.flow) : json(nullptr);
  return dump(j);
}

TrainedModel parse_model(std::string_view text) {
  const json j = parse_text(text);
  ObjectReader r(j, "");
  check_format(r, "rle-model");
  TrainedModel m;
  m.loss = loss_from_json(r.need("loss"), "loss");
  m.head.sigma_max = read_double(r.need("sigma_max"), "sigma_max");
  {
    ObjectReader h(r.need("head"), "head");
    m.head.trunk = mlp_from_json(h.need("trunk"), h.path("trunk"));
    m.head.mu_head = mlp_from_json(h.need("mu"), h.path("mu"));
    m.head.sigma_head = mlp_from_json(h.need("sigma"), h.path("sigma"));
    h.finish();
    at_path("head", [&] { m.head.validate(); });
  }
  const json& flow = r.need("flow");
  if (!flow.is_null()) m.flow = flow_from_json_doc(flow, "flow");
  r.finish();
  if (m.loss.needs_flow() != m.flow.has_value()) {
    throw SchemaError("flow", m.flow ? "loss kind takes no flow" : "loss kind needs a flow");
  }
  if (m.flow && m.flow->dim != m.head.output_dim()) {
    throw SchemaError("flow.dim", "differs from the head output width");
  }
  return m;
}

// ---- reports ---------------------------------------------------------------------

std::string to_json(const RunReport& r, std::string_view model_ref) {
  json j;
  j["format"] = "rle-report";
  j["version"] = kReportFormatVersion;
  j["config"] = train_to_json(r.config);
  j["train_loss"] = r.train_loss;
  j["optimizer_steps"] = r.optimizer_steps;
  json evals = json::array();
  for (const auto& e : r.evals) {
    json row = metrics_to_json(e.metrics);
    row["epoch"] = e.epoch;
    evals.push_back(std::move(row));
  }
  j["evals"] = std::move(evals);
  j["final_metrics"] = metrics_to_json(r.final_metrics);
  j["model"] = std::string(model_ref);
  return dump(j);
}

std::string metrics_csv(const RunReport& r) {
  std::ostringstream os;
  os << "epoch,train_loss,mae,test_nll,pearson,grid_kl\n";
  const auto row = [&](std::size_t epoch, const Metrics& m) {
    const std::string tl =
        epoch >= 1 && epoch <= r.train_loss.size() ? format_double(r.train_loss[epoch - 1]) : "";
    os << epoch << ',' << tl << ',' << format_double(m.mae) << ','
       << format_double(m.test_nll) << ',' << opt_cell(m.pearson) << ','
       << opt_cell(m.grid_kl) << '\n';
  };
  if (r.evals.empty()) {
    row(r.train_loss.size(), r.final_metrics);
  } else {
    for (const auto& e : r.evals) row(e.epoch, e.metrics);
  }
  return os.str();
}

std::string density_csv(const std::vector<DensityRow>& rows) {
  std::string out = "x1,x2,log_p\n";
  for (const auto& r : rows) {
    out += format_double(r.x1) + ',' + format_double(r.x2) + ',' + format_double(r.log_p) + '\n';
  }
  return out;
}

std::vector<BenchVerdict> bench_verdicts(const BenchTable& t) {
  const auto find = [&](std::string_view label) -> const BenchSummary* {
    for (const auto& s : t.summary) {
      if (s.loss == label) return &s;
    }
    return nullptr;
  };
  std::vector<BenchVerdict> out;
  const auto compare = [&](std::string_view metric, std::string_view a, std::string_view b,
                           SummaryStat BenchSummary::*stat) {
    const BenchSummary* sa = find(a);
    const BenchSummary* sb = find(b);
    if (sa == nullptr || sb == nullptr) return;
    BenchVerdict v;
    v.name = "median " + std::string(metric) + ": " + std::string(a) + " <= " + std::string(b);
    const auto& ma = (sa->*stat).median;
    const auto& mb = (sb->*stat).median;
    if (ma && mb) v.holds = *ma <= *mb;
    out.push_back(std::move(v));
  };
  compare("mae", "rle", "laplace_nll", &BenchSummary::mae);
  compare("mae", "laplace_nll", "gaussian_nll", &BenchSummary::mae);
  compare("mae", "gaussian_nll", "l2_const", &BenchSummary::mae);
  compare("test_nll", "rle", "dle", &BenchSummary::test_nll);
  return out;
}

std::string bench_csv(const BenchTable& t) {
  std::ostringstream os;
  os << "row,loss,seed,completed,failed,mae,test_nll,pearson,grid_kl,flow_mass\n";
  for (const auto& r : t.runs) {
    os << "run," << r.loss << ',' << r.seed << ',' << (r.failed ? 0 : 1) << ','
       << (r.failed ? 1 : 0) << ',';
    if (r.failed) {
      os << ",,,,\n";
      continue;
    }
    os << format_double(r.metrics.mae) << ',' << format_double(r.metrics.test_nll) << ','
       << opt_cell(r.metrics.pearson) << ',' << opt_cell(r.metrics.grid_kl) << ','
       << opt_cell(r.flow_mass) << '\n';
  }
  for (const auto& s : t.summary) {
    os << "median," << s.loss << ",," << s.completed << ',' << s.failed << ','
       << opt_cell(s.mae.median) << ',' << opt_cell(s.test_nll.median) << ','
       << opt_cell(s.pearson.median) << ',' << opt_cell(s.grid_kl.median) << ",\n";
  }
  return os.str();
}

std::string bench_summary_json(const BenchTable& t, const ExperimentConfig& cfg) {
  json j;
  j["format"] = "rle-bench";
  j["version"] = kReportFormatVersion;
  j["config"] = json::parse(to_json(cfg));
  json summary = json::array();
  for (const auto& s : t.summary) {
    summary.push_back({{"loss", s.loss},
                       {"completed", s.completed},
                       {"failed", s.failed},
                       {"mae", stat_to_json(s.mae)},
                       {"test_nll", stat_to_json(s.test_nll)},
                       {"pearson", stat_to_json(s.pearson)},
                       {"grid_kl", stat_to_json(s.grid_kl)}});
  }
  j["summary"] = std::move(summary);
  json runs = json::array();
  for (const auto& r : t.runs) {
    json row;
    row["seed"] = r.seed;
    row["loss"] = r.loss;
    row["failed"] = r.failed;
    if (r.failed) {
      row["failure"] = r.failure;
    } else {
      row["metrics"] = metrics_to_json(r.metrics);
      row["flow_mass"] = r.flow_mass ? json(*r.flow_mass) : json(nullptr);
      row["final_train_loss"] = r.train_loss.empty() ? json(nullptr) : json(r.train_loss.back());
    }
    runs.push_back(std::move(row));
  }
  j["runs"] = std::move(runs);
  json verdicts = json::array();
  for (const auto& v : bench_verdicts(t)) {
    verdicts.push_back({{"name", v.name}, {"holds", v.holds ? json(*v.holds) : json(nullptr)}});
  }
  j["verdicts"] = std::move(verdicts);
  return dump(j);
}

}  // namespace rle
