#include "rle/synth.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <numbers>
#include <numeric>
#include <sstream>
#include <string>

#include "json.hpp"

#include "rle/errors.hpp"

namespace rle {

namespace {

constexpr double kPi = std::numbers::pi;
constexpr double kHalfLog2Pi = 0.91893853320467274178;

// Two-component mixture before standardisation; the weighted means cancel.
constexpr double kMixW1 = 0.7, kMixM1 = -0.4, kMixS1 = 0.6;
constexpr double kMixW2 = 0.3, kMixM2 = 14.0 / 15.0, kMixS2 = 0.8;

double mixture_sd() {
  static const double sd = std::sqrt(kMixW1 * (kMixS1 * kMixS1 + kMixM1 * kMixM1) +
                                     kMixW2 * (kMixS2 * kMixS2 + kMixM2 * kMixM2));
  return sd;
}

double normal_log_pdf(double x, double m, double s) {
  const double z = (x - m) / s;
  return -kHalfLog2Pi - std::log(s) - 0.5 * z * z;
}

double log_sum_exp2(double a, double b) {
  const double m = std::max(a, b);
  return m + std::log(std::exp(a - m) + std::exp(b - m));
}

double noise_log_density_1d(NoiseKind k, double e) {
  switch (k) {
    case NoiseKind::gaussian_hetero:
      return -kHalfLog2Pi - 0.5 * e * e;
    case NoiseKind::laplace_hetero: {
      // Unit variance Laplace: scale b = 1/sqrt(2).
      const double b = std::numbers::sqrt2 / 2.0;
      return -std::log(2.0 * b) - std::abs(e) / b;
    }
    case NoiseKind::skew_mixture: {
      const double sd = mixture_sd();
      const double m = e * sd;
      return std::log(sd) +
             log_sum_exp2(std::log(kMixW1) + normal_log_pdf(m, kMixM1, kMixS1),
                          std::log(kMixW2) + normal_log_pdf(m, kMixM2, kMixS2));
    }
    case NoiseKind::noise_free:
      break;
  }
  throw DomainError("noise_free has no noise density");
}

std::string fmt_double(double v) {
  char buf[64];
  auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

}  // namespace

std::string_view noise_kind_name(NoiseKind k) noexcept {
  switch (k) {
    case NoiseKind::gaussian_hetero: return "gaussian_hetero";
    case NoiseKind::laplace_hetero: return "laplace_hetero";
    case NoiseKind::skew_mixture: return "skew_mixture";
    case NoiseKind::noise_free: return "noise_free";
  }
  return "?";
}

std::optional<NoiseKind> parse_noise_kind(std::string_view s) noexcept {
  for (auto k : {NoiseKind::gaussian_hetero, NoiseKind::laplace_hetero,
                 NoiseKind::skew_mixture, NoiseKind::noise_free}) {
    if (noise_kind_name(k) == s) return k;
  }
  return std::nullopt;
}

std::string_view noise_kind_choices() noexcept {
  return "gaussian_hetero, laplace_hetero, skew_mixture, noise_free";
}

void Dataset::validate() const {
  const std::size_t n = features.rows();
  if (targets.rows() != n || true_sigma.rows() != n) {
    throw ShapeError("Dataset: row counts disagree");
  }
  if (true_sigma.cols() != targets.cols()) {
    throw ShapeError("Dataset: sigma and target widths disagree");
  }
  for (double s : true_sigma.flat()) {
    if (!(s > 0.0)) throw DomainError("Dataset: true_sigma must be > 0");
  }
}

std::vector<double> mean_function(std::span<const double> x) {
  if (x.size() != kSynthFeatureDim) throw ShapeError("mean_function: need 2 features");
  return {(std::sin(x[0]) + 0.5 * x[1]) / (1.0 + kPi / 2.0),
          (std::cos(x[1]) - 0.3 * x[0]) / (1.0 + 0.3 * kPi)};
}

double noise_scale(std::span<const double> x) noexcept {
  return 0.02 + 0.10 * std::abs(std::sin(x[0]));
}

double draw_noise(NoiseKind k, std::mt19937_64& rng) {
  switch (k) {
    case NoiseKind::gaussian_hetero: {
      std::normal_distribution<double> n01(0.0, 1.0);
      return n01(rng);
    }
    case NoiseKind::laplace_hetero: {
      // Inverse CDF of the unit-variance Laplace.
      std::uniform_real_distribution<double> u(-0.5, 0.5);
      double v = u(rng);
      while (v == -0.5) v = u(rng);
      const double b = std::numbers::sqrt2 / 2.0;
      return -b * (v < 0 ? -1.0 : 1.0) * std::log1p(-2.0 * std::abs(v));
    }
    case NoiseKind::skew_mixture: {
      std::uniform_real_distribution<double> u(0.0, 1.0);
      std::normal_distribution<double> n01(0.0, 1.0);
      const bool first = u(rng) < kMixW1;
      const double z = n01(rng);
      const double m = first ? kMixM1 + kMixS1 * z : kMixM2 + kMixS2 * z;
      return m / mixture_sd();
    }
    case NoiseKind::noise_free:
      return 0.0;
  }
  return 0.0;
}

Dataset gen_dataset(NoiseKind kind, std::size_t n, std::uint64_t seed) {
  if (n < 1) throw DomainError("gen_dataset: n must be >= 1");
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> ux(-kPi, kPi);
  Dataset ds;
  ds.noise = kind;
  ds.seed = seed;
  ds.features = Tensor2(n, kSynthFeatureDim);
  ds.targets = Tensor2(n, kSynthTargetDim);
  ds.true_sigma = Tensor2(n, kSynthTargetDim);
  for (std::size_t r = 0; r < n; ++r) {
    const double x1 = ux(rng);
    const double x2 = ux(rng);
    ds.features(r, 0) = x1;
    ds.features(r, 1) = x2;
    const double x[2] = {x1, x2};
    const auto g = mean_function(x);
    const double s = noise_scale(x);
    for (std::size_t d = 0; d < kSynthTargetDim; ++d) {
      const double eta = kind == NoiseKind::noise_free ? 0.0 : draw_noise(kind, rng);
      ds.targets(r, d) = g[d] + s * eta;
      ds.true_sigma(r, d) = s;
    }
  }
  return ds;
}

double true_noise_log_density(NoiseKind kind, std::span<const double> eta) {
  if (kind == NoiseKind::noise_free) {
    throw DomainError("true_noise_log_density: noise_free has no density");
  }
  double lp = 0.0;
  for (double e : eta) lp += noise_log_density_1d(kind, e);
  return lp;
}

Dataset subset(const Dataset& ds, std::span<const std::size_t> idx) {
  Dataset out;
  out.noise = ds.noise;
  out.seed = ds.seed;
  out.features = Tensor2(idx.size(), ds.features.cols());
  out.targets = Tensor2(idx.size(), ds.targets.cols());
  out.true_sigma = Tensor2(idx.size(), ds.true_sigma.cols());
  for (std::size_t r = 0; r < idx.size(); ++r) {
    const std::size_t i = idx[r];
    if (i >= ds.size()) throw ShapeError("subset: index out of range");
    std::copy_n(ds.features.row(i).begin(), ds.features.cols(), out.features.row(r).begin());
    std::copy_n(ds.targets.row(i).begin(), ds.targets.cols(), out.targets.row(r).begin());
    std::copy_n(ds.true_sigma.row(i).begin(), ds.true_sigma.cols(),
                out.true_sigma.row(r).begin());
  }
  return out;
}

Split split(const Dataset& ds, double train_fraction, std::uint64_t seed) {
  if (!(train_fraction > 0.0 && train_fraction < 1.0)) {
    throw DomainError("split: fraction must lie in (0, 1)");
  }
  const std::size_t n = ds.size();
  const auto n_train = static_cast<std::size_t>(
      std::floor(static_cast<double>(n) * train_fraction));
  if (n_train == 0 || n_train == n) {
    throw DomainError("split: one side would be empty");
  }
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  std::mt19937_64 rng(seed);
  std::shuffle(idx.begin(), idx.end(), rng);
  const std::span<const std::size_t> all(idx);
  return {subset(ds, all.first(n_train)), subset(ds, all.subspan(n_train))};
}

void write_dataset(const Dataset& ds, const std::filesystem::path& csv_path,
                   const std::filesystem::path& sidecar_path) {
  ds.validate();
  const std::size_t F = ds.features.cols();
  const std::size_t D = ds.targets.cols();
  std::vector<std::string> cols;
  for (std::size_t i = 1; i <= F; ++i) cols.push_back("f" + std::to_string(i));
  for (std::size_t i = 1; i <= D; ++i) cols.push_back("t" + std::to_string(i));
  for (std::size_t i = 1; i <= D; ++i) cols.push_back("s" + std::to_string(i));

  std::ofstream csv(csv_path, std::ios::binary | std::ios::trunc);
  if (!csv) throw std::runtime_error("cannot write " + csv_path.string());
  for (std::size_t c = 0; c < cols.size(); ++c) csv << (c ? "," : "") << cols[c];
  csv << '\n';
  for (std::size_t r = 0; r < ds.size(); ++r) {
    std::string line;
    for (std::size_t c = 0; c < F; ++c) line += (c ? "," : "") + fmt_double(ds.features(r, c));
    for (std::size_t c = 0; c < D; ++c) line += "," + fmt_double(ds.targets(r, c));
    for (std::size_t c = 0; c < D; ++c) line += "," + fmt_double(ds.true_sigma(r, c));
    csv << line << '\n';
  }
  if (!csv) throw std::runtime_error("write failed: " + csv_path.string());

  nlohmann::ordered_json side;
  side["format"] = "rle-dataset";
  side["version"] = 1;
  side["kind"] = noise_kind_name(ds.noise);
  side["seed"] = ds.seed;
  side["rows"] = ds.size();
  side["feature_dim"] = F;
  side["target_dim"] = D;
  side["columns"] = cols;
  side["csv"] = csv_path.filename().string();
  std::ofstream js(sidecar_path, std::ios::binary | std::ios::trunc);
  if (!js) throw std::runtime_error("cannot write " + sidecar_path.string());
  js << side.dump(2) << '\n';
}

Dataset read_dataset(const std::filesystem::path& csv_path) {
  std::filesystem::path side_path = csv_path;
  side_path.replace_extension(".json");
  std::ifstream js(side_path);
  if (!js) throw std::runtime_error("missing dataset sidecar " + side_path.string());
  nlohmann::json side;
  try {
    js >> side;
  } catch (const nlohmann::json::exception& e) {
    throw ShapeError("dataset sidecar: " + std::string(e.what()));
  }
  if (side.value("format", "") != "rle-dataset" || side.value("version", 0) != 1) {
    throw ShapeError("dataset sidecar: unsupported format or version");
  }
  const auto kind = parse_noise_kind(side.at("kind").get<std::string>());
  if (!kind) throw ShapeError("dataset sidecar: unknown kind");
  const auto F = side.at("feature_dim").get<std::size_t>();
  const auto D = side.at("target_dim").get<std::size_t>();
  const auto rows = side.at("rows").get<std::size_t>();

  std::ifstream csv(csv_path);
  if (!csv) throw std::runtime_error("cannot read " + csv_path.string());
  std::string line;
  std::getline(csv, line);  // header
  const std::size_t width = F + 2 * D;
  std::vector<double> f, t, s;
  std::size_t n = 0;
  while (std::getline(csv, line)) {
    if (line.empty()) continue;
    std::size_t pos = 0;
    for (std::size_t c = 0; c < width; ++c) {
      const std::size_t end = std::min(line.find(',', pos), line.size());
      double v = 0.0;
      auto res = std::from_chars(line.data() + pos, line.data() + end, v);
      if (res.ec != std::errc() || res.ptr != line.data() + end) {
        throw ShapeError("dataset csv: bad number on row " + std::to_string(n + 1));
      }
      (c < F ? f : c < F + D ? t : s).push_back(v);
      pos = end + 1;
    }
    ++n;
  }
  if (n != rows) throw ShapeError("dataset csv: row count differs from sidecar");
  Dataset ds;
  ds.noise = *kind;
  ds.seed = side.at("seed").get<std::uint64_t>();
  ds.features = Tensor2(n, F, std::move(f));
  ds.targets = Tensor2(n, D, std::move(t));
  ds.true_sigma = Tensor2(n, D, std::move(s));
  ds.validate();
  return ds;
}

}  // namespace rle
