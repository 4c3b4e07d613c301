#pragma once

// Seeded synthetic regression tasks with known heteroscedastic noise.
//
// features x ~ U[-pi, pi]^2, target = g(x) + sigma(x) * eta, with
//   g(x)     = ((sin x1 + 0.5 x2) / (1 + pi/2), (cos x2 - 0.3 x1) / (1 + 0.3 pi))
//   sigma(x) = 0.02 + 0.10 |sin x1|           (same for both outputs)
// and eta i.i.d. per output with zero mean and unit variance.

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <random>
#include <span>
#include <string_view>
#include <vector>

#include "rle/tensor.hpp"

namespace rle {

enum class NoiseKind { gaussian_hetero, laplace_hetero, skew_mixture, noise_free };

std::string_view noise_kind_name(NoiseKind k) noexcept;
std::optional<NoiseKind> parse_noise_kind(std::string_view s) noexcept;
/// Comma separated list of every accepted name.
std::string_view noise_kind_choices() noexcept;

inline constexpr std::size_t kSynthFeatureDim = 2;
inline constexpr std::size_t kSynthTargetDim = 2;

struct Dataset {
  Tensor2 features;    // n x F
  Tensor2 targets;     // n x D
  Tensor2 true_sigma;  // n x D
  NoiseKind noise = NoiseKind::noise_free;
  std::uint64_t seed = 0;

  std::size_t size() const noexcept { return features.rows(); }
  /// Throws ShapeError / DomainError when the invariants do not hold.
  void validate() const;
  friend bool operator==(const Dataset&, const Dataset&) = default;
};

/// Noise-free regression target g(x).
std::vector<double> mean_function(std::span<const double> x);
double noise_scale(std::span<const double> x) noexcept;

/// Unit-variance standardized noise draw for one coordinate.
double draw_noise(NoiseKind k, std::mt19937_64& rng);

Dataset gen_dataset(NoiseKind kind, std::size_t n, std::uint64_t seed);

/// Closed-form log-density of the standardized noise vector (product over
/// coordinates). Throws DomainError for noise_free.
double true_noise_log_density(NoiseKind kind, std::span<const double> eta);

struct Split {
  Dataset train;
  Dataset test;
};

/// Seeded shuffle, then the first floor(n * fraction) rows go to train.
Split split(const Dataset& ds, double train_fraction, std::uint64_t seed);

/// Rows `idx` of `ds`, in that order.
Dataset subset(const Dataset& ds, std::span<const std::size_t> idx);

/// CSV with header f1..fF,t1..tD,s1..sD plus a JSON sidecar next to it.
void write_dataset(const Dataset& ds, const std::filesystem::path& csv_path,
                   const std::filesystem::path& sidecar_path);
Dataset read_dataset(const std::filesystem::path& csv_path);

}  // namespace rle
