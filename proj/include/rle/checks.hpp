#pragma once

// Numerical self-checks behind `rle check`: finite-difference gradients for
// every loss kind, flow round trip and log-determinants, quadrature of the
// normaliser and the SIMD kernel equivalence.

#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

namespace rle {

struct CheckResult {
  std::string name;
  bool passed = false;
  std::string detail;   // measured value against its tolerance
};

std::vector<std::string_view> check_names();

/// Runs one named check with draws seeded by `seed`. Throws
/// std::invalid_argument for an unknown name.
CheckResult run_check(std::string_view name, std::uint64_t seed);

}  // namespace rle
