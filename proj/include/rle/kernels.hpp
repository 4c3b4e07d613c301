#pragma once

// Dense inner-loop kernels used by the MLP and flow code.
//
// Every kernel has a scalar reference implementation and, on x86-64, an
// AVX2+FMA variant. The active backend is picked once at startup from the CPU
// feature flags and can be overridden (tests pin each backend in turn and
// compare). All matrices are row-major with explicit leading dimensions equal
// to their column counts.

#include <cstddef>
#include <span>
#include <string_view>

namespace rle::kernels {

enum class Backend { scalar, avx2 };

/// Backend in use for the dispatching entry points below.
Backend active_backend() noexcept;

/// True when the running CPU can execute the AVX2 variants.
bool avx2_available() noexcept;

/// Select a backend. Requesting avx2 on a CPU without it falls back to scalar
/// and returns false.
bool set_backend(Backend b) noexcept;

std::string_view backend_name(Backend b) noexcept;

// c[m x n] = a[m x k] * b[n x k]^T          (overwrite)
void gemm_nt(std::span<const double> a, std::span<const double> b,
             std::span<double> c, std::size_t m, std::size_t n, std::size_t k);

// c[m x n] = a[m x k] * b[k x n]            (overwrite)
void gemm_nn(std::span<const double> a, std::span<const double> b,
             std::span<double> c, std::size_t m, std::size_t n, std::size_t k);

// c[k x n] += a[m x k]^T * b[m x n]         (accumulate)
void gemm_tn_acc(std::span<const double> a, std::span<const double> b,
                 std::span<double> c, std::size_t m, std::size_t n,
                 std::size_t k);

// Adds bias[n] to every row of c[m x n].
void add_row_bias(std::span<double> c, std::span<const double> bias,
                  std::size_t m, std::size_t n);

// out[j] += sum_i a[i x n]  (column sums, accumulate)
void col_sum_acc(std::span<const double> a, std::span<double> out,
                 std::size_t m, std::size_t n);

// In place: x = x >= 0 ? x : slope * x
void leaky_relu_inplace(std::span<double> x, double slope);

// In place: grad *= (pre >= 0 ? 1 : slope)
void leaky_relu_backward_inplace(std::span<const double> pre,
                                 std::span<double> grad, double slope);

double dot(std::span<const double> a, std::span<const double> b);

// The per-backend implementations are exposed so equivalence tests can call
// both without touching global state.
namespace scalar {
void gemm_nt(const double* a, const double* b, double* c, std::size_t m,
             std::size_t n, std::size_t k);
void gemm_nn(const double* a, const double* b, double* c, std::size_t m,
             std::size_t n, std::size_t k);
void gemm_tn_acc(const double* a, const double* b, double* c, std::size_t m,
                 std::size_t n, std::size_t k);
void add_row_bias(double* c, const double* bias, std::size_t m, std::size_t n);
void col_sum_acc(const double* a, double* out, std::size_t m, std::size_t n);
void leaky_relu_inplace(double* x, std::size_t n, double slope);
void leaky_relu_backward_inplace(const double* pre, double* grad,
                                 std::size_t n, double slope);
double dot(const double* a, const double* b, std::size_t n);
}  // namespace scalar

namespace avx2 {
void gemm_nt(const double* a, const double* b, double* c, std::size_t m,
             std::size_t n, std::size_t k);
void gemm_nn(const double* a, const double* b, double* c, std::size_t m,
             std::size_t n, std::size_t k);
void gemm_tn_acc(const double* a, const double* b, double* c, std::size_t m,
                 std::size_t n, std::size_t k);
void add_row_bias(double* c, const double* bias, std::size_t m, std::size_t n);
void col_sum_acc(const double* a, double* out, std::size_t m, std::size_t n);
void leaky_relu_inplace(double* x, std::size_t n, double slope);
void leaky_relu_backward_inplace(const double* pre, double* grad,
                                 std::size_t n, double slope);
double dot(const double* a, const double* b, std::size_t n);
}  // namespace avx2

}  // namespace rle::kernels
