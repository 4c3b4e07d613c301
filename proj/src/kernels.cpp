#include "rle/kernels.hpp"

#include <atomic>
#include <cassert>

namespace rle::kernels {

namespace {

bool detect_avx2() noexcept {
#if defined(RLE_HAVE_AVX2) && (defined(__x86_64__) || defined(__i386__))
  __builtin_cpu_init();
  return __builtin_cpu_supports("avx2") && __builtin_cpu_supports("fma");
#else
  return false;
#endif
}

std::atomic<Backend>& backend_slot() noexcept {
  static std::atomic<Backend> slot{detect_avx2() ? Backend::avx2
                                                 : Backend::scalar};
  return slot;
}

bool use_avx2() noexcept {
#if defined(RLE_HAVE_AVX2)
  return backend_slot().load(std::memory_order_relaxed) == Backend::avx2;
#else
  return false;
#endif
}

}  // namespace

Backend active_backend() noexcept { return backend_slot().load(); }

bool avx2_available() noexcept {
  static const bool ok = detect_avx2();
  return ok;
}

bool set_backend(Backend b) noexcept {
  if (b == Backend::avx2 && !avx2_available()) {
    backend_slot().store(Backend::scalar);
    return false;
  }
  backend_slot().store(b);
  return true;
}

std::string_view backend_name(Backend b) noexcept {
  return b == Backend::avx2 ? "avx2" : "scalar";
}

#if defined(RLE_HAVE_AVX2)
#define RLE_DISPATCH(fn, ...) \
  (use_avx2() ? avx2::fn(__VA_ARGS__) : scalar::fn(__VA_ARGS__))
#else
#define RLE_DISPATCH(fn, ...) scalar::fn(__VA_ARGS__)
#endif

void gemm_nt(std::span<const double> a, std::span<const double> b,
             std::span<double> c, std::size_t m, std::size_t n, std::size_t k) {
  assert(a.size() >= m * k && b.size() >= n * k && c.size() >= m * n);
  RLE_DISPATCH(gemm_nt, a.data(), b.data(), c.data(), m, n, k);
}

void gemm_nn(std::span<const double> a, std::span<const double> b,
             std::span<double> c, std::size_t m, std::size_t n, std::size_t k) {
  assert(a.size() >= m * k && b.size() >= k * n && c.size() >= m * n);
  RLE_DISPATCH(gemm_nn, a.data(), b.data(), c.data(), m, n, k);
}

void gemm_tn_acc(std::span<const double> a, std::span<const double> b,
                 std::span<double> c, std::size_t m, std::size_t n,
                 std::size_t k) {
  assert(a.size() >= m * k && b.size() >= m * n && c.size() >= k * n);
  RLE_DISPATCH(gemm_tn_acc, a.data(), b.data(), c.data(), m, n, k);
}

void add_row_bias(std::span<double> c, std::span<const double> bias,
                  std::size_t m, std::size_t n) {
  assert(c.size() >= m * n && bias.size() >= n);
  RLE_DISPATCH(add_row_bias, c.data(), bias.data(), m, n);
}

void col_sum_acc(std::span<const double> a, std::span<double> out,
                 std::size_t m, std::size_t n) {
  assert(a.size() >= m * n && out.size() >= n);
  RLE_DISPATCH(col_sum_acc, a.data(), out.data(), m, n);
}

void leaky_relu_inplace(std::span<double> x, double slope) {
  RLE_DISPATCH(leaky_relu_inplace, x.data(), x.size(), slope);
}

void leaky_relu_backward_inplace(std::span<const double> pre,
                                 std::span<double> grad, double slope) {
  assert(pre.size() == grad.size());
  RLE_DISPATCH(leaky_relu_backward_inplace, pre.data(), grad.data(),
               grad.size(), slope);
}

double dot(std::span<const double> a, std::span<const double> b) {
  assert(a.size() == b.size());
  return RLE_DISPATCH(dot, a.data(), b.data(), a.size());
}

#undef RLE_DISPATCH

}  // namespace rle::kernels
