// AVX2 + FMA variants of the dense kernels. This translation unit is built
// with -mavx2 -mfma and must only be entered after a runtime CPU check.

#include "rle/kernels.hpp"

#include <immintrin.h>

#include <vector>

namespace rle::kernels::avx2 {

namespace {

inline double hsum(__m256d v) {
  __m128d lo = _mm256_castpd256_pd128(v);
  __m128d hi = _mm256_extractf128_pd(v, 1);
  lo = _mm_add_pd(lo, hi);
  __m128d sh = _mm_unpackhi_pd(lo, lo);
  return _mm_cvtsd_f64(_mm_add_sd(lo, sh));
}

}  // namespace

double dot(const double* a, const double* b, std::size_t n) {
  __m256d acc0 = _mm256_setzero_pd();
  __m256d acc1 = _mm256_setzero_pd();
  std::size_t i = 0;
  for (; i + 8 <= n; i += 8) {
    acc0 = _mm256_fmadd_pd(_mm256_loadu_pd(a + i), _mm256_loadu_pd(b + i), acc0);
    acc1 = _mm256_fmadd_pd(_mm256_loadu_pd(a + i + 4),
                           _mm256_loadu_pd(b + i + 4), acc1);
  }
  for (; i + 4 <= n; i += 4) {
    acc0 = _mm256_fmadd_pd(_mm256_loadu_pd(a + i), _mm256_loadu_pd(b + i), acc0);
  }
  double s = hsum(_mm256_add_pd(acc0, acc1));
  for (; i < n; ++i) s += a[i] * b[i];
  return s;
}

namespace {

// Strided operand views for the shared micro-kernel:
//   C(r, j) (+)= sum_q A(r, q) * B(q, j)
// with A(r, q) = a[r * ars + q * aqs], B(q, j) = b[q * ldb + j] and
// C(r, j) = c[r * ldc + j].
struct GemmArgs {
  const double* a;
  std::size_t ars, aqs;
  const double* b;
  std::size_t ldb;
  double* c;
  std::size_t ldc;
  std::size_t depth;
  bool accumulate;
};

template <int R>
inline void tile8(const GemmArgs& g, std::size_t i, std::size_t j) {
  __m256d acc[R][2];
#pragma GCC unroll 8
  for (int r = 0; r < R; ++r) {
    double* cr = g.c + (i + r) * g.ldc + j;
    acc[r][0] = g.accumulate ? _mm256_loadu_pd(cr) : _mm256_setzero_pd();
    acc[r][1] = g.accumulate ? _mm256_loadu_pd(cr + 4) : _mm256_setzero_pd();
  }
  const double* ai = g.a + i * g.ars;
  for (std::size_t q = 0; q < g.depth; ++q) {
    const double* bq = g.b + q * g.ldb + j;
    const __m256d b0 = _mm256_loadu_pd(bq);
    const __m256d b1 = _mm256_loadu_pd(bq + 4);
    const double* aq = ai + q * g.aqs;
#pragma GCC unroll 8
    for (int r = 0; r < R; ++r) {
      const __m256d s = _mm256_broadcast_sd(aq + r * g.ars);
      acc[r][0] = _mm256_fmadd_pd(s, b0, acc[r][0]);
      acc[r][1] = _mm256_fmadd_pd(s, b1, acc[r][1]);
    }
  }
#pragma GCC unroll 8
  for (int r = 0; r < R; ++r) {
    double* cr = g.c + (i + r) * g.ldc + j;
    _mm256_storeu_pd(cr, acc[r][0]);
    _mm256_storeu_pd(cr + 4, acc[r][1]);
  }
}

template <int R>
inline void tile4(const GemmArgs& g, std::size_t i, std::size_t j) {
  __m256d acc[R];
#pragma GCC unroll 8
  for (int r = 0; r < R; ++r) {
    double* cr = g.c + (i + r) * g.ldc + j;
    acc[r] = g.accumulate ? _mm256_loadu_pd(cr) : _mm256_setzero_pd();
  }
  const double* ai = g.a + i * g.ars;
  for (std::size_t q = 0; q < g.depth; ++q) {
    const __m256d b0 = _mm256_loadu_pd(g.b + q * g.ldb + j);
    const double* aq = ai + q * g.aqs;
#pragma GCC unroll 8
    for (int r = 0; r < R; ++r) {
      acc[r] = _mm256_fmadd_pd(_mm256_broadcast_sd(aq + r * g.ars), b0, acc[r]);
    }
  }
#pragma GCC unroll 8
  for (int r = 0; r < R; ++r) _mm256_storeu_pd(g.c + (i + r) * g.ldc + j, acc[r]);
}

template <int R>
struct Tile8 {
  static void run(const GemmArgs& g, std::size_t i, std::size_t j) { tile8<R>(g, i, j); }
};
template <int R>
struct Tile4 {
  static void run(const GemmArgs& g, std::size_t i, std::size_t j) { tile4<R>(g, i, j); }
};

constexpr std::size_t kTileRows = 6;

template <template <int> class Tile>
void column_block(const GemmArgs& g, std::size_t rows, std::size_t j) {
  std::size_t i = 0;
  for (; i + kTileRows <= rows; i += kTileRows) Tile<6>::run(g, i, j);
  switch (rows - i) {
    case 5: Tile<5>::run(g, i, j); break;
    case 4: Tile<4>::run(g, i, j); break;
    case 3: Tile<3>::run(g, i, j); break;
    case 2: Tile<2>::run(g, i, j); break;
    case 1: Tile<1>::run(g, i, j); break;
    default: break;
  }
}

void gemm_strided(const GemmArgs& g, std::size_t rows, std::size_t cols) {
  std::size_t j = 0;
  for (; j + 8 <= cols; j += 8) column_block<Tile8>(g, rows, j);
  for (; j + 4 <= cols; j += 4) column_block<Tile4>(g, rows, j);
  for (; j < cols; ++j) {
    for (std::size_t r = 0; r < rows; ++r) {
      double s = g.accumulate ? g.c[r * g.ldc + j] : 0.0;
      for (std::size_t q = 0; q < g.depth; ++q) {
        s += g.a[r * g.ars + q * g.aqs] * g.b[q * g.ldb + j];
      }
      g.c[r * g.ldc + j] = s;
    }
  }
}

}  // namespace

void gemm_nt(const double* a, const double* b, double* c, std::size_t m,
             std::size_t n, std::size_t k) {
  // b is n x k; the micro-kernel wants k x n rows, so transpose once.
  thread_local std::vector<double> bt;
  bt.resize(k * n);
  for (std::size_t j = 0; j < n; ++j) {
    for (std::size_t p = 0; p < k; ++p) bt[p * n + j] = b[j * k + p];
  }
  gemm_strided({a, k, 1, bt.data(), n, c, n, k, false}, m, n);
}

void gemm_nn(const double* a, const double* b, double* c, std::size_t m,
             std::size_t n, std::size_t k) {
  gemm_strided({a, k, 1, b, n, c, n, k, false}, m, n);
}

void gemm_tn_acc(const double* a, const double* b, double* c, std::size_t m,
                 std::size_t n, std::size_t k) {
  // Output row p reads column p of a; the reduction runs over the m rows.
  gemm_strided({a, 1, k, b, n, c, n, m, true}, k, n);
}

void add_row_bias(double* c, const double* bias, std::size_t m, std::size_t n) {
  for (std::size_t i = 0; i < m; ++i) {
    double* ci = c + i * n;
    std::size_t j = 0;
    for (; j + 4 <= n; j += 4) {
      _mm256_storeu_pd(ci + j, _mm256_add_pd(_mm256_loadu_pd(ci + j),
                                             _mm256_loadu_pd(bias + j)));
    }
    for (; j < n; ++j) ci[j] += bias[j];
  }
}

void col_sum_acc(const double* a, double* out, std::size_t m, std::size_t n) {
  std::size_t j = 0;
  for (; j + 4 <= n; j += 4) {
    __m256d acc = _mm256_loadu_pd(out + j);
    for (std::size_t i = 0; i < m; ++i) {
      acc = _mm256_add_pd(acc, _mm256_loadu_pd(a + i * n + j));
    }
    _mm256_storeu_pd(out + j, acc);
  }
  for (; j < n; ++j) {
    double s = out[j];
    for (std::size_t i = 0; i < m; ++i) s += a[i * n + j];
    out[j] = s;
  }
}

void leaky_relu_inplace(double* x, std::size_t n, double slope) {
  const __m256d zero = _mm256_setzero_pd();
  const __m256d sv = _mm256_set1_pd(slope);
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4) {
    const __m256d v = _mm256_loadu_pd(x + i);
    const __m256d neg = _mm256_cmp_pd(v, zero, _CMP_LT_OQ);
    _mm256_storeu_pd(x + i, _mm256_blendv_pd(v, _mm256_mul_pd(v, sv), neg));
  }
  for (; i < n; ++i) {
    if (x[i] < 0.0) x[i] *= slope;
  }
}

void leaky_relu_backward_inplace(const double* pre, double* grad,
                                 std::size_t n, double slope) {
  const __m256d zero = _mm256_setzero_pd();
  const __m256d sv = _mm256_set1_pd(slope);
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4) {
    const __m256d g = _mm256_loadu_pd(grad + i);
    const __m256d neg = _mm256_cmp_pd(_mm256_loadu_pd(pre + i), zero, _CMP_LT_OQ);
    _mm256_storeu_pd(grad + i, _mm256_blendv_pd(g, _mm256_mul_pd(g, sv), neg));
  }
  for (; i < n; ++i) {
    if (pre[i] < 0.0) grad[i] *= slope;
  }
}

}  // namespace rle::kernels::avx2
