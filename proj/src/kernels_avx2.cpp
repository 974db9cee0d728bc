#include <immintrin.h>

#include <bit>
#include <cstddef>
#include <cstdint>

// AVX2 variants. Reductions mirror the scalar stripe contract exactly: vector
// lane j holds stripe j, lanes combine as (l0+l1)+(l2+l3), the tail runs
// sequentially. Multiplies and adds are issued as separate instructions so
// results match the reference bit for bit.

namespace specmatch::kernels::avx2 {

namespace {

inline double combine_lanes(__m256d acc) {
  __m128d lo = _mm256_castpd256_pd128(acc);      // lanes 0,1
  __m128d hi = _mm256_extractf128_pd(acc, 1);    // lanes 2,3
  __m128d s01 = _mm_hadd_pd(lo, lo);             // l0+l1
  __m128d s23 = _mm_hadd_pd(hi, hi);             // l2+l3
  return _mm_cvtsd_f64(_mm_add_sd(s01, s23));
}

inline __m256i byte_popcount(__m256i v) {
  const __m256i lut = _mm256_setr_epi8(0, 1, 1, 2, 1, 2, 2, 3, 1, 2, 2, 3, 2, 3, 3, 4, 0, 1, 1, 2,
                                       1, 2, 2, 3, 1, 2, 2, 3, 2, 3, 3, 4);
  const __m256i low_mask = _mm256_set1_epi8(0x0f);
  __m256i lo = _mm256_and_si256(v, low_mask);
  __m256i hi = _mm256_and_si256(_mm256_srli_epi16(v, 4), low_mask);
  return _mm256_add_epi8(_mm256_shuffle_epi8(lut, lo), _mm256_shuffle_epi8(lut, hi));
}

inline std::uint64_t reduce_epi64(__m256i acc) {
  alignas(32) std::uint64_t lanes[4];
  _mm256_store_si256(reinterpret_cast<__m256i*>(lanes), acc);
  return lanes[0] + lanes[1] + lanes[2] + lanes[3];
}

}  // namespace

double dot_f64(const double* a, const double* b, std::size_t n) {
  __m256d acc = _mm256_setzero_pd();
  std::size_t n4 = n & ~std::size_t(3);
  for (std::size_t i = 0; i < n4; i += 4) {
    __m256d va = _mm256_loadu_pd(a + i);
    __m256d vb = _mm256_loadu_pd(b + i);
    acc = _mm256_add_pd(acc, _mm256_mul_pd(va, vb));
  }
  double s = combine_lanes(acc);
  for (std::size_t i = n4; i < n; ++i) s += a[i] * b[i];
  return s;
}

double sum_f64(const double* x, std::size_t n) {
  __m256d acc = _mm256_setzero_pd();
  std::size_t n4 = n & ~std::size_t(3);
  for (std::size_t i = 0; i < n4; i += 4) acc = _mm256_add_pd(acc, _mm256_loadu_pd(x + i));
  double s = combine_lanes(acc);
  for (std::size_t i = n4; i < n; ++i) s += x[i];
  return s;
}

void axpy_f64(double a, const double* x, double* y, std::size_t n) {
  __m256d va = _mm256_set1_pd(a);
  std::size_t n4 = n & ~std::size_t(3);
  for (std::size_t i = 0; i < n4; i += 4) {
    __m256d prod = _mm256_mul_pd(va, _mm256_loadu_pd(x + i));
    _mm256_storeu_pd(y + i, _mm256_add_pd(_mm256_loadu_pd(y + i), prod));
  }
  for (std::size_t i = n4; i < n; ++i) y[i] += a * x[i];
}

void scale_f64(double a, double* x, std::size_t n) {
  __m256d va = _mm256_set1_pd(a);
  std::size_t n4 = n & ~std::size_t(3);
  for (std::size_t i = 0; i < n4; i += 4)
    _mm256_storeu_pd(x + i, _mm256_mul_pd(_mm256_loadu_pd(x + i), va));
  for (std::size_t i = n4; i < n; ++i) x[i] *= a;
}

void mul_f64(const double* a, const double* b, double* out, std::size_t n) {
  std::size_t n4 = n & ~std::size_t(3);
  for (std::size_t i = 0; i < n4; i += 4)
    _mm256_storeu_pd(out + i, _mm256_mul_pd(_mm256_loadu_pd(a + i), _mm256_loadu_pd(b + i)));
  for (std::size_t i = n4; i < n; ++i) out[i] = a[i] * b[i];
}

std::uint64_t popcount_and(const std::uint64_t* a, const std::uint64_t* b, std::size_t nwords) {
  __m256i acc = _mm256_setzero_si256();
  std::size_t n4 = nwords & ~std::size_t(3);
  for (std::size_t i = 0; i < n4; i += 4) {
    __m256i va = _mm256_loadu_si256(reinterpret_cast<const __m256i*>(a + i));
    __m256i vb = _mm256_loadu_si256(reinterpret_cast<const __m256i*>(b + i));
    __m256i cnt = byte_popcount(_mm256_and_si256(va, vb));
    acc = _mm256_add_epi64(acc, _mm256_sad_epu8(cnt, _mm256_setzero_si256()));
  }
  std::uint64_t c = reduce_epi64(acc);
  for (std::size_t i = n4; i < nwords; ++i) c += std::popcount(a[i] & b[i]);
  return c;
}

std::uint64_t popcount_or(const std::uint64_t* a, const std::uint64_t* b, std::size_t nwords) {
  __m256i acc = _mm256_setzero_si256();
  std::size_t n4 = nwords & ~std::size_t(3);
  for (std::size_t i = 0; i < n4; i += 4) {
    __m256i va = _mm256_loadu_si256(reinterpret_cast<const __m256i*>(a + i));
    __m256i vb = _mm256_loadu_si256(reinterpret_cast<const __m256i*>(b + i));
    __m256i cnt = byte_popcount(_mm256_or_si256(va, vb));
    acc = _mm256_add_epi64(acc, _mm256_sad_epu8(cnt, _mm256_setzero_si256()));
  }
  std::uint64_t c = reduce_epi64(acc);
  for (std::size_t i = n4; i < nwords; ++i) c += std::popcount(a[i] | b[i]);
  return c;
}

}  // namespace specmatch::kernels::avx2
