#include <arm_neon.h>

#include <bit>
#include <cstddef>
#include <cstdint>

// NEON variants. f64 vectors are two lanes wide, so stripes {0,1} live in one
// accumulator and {2,3} in another; the combine order (s0+s1)+(s2+s3) and the
// sequential tail match the scalar reference, and fused multiply-add is
// avoided, keeping results bit-identical.

namespace specmatch::kernels::neon {

double dot_f64(const double* a, const double* b, std::size_t n) {
  float64x2_t acc01 = vdupq_n_f64(0.0);
  float64x2_t acc23 = vdupq_n_f64(0.0);
  std::size_t n4 = n & ~std::size_t(3);
  for (std::size_t i = 0; i < n4; i += 4) {
    acc01 = vaddq_f64(acc01, vmulq_f64(vld1q_f64(a + i), vld1q_f64(b + i)));
    acc23 = vaddq_f64(acc23, vmulq_f64(vld1q_f64(a + i + 2), vld1q_f64(b + i + 2)));
  }
  double s = (vgetq_lane_f64(acc01, 0) + vgetq_lane_f64(acc01, 1)) +
             (vgetq_lane_f64(acc23, 0) + vgetq_lane_f64(acc23, 1));
  for (std::size_t i = n4; i < n; ++i) s += a[i] * b[i];
  return s;
}

double sum_f64(const double* x, std::size_t n) {
  float64x2_t acc01 = vdupq_n_f64(0.0);
  float64x2_t acc23 = vdupq_n_f64(0.0);
  std::size_t n4 = n & ~std::size_t(3);
  for (std::size_t i = 0; i < n4; i += 4) {
    acc01 = vaddq_f64(acc01, vld1q_f64(x + i));
    acc23 = vaddq_f64(acc23, vld1q_f64(x + i + 2));
  }
  double s = (vgetq_lane_f64(acc01, 0) + vgetq_lane_f64(acc01, 1)) +
             (vgetq_lane_f64(acc23, 0) + vgetq_lane_f64(acc23, 1));
  for (std::size_t i = n4; i < n; ++i) s += x[i];
  return s;
}

void axpy_f64(double a, const double* x, double* y, std::size_t n) {
  float64x2_t va = vdupq_n_f64(a);
  std::size_t n2 = n & ~std::size_t(1);
  for (std::size_t i = 0; i < n2; i += 2) {
    float64x2_t prod = vmulq_f64(va, vld1q_f64(x + i));
    vst1q_f64(y + i, vaddq_f64(vld1q_f64(y + i), prod));
  }
  for (std::size_t i = n2; i < n; ++i) y[i] += a * x[i];
}

void scale_f64(double a, double* x, std::size_t n) {
  float64x2_t va = vdupq_n_f64(a);
  std::size_t n2 = n & ~std::size_t(1);
  for (std::size_t i = 0; i < n2; i += 2) vst1q_f64(x + i, vmulq_f64(vld1q_f64(x + i), va));
  for (std::size_t i = n2; i < n; ++i) x[i] *= a;
}

void mul_f64(const double* a, const double* b, double* out, std::size_t n) {
  std::size_t n2 = n & ~std::size_t(1);
  for (std::size_t i = 0; i < n2; i += 2)
    vst1q_f64(out + i, vmulq_f64(vld1q_f64(a + i), vld1q_f64(b + i)));
  for (std::size_t i = n2; i < n; ++i) out[i] = a[i] * b[i];
}

namespace {

inline std::uint64_t popcount_block(uint8x16_t bytes) {
  return vaddlvq_u8(vcntq_u8(bytes));
}

}  // namespace

std::uint64_t popcount_and(const std::uint64_t* a, const std::uint64_t* b, std::size_t nwords) {
  std::uint64_t c = 0;
  std::size_t n2 = nwords & ~std::size_t(1);
  for (std::size_t i = 0; i < n2; i += 2) {
    uint64x2_t va = vld1q_u64(a + i);
    uint64x2_t vb = vld1q_u64(b + i);
    c += popcount_block(vreinterpretq_u8_u64(vandq_u64(va, vb)));
  }
  for (std::size_t i = n2; i < nwords; ++i) c += std::popcount(a[i] & b[i]);
  return c;
}

std::uint64_t popcount_or(const std::uint64_t* a, const std::uint64_t* b, std::size_t nwords) {
  std::uint64_t c = 0;
  std::size_t n2 = nwords & ~std::size_t(1);
  for (std::size_t i = 0; i < n2; i += 2) {
    uint64x2_t va = vld1q_u64(a + i);
    uint64x2_t vb = vld1q_u64(b + i);
    c += popcount_block(vreinterpretq_u8_u64(vorrq_u64(va, vb)));
  }
  for (std::size_t i = n2; i < nwords; ++i) c += std::popcount(a[i] | b[i]);
  return c;
}

}  // namespace specmatch::kernels::neon
