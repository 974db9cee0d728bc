#include "specmatch/kernels.hpp"

#include <bit>
#include <stdexcept>

namespace specmatch::kernels {

namespace scalar {

double dot_f64(const double* a, const double* b, std::size_t n) {
  double s0 = 0, s1 = 0, s2 = 0, s3 = 0;
  std::size_t n4 = n & ~std::size_t(3);
  for (std::size_t i = 0; i < n4; i += 4) {
    s0 += a[i] * b[i];
    s1 += a[i + 1] * b[i + 1];
    s2 += a[i + 2] * b[i + 2];
    s3 += a[i + 3] * b[i + 3];
  }
  double s = (s0 + s1) + (s2 + s3);
  for (std::size_t i = n4; i < n; ++i) s += a[i] * b[i];
  return s;
}

double sum_f64(const double* x, std::size_t n) {
  double s0 = 0, s1 = 0, s2 = 0, s3 = 0;
  std::size_t n4 = n & ~std::size_t(3);
  for (std::size_t i = 0; i < n4; i += 4) {
    s0 += x[i];
    s1 += x[i + 1];
    s2 += x[i + 2];
    s3 += x[i + 3];
  }
  double s = (s0 + s1) + (s2 + s3);
  for (std::size_t i = n4; i < n; ++i) s += x[i];
  return s;
}

void axpy_f64(double a, const double* x, double* y, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) y[i] += a * x[i];
}

void scale_f64(double a, double* x, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) x[i] *= a;
}

void mul_f64(const double* a, const double* b, double* out, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) out[i] = a[i] * b[i];
}

std::uint64_t popcount_and(const std::uint64_t* a, const std::uint64_t* b, std::size_t nwords) {
  std::uint64_t c = 0;
  for (std::size_t i = 0; i < nwords; ++i) c += std::popcount(a[i] & b[i]);
  return c;
}

std::uint64_t popcount_or(const std::uint64_t* a, const std::uint64_t* b, std::size_t nwords) {
  std::uint64_t c = 0;
  for (std::size_t i = 0; i < nwords; ++i) c += std::popcount(a[i] | b[i]);
  return c;
}

}  // namespace scalar

double (*dot_f64)(const double*, const double*, std::size_t) = scalar::dot_f64;
double (*sum_f64)(const double*, std::size_t) = scalar::sum_f64;
void (*axpy_f64)(double, const double*, double*, std::size_t) = scalar::axpy_f64;
void (*scale_f64)(double, double*, std::size_t) = scalar::scale_f64;
void (*mul_f64)(const double*, const double*, double*, std::size_t) = scalar::mul_f64;
std::uint64_t (*popcount_and)(const std::uint64_t*, const std::uint64_t*, std::size_t) =
    scalar::popcount_and;
std::uint64_t (*popcount_or)(const std::uint64_t*, const std::uint64_t*, std::size_t) =
    scalar::popcount_or;

namespace {

std::string g_backend = "scalar";

#if defined(SPECMATCH_HAVE_AVX2)
bool avx2_supported() { return __builtin_cpu_supports("avx2"); }
#endif

#if defined(SPECMATCH_HAVE_NEON)
bool neon_supported() { return true; }
#endif

void bind_scalar() {
  dot_f64 = scalar::dot_f64;
  sum_f64 = scalar::sum_f64;
  axpy_f64 = scalar::axpy_f64;
  scale_f64 = scalar::scale_f64;
  mul_f64 = scalar::mul_f64;
  popcount_and = scalar::popcount_and;
  popcount_or = scalar::popcount_or;
  g_backend = "scalar";
}

#if defined(SPECMATCH_HAVE_AVX2)
void bind_avx2() {
  dot_f64 = avx2::dot_f64;
  sum_f64 = avx2::sum_f64;
  axpy_f64 = avx2::axpy_f64;
  scale_f64 = avx2::scale_f64;
  mul_f64 = avx2::mul_f64;
  popcount_and = avx2::popcount_and;
  popcount_or = avx2::popcount_or;
  g_backend = "avx2";
}
#endif

#if defined(SPECMATCH_HAVE_NEON)
void bind_neon() {
  dot_f64 = neon::dot_f64;
  sum_f64 = neon::sum_f64;
  axpy_f64 = neon::axpy_f64;
  scale_f64 = neon::scale_f64;
  mul_f64 = neon::mul_f64;
  popcount_and = neon::popcount_and;
  popcount_or = neon::popcount_or;
  g_backend = "neon";
}
#endif

struct AutoBind {
  AutoBind() { select_backend("auto"); }
} g_autobind;

}  // namespace

const std::string& active_backend() { return g_backend; }

void select_backend(const std::string& name) {
  if (name == "scalar") {
    bind_scalar();
    return;
  }
#if defined(SPECMATCH_HAVE_AVX2)
  if (name == "avx2") {
    if (!avx2_supported()) throw std::invalid_argument("kernels: avx2 not supported on this cpu");
    bind_avx2();
    return;
  }
#endif
#if defined(SPECMATCH_HAVE_NEON)
  if (name == "neon") {
    if (!neon_supported()) throw std::invalid_argument("kernels: neon not supported on this cpu");
    bind_neon();
    return;
  }
#endif
  if (name == "auto") {
#if defined(SPECMATCH_HAVE_AVX2)
    if (avx2_supported()) {
      bind_avx2();
      return;
    }
#endif
#if defined(SPECMATCH_HAVE_NEON)
    if (neon_supported()) {
      bind_neon();
      return;
    }
#endif
    bind_scalar();
    return;
  }
  throw std::invalid_argument("kernels: unknown backend '" + name + "'");
}

void matmul_f64(const double* a, const double* b, double* c, std::size_t n, std::size_t k,
                std::size_t m) {
  for (std::size_t i = 0; i < n; ++i) {
    const double* arow = a + i * k;
    double* crow = c + i * m;
    for (std::size_t l = 0; l < k; ++l) {
      if (arow[l] != 0.0) axpy_f64(arow[l], b + l * m, crow, m);
    }
  }
}

}  // namespace specmatch::kernels
