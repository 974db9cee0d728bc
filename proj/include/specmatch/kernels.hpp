#pragma once

#include <cstddef>
#include <cstdint>
#include <string>

// Data-parallel inner loops used across the toolkit: dense f64 reductions and
// elementwise updates for the tensor engine, popcount scans for fingerprint
// similarity. Each kernel has a scalar reference implementation and, where the
// target supports it, a SIMD variant selected once at startup. Variants are
// bit-exact with the reference: reductions accumulate into four stripes
// (element index mod 4) combined as (s0+s1)+(s2+s3) with a sequential tail,
// multiplies and adds stay separate (no FMA contraction), and integer kernels
// are exact by nature.

namespace specmatch::kernels {

namespace scalar {
double dot_f64(const double* a, const double* b, std::size_t n);
double sum_f64(const double* x, std::size_t n);
void axpy_f64(double a, const double* x, double* y, std::size_t n);
void scale_f64(double a, double* x, std::size_t n);
void mul_f64(const double* a, const double* b, double* out, std::size_t n);
std::uint64_t popcount_and(const std::uint64_t* a, const std::uint64_t* b, std::size_t nwords);
std::uint64_t popcount_or(const std::uint64_t* a, const std::uint64_t* b, std::size_t nwords);
}  // namespace scalar

#if defined(SPECMATCH_HAVE_AVX2)
namespace avx2 {
double dot_f64(const double* a, const double* b, std::size_t n);
double sum_f64(const double* x, std::size_t n);
void axpy_f64(double a, const double* x, double* y, std::size_t n);
void scale_f64(double a, double* x, std::size_t n);
void mul_f64(const double* a, const double* b, double* out, std::size_t n);
std::uint64_t popcount_and(const std::uint64_t* a, const std::uint64_t* b, std::size_t nwords);
std::uint64_t popcount_or(const std::uint64_t* a, const std::uint64_t* b, std::size_t nwords);
}  // namespace avx2
#endif

#if defined(SPECMATCH_HAVE_NEON)
namespace neon {
double dot_f64(const double* a, const double* b, std::size_t n);
double sum_f64(const double* x, std::size_t n);
void axpy_f64(double a, const double* x, double* y, std::size_t n);
void scale_f64(double a, double* x, std::size_t n);
void mul_f64(const double* a, const double* b, double* out, std::size_t n);
std::uint64_t popcount_and(const std::uint64_t* a, const std::uint64_t* b, std::size_t nwords);
std::uint64_t popcount_or(const std::uint64_t* a, const std::uint64_t* b, std::size_t nwords);
}  // namespace neon
#endif

// Dispatched entry points. Bound to the best supported backend before main()
// runs; select_backend("scalar"|"avx2"|"neon"|"auto") rebinds them, throwing
// std::invalid_argument if the named backend is unavailable on this machine.
extern double (*dot_f64)(const double*, const double*, std::size_t);
extern double (*sum_f64)(const double*, std::size_t);
extern void (*axpy_f64)(double, const double*, double*, std::size_t);
extern void (*scale_f64)(double, double*, std::size_t);
extern void (*mul_f64)(const double*, const double*, double*, std::size_t);
extern std::uint64_t (*popcount_and)(const std::uint64_t*, const std::uint64_t*, std::size_t);
extern std::uint64_t (*popcount_or)(const std::uint64_t*, const std::uint64_t*, std::size_t);

const std::string& active_backend();
void select_backend(const std::string& name);

// C[n x m] += A[n x k] * B[k x m], row major, built on the dispatched axpy so
// every backend produces identical bits.
void matmul_f64(const double* a, const double* b, double* c, std::size_t n, std::size_t k,
                std::size_t m);

}  // namespace specmatch::kernels
