#include <doctest.h>

#include <bit>
#include <cstdint>
#include <stdexcept>
#include <vector>

#include "specmatch/kernels.hpp"
#include "testutil.hpp"

namespace k = specmatch::kernels;
using testutil::Rng;

namespace {

bool same_bits(double a, double b) {
  return std::bit_cast<std::uint64_t>(a) == std::bit_cast<std::uint64_t>(b);
}

bool same_bits(const std::vector<double>& a, const std::vector<double>& b) {
  if (a.size() != b.size()) return false;
  for (std::size_t i = 0; i < a.size(); ++i)
    if (!same_bits(a[i], b[i])) return false;
  return true;
}

// Every dispatched kernel applied to one input set; results collected so two
// backends can be compared bit for bit.
struct KernelRun {
  std::vector<double> dots, sums;
  std::vector<std::vector<double>> axpys, scales, muls;
  std::vector<std::uint64_t> pops;
};

const std::vector<std::size_t> kSizes = {0,  1,  2,  3,  4,   5,   7,   8,    9,    15,  16,
                                         17, 31, 33, 63, 64,  65,  127, 129,  255,  1000, 1023};

KernelRun run_dispatched() {
  KernelRun out;
  for (std::size_t n : kSizes) {
    Rng rng(1000 + n);
    std::vector<double> x(n), y(n), z(n);
    for (std::size_t i = 0; i < n; ++i) {
      x[i] = rng.uniform(-2, 2);
      y[i] = rng.uniform(-2, 2);
    }
    out.dots.push_back(k::dot_f64(x.data(), y.data(), n));
    out.sums.push_back(k::sum_f64(x.data(), n));
    std::vector<double> ya = y;
    k::axpy_f64(1.75, x.data(), ya.data(), n);
    out.axpys.push_back(ya);
    std::vector<double> xs = x;
    k::scale_f64(-0.375, xs.data(), n);
    out.scales.push_back(xs);
    k::mul_f64(x.data(), y.data(), z.data(), n);
    out.muls.push_back(z);
  }
  for (std::size_t nwords : {std::size_t{0}, std::size_t{1}, std::size_t{2}, std::size_t{3},
                             std::size_t{4}, std::size_t{5}, std::size_t{8}, std::size_t{11},
                             std::size_t{16}, std::size_t{33}}) {
    Rng rng(7000 + nwords);
    std::vector<std::uint64_t> a(nwords), b(nwords);
    for (std::size_t i = 0; i < nwords; ++i) {
      a[i] = rng.bits();
      b[i] = rng.bits();
    }
    out.pops.push_back(k::popcount_and(a.data(), b.data(), nwords));
    out.pops.push_back(k::popcount_or(a.data(), b.data(), nwords));
  }
  return out;
}

}  // namespace

TEST_CASE("kernels: scalar backend matches direct reference computation") {
  const std::string previous = k::active_backend();
  k::select_backend("scalar");
  Rng rng(11);
  for (std::size_t n : {std::size_t{1}, std::size_t{7}, std::size_t{64}, std::size_t{129}}) {
    std::vector<double> x(n), y(n);
    for (std::size_t i = 0; i < n; ++i) {
      x[i] = rng.uniform(-1, 1);
      y[i] = rng.uniform(-1, 1);
    }
    double dot = 0, sum = 0;
    for (std::size_t i = 0; i < n; ++i) {
      dot += x[i] * y[i];
      sum += x[i];
    }
    CHECK(k::dot_f64(x.data(), y.data(), n) == doctest::Approx(dot).epsilon(1e-12));
    CHECK(k::sum_f64(x.data(), n) == doctest::Approx(sum).epsilon(1e-12));
  }
  std::vector<std::uint64_t> a = {0xffull, 0x0f0f0f0f0f0f0f0full};
  std::vector<std::uint64_t> b = {0x0full, 0xffffffffffffffffull};
  CHECK(k::popcount_and(a.data(), b.data(), 2) == 4 + 32);
  CHECK(k::popcount_or(a.data(), b.data(), 2) == 8 + 64);
  k::select_backend(previous);
}

TEST_CASE("kernels: every available backend is bit-exact with scalar") {
  const std::string previous = k::active_backend();
  k::select_backend("scalar");
  const KernelRun base = run_dispatched();

  for (const char* name : {"avx2", "neon"}) {
    bool available = true;
    try {
      k::select_backend(name);
    } catch (const std::invalid_argument&) {
      available = false;
    }
    if (!available) continue;
    INFO("backend ", name);
    CHECK(k::active_backend() == name);
    const KernelRun got = run_dispatched();
    REQUIRE(got.dots.size() == base.dots.size());
    for (std::size_t i = 0; i < base.dots.size(); ++i) {
      CHECK(same_bits(got.dots[i], base.dots[i]));
      CHECK(same_bits(got.sums[i], base.sums[i]));
      CHECK(same_bits(got.axpys[i], base.axpys[i]));
      CHECK(same_bits(got.scales[i], base.scales[i]));
      CHECK(same_bits(got.muls[i], base.muls[i]));
    }
    CHECK(got.pops == base.pops);
  }
  k::select_backend(previous);
}

TEST_CASE("kernels: backend selection is explicit and validated") {
  const std::string previous = k::active_backend();
  k::select_backend("scalar");
  CHECK(k::active_backend() == "scalar");
  CHECK_THROWS_AS(k::select_backend("sse9000"), std::invalid_argument);
  CHECK(k::active_backend() == "scalar");
  k::select_backend("auto");
  CHECK_FALSE(k::active_backend().empty());
  k::select_backend(previous);
}

TEST_CASE("kernels: matmul accumulates exactly like the axpy reference") {
  Rng rng(23);
  for (auto [n, kk, m] : {std::tuple<std::size_t, std::size_t, std::size_t>{2, 3, 4},
                          {5, 5, 5},
                          {1, 7, 3},
                          {4, 1, 6}}) {
    std::vector<double> a(n * kk), b(kk * m);
    for (double& v : a) v = rng.uniform(-1, 1);
    for (double& v : b) v = rng.uniform(-1, 1);
    std::vector<double> c(n * m, 0.0), ref(n * m, 0.0);
    k::matmul_f64(a.data(), b.data(), c.data(), n, kk, m);
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t p = 0; p < kk; ++p)
        k::axpy_f64(a[i * kk + p], b.data() + p * m, ref.data() + i * m, m);
    CHECK(same_bits(c, ref));
  }
}
