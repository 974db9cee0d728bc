#pragma once

#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

#include "specmatch/fingerprint.hpp"
#include "specmatch/fragdag.hpp"

// Classical fragment matching: node affinities from fingerprint similarity,
// linear assignment for node-only scoring, and a quadratic objective whose
// off-diagonal terms reward mapping parent-child pairs onto parent-child
// pairs. All solvers are deterministic.

namespace specmatch {

struct Mat {
  std::size_t rows = 0, cols = 0;
  std::vector<double> v;

  Mat() = default;
  Mat(std::size_t r, std::size_t c) : rows(r), cols(c), v(r * c, 0.0) {}
  double& at(std::size_t i, std::size_t j) { return v[i * cols + j]; }
  double at(std::size_t i, std::size_t j) const { return v[i * cols + j]; }
};

// Pairwise Tanimoto between fragment fingerprints; entry (i, j) compares
// target fragment i with reference fragment j.
Mat build_node_affinity(const FragmentationDag& target, const FragmentationDag& reference,
                        const FingerprintConfig& cfg = {});

struct Assignment {
  Mat x;                        // hard 0/1, row sums <= 1, col sums <= 1
  std::vector<int> row_to_col;  // -1 for unmatched rows
  double objective = 0;
};

// Maximizes sum of selected affinities over partial matchings; exact for any
// finite score matrix (rectangular allowed, negative entries never selected).
Assignment hungarian(const Mat& scores);

// Quadratic affinity over assignment pairs, stored sparse. Vectorized
// column-major: pair (i, j) lives at index j*n + i. The diagonal carries the
// node affinity, off-diagonal entries hold lambda where target edge (i -> a)
// can align with reference edge (j -> b), symmetrized.
struct QapAffinity {
  std::size_t n = 0, nr = 0;
  double lambda = 1.0;
  std::vector<double> diag;          // n*nr
  std::vector<std::size_t> row_ptr;  // CSR over off-diagonal, n*nr+1
  std::vector<std::uint32_t> col;
  std::vector<double> val;

  std::size_t dim() const { return n * nr; }
};

QapAffinity build_qap_affinity(const FragmentationDag& target, const FragmentationDag& reference,
                               const Mat& node_affinity, double lambda = 1.0,
                               std::size_t dim_cap = 1u << 18);

// x^T K x for a hard assignment; equals sum of matched node affinities plus
// 2*lambda per aligned edge pair.
double qap_objective(const QapAffinity& k, const Mat& x);

struct RrwmConfig {
  double alpha = 0.2;  // weight of the plain walk against the reweighted jump
  double beta = 30.0;  // inflation strength
  int max_iters = 300;
  double tol = 1e-6;
  int jump_sinkhorn_iters = 10;
};

struct RrwmResult {
  Assignment assignment;      // discretized by linear assignment on the iterate
  double objective = 0;       // quadratic objective of the hard assignment
  double lap_objective = 0;   // node-only linear assignment baseline
  bool converged = false;
  int iters = 0;
};

// Reweighted random-walk matching over the pair graph. Keeps the iterate
// with the best soft quadratic score and discretizes it.
RrwmResult rrwm(const QapAffinity& k, const RrwmConfig& cfg = {});

// Exhaustive injection search; requires max(n, nr) <= 8.
Assignment brute_force_qap(const QapAffinity& k);

struct SinkhornConfig {
  double tau = 0.05;
  int max_iters = 200;
  double eps = 1e-6;
  double pad_score = 0.0;  // fill for the squaring pad of rectangular inputs
};

struct SoftAssignment {
  Mat x;  // original rows x cols block of the balanced padded matrix
  double marginal_deviation = 0;
  int iters = 0;
  bool converged = false;
};

// exp((S - max)/tau) followed by alternating row/column normalization of the
// zero-padded square. The global max shift makes the result invariant to
// adding a constant to S.
SoftAssignment sinkhorn(const Mat& scores, const SinkhornConfig& cfg = {});

// Row-wise softmax of S/tau with row-max subtraction.
Mat softmax_match(const Mat& scores, double tau = 1.0);

// Per-row argmax pairs (i, argmax_j, soft score) sorted by score descending,
// as "target,reference,score,affinity" CSV.
void write_matched_pairs_csv(const Mat& soft_x, const Mat& affinity, std::ostream& out);

}  // namespace specmatch
