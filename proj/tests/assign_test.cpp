#include <doctest.h>

#include <cmath>
#include <cstdlib>
#include <sstream>
#include <stdexcept>
#include <vector>

#include "specmatch/assign.hpp"
#include "specmatch/fragdag.hpp"
#include "specmatch/molgraph.hpp"
#include "testutil.hpp"

using namespace specmatch;
using testutil::Rng;

namespace {

// Hard assignment consistency: 0/1 entries, row and column sums at most one,
// row_to_col mirrors the matrix, objective equals the selected sum.
void check_assignment(const Assignment& a, const Mat& scores) {
  REQUIRE(a.x.rows == scores.rows);
  REQUIRE(a.x.cols == scores.cols);
  double total = 0;
  for (std::size_t i = 0; i < a.x.rows; ++i) {
    double rowsum = 0;
    for (std::size_t j = 0; j < a.x.cols; ++j) {
      CHECK((a.x.at(i, j) == 0.0 || a.x.at(i, j) == 1.0));
      rowsum += a.x.at(i, j);
      if (a.x.at(i, j) == 1.0) {
        CHECK(a.row_to_col[i] == static_cast<int>(j));
        total += scores.at(i, j);
      }
    }
    CHECK(rowsum <= 1.0);
    if (rowsum == 0.0) CHECK(a.row_to_col[i] == -1);
  }
  for (std::size_t j = 0; j < a.x.cols; ++j) {
    double colsum = 0;
    for (std::size_t i = 0; i < a.x.rows; ++i) colsum += a.x.at(i, j);
    CHECK(colsum <= 1.0);
  }
  CHECK(a.objective == doctest::Approx(total).epsilon(1e-12));
}

}  // namespace

TEST_CASE("assign: hungarian solves the textbook two-by-two") {
  Mat m(2, 2);
  m.at(0, 0) = 0.9;
  m.at(0, 1) = 0.1;
  m.at(1, 0) = 0.2;
  m.at(1, 1) = 0.8;
  Assignment a = hungarian(m);
  CHECK(a.objective == doctest::Approx(1.7).epsilon(1e-12));
  CHECK(a.row_to_col == std::vector<int>{0, 1});
  check_assignment(a, m);
}

TEST_CASE("assign: hungarian keeps the identity on an identity matrix") {
  Mat m(4, 4);
  for (std::size_t i = 0; i < 4; ++i) m.at(i, i) = 1.0;
  Assignment a = hungarian(m);
  CHECK(a.objective == doctest::Approx(4.0).epsilon(1e-12));
  for (int i = 0; i < 4; ++i) CHECK(a.row_to_col[i] == i);
}

TEST_CASE("assign: hungarian matches exhaustive search on random matrices") {
  Rng rng(31);
  for (std::size_t n = 2; n <= 6; ++n) {
    for (int trial = 0; trial < 50; ++trial) {
      Mat m = testutil::random_mat(rng, n, n);
      Assignment a = hungarian(m);
      check_assignment(a, m);
      CHECK(std::fabs(a.objective - testutil::brute_force_lap(m)) <= 1e-9);
    }
  }
  for (auto [r, c] : {std::pair<std::size_t, std::size_t>{3, 5}, {5, 3}, {1, 4}, {6, 2}}) {
    for (int trial = 0; trial < 30; ++trial) {
      Mat m = testutil::random_mat(rng, r, c);
      Assignment a = hungarian(m);
      check_assignment(a, m);
      CHECK(std::fabs(a.objective - testutil::brute_force_lap(m)) <= 1e-9);
    }
  }
}

TEST_CASE("assign: hungarian never selects negative scores") {
  Mat m(2, 2);
  m.at(0, 0) = -1;
  m.at(0, 1) = -2;
  m.at(1, 0) = -3;
  m.at(1, 1) = -4;
  Assignment a = hungarian(m);
  CHECK(a.objective == 0.0);
  CHECK(a.row_to_col == std::vector<int>{-1, -1});

  Mat mixed(2, 2);
  mixed.at(0, 0) = -1;
  mixed.at(0, 1) = 0.5;
  mixed.at(1, 0) = 0.2;
  mixed.at(1, 1) = -1;
  Assignment b = hungarian(mixed);
  CHECK(b.objective == doctest::Approx(0.7).epsilon(1e-12));
  CHECK(b.row_to_col == std::vector<int>{1, 0});
}

TEST_CASE("assign: hungarian dominates random feasible assignments") {
  Rng rng(47);
  Mat m = testutil::random_mat(rng, 6, 6);
  Assignment best = hungarian(m);
  for (int trial = 0; trial < 1000; ++trial) {
    auto perm = testutil::random_permutation(rng, 6);
    double obj = 0;
    for (std::size_t i = 0; i < 6; ++i) obj += m.at(i, perm[i]);
    CHECK(best.objective >= obj - 1e-12);
  }
}

TEST_CASE("assign: node affinity diagonal is one on a self match") {
  FragmentationDag dag = enumerate_fragments(parse_smiles("CCC(C)CO"), {.max_depth = 2});
  Mat m = build_node_affinity(dag, dag);
  REQUIRE(m.rows == dag.fragments.size());
  REQUIRE(m.cols == dag.fragments.size());
  for (std::size_t i = 0; i < m.rows; ++i) {
    CHECK(m.at(i, i) == 1.0);
    for (std::size_t j = 0; j < m.cols; ++j) {
      CHECK(m.at(i, j) >= 0.0);
      CHECK(m.at(i, j) <= 1.0);
    }
  }
}

TEST_CASE("assign: node affinity shape follows the two fragment counts") {
  FragmentationDag t = enumerate_fragments(parse_smiles("CCC"), {.max_depth = 1});
  FragmentationDag r = enumerate_fragments(parse_smiles("CC"), {.max_depth = 1});
  Mat m = build_node_affinity(t, r);
  CHECK(m.rows == t.fragments.size());
  CHECK(m.cols == r.fragments.size());
}

TEST_CASE("assign: disjoint element sets score zero affinity") {
  FragmentationDag carbon = enumerate_fragments(parse_smiles("CCCC"), {.max_depth = 0});
  FragmentationDag oxygen = enumerate_fragments(parse_smiles("OO"), {.max_depth = 0});
  Mat m = build_node_affinity(carbon, oxygen);
  REQUIRE(m.rows == 1);
  REQUIRE(m.cols == 1);
  CHECK(m.at(0, 0) == 0.0);
}

TEST_CASE("assign: qap affinity stores the node matrix on its diagonal") {
  Rng rng(3);
  FragmentationDag t = testutil::skeleton_dag(3, {{0, 1}, {0, 2}});
  FragmentationDag r = testutil::skeleton_dag(2, {{0, 1}});
  Mat m = testutil::random_mat(rng, 3, 2);
  QapAffinity k = build_qap_affinity(t, r, m, 0.5);
  CHECK(k.n == 3);
  CHECK(k.nr == 2);
  CHECK(k.dim() == 6);
  for (std::size_t i = 0; i < 3; ++i)
    for (std::size_t j = 0; j < 2; ++j) CHECK(k.diag[j * 3 + i] == m.at(i, j));
}

TEST_CASE("assign: edgeless dags give a diagonal-only quadratic form") {
  Rng rng(9);
  FragmentationDag t = testutil::skeleton_dag(3, {});
  FragmentationDag r = testutil::skeleton_dag(3, {});
  Mat m = testutil::random_mat(rng, 3, 3);
  QapAffinity k = build_qap_affinity(t, r, m, 1.0);
  CHECK(k.val.empty());
  CHECK(k.row_ptr.back() == 0);
}

TEST_CASE("assign: two chains produce one symmetric off-diagonal pair") {
  FragmentationDag t = testutil::skeleton_dag(2, {{0, 1}});
  FragmentationDag r = testutil::skeleton_dag(2, {{0, 1}});
  Mat m(2, 2);
  QapAffinity k = build_qap_affinity(t, r, m, 0.75);
  REQUIRE(k.val.size() == 2);
  CHECK(k.val[0] == 0.75);
  CHECK(k.val[1] == 0.75);
  // Pair (0,0) sits at flat index 0 and pair (1,1) at 3; each lists the
  // other as its aligned partner.
  CHECK(k.row_ptr[1] - k.row_ptr[0] == 1);
  CHECK(k.col[k.row_ptr[0]] == 3);
  CHECK(k.row_ptr[4] - k.row_ptr[3] == 1);
  CHECK(k.col[k.row_ptr[3]] == 0);
}

TEST_CASE("assign: pair space over the cap is rejected") {
  FragmentationDag t = testutil::skeleton_dag(3, {});
  FragmentationDag r = testutil::skeleton_dag(2, {});
  Mat m(3, 2);
  CHECK_THROWS_AS(build_qap_affinity(t, r, m, 1.0, 4), std::invalid_argument);
}

TEST_CASE("assign: quadratic objective counts nodes plus aligned edges") {
  FragmentationDag t = testutil::skeleton_dag(2, {{0, 1}});
  FragmentationDag r = testutil::skeleton_dag(2, {{0, 1}});
  Mat m(2, 2);
  m.at(0, 0) = 0.9;
  m.at(0, 1) = 0.1;
  m.at(1, 0) = 0.2;
  m.at(1, 1) = 0.8;
  QapAffinity k = build_qap_affinity(t, r, m, 0.25);
  Mat x(2, 2);
  x.at(0, 0) = 1.0;
  x.at(1, 1) = 1.0;
  CHECK(qap_objective(k, x) == doctest::Approx(0.9 + 0.8 + 2 * 0.25).epsilon(1e-12));
  Mat swapped(2, 2);
  swapped.at(0, 1) = 1.0;
  swapped.at(1, 0) = 1.0;
  CHECK(qap_objective(k, swapped) == doctest::Approx(0.1 + 0.2).epsilon(1e-12));
}

TEST_CASE("assign: rrwm degenerates to linear assignment without edges") {
  Rng rng(21);
  for (int trial = 0; trial < 10; ++trial) {
    FragmentationDag t = testutil::skeleton_dag(4, {});
    FragmentationDag r = testutil::skeleton_dag(4, {});
    Mat m = testutil::random_mat(rng, 4, 4);
    QapAffinity k = build_qap_affinity(t, r, m, 1.0);
    RrwmResult res = rrwm(k);
    Assignment lap = hungarian(m);
    CHECK(res.objective == doctest::Approx(lap.objective).epsilon(1e-9));
    CHECK(res.lap_objective == doctest::Approx(lap.objective).epsilon(1e-12));
    CHECK(res.iters >= 1);
  }
}

TEST_CASE("assign: rrwm recovers a planted relabeling") {
  Rng rng(77);
  for (int trial = 0; trial < 10; ++trial) {
    const std::size_t n = 4 + trial % 3;
    std::vector<std::pair<std::uint32_t, std::uint32_t>> edges;
    for (std::uint32_t i = 0; i < n; ++i)
      for (std::uint32_t j = i + 1; j < n; ++j)
        if (rng.uniform() < 0.5) edges.push_back({i, j});
    if (edges.empty()) edges.push_back({0, 1});
    auto perm = testutil::random_permutation(rng, n);
    std::vector<std::pair<std::uint32_t, std::uint32_t>> redges;
    for (auto [a, b] : edges) redges.push_back({perm[a], perm[b]});
    FragmentationDag t = testutil::skeleton_dag(n, edges);
    FragmentationDag r = testutil::skeleton_dag(n, redges);
    Mat m(n, n);
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < n; ++j)
        m.at(i, j) = (perm[i] == j) ? 1.0 : rng.uniform(0, 0.3);
    QapAffinity k = build_qap_affinity(t, r, m, 1.0);
    RrwmResult res = rrwm(k);
    for (std::size_t i = 0; i < n; ++i) CHECK(res.assignment.row_to_col[i] == static_cast<int>(perm[i]));
    Assignment bf = brute_force_qap(k);
    CHECK(res.objective == doctest::Approx(bf.objective).epsilon(1e-9));
  }
}

TEST_CASE("assign: brute force handles the trivial and the capped") {
  Mat one(1, 1);
  one.at(0, 0) = 0.4;
  FragmentationDag t1 = testutil::skeleton_dag(1, {});
  QapAffinity k1 = build_qap_affinity(t1, t1, one, 1.0);
  Assignment a = brute_force_qap(k1);
  CHECK(a.x.at(0, 0) == 1.0);
  CHECK(a.objective == doctest::Approx(0.4).epsilon(1e-12));

  Rng rng(13);
  FragmentationDag t = testutil::skeleton_dag(4, {});
  Mat m = testutil::random_mat(rng, 4, 4);
  QapAffinity k = build_qap_affinity(t, t, m, 1.0);
  CHECK(brute_force_qap(k).objective == doctest::Approx(hungarian(m).objective).epsilon(1e-9));

  FragmentationDag big = testutil::skeleton_dag(9, {});
  Mat mb(9, 9);
  QapAffinity kb = build_qap_affinity(big, big, mb, 1.0);
  CHECK_THROWS_AS(brute_force_qap(kb), std::invalid_argument);
}

TEST_CASE("assign: rrwm objective never beats the exhaustive optimum") {
  Rng rng(55);
  for (int trial = 0; trial < 20; ++trial) {
    const std::size_t n = 3 + trial % 3;
    std::vector<std::pair<std::uint32_t, std::uint32_t>> te, re;
    for (std::uint32_t i = 0; i < n; ++i)
      for (std::uint32_t j = i + 1; j < n; ++j) {
        if (rng.uniform() < 0.5) te.push_back({i, j});
        if (rng.uniform() < 0.5) re.push_back({i, j});
      }
    FragmentationDag t = testutil::skeleton_dag(n, te);
    FragmentationDag r = testutil::skeleton_dag(n, re);
    Mat m = testutil::random_mat(rng, n, n);
    QapAffinity k = build_qap_affinity(t, r, m, 0.5);
    RrwmResult res = rrwm(k);
    Assignment bf = brute_force_qap(k);
    CHECK(res.objective <= bf.objective + 1e-9);
    CHECK(qap_objective(k, res.assignment.x) == doctest::Approx(res.objective).epsilon(1e-9));
  }
}

TEST_CASE("assign: sinkhorn base cases and marginals") {
  Mat one(1, 1);
  one.at(0, 0) = 3.5;
  SoftAssignment s1 = sinkhorn(one);
  CHECK(s1.x.at(0, 0) == 1.0);
  CHECK(s1.converged);

  Rng rng(61);
  for (int trial = 0; trial < 10; ++trial) {
    Mat m = testutil::random_mat(rng, 4, 4, -2, 2);
    SoftAssignment s = sinkhorn(m);
    CHECK(s.converged);
    CHECK(s.marginal_deviation <= 1e-6);
    for (std::size_t i = 0; i < 4; ++i) {
      double rowsum = 0, colsum = 0;
      for (std::size_t j = 0; j < 4; ++j) {
        rowsum += s.x.at(i, j);
        colsum += s.x.at(j, i);
      }
      CHECK(std::fabs(rowsum - 1.0) <= 1e-6);
      CHECK(std::fabs(colsum - 1.0) <= 1e-6);
    }
  }
}

TEST_CASE("assign: sinkhorn sharpens a dominant diagonal to identity") {
  Mat m(4, 4);
  for (std::size_t i = 0; i < 4; ++i) m.at(i, i) = 10.0;
  SinkhornConfig cfg;
  cfg.tau = 0.1;
  SoftAssignment s = sinkhorn(m, cfg);
  for (std::size_t i = 0; i < 4; ++i)
    for (std::size_t j = 0; j < 4; ++j)
      CHECK(std::fabs(s.x.at(i, j) - (i == j ? 1.0 : 0.0)) <= 1e-3);
}

TEST_CASE("assign: sinkhorn is invariant to constant score shifts") {
  Rng rng(67);
  Mat m = testutil::random_mat(rng, 5, 5, -1, 1);
  Mat shifted = m;
  for (double& v : shifted.v) v += 7.25;
  SoftAssignment a = sinkhorn(m);
  SoftAssignment b = sinkhorn(shifted);
  for (std::size_t i = 0; i < m.v.size(); ++i) CHECK(std::fabs(a.x.v[i] - b.x.v[i]) <= 1e-6);
}

TEST_CASE("assign: rectangular sinkhorn keeps real rows stochastic") {
  Rng rng(71);
  Mat m = testutil::random_mat(rng, 3, 5);
  SoftAssignment s = sinkhorn(m);
  REQUIRE(s.x.rows == 3);
  REQUIRE(s.x.cols == 5);
  for (std::size_t i = 0; i < 3; ++i) {
    double rowsum = 0;
    for (std::size_t j = 0; j < 5; ++j) rowsum += s.x.at(i, j);
    CHECK(std::fabs(rowsum - 1.0) <= 1e-6);
  }
  for (std::size_t j = 0; j < 5; ++j) {
    double colsum = 0;
    for (std::size_t i = 0; i < 3; ++i) colsum += s.x.at(i, j);
    CHECK(colsum <= 1.0 + 1e-6);
  }
}

TEST_CASE("assign: softmax matching follows the closed form") {
  Mat m(1, 2);
  m.at(0, 0) = 1.0;
  m.at(0, 1) = 1.0;
  Mat x = softmax_match(m, 1.0);
  CHECK(x.at(0, 0) == doctest::Approx(0.5).epsilon(1e-12));
  CHECK(x.at(0, 1) == doctest::Approx(0.5).epsilon(1e-12));

  Mat sharp(1, 2);
  sharp.at(0, 0) = 10.0;
  sharp.at(0, 1) = 0.0;
  Mat y = softmax_match(sharp, 1.0);
  const double hi = std::exp(10.0) / (std::exp(10.0) + 1.0);
  CHECK(std::fabs(y.at(0, 0) - hi) <= 1e-12);
  CHECK(std::fabs(y.at(0, 1) - (1.0 - hi)) <= 1e-12);
  CHECK(y.at(0, 1) == doctest::Approx(4.5e-5).epsilon(0.01));
}

TEST_CASE("assign: softmax rows are stochastic and argmax stable") {
  Rng rng(81);
  Mat m = testutil::random_mat(rng, 6, 7, -3, 3);
  Mat x = softmax_match(m, 0.7);
  for (std::size_t i = 0; i < m.rows; ++i) {
    double rowsum = 0;
    std::size_t am = 0, ax = 0;
    for (std::size_t j = 0; j < m.cols; ++j) {
      rowsum += x.at(i, j);
      if (m.at(i, j) > m.at(i, am)) am = j;
      if (x.at(i, j) > x.at(i, ax)) ax = j;
    }
    CHECK(std::fabs(rowsum - 1.0) <= 1e-9);
    CHECK(am == ax);
  }
  // A monotone transform of the scores keeps every row argmax in place.
  Mat scaled = m;
  for (double& v : scaled.v) v = 2.0 * v + 3.0;
  Mat y = softmax_match(scaled, 0.7);
  for (std::size_t i = 0; i < m.rows; ++i) {
    std::size_t a = 0, b = 0;
    for (std::size_t j = 0; j < m.cols; ++j) {
      if (x.at(i, j) > x.at(i, a)) a = j;
      if (y.at(i, j) > y.at(i, b)) b = j;
    }
    CHECK(a == b);
  }
}

TEST_CASE("assign: matched pair export is sorted by score") {
  Mat soft(3, 2);
  soft.at(0, 0) = 0.6;
  soft.at(0, 1) = 0.4;
  soft.at(1, 0) = 0.1;
  soft.at(1, 1) = 0.9;
  soft.at(2, 0) = 0.7;
  soft.at(2, 1) = 0.3;
  Mat aff(3, 2);
  aff.at(0, 0) = 0.5;
  aff.at(1, 1) = 0.25;
  aff.at(2, 0) = 0.125;
  std::ostringstream out;
  write_matched_pairs_csv(soft, aff, out);
  std::istringstream lines(out.str());
  std::string header;
  std::getline(lines, header);
  CHECK(header == "target,reference,score,affinity");
  std::vector<double> scores;
  std::string line;
  while (std::getline(lines, line)) {
    std::size_t p1 = line.find(','), p2 = line.find(',', p1 + 1), p3 = line.find(',', p2 + 1);
    scores.push_back(std::strtod(line.substr(p2 + 1, p3 - p2 - 1).c_str(), nullptr));
  }
  REQUIRE(scores.size() == 3);
  CHECK(scores[0] == 0.9);
  CHECK(scores[1] == 0.7);
  CHECK(scores[2] == 0.6);
}
