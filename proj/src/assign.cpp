#include "specmatch/assign.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <ostream>
#include <stdexcept>

#include "specmatch/kernels.hpp"

namespace specmatch {

Mat build_node_affinity(const FragmentationDag& target, const FragmentationDag& reference,
                        const FingerprintConfig& cfg) {
  std::vector<Fingerprint> ft, fr;
  ft.reserve(target.fragments.size());
  fr.reserve(reference.fragments.size());
  for (const FragmentNode& f : target.fragments) ft.push_back(morgan_fingerprint(f.graph, cfg));
  for (const FragmentNode& f : reference.fragments) fr.push_back(morgan_fingerprint(f.graph, cfg));
  Mat m(ft.size(), fr.size());
  for (std::size_t i = 0; i < ft.size(); ++i)
    for (std::size_t j = 0; j < fr.size(); ++j) m.at(i, j) = tanimoto(ft[i], fr[j]);
  return m;
}

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

// Shortest augmenting path assignment with potentials on an N x N cost
// matrix (minimization). Returns, per column, the assigned row (1-based
// internally, shifted on output).
std::vector<int> solve_square_min(const std::vector<double>& a, std::size_t n) {
  std::vector<double> u(n + 1, 0), v(n + 1, 0), minv(n + 1, 0);
  std::vector<int> p(n + 1, 0), way(n + 1, 0);
  std::vector<bool> used(n + 1, false);
  for (std::size_t i = 1; i <= n; ++i) {
    p[0] = static_cast<int>(i);
    std::size_t j0 = 0;
    std::fill(minv.begin(), minv.end(), kInf);
    std::fill(used.begin(), used.end(), false);
    do {
      used[j0] = true;
      int i0 = p[j0];
      double delta = kInf;
      std::size_t j1 = 0;
      for (std::size_t j = 1; j <= n; ++j) {
        if (used[j]) continue;
        double cur = a[(i0 - 1) * n + (j - 1)] - u[i0] - v[j];
        if (cur < minv[j]) {
          minv[j] = cur;
          way[j] = static_cast<int>(j0);
        }
        if (minv[j] < delta) {
          delta = minv[j];
          j1 = j;
        }
      }
      for (std::size_t j = 0; j <= n; ++j) {
        if (used[j]) {
          u[p[j]] += delta;
          v[j] -= delta;
        } else {
          minv[j] -= delta;
        }
      }
      j0 = j1;
    } while (p[j0] != 0);
    do {
      std::size_t j1 = way[j0];
      p[j0] = p[j1];
      j0 = j1;
    } while (j0);
  }
  std::vector<int> col_to_row(n, -1);
  for (std::size_t j = 1; j <= n; ++j) col_to_row[j - 1] = p[j] - 1;
  return col_to_row;
}

}  // namespace

Assignment hungarian(const Mat& scores) {
  const std::size_t rows = scores.rows, cols = scores.cols;
  Assignment out;
  out.x = Mat(rows, cols);
  out.row_to_col.assign(rows, -1);
  if (rows == 0 || cols == 0) return out;
  for (double s : scores.v)
    if (!std::isfinite(s)) throw std::invalid_argument("hungarian: non-finite score");

  // Pad to (rows+cols) square with zero-cost dummies on both sides so any
  // row or column can stay unmatched; negative-affinity pairs then never
  // beat their dummies and the partial matching is exact.
  const std::size_t n = rows + cols;
  std::vector<double> cost(n * n, 0.0);
  for (std::size_t i = 0; i < rows; ++i)
    for (std::size_t j = 0; j < cols; ++j) cost[i * n + j] = -scores.at(i, j);

  std::vector<int> col_to_row = solve_square_min(cost, n);
  for (std::size_t j = 0; j < cols; ++j) {
    int i = col_to_row[j];
    if (i < 0 || static_cast<std::size_t>(i) >= rows) continue;
    out.x.at(i, j) = 1.0;
    out.row_to_col[i] = static_cast<int>(j);
    out.objective += scores.at(i, j);
  }
  return out;
}

QapAffinity build_qap_affinity(const FragmentationDag& target, const FragmentationDag& reference,
                               const Mat& node_affinity, double lambda, std::size_t dim_cap) {
  const std::size_t n = target.fragments.size();
  const std::size_t nr = reference.fragments.size();
  if (node_affinity.rows != n || node_affinity.cols != nr)
    throw std::invalid_argument("build_qap_affinity: affinity shape mismatch");
  if (n * nr > dim_cap)
    throw std::invalid_argument("build_qap_affinity: pair space exceeds cap");

  QapAffinity k;
  k.n = n;
  k.nr = nr;
  k.lambda = lambda;
  k.diag.assign(n * nr, 0.0);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < nr; ++j) k.diag[j * n + i] = node_affinity.at(i, j);

  std::vector<std::vector<std::uint32_t>> off(n * nr);
  for (auto [ti, ta] : target.edges) {
    for (auto [rj, rb] : reference.edges) {
      std::size_t p = static_cast<std::size_t>(rj) * n + ti;
      std::size_t q = static_cast<std::size_t>(rb) * n + ta;
      off[p].push_back(static_cast<std::uint32_t>(q));
      off[q].push_back(static_cast<std::uint32_t>(p));
    }
  }
  k.row_ptr.assign(n * nr + 1, 0);
  for (std::size_t p = 0; p < off.size(); ++p) {
    std::sort(off[p].begin(), off[p].end());
    k.row_ptr[p + 1] = k.row_ptr[p] + off[p].size();
  }
  k.col.reserve(k.row_ptr.back());
  for (auto& row : off)
    for (std::uint32_t q : row) k.col.push_back(q);
  k.val.assign(k.col.size(), lambda);
  return k;
}

namespace {

// y = K x (diagonal plus symmetric off-diagonal part).
void qap_matvec(const QapAffinity& k, const std::vector<double>& x, std::vector<double>& y) {
  const std::size_t dim = k.dim();
  for (std::size_t p = 0; p < dim; ++p) {
    double acc = k.diag[p] * x[p];
    for (std::size_t e = k.row_ptr[p]; e < k.row_ptr[p + 1]; ++e) acc += k.val[e] * x[k.col[e]];
    y[p] = acc;
  }
}

std::vector<double> vec_of(const QapAffinity& k, const Mat& x) {
  if (x.rows != k.n || x.cols != k.nr)
    throw std::invalid_argument("qap_objective: assignment shape mismatch");
  std::vector<double> v(k.dim(), 0.0);
  for (std::size_t i = 0; i < k.n; ++i)
    for (std::size_t j = 0; j < k.nr; ++j) v[j * k.n + i] = x.at(i, j);
  return v;
}

}  // namespace

double qap_objective(const QapAffinity& k, const Mat& x) {
  std::vector<double> v = vec_of(k, x);
  std::vector<double> y(k.dim());
  qap_matvec(k, v, y);
  double obj = 0;
  for (std::size_t p = 0; p < k.dim(); ++p) obj += v[p] * y[p];
  return obj;
}

RrwmResult rrwm(const QapAffinity& k, const RrwmConfig& cfg) {
  const std::size_t dim = k.dim();
  RrwmResult res;
  {
    Mat m(k.n, k.nr);
    for (std::size_t i = 0; i < k.n; ++i)
      for (std::size_t j = 0; j < k.nr; ++j) m.at(i, j) = k.diag[j * k.n + i];
    res.lap_objective = hungarian(m).objective;
  }
  if (dim == 0) return res;

  double d_max = 0;
  for (std::size_t p = 0; p < dim; ++p) {
    double row = k.diag[p];
    for (std::size_t e = k.row_ptr[p]; e < k.row_ptr[p + 1]; ++e) row += k.val[e];
    d_max = std::max(d_max, row);
  }
  Mat soft(k.n, k.nr);
  if (d_max <= 0) {
    res.assignment = hungarian(soft);
    res.objective = 0;
    res.converged = true;
    return res;
  }

  std::vector<double> x(dim, 1.0 / static_cast<double>(dim));
  std::vector<double> y(dim), z(dim), xnew(dim);
  std::vector<double> best = x;
  double best_soft = -kInf;

  for (int it = 0; it < cfg.max_iters; ++it) {
    qap_matvec(k, x, y);
    double soft_obj = 0;
    for (std::size_t p = 0; p < dim; ++p) soft_obj += x[p] * y[p];
    if (soft_obj > best_soft) {
      best_soft = soft_obj;
      best = x;
    }
    double s1 = 0;
    for (double v : y) s1 += v;
    if (s1 <= 0) break;
    for (std::size_t p = 0; p < dim; ++p) y[p] /= s1;

    double maxy = *std::max_element(y.begin(), y.end());
    Mat jump(k.n, k.nr);
    for (std::size_t i = 0; i < k.n; ++i)
      for (std::size_t j = 0; j < k.nr; ++j)
        jump.at(i, j) = std::exp(cfg.beta * y[j * k.n + i] / maxy);
    // Bistochastic reweighting of the jump distribution; entries are
    // strictly positive so plain alternating normalization is safe.
    for (int sweep = 0; sweep < cfg.jump_sinkhorn_iters; ++sweep) {
      for (std::size_t i = 0; i < k.n; ++i) {
        double s = 0;
        for (std::size_t j = 0; j < k.nr; ++j) s += jump.at(i, j);
        if (s > 0)
          for (std::size_t j = 0; j < k.nr; ++j) jump.at(i, j) /= s;
      }
      for (std::size_t j = 0; j < k.nr; ++j) {
        double s = 0;
        for (std::size_t i = 0; i < k.n; ++i) s += jump.at(i, j);
        if (s > 0)
          for (std::size_t i = 0; i < k.n; ++i) jump.at(i, j) /= s;
      }
    }
    double zsum = 0;
    for (std::size_t i = 0; i < k.n; ++i)
      for (std::size_t j = 0; j < k.nr; ++j) zsum += jump.at(i, j);
    for (std::size_t p = 0; p < dim; ++p) z[p] = 0;
    if (zsum > 0)
      for (std::size_t i = 0; i < k.n; ++i)
        for (std::size_t j = 0; j < k.nr; ++j) z[j * k.n + i] = jump.at(i, j) / zsum;

    double delta = 0;
    for (std::size_t p = 0; p < dim; ++p) {
      xnew[p] = cfg.alpha * y[p] + (1.0 - cfg.alpha) * z[p];
      delta += std::abs(xnew[p] - x[p]);
    }
    x.swap(xnew);
    res.iters = it + 1;
    if (delta < cfg.tol) {
      res.converged = true;
      break;
    }
  }

  qap_matvec(k, x, y);
  double final_soft = 0;
  for (std::size_t p = 0; p < dim; ++p) final_soft += x[p] * y[p];
  if (final_soft > best_soft) {
    best_soft = final_soft;
    best = x;
  }

  for (std::size_t i = 0; i < k.n; ++i)
    for (std::size_t j = 0; j < k.nr; ++j) soft.at(i, j) = best[j * k.n + i];
  res.assignment = hungarian(soft);
  res.objective = qap_objective(k, res.assignment.x);
  return res;
}

Assignment brute_force_qap(const QapAffinity& k) {
  const std::size_t n = k.n, nr = k.nr;
  if (std::max(n, nr) > 8)
    throw std::invalid_argument("brute_force_qap: sides must be <= 8");
  const std::size_t dim = k.dim();

  // Dense symmetric off-diagonal lookup; tiny by the size guard.
  std::vector<double> dense(dim * dim, 0.0);
  for (std::size_t p = 0; p < dim; ++p)
    for (std::size_t e = k.row_ptr[p]; e < k.row_ptr[p + 1]; ++e)
      dense[p * dim + k.col[e]] = k.val[e];

  bool nonneg = k.lambda >= 0;
  for (double d : k.diag)
    if (d < 0) nonneg = false;

  const bool target_side = n <= nr;  // enumerate the smaller side
  const std::size_t small = target_side ? n : nr;
  const std::size_t large = target_side ? nr : n;

  std::vector<int> choice(small, -1), best_choice(small, -1);
  std::vector<std::size_t> chosen_pairs;
  std::vector<bool> used(large, false);
  double best = -kInf;

  auto pair_index = [&](std::size_t s, std::size_t l) {
    std::size_t i = target_side ? s : l;
    std::size_t j = target_side ? l : s;
    return j * n + i;
  };

  auto rec = [&](auto&& self, std::size_t s, double acc) -> void {
    if (s == small) {
      if (acc > best) {
        best = acc;
        best_choice = choice;
      }
      return;
    }
    for (std::size_t l = 0; l < large; ++l) {
      if (used[l]) continue;
      std::size_t p = pair_index(s, l);
      double gain = k.diag[p];
      for (std::size_t q : chosen_pairs) gain += 2.0 * dense[p * dim + q];
      used[l] = true;
      choice[s] = static_cast<int>(l);
      chosen_pairs.push_back(p);
      self(self, s + 1, acc + gain);
      chosen_pairs.pop_back();
      choice[s] = -1;
      used[l] = false;
    }
    // Leaving a node unmatched only ever helps when negative entries exist.
    if (!nonneg || large < small) {
      choice[s] = -1;
      self(self, s + 1, acc);
    }
  };
  rec(rec, 0, 0.0);

  Assignment out;
  out.x = Mat(n, nr);
  out.row_to_col.assign(n, -1);
  for (std::size_t s = 0; s < small; ++s) {
    if (best_choice[s] < 0) continue;
    std::size_t i = target_side ? s : static_cast<std::size_t>(best_choice[s]);
    std::size_t j = target_side ? static_cast<std::size_t>(best_choice[s]) : s;
    out.x.at(i, j) = 1.0;
    out.row_to_col[i] = static_cast<int>(j);
  }
  out.objective = qap_objective(k, out.x);
  return out;
}

SoftAssignment sinkhorn(const Mat& scores, const SinkhornConfig& cfg) {
  if (cfg.tau <= 0) throw std::invalid_argument("sinkhorn: tau must be positive");
  const std::size_t rows = scores.rows, cols = scores.cols;
  SoftAssignment out;
  out.x = Mat(rows, cols);
  if (rows == 0 || cols == 0) {
    out.converged = true;
    return out;
  }
  const std::size_t n = std::max(rows, cols);

  double gmax = -kInf;
  for (double s : scores.v) {
    if (!std::isfinite(s)) throw std::invalid_argument("sinkhorn: non-finite score");
    gmax = std::max(gmax, s);
  }
  if (rows != cols) gmax = std::max(gmax, cfg.pad_score);

  // Rounding here is pinned to one contract (kernel row sums, reciprocal
  // multiply on rows, true division on columns) shared with the tape-based
  // differentiable path, keeping the two bitwise interchangeable.
  const double inv_tau = 1.0 / cfg.tau;
  std::vector<double> a(n * n);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j) {
      double s = (i < rows && j < cols) ? scores.at(i, j) : cfg.pad_score;
      a[i * n + j] = std::exp((s - gmax) * inv_tau);
    }

  std::vector<double> csum(n);
  double dev = kInf;
  int it = 0;
  for (; it < cfg.max_iters; ++it) {
    for (std::size_t i = 0; i < n; ++i) {
      double s = kernels::sum_f64(a.data() + i * n, n);
      kernels::scale_f64(1.0 / s, a.data() + i * n, n);
    }
    std::fill(csum.begin(), csum.end(), 0.0);
    for (std::size_t i = 0; i < n; ++i)
      kernels::axpy_f64(1.0, a.data() + i * n, csum.data(), n);
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < n; ++j) a[i * n + j] /= csum[j];
    dev = 0;
    for (std::size_t i = 0; i < n; ++i)
      dev = std::max(dev, std::abs(kernels::sum_f64(a.data() + i * n, n) - 1.0));
    if (dev < cfg.eps) {
      ++it;
      out.converged = true;
      break;
    }
  }
  out.iters = it;
  out.marginal_deviation = dev;
  for (std::size_t i = 0; i < rows; ++i)
    for (std::size_t j = 0; j < cols; ++j) out.x.at(i, j) = a[i * n + j];
  return out;
}

Mat softmax_match(const Mat& scores, double tau) {
  if (tau <= 0) throw std::invalid_argument("softmax_match: tau must be positive");
  Mat out(scores.rows, scores.cols);
  for (std::size_t i = 0; i < scores.rows; ++i) {
    double m = -kInf;
    for (std::size_t j = 0; j < scores.cols; ++j) m = std::max(m, scores.at(i, j));
    double sum = 0;
    for (std::size_t j = 0; j < scores.cols; ++j) {
      double e = std::exp((scores.at(i, j) - m) / tau);
      out.at(i, j) = e;
      sum += e;
    }
    for (std::size_t j = 0; j < scores.cols; ++j) out.at(i, j) /= sum;
  }
  return out;
}

void write_matched_pairs_csv(const Mat& soft_x, const Mat& affinity, std::ostream& out) {
  if (soft_x.rows != affinity.rows || soft_x.cols != affinity.cols)
    throw std::invalid_argument("write_matched_pairs_csv: shape mismatch");
  struct Row {
    std::size_t i, j;
    double score, aff;
  };
  std::vector<Row> rows;
  for (std::size_t i = 0; i < soft_x.rows; ++i) {
    if (soft_x.cols == 0) break;
    std::size_t jbest = 0;
    for (std::size_t j = 1; j < soft_x.cols; ++j)
      if (soft_x.at(i, j) > soft_x.at(i, jbest)) jbest = j;
    rows.push_back({i, jbest, soft_x.at(i, jbest), affinity.at(i, jbest)});
  }
  std::stable_sort(rows.begin(), rows.end(), [](const Row& a, const Row& b) {
    return a.score > b.score;
  });
  out << "target,reference,score,affinity\n";
  char buf[96];
  for (const Row& r : rows) {
    std::snprintf(buf, sizeof buf, "%zu,%zu,%.10g,%.10g\n", r.i, r.j, r.score, r.aff);
    out << buf;
  }
}

}  // namespace specmatch
