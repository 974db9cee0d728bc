#include "specmatch/tensor.hpp"

#include <cmath>
#include <stdexcept>

#include "specmatch/kernels.hpp"

namespace specmatch::ad {

namespace {

void check(bool cond, const char* msg) {
  if (!cond) throw std::invalid_argument(std::string("tensor: ") + msg);
}

// C += A * B
void mm_nn(const Tensor& a, const Tensor& b, Tensor& c) {
  kernels::matmul_f64(a.v.data(), b.v.data(), c.v.data(), a.rows, a.cols, b.cols);
}

// C += A * B^T  (A[n,k], B[m,k] -> C[n,m])
void mm_nt(const Tensor& a, const Tensor& b, Tensor& c) {
  for (std::size_t i = 0; i < a.rows; ++i)
    for (std::size_t j = 0; j < b.rows; ++j)
      c.v[i * c.cols + j] +=
          kernels::dot_f64(a.v.data() + i * a.cols, b.v.data() + j * b.cols, a.cols);
}

// C += A^T * B  (A[n,k], B[n,m] -> C[k,m])
void mm_tn(const Tensor& a, const Tensor& b, Tensor& c) {
  for (std::size_t i = 0; i < a.rows; ++i) {
    const double* arow = a.v.data() + i * a.cols;
    const double* brow = b.v.data() + i * b.cols;
    for (std::size_t l = 0; l < a.cols; ++l)
      if (arow[l] != 0.0) kernels::axpy_f64(arow[l], brow, c.v.data() + l * b.cols, b.cols);
  }
}

}  // namespace

VarId Tape::push(Node n) {
  for (VarId p : n.parents)
    if (nodes[p].requires_grad) n.requires_grad = true;
  nodes.push_back(std::move(n));
  return static_cast<VarId>(nodes.size() - 1);
}

VarId Tape::leaf(Tensor value, bool requires_grad) {
  Node n;
  n.op = Op::Leaf;
  n.val = std::move(value);
  n.requires_grad = requires_grad;
  nodes.push_back(std::move(n));
  return static_cast<VarId>(nodes.size() - 1);
}

VarId Tape::add(VarId a, VarId b) {
  check(val(a).rows == val(b).rows && val(a).cols == val(b).cols, "add: shape mismatch");
  Node n;
  n.op = Op::Add;
  n.parents = {a, b};
  n.val = val(a);
  for (std::size_t i = 0; i < n.val.size(); ++i) n.val.v[i] += val(b).v[i];
  return push(std::move(n));
}

VarId Tape::sub(VarId a, VarId b) {
  check(val(a).rows == val(b).rows && val(a).cols == val(b).cols, "sub: shape mismatch");
  Node n;
  n.op = Op::Sub;
  n.parents = {a, b};
  n.val = val(a);
  for (std::size_t i = 0; i < n.val.size(); ++i) n.val.v[i] -= val(b).v[i];
  return push(std::move(n));
}

VarId Tape::mul(VarId a, VarId b) {
  check(val(a).rows == val(b).rows && val(a).cols == val(b).cols, "mul: shape mismatch");
  Node n;
  n.op = Op::Mul;
  n.parents = {a, b};
  n.val = Tensor(val(a).rows, val(a).cols);
  kernels::mul_f64(val(a).v.data(), val(b).v.data(), n.val.v.data(), n.val.size());
  return push(std::move(n));
}

VarId Tape::add_rowvec(VarId a, VarId bias) {
  check(val(bias).rows == 1 && val(bias).cols == val(a).cols, "add_rowvec: bias shape");
  Node n;
  n.op = Op::AddRowVec;
  n.parents = {a, bias};
  n.val = val(a);
  for (std::size_t i = 0; i < n.val.rows; ++i)
    for (std::size_t j = 0; j < n.val.cols; ++j) n.val.v[i * n.val.cols + j] += val(bias).v[j];
  return push(std::move(n));
}

VarId Tape::mul_scalarvar(VarId a, VarId s) {
  check(val(s).size() == 1, "mul_scalarvar: scalar required");
  Node n;
  n.op = Op::MulScalarVar;
  n.parents = {a, s};
  n.val = val(a);
  kernels::scale_f64(val(s).v[0], n.val.v.data(), n.val.size());
  return push(std::move(n));
}

VarId Tape::scale(VarId a, double c) {
  Node n;
  n.op = Op::ScaleConst;
  n.parents = {a};
  n.aux_scalar = c;
  n.val = val(a);
  kernels::scale_f64(c, n.val.v.data(), n.val.size());
  return push(std::move(n));
}

VarId Tape::add_const(VarId a, double c) {
  Node n;
  n.op = Op::AddConst;
  n.parents = {a};
  n.aux_scalar = c;
  n.val = val(a);
  for (double& x : n.val.v) x += c;
  return push(std::move(n));
}

VarId Tape::matmul(VarId a, VarId b) {
  check(val(a).cols == val(b).rows, "matmul: inner dim mismatch");
  Node n;
  n.op = Op::MatMul;
  n.parents = {a, b};
  n.val = Tensor(val(a).rows, val(b).cols);
  mm_nn(val(a), val(b), n.val);
  return push(std::move(n));
}

VarId Tape::matmul_nt(VarId a, VarId b) {
  check(val(a).cols == val(b).cols, "matmul_nt: inner dim mismatch");
  Node n;
  n.op = Op::MatMulNT;
  n.parents = {a, b};
  n.val = Tensor(val(a).rows, val(b).rows);
  mm_nt(val(a), val(b), n.val);
  return push(std::move(n));
}

VarId Tape::tanh_(VarId a) {
  Node n;
  n.op = Op::Tanh;
  n.parents = {a};
  n.val = val(a);
  for (double& x : n.val.v) x = std::tanh(x);
  return push(std::move(n));
}

VarId Tape::sigmoid_(VarId a) {
  Node n;
  n.op = Op::Sigmoid;
  n.parents = {a};
  n.val = val(a);
  for (double& x : n.val.v) x = 1.0 / (1.0 + std::exp(-x));
  return push(std::move(n));
}

VarId Tape::exp_(VarId a) {
  Node n;
  n.op = Op::Exp;
  n.parents = {a};
  n.val = val(a);
  for (double& x : n.val.v) x = std::exp(x);
  return push(std::move(n));
}

VarId Tape::sqrt_(VarId a) {
  Node n;
  n.op = Op::Sqrt;
  n.parents = {a};
  n.val = val(a);
  for (double& x : n.val.v) x = std::sqrt(x);
  return push(std::move(n));
}

VarId Tape::recip(VarId a) {
  Node n;
  n.op = Op::Recip;
  n.parents = {a};
  n.val = val(a);
  for (double& x : n.val.v) x = 1.0 / x;
  return push(std::move(n));
}

VarId Tape::sum_all(VarId a) {
  Node n;
  n.op = Op::SumAll;
  n.parents = {a};
  n.val = Tensor::scalar(kernels::sum_f64(val(a).v.data(), val(a).size()));
  return push(std::move(n));
}

VarId Tape::row_sum(VarId a) {
  Node n;
  n.op = Op::RowSum;
  n.parents = {a};
  n.val = Tensor(val(a).rows, 1);
  for (std::size_t i = 0; i < val(a).rows; ++i)
    n.val.v[i] = kernels::sum_f64(val(a).v.data() + i * val(a).cols, val(a).cols);
  return push(std::move(n));
}

VarId Tape::col_sum(VarId a) {
  Node n;
  n.op = Op::ColSum;
  n.parents = {a};
  n.val = Tensor(1, val(a).cols);
  for (std::size_t i = 0; i < val(a).rows; ++i)
    kernels::axpy_f64(1.0, val(a).v.data() + i * val(a).cols, n.val.v.data(), val(a).cols);
  return push(std::move(n));
}

VarId Tape::div_rows(VarId a, VarId r) {
  check(val(r).rows == val(a).rows && val(r).cols == 1, "div_rows: divisor shape");
  Node n;
  n.op = Op::DivRows;
  n.parents = {a, r};
  n.val = val(a);
  for (std::size_t i = 0; i < n.val.rows; ++i)
    kernels::scale_f64(1.0 / val(r).v[i], n.val.v.data() + i * n.val.cols, n.val.cols);
  return push(std::move(n));
}

VarId Tape::div_cols(VarId a, VarId c) {
  check(val(c).rows == 1 && val(c).cols == val(a).cols, "div_cols: divisor shape");
  Node n;
  n.op = Op::DivCols;
  n.parents = {a, c};
  n.val = val(a);
  for (std::size_t i = 0; i < n.val.rows; ++i)
    for (std::size_t j = 0; j < n.val.cols; ++j) n.val.v[i * n.val.cols + j] /= val(c).v[j];
  return push(std::move(n));
}

VarId Tape::rows_gather(VarId a, const std::vector<std::int32_t>& rows) {
  Node n;
  n.op = Op::RowsGather;
  n.parents = {a};
  n.aux_idx = rows;
  n.val = Tensor(rows.size(), val(a).cols);
  for (std::size_t t = 0; t < rows.size(); ++t) {
    check(rows[t] >= 0 && static_cast<std::size_t>(rows[t]) < val(a).rows,
          "rows_gather: index out of range");
    const double* src = val(a).v.data() + static_cast<std::size_t>(rows[t]) * val(a).cols;
    std::copy(src, src + val(a).cols, n.val.v.data() + t * val(a).cols);
  }
  return push(std::move(n));
}

VarId Tape::rows_scatter_add(VarId a, const std::vector<std::int32_t>& rows,
                             std::size_t out_rows) {
  check(rows.size() == val(a).rows, "rows_scatter_add: index count mismatch");
  Node n;
  n.op = Op::RowsScatterAdd;
  n.parents = {a};
  n.aux_idx = rows;
  n.aux_rows = out_rows;
  n.val = Tensor(out_rows, val(a).cols);
  for (std::size_t t = 0; t < rows.size(); ++t) {
    check(rows[t] >= 0 && static_cast<std::size_t>(rows[t]) < out_rows,
          "rows_scatter_add: index out of range");
    kernels::axpy_f64(1.0, val(a).v.data() + t * val(a).cols,
                      n.val.v.data() + static_cast<std::size_t>(rows[t]) * val(a).cols,
                      val(a).cols);
  }
  return push(std::move(n));
}

VarId Tape::concat_cols(const std::vector<VarId>& parts) {
  check(!parts.empty(), "concat_cols: empty");
  std::size_t rows = val(parts[0]).rows, cols = 0;
  for (VarId p : parts) {
    check(val(p).rows == rows, "concat_cols: row mismatch");
    cols += val(p).cols;
  }
  Node n;
  n.op = Op::ConcatCols;
  n.parents = parts;
  n.val = Tensor(rows, cols);
  std::size_t off = 0;
  for (VarId p : parts) {
    const Tensor& t = val(p);
    for (std::size_t i = 0; i < rows; ++i)
      std::copy(t.v.data() + i * t.cols, t.v.data() + (i + 1) * t.cols,
                n.val.v.data() + i * cols + off);
    off += t.cols;
  }
  return push(std::move(n));
}

VarId Tape::concat_rows(const std::vector<VarId>& parts) {
  check(!parts.empty(), "concat_rows: empty");
  std::size_t cols = val(parts[0]).cols, rows = 0;
  for (VarId p : parts) {
    check(val(p).cols == cols, "concat_rows: col mismatch");
    rows += val(p).rows;
  }
  Node n;
  n.op = Op::ConcatRows;
  n.parents = parts;
  n.val = Tensor(rows, cols);
  std::size_t off = 0;
  for (VarId p : parts) {
    std::copy(val(p).v.begin(), val(p).v.end(), n.val.v.data() + off);
    off += val(p).size();
  }
  return push(std::move(n));
}

VarId Tape::softmax_rows(VarId a) {
  Node n;
  n.op = Op::SoftmaxRows;
  n.parents = {a};
  n.val = val(a);
  for (std::size_t i = 0; i < n.val.rows; ++i) {
    double* row = n.val.v.data() + i * n.val.cols;
    double m = row[0];
    for (std::size_t j = 1; j < n.val.cols; ++j) m = std::max(m, row[j]);
    double s = 0;
    for (std::size_t j = 0; j < n.val.cols; ++j) {
      row[j] = std::exp(row[j] - m);
      s += row[j];
    }
    kernels::scale_f64(1.0 / s, row, n.val.cols);
  }
  return push(std::move(n));
}

VarId Tape::cosine_rows(VarId a, VarId b) {
  check(val(a).cols == val(b).cols, "cosine_rows: dim mismatch");
  Node n;
  n.op = Op::CosineRows;
  n.parents = {a, b};
  const Tensor& ta = val(a);
  const Tensor& tb = val(b);
  n.val = Tensor(ta.rows, tb.rows);
  for (std::size_t i = 0; i < ta.rows; ++i) {
    const double* ra = ta.v.data() + i * ta.cols;
    double na = std::sqrt(kernels::dot_f64(ra, ra, ta.cols));
    for (std::size_t j = 0; j < tb.rows; ++j) {
      const double* rb = tb.v.data() + j * tb.cols;
      double nb = std::sqrt(kernels::dot_f64(rb, rb, tb.cols));
      double denom = na * nb;
      n.val.at(i, j) = denom > 0 ? kernels::dot_f64(ra, rb, ta.cols) / denom : 0.0;
    }
  }
  return push(std::move(n));
}

VarId Tape::max_scatter(VarId flat, const std::vector<std::int32_t>& bins, std::size_t nbins) {
  check(bins.size() == val(flat).size(), "max_scatter: index count mismatch");
  Node n;
  n.op = Op::MaxScatter;
  n.parents = {flat};
  n.aux_idx = bins;
  n.aux_rows = nbins;
  n.val = Tensor(1, nbins);
  std::vector<std::int32_t> argmax(nbins, -1);
  const Tensor& src = val(flat);
  for (std::size_t t = 0; t < bins.size(); ++t) {
    check(bins[t] >= 0 && static_cast<std::size_t>(bins[t]) < nbins,
          "max_scatter: bin out of range");
    std::size_t b = static_cast<std::size_t>(bins[t]);
    if (argmax[b] < 0 || src.v[t] > n.val.v[b]) {
      n.val.v[b] = src.v[t];
      argmax[b] = static_cast<std::int32_t>(t);
    }
  }
  // Stash the winner per bin after the bin list so backward can route.
  n.aux_idx.insert(n.aux_idx.end(), argmax.begin(), argmax.end());
  return push(std::move(n));
}

void Tape::backward(VarId root) {
  check(root >= 0 && static_cast<std::size_t>(root) < nodes.size(), "backward: bad root");
  check(nodes[root].val.size() == 1, "backward: root must be scalar");
  for (Node& n : nodes) {
    n.grad = Tensor(n.val.rows, n.val.cols);
  }
  nodes[root].grad.v[0] = 1.0;

  for (VarId id = root; id >= 0; --id) {
    Node& n = nodes[id];
    if (!n.requires_grad || n.op == Op::Leaf) continue;
    const Tensor& g = n.grad;
    auto want = [&](int k) { return nodes[n.parents[k]].requires_grad; };
    auto pgrad = [&](int k) -> Tensor& { return nodes[n.parents[k]].grad; };
    auto pval = [&](int k) -> const Tensor& { return nodes[n.parents[k]].val; };

    switch (n.op) {
      case Op::Leaf:
        break;
      case Op::Add:
        if (want(0)) kernels::axpy_f64(1.0, g.v.data(), pgrad(0).v.data(), g.size());
        if (want(1)) kernels::axpy_f64(1.0, g.v.data(), pgrad(1).v.data(), g.size());
        break;
      case Op::Sub:
        if (want(0)) kernels::axpy_f64(1.0, g.v.data(), pgrad(0).v.data(), g.size());
        if (want(1)) kernels::axpy_f64(-1.0, g.v.data(), pgrad(1).v.data(), g.size());
        break;
      case Op::Mul:
        if (want(0))
          for (std::size_t i = 0; i < g.size(); ++i) pgrad(0).v[i] += g.v[i] * pval(1).v[i];
        if (want(1))
          for (std::size_t i = 0; i < g.size(); ++i) pgrad(1).v[i] += g.v[i] * pval(0).v[i];
        break;
      case Op::AddRowVec:
        if (want(0)) kernels::axpy_f64(1.0, g.v.data(), pgrad(0).v.data(), g.size());
        if (want(1))
          for (std::size_t i = 0; i < g.rows; ++i)
            kernels::axpy_f64(1.0, g.v.data() + i * g.cols, pgrad(1).v.data(), g.cols);
        break;
      case Op::MulScalarVar: {
        double s = pval(1).v[0];
        if (want(0)) kernels::axpy_f64(s, g.v.data(), pgrad(0).v.data(), g.size());
        if (want(1)) pgrad(1).v[0] += kernels::dot_f64(g.v.data(), pval(0).v.data(), g.size());
        break;
      }
      case Op::ScaleConst:
        if (want(0)) kernels::axpy_f64(n.aux_scalar, g.v.data(), pgrad(0).v.data(), g.size());
        break;
      case Op::AddConst:
        if (want(0)) kernels::axpy_f64(1.0, g.v.data(), pgrad(0).v.data(), g.size());
        break;
      case Op::MatMul:
        if (want(0)) mm_nt(g, pval(1), pgrad(0));
        if (want(1)) mm_tn(pval(0), g, pgrad(1));
        break;
      case Op::MatMulNT:
        if (want(0)) mm_nn(g, pval(1), pgrad(0));
        if (want(1)) mm_tn(g, pval(0), pgrad(1));
        break;
      case Op::Tanh:
        if (want(0))
          for (std::size_t i = 0; i < g.size(); ++i)
            pgrad(0).v[i] += g.v[i] * (1.0 - n.val.v[i] * n.val.v[i]);
        break;
      case Op::Sigmoid:
        if (want(0))
          for (std::size_t i = 0; i < g.size(); ++i)
            pgrad(0).v[i] += g.v[i] * n.val.v[i] * (1.0 - n.val.v[i]);
        break;
      case Op::Exp:
        if (want(0))
          for (std::size_t i = 0; i < g.size(); ++i) pgrad(0).v[i] += g.v[i] * n.val.v[i];
        break;
      case Op::Sqrt:
        if (want(0))
          for (std::size_t i = 0; i < g.size(); ++i)
            pgrad(0).v[i] += g.v[i] * 0.5 / n.val.v[i];
        break;
      case Op::Recip:
        if (want(0))
          for (std::size_t i = 0; i < g.size(); ++i)
            pgrad(0).v[i] -= g.v[i] * n.val.v[i] * n.val.v[i];
        break;
      case Op::SumAll:
        if (want(0))
          for (std::size_t i = 0; i < pgrad(0).size(); ++i) pgrad(0).v[i] += g.v[0];
        break;
      case Op::RowSum:
        if (want(0))
          for (std::size_t i = 0; i < pgrad(0).rows; ++i)
            for (std::size_t j = 0; j < pgrad(0).cols; ++j)
              pgrad(0).v[i * pgrad(0).cols + j] += g.v[i];
        break;
      case Op::ColSum:
        if (want(0))
          for (std::size_t i = 0; i < pgrad(0).rows; ++i)
            kernels::axpy_f64(1.0, g.v.data(), pgrad(0).v.data() + i * pgrad(0).cols, g.cols);
        break;
      case Op::DivRows:
        if (want(0))
          for (std::size_t i = 0; i < g.rows; ++i)
            kernels::axpy_f64(1.0 / pval(1).v[i], g.v.data() + i * g.cols,
                              pgrad(0).v.data() + i * g.cols, g.cols);
        if (want(1))
          for (std::size_t i = 0; i < g.rows; ++i) {
            double acc = kernels::dot_f64(g.v.data() + i * g.cols, n.val.v.data() + i * g.cols,
                                          g.cols);
            pgrad(1).v[i] -= acc / pval(1).v[i];
          }
        break;
      case Op::DivCols:
        if (want(0))
          for (std::size_t i = 0; i < g.rows; ++i)
            for (std::size_t j = 0; j < g.cols; ++j)
              pgrad(0).v[i * g.cols + j] += g.v[i * g.cols + j] / pval(1).v[j];
        if (want(1))
          for (std::size_t i = 0; i < g.rows; ++i)
            for (std::size_t j = 0; j < g.cols; ++j)
              pgrad(1).v[j] -= g.v[i * g.cols + j] * n.val.v[i * g.cols + j] / pval(1).v[j];
        break;
      case Op::RowsGather:
        if (want(0))
          for (std::size_t t = 0; t < n.aux_idx.size(); ++t)
            kernels::axpy_f64(1.0, g.v.data() + t * g.cols,
                              pgrad(0).v.data() + static_cast<std::size_t>(n.aux_idx[t]) * g.cols,
                              g.cols);
        break;
      case Op::RowsScatterAdd:
        if (want(0))
          for (std::size_t t = 0; t < n.aux_idx.size(); ++t)
            kernels::axpy_f64(1.0,
                              g.v.data() + static_cast<std::size_t>(n.aux_idx[t]) * g.cols,
                              pgrad(0).v.data() + t * g.cols, g.cols);
        break;
      case Op::ConcatCols: {
        std::size_t off = 0;
        for (std::size_t k = 0; k < n.parents.size(); ++k) {
          const Tensor& pv = pval(static_cast<int>(k));
          if (nodes[n.parents[k]].requires_grad) {
            Tensor& pg = pgrad(static_cast<int>(k));
            for (std::size_t i = 0; i < g.rows; ++i)
              kernels::axpy_f64(1.0, g.v.data() + i * g.cols + off,
                                pg.v.data() + i * pv.cols, pv.cols);
          }
          off += pv.cols;
        }
        break;
      }
      case Op::ConcatRows: {
        std::size_t off = 0;
        for (std::size_t k = 0; k < n.parents.size(); ++k) {
          const Tensor& pv = pval(static_cast<int>(k));
          if (nodes[n.parents[k]].requires_grad)
            kernels::axpy_f64(1.0, g.v.data() + off, pgrad(static_cast<int>(k)).v.data(),
                              pv.size());
          off += pv.size();
        }
        break;
      }
      case Op::SoftmaxRows:
        if (want(0))
          for (std::size_t i = 0; i < g.rows; ++i) {
            const double* y = n.val.v.data() + i * g.cols;
            const double* gr = g.v.data() + i * g.cols;
            double dot = kernels::dot_f64(gr, y, g.cols);
            double* pg = pgrad(0).v.data() + i * g.cols;
            for (std::size_t j = 0; j < g.cols; ++j) pg[j] += y[j] * (gr[j] - dot);
          }
        break;
      case Op::CosineRows: {
        const Tensor& ta = pval(0);
        const Tensor& tb = pval(1);
        std::vector<double> na(ta.rows), nb(tb.rows);
        for (std::size_t i = 0; i < ta.rows; ++i)
          na[i] = std::sqrt(
              kernels::dot_f64(ta.v.data() + i * ta.cols, ta.v.data() + i * ta.cols, ta.cols));
        for (std::size_t j = 0; j < tb.rows; ++j)
          nb[j] = std::sqrt(
              kernels::dot_f64(tb.v.data() + j * tb.cols, tb.v.data() + j * tb.cols, tb.cols));
        for (std::size_t i = 0; i < ta.rows; ++i) {
          const double* ra = ta.v.data() + i * ta.cols;
          for (std::size_t j = 0; j < tb.rows; ++j) {
            double gij = g.at(i, j);
            if (gij == 0) continue;
            double denom = na[i] * nb[j];
            if (denom <= 0) continue;  // flat zero by convention at zero norm
            const double* rb = tb.v.data() + j * tb.cols;
            double y = n.val.at(i, j);
            if (want(0))
              for (std::size_t d = 0; d < ta.cols; ++d)
                pgrad(0).v[i * ta.cols + d] +=
                    gij * (rb[d] / denom - y * ra[d] / (na[i] * na[i]));
            if (want(1))
              for (std::size_t d = 0; d < ta.cols; ++d)
                pgrad(1).v[j * tb.cols + d] +=
                    gij * (ra[d] / denom - y * rb[d] / (nb[j] * nb[j]));
          }
        }
        break;
      }
      case Op::MaxScatter:
        if (want(0)) {
          const std::int32_t* argmax = n.aux_idx.data() + (n.aux_idx.size() - n.aux_rows);
          for (std::size_t b = 0; b < n.aux_rows; ++b)
            if (argmax[b] >= 0)
              pgrad(0).v[static_cast<std::size_t>(argmax[b])] += g.v[b];
        }
        break;
    }
  }
}

GradCheckReport grad_check(
    const std::vector<Tensor>& leaves,
    const std::function<VarId(Tape&, const std::vector<VarId>&)>& build, double step,
    double atol) {
  Tape tape;
  std::vector<VarId> ids;
  ids.reserve(leaves.size());
  for (const Tensor& t : leaves) ids.push_back(tape.leaf(t, true));
  VarId root = build(tape, ids);
  tape.backward(root);
  std::vector<Tensor> analytic;
  analytic.reserve(leaves.size());
  for (VarId id : ids) analytic.push_back(tape.grad(id));

  auto eval = [&](const std::vector<Tensor>& pts) {
    Tape t2;
    std::vector<VarId> ids2;
    for (const Tensor& t : pts) ids2.push_back(t2.leaf(t, false));
    return t2.val(build(t2, ids2)).v[0];
  };

  GradCheckReport rep;
  std::vector<Tensor> work = leaves;
  for (std::size_t l = 0; l < leaves.size(); ++l) {
    for (std::size_t e = 0; e < leaves[l].size(); ++e) {
      double orig = work[l].v[e];
      work[l].v[e] = orig + step;
      double jp = eval(work);
      work[l].v[e] = orig - step;
      double jm = eval(work);
      work[l].v[e] = orig;
      double numeric = (jp - jm) / (2 * step);
      double a = analytic[l].v[e];
      double abs_err = std::abs(a - numeric);
      double rel = abs_err / std::max({std::abs(a), std::abs(numeric), 1e-8});
      rep.max_abs_err = std::max(rep.max_abs_err, abs_err);
      if (abs_err > atol) rep.max_rel_err = std::max(rep.max_rel_err, rel);
      ++rep.checked;
    }
  }
  return rep;
}

}  // namespace specmatch::ad
