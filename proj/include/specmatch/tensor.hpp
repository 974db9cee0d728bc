#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

// Reverse-mode automatic differentiation over dense 2-D f64 tensors. A Tape
// owns the computation graph; ops append nodes and return integer handles.
// backward() walks the tape once in reverse, accumulating into .grad of every
// node that requires gradients. Dense math routes through the runtime-
// dispatched kernels.

namespace specmatch::ad {

struct Tensor {
  std::size_t rows = 0, cols = 0;
  std::vector<double> v;

  Tensor() = default;
  Tensor(std::size_t r, std::size_t c) : rows(r), cols(c), v(r * c, 0.0) {}
  static Tensor scalar(double x) {
    Tensor t(1, 1);
    t.v[0] = x;
    return t;
  }
  std::size_t size() const { return rows * cols; }
  double& at(std::size_t i, std::size_t j) { return v[i * cols + j]; }
  double at(std::size_t i, std::size_t j) const { return v[i * cols + j]; }
};

using VarId = std::int32_t;

enum class Op : std::uint8_t {
  Leaf,
  Add,
  Sub,
  Mul,            // elementwise
  AddRowVec,      // a[n,m] + b[1,m] broadcast
  MulScalarVar,   // a * s, s is [1,1]
  ScaleConst,     // a * aux_scalar
  AddConst,       // a + aux_scalar
  MatMul,         // [n,k] x [k,m]
  MatMulNT,       // [n,k] x [m,k]^T
  Tanh,
  Sigmoid,
  Exp,
  Sqrt,
  Recip,
  SumAll,         // -> [1,1]
  RowSum,         // [n,m] -> [n,1]
  ColSum,         // [n,m] -> [1,m]
  DivRows,        // a[n,m] / r[n,1] broadcast
  DivCols,        // a[n,m] / c[1,m] broadcast
  RowsGather,     // rows of a by aux_idx -> [idx,m]
  RowsScatterAdd, // inverse of gather into aux_rows rows
  ConcatCols,
  ConcatRows,
  SoftmaxRows,
  CosineRows,     // [na,d],[nb,d] -> [na,nb] cosine of row pairs
  MaxScatter,     // flat values max-reduced into aux_rows bins by aux_idx
};

struct Node {
  Op op = Op::Leaf;
  Tensor val;
  Tensor grad;
  std::vector<VarId> parents;
  std::vector<std::int32_t> aux_idx;
  std::size_t aux_rows = 0;
  double aux_scalar = 0;
  bool requires_grad = false;
};

class Tape {
 public:
  std::vector<Node> nodes;

  VarId leaf(Tensor value, bool requires_grad);
  VarId constant(Tensor value) { return leaf(std::move(value), false); }

  const Tensor& val(VarId id) const { return nodes[id].val; }
  const Tensor& grad(VarId id) const { return nodes[id].grad; }

  // Seeds d(root)=1 (root must be [1,1]) and accumulates gradients through
  // the whole tape.
  void backward(VarId root);

  void clear() { nodes.clear(); }
  std::size_t size() const { return nodes.size(); }

  VarId add(VarId a, VarId b);
  VarId sub(VarId a, VarId b);
  VarId mul(VarId a, VarId b);
  VarId add_rowvec(VarId a, VarId bias);
  VarId mul_scalarvar(VarId a, VarId s);
  VarId scale(VarId a, double c);
  VarId add_const(VarId a, double c);
  VarId matmul(VarId a, VarId b);
  VarId matmul_nt(VarId a, VarId b);
  VarId tanh_(VarId a);
  VarId sigmoid_(VarId a);
  VarId exp_(VarId a);
  VarId sqrt_(VarId a);
  VarId recip(VarId a);
  VarId sum_all(VarId a);
  VarId row_sum(VarId a);
  VarId col_sum(VarId a);
  VarId div_rows(VarId a, VarId r);
  VarId div_cols(VarId a, VarId c);
  VarId rows_gather(VarId a, const std::vector<std::int32_t>& rows);
  VarId rows_scatter_add(VarId a, const std::vector<std::int32_t>& rows, std::size_t out_rows);
  VarId concat_cols(const std::vector<VarId>& parts);
  VarId concat_rows(const std::vector<VarId>& parts);
  VarId softmax_rows(VarId a);
  VarId cosine_rows(VarId a, VarId b);
  VarId max_scatter(VarId flat, const std::vector<std::int32_t>& bins, std::size_t nbins);

 private:
  VarId push(Node n);
};

// Gradient verification by central differences on every leaf marked as
// requiring gradients. build must construct a scalar-rooted graph from the
// given leaf values each time it is called. Elements whose absolute error
// is at most atol are excluded from the relative-error maximum: below the
// roundoff floor of the difference quotient the relative measure is
// meaningless. atol = 0 disables the gate.
struct GradCheckReport {
  double max_abs_err = 0;
  double max_rel_err = 0;
  std::size_t checked = 0;
};

GradCheckReport grad_check(
    const std::vector<Tensor>& leaves,
    const std::function<VarId(Tape&, const std::vector<VarId>&)>& build, double step = 1e-5,
    double atol = 0);

}  // namespace specmatch::ad
