#include "specmatch/model.hpp"

#include <algorithm>
#include <cmath>
#include <istream>
#include <ostream>
#include <stdexcept>

#include <json.hpp>

#include "specmatch/kernels.hpp"

namespace specmatch {

namespace {

constexpr int kAtomFeat = 24;   // element(10) degree(7) charge(1) aromatic(1) hcount(5)
constexpr int kBondFeat = 4;
constexpr int kEnergyFeat = 9;  // scaled raw plus four sin/cos pairs
constexpr int kFormulaFeat = 11;
constexpr std::size_t kConcatPooled = 150;

inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ull;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
  return x ^ (x >> 31);
}

struct InitRng {
  std::uint64_t seed;
  std::uint64_t counter = 0;
  double uniform() {
    std::uint64_t x = splitmix64(seed ^ splitmix64(counter++));
    return static_cast<double>(x >> 11) * 0x1.0p-53;
  }
  double symmetric(double scale) { return (2.0 * uniform() - 1.0) * scale; }
};

}  // namespace

std::string variant_name(const ModelConfig& cfg) {
  switch (cfg.rag) {
    case RagStrategy::None: return "no-rag";
    case RagStrategy::Concat: return "concat";
    case RagStrategy::Hungarian: return "hungarian";
    case RagStrategy::Rrwm: return "rrwm";
    case RagStrategy::Ngm:
      return cfg.match_layer == MatchLayer::Sinkhorn ? "ngm-sinkhorn" : "ngm-softmax";
  }
  return "no-rag";
}

void apply_variant(ModelConfig& cfg, const std::string& name) {
  if (name == "no-rag" || name == "none") {
    cfg.rag = RagStrategy::None;
  } else if (name == "concat") {
    cfg.rag = RagStrategy::Concat;
  } else if (name == "hungarian") {
    cfg.rag = RagStrategy::Hungarian;
  } else if (name == "rrwm") {
    cfg.rag = RagStrategy::Rrwm;
  } else if (name == "ngm-softmax") {
    cfg.rag = RagStrategy::Ngm;
    cfg.match_layer = MatchLayer::Softmax;
  } else if (name == "ngm-sinkhorn") {
    cfg.rag = RagStrategy::Ngm;
    cfg.match_layer = MatchLayer::Sinkhorn;
  } else {
    throw std::invalid_argument("unknown variant '" + name + "'");
  }
}

std::size_t ParamStore::add(const std::string& name, ad::Tensor value) {
  if (index_.count(name)) throw std::logic_error("duplicate parameter '" + name + "'");
  index_[name] = names_.size();
  names_.push_back(name);
  values_.push_back(std::move(value));
  return names_.size() - 1;
}

std::size_t ParamStore::index_of(const std::string& name) const {
  auto it = index_.find(name);
  if (it == index_.end()) throw std::out_of_range("no parameter '" + name + "'");
  return it->second;
}

namespace {

void add_weight(ParamStore& p, InitRng& rng, const std::string& name, std::size_t in,
                std::size_t out) {
  ad::Tensor t(in, out);
  double s = 1.0 / std::sqrt(static_cast<double>(in));
  for (double& v : t.v) v = rng.symmetric(s);
  p.add(name, std::move(t));
}

void add_bias(ParamStore& p, const std::string& name, std::size_t out) {
  p.add(name, ad::Tensor(1, out));
}

void add_gnn(ParamStore& p, InitRng& rng, const std::string& g, const ModelConfig& cfg) {
  std::size_t d = cfg.hidden;
  add_weight(p, rng, g + ".in.w", kAtomFeat, d);
  add_bias(p, g + ".in.b", d);
  for (int l = 0; l < cfg.mp_layers; ++l) {
    std::string pre = g + ".l" + std::to_string(l);
    add_weight(p, rng, pre + ".msg.w", d, d);
    add_weight(p, rng, pre + ".edge.w", kBondFeat, d);
    add_weight(p, rng, pre + ".upd.w", 2 * d, d);
    add_bias(p, pre + ".upd.b", d);
  }
}

// context_scale < 1 shrinks the first-layer rows that read the root
// embedding, the root difference, and the formula difference. The matching
// MLP starts out comparing fragments by their own structure, so identical
// fragments of different molecules score near 1 before any training; the
// context blocks stay trainable.
void add_frag_mlp(ParamStore& p, InitRng& rng, const std::string& f, const ModelConfig& cfg,
                  double context_scale = 1.0) {
  std::size_t d = cfg.hidden;
  std::size_t in = 3 * d + (cfg.broken_cap + 1) + 2 * kFormulaFeat;
  add_weight(p, rng, f + ".w1", in, d);
  add_bias(p, f + ".b1", d);
  add_weight(p, rng, f + ".w2", d, d);
  add_bias(p, f + ".b2", d);
  if (context_scale != 1.0) {
    ad::Tensor& w1 = p.value(p.index_of(f + ".w1"));
    auto damp = [&](std::size_t lo, std::size_t hi) {
      for (std::size_t r = lo; r < hi; ++r)
        for (std::size_t c = 0; c < w1.cols; ++c) w1.at(r, c) *= context_scale;
    };
    damp(0, d);
    damp(2 * d, 3 * d);
    damp(in - kFormulaFeat, in);
  }
}

// The directed refinement passes start with a small output layer, keeping
// the residual near identity until training grows the context terms.
void add_dag_gnn(ParamStore& p, InitRng& rng, const std::string& g, const ModelConfig& cfg) {
  std::size_t d = cfg.hidden;
  add_weight(p, rng, g + ".w1", d, d);
  add_bias(p, g + ".b1", d);
  add_weight(p, rng, g + ".w2", d, d);
  add_bias(p, g + ".b2", d);
  ad::Tensor& w2 = p.value(p.index_of(g + ".w2"));
  for (double& v : w2.v) v *= 0.1;
}

// residual_scale < 1 shrinks the value and output projections so the block
// starts close to a row-wise identity.
void add_attention(ParamStore& p, InitRng& rng, const std::string& a, std::size_t d,
                   double residual_scale = 1.0) {
  add_weight(p, rng, a + ".q.w", d, d);
  add_weight(p, rng, a + ".k.w", d, d);
  add_weight(p, rng, a + ".v.w", d, d);
  add_weight(p, rng, a + ".f1.w", d, d);
  add_bias(p, a + ".f1.b", d);
  add_weight(p, rng, a + ".f2.w", d, d);
  add_bias(p, a + ".f2.b", d);
  if (residual_scale != 1.0) {
    for (double& v : p.value(p.index_of(a + ".v.w")).v) v *= residual_scale;
    for (double& v : p.value(p.index_of(a + ".f2.w")).v) v *= residual_scale;
  }
}

void scale_tensor(ParamStore& p, const std::string& name, double s) {
  for (double& v : p.value(p.index_of(name)).v) v *= s;
}

void add_diagonal(ParamStore& p, const std::string& name, std::size_t row0, double gain) {
  ad::Tensor& w = p.value(p.index_of(name));
  std::size_t k = std::min({static_cast<std::size_t>(kShiftCount), w.rows - row0, w.cols});
  for (std::size_t i = 0; i < k; ++i) w.at(row0 + i, i) += gain;
}

}  // namespace

Model init_model(const ModelConfig& cfg, std::uint64_t seed) {
  Model m;
  m.cfg = cfg;
  InitRng rng{splitmix64(seed ^ 0x6d6f64656cull)};
  ParamStore& p = m.params;
  std::size_t d = cfg.hidden, td = cfg.tdim;

  add_gnn(p, rng, "gt", cfg);
  add_frag_mlp(p, rng, "ft", cfg);
  bool needs_ref_dag = cfg.rag == RagStrategy::Hungarian || cfg.rag == RagStrategy::Rrwm ||
                       cfg.rag == RagStrategy::Ngm;
  if (needs_ref_dag) {
    add_gnn(p, rng, "gr", cfg);
    add_frag_mlp(p, rng, "fr", cfg);
    add_weight(p, rng, "set.proj.w", kShiftCount + 2 * kEnergyFeat, td);
    add_bias(p, "set.proj.b", td);
    add_attention(p, rng, "set.att", td, 0.1);
    scale_tensor(p, "set.proj.w", 0.3);
    add_diagonal(p, "set.proj.w", 0, 1.0);
  }
  if (cfg.rag == RagStrategy::Ngm) {
    if (cfg.separate_match_gnn) {
      add_gnn(p, rng, "gm", cfg);
      add_frag_mlp(p, rng, "fm", cfg, 0.1);
    }
    add_dag_gnn(p, rng, "dagf", cfg);
    add_dag_gnn(p, rng, "dagr", cfg);
  }
  if (cfg.rag == RagStrategy::Concat) {
    add_weight(p, rng, "cx.w1", kConcatPooled, d);
    add_bias(p, "cx.b1", d);
    add_weight(p, rng, "cx.w2", d, d);
    add_bias(p, "cx.b2", d);
  }
  std::size_t head_in = 2 * d + td + 2 + kEnergyFeat;
  add_weight(p, rng, "head.proj.w", head_in, d);
  add_bias(p, "head.proj.b", d);
  add_attention(p, rng, "head.att", d, 0.1);
  add_weight(p, rng, "head.o1.w", d, d);
  add_bias(p, "head.o1.b", d);
  add_weight(p, rng, "head.o2.w", d, kShiftCount);
  add_bias(p, "head.o2.b", kShiftCount);
  // The head starts as an approximate pass-through of the aligned reference
  // intensities: a damped random layer plus a diagonal from the reference
  // table slice to the outputs, with sigmoid(8t - 4) as the readout. With a
  // sensible matching the model predicts a near-copy of the reference at
  // step 0, so the matching branch receives meaningful gradients from the
  // start instead of noise from an uncalibrated head.
  scale_tensor(p, "head.proj.w", 0.3);
  add_diagonal(p, "head.proj.w", 2 * d, 1.0);
  scale_tensor(p, "head.o1.w", 0.3);
  add_diagonal(p, "head.o1.w", 0, 1.0);
  scale_tensor(p, "head.o2.w", 0.3);
  add_diagonal(p, "head.o2.w", 0, 8.0);
  for (double& v : p.value(p.index_of("head.o2.b")).v) v = -4.0;
  return m;
}

TapeBinding bind_params(ad::Tape& tape, Model& m, bool requires_grad) {
  TapeBinding b;
  b.tape = &tape;
  b.ids.reserve(m.params.size());
  for (std::size_t i = 0; i < m.params.size(); ++i)
    b.ids.push_back(tape.leaf(m.params.value(i), requires_grad));
  return b;
}

namespace {

using detail::BlockCtx;

ad::Tensor atom_feature_tensor(const MolGraph& g) {
  ad::Tensor x(g.atoms.size(), kAtomFeat);
  for (std::size_t v = 0; v < g.atoms.size(); ++v) {
    const Atom& a = g.atoms[v];
    double* row = x.v.data() + v * kAtomFeat;
    row[static_cast<std::size_t>(a.element)] = 1.0;
    int deg = std::min(g.degree(static_cast<std::uint32_t>(v)), 6);
    row[10 + deg] = 1.0;
    row[17] = a.charge / 4.0;
    row[18] = a.aromatic ? 1.0 : 0.0;
    row[19 + std::min<int>(a.hydrogens, 4)] = 1.0;
  }
  return x;
}

ad::Tensor energy_feature_row(double e) {
  ad::Tensor t(1, kEnergyFeat);
  t.v[0] = e / 40.0;
  const double scales[4] = {2, 8, 32, 128};
  for (int k = 0; k < 4; ++k) {
    t.v[1 + 2 * k] = std::sin(e / scales[k]);
    t.v[2 + 2 * k] = std::cos(e / scales[k]);
  }
  return t;
}

ad::Tensor repeat_rows(const ad::Tensor& row, std::size_t n) {
  ad::Tensor t(n, row.cols);
  for (std::size_t i = 0; i < n; ++i)
    std::copy(row.v.begin(), row.v.end(), t.v.data() + i * row.cols);
  return t;
}

ad::Tensor formula_features(const Formula& f) {
  ad::Tensor t(1, kFormulaFeat);
  for (std::size_t i = 0; i < kElementCount; ++i) t.v[i] = f.counts[i] * 0.25;
  t.v[kElementCount] = f.charge;
  return t;
}

}  // namespace

namespace detail {

// Message-passing encoder over one molecular graph, sum-pooled to [1, d].
ad::VarId gnn_molecule(BlockCtx& c, const std::string& g, const MolGraph& mol) {
  const std::size_t n = mol.atoms.size();
  ad::VarId h = c.tape.tanh_(c.tape.add_rowvec(
      c.tape.matmul(c.tape.constant(atom_feature_tensor(mol)), c.p(g + ".in.w")),
      c.p(g + ".in.b")));

  std::vector<std::int32_t> src, dst;
  src.reserve(mol.bonds.size() * 2);
  dst.reserve(mol.bonds.size() * 2);
  ad::Tensor ef(mol.bonds.size() * 2, kBondFeat);
  for (std::size_t i = 0; i < mol.bonds.size(); ++i) {
    const Bond& b = mol.bonds[i];
    src.push_back(static_cast<std::int32_t>(b.a));
    dst.push_back(static_cast<std::int32_t>(b.b));
    src.push_back(static_cast<std::int32_t>(b.b));
    dst.push_back(static_cast<std::int32_t>(b.a));
    ef.v[(2 * i) * kBondFeat + (static_cast<int>(b.order) - 1)] = 1.0;
    ef.v[(2 * i + 1) * kBondFeat + (static_cast<int>(b.order) - 1)] = 1.0;
  }
  ad::VarId efeat = src.empty() ? -1 : c.tape.constant(std::move(ef));

  for (int l = 0; l < c.m.cfg.mp_layers; ++l) {
    std::string pre = g + ".l" + std::to_string(l);
    ad::VarId msgs;
    if (src.empty()) {
      msgs = c.tape.constant(ad::Tensor(n, c.m.cfg.hidden));
    } else {
      ad::VarId gathered = c.tape.rows_gather(h, src);
      ad::VarId mi = c.tape.add(c.tape.matmul(gathered, c.p(pre + ".msg.w")),
                                c.tape.matmul(efeat, c.p(pre + ".edge.w")));
      msgs = c.tape.rows_scatter_add(mi, dst, n);
    }
    h = c.tape.tanh_(c.tape.add_rowvec(
        c.tape.matmul(c.tape.concat_cols({h, msgs}), c.p(pre + ".upd.w")),
        c.p(pre + ".upd.b")));
  }
  return c.tape.col_sum(h);
}

// Per-fragment embedding: molecule GNN of the fragment, contrasted with the
// root, plus break-count and formula descriptors, through a two-layer MLP.
ad::VarId fragment_embed(BlockCtx& c, const std::string& g, const std::string& f,
                         const FragmentationDag& dag) {
  ad::VarId root_emb = gnn_molecule(c, g, dag.fragments[0].graph);
  const Formula& root_formula = dag.fragments[0].formula;

  std::vector<ad::VarId> rows;
  rows.reserve(dag.fragments.size());
  for (const FragmentNode& node : dag.fragments) {
    ad::VarId emb = node.id == 0 ? root_emb : gnn_molecule(c, g, node.graph);
    ad::Tensor consts(1, (c.m.cfg.broken_cap + 1) + 2 * kFormulaFeat);
    consts.v[std::min(node.broken_bonds, c.m.cfg.broken_cap)] = 1.0;
    ad::Tensor ff = formula_features(node.formula);
    Formula diff = root_formula;
    for (std::size_t i = 0; i < kElementCount; ++i) diff.counts[i] -= node.formula.counts[i];
    diff.charge -= node.formula.charge;
    ad::Tensor fd = formula_features(diff);
    std::copy(ff.v.begin(), ff.v.end(),
              consts.v.begin() + (c.m.cfg.broken_cap + 1));
    std::copy(fd.v.begin(), fd.v.end(),
              consts.v.begin() + (c.m.cfg.broken_cap + 1) + kFormulaFeat);
    rows.push_back(c.tape.concat_cols(
        {root_emb, emb, c.tape.sub(root_emb, emb), c.tape.constant(std::move(consts))}));
  }
  ad::VarId x = c.tape.concat_rows(rows);
  ad::VarId h1 = c.tape.tanh_(
      c.tape.add_rowvec(c.tape.matmul(x, c.p(f + ".w1")), c.p(f + ".b1")));
  return c.tape.tanh_(
      c.tape.add_rowvec(c.tape.matmul(h1, c.p(f + ".w2")), c.p(f + ".b2")));
}

// Residual refinement along the fragmentation DAG, one pass with the edges
// as-is and one reversed. With no edges both passes contribute zero.
ad::VarId dag_embed(BlockCtx& c, ad::VarId h, const FragmentationDag& dag) {
  const std::size_t n = dag.fragments.size();
  auto pass = [&](const std::string& g, bool reversed) -> ad::VarId {
    ad::VarId m;
    if (dag.edges.empty()) {
      m = c.tape.constant(ad::Tensor(n, c.m.cfg.hidden));
    } else {
      std::vector<std::int32_t> src, dst;
      src.reserve(dag.edges.size());
      dst.reserve(dag.edges.size());
      for (auto [p, ch] : dag.edges) {
        src.push_back(static_cast<std::int32_t>(reversed ? ch : p));
        dst.push_back(static_cast<std::int32_t>(reversed ? p : ch));
      }
      m = c.tape.rows_scatter_add(c.tape.rows_gather(h, src), dst, n);
    }
    ad::VarId t = c.tape.tanh_(
        c.tape.add_rowvec(c.tape.matmul(m, c.p(g + ".w1")), c.p(g + ".b1")));
    return c.tape.add_rowvec(c.tape.matmul(t, c.p(g + ".w2")), c.p(g + ".b2"));
  };
  return c.tape.add(c.tape.add(h, pass("dagf", false)), pass("dagr", true));
}

ad::VarId attention_block(BlockCtx& c, const std::string& a, ad::VarId x, std::size_t d) {
  ad::VarId q = c.tape.matmul(x, c.p(a + ".q.w"));
  ad::VarId k = c.tape.matmul(x, c.p(a + ".k.w"));
  ad::VarId v = c.tape.matmul(x, c.p(a + ".v.w"));
  ad::VarId att = c.tape.softmax_rows(
      c.tape.scale(c.tape.matmul_nt(q, k), 1.0 / std::sqrt(static_cast<double>(d))));
  ad::VarId x1 = c.tape.add(x, c.tape.matmul(att, v));
  ad::VarId ff = c.tape.add_rowvec(
      c.tape.matmul(c.tape.tanh_(c.tape.add_rowvec(c.tape.matmul(x1, c.p(a + ".f1.w")),
                                                   c.p(a + ".f1.b"))),
                    c.p(a + ".f2.w")),
      c.p(a + ".f2.b"));
  return c.tape.add(x1, ff);
}

// Reference intensity channels (one per collision energy) embedded per
// fragment and averaged. Both the channel energy and the queried target
// energy condition the embedding.
ad::VarId ref_intensity_embed(BlockCtx& c, const SampleInput& s) {
  const std::size_t nr = s.reference->fragments.size();
  ad::VarId acc = -1;
  for (const SampleInput::RefChannel& ch : s.ref_channels) {
    ad::Tensor in(nr, kShiftCount);
    for (std::size_t i = 0; i < nr; ++i)
      for (int k = 0; k < kShiftCount; ++k) in.at(i, k) = ch.table->table[i][k];
    ad::VarId x = c.tape.concat_cols(
        {c.tape.constant(std::move(in)),
         c.tape.constant(repeat_rows(energy_feature_row(ch.energy), nr)),
         c.tape.constant(repeat_rows(energy_feature_row(s.target_energy), nr))});
    ad::VarId t0 = c.tape.tanh_(
        c.tape.add_rowvec(c.tape.matmul(x, c.p("set.proj.w")), c.p("set.proj.b")));
    ad::VarId t1 = attention_block(c, "set.att", t0, c.m.cfg.tdim);
    acc = acc < 0 ? t1 : c.tape.add(acc, t1);
  }
  return c.tape.scale(acc, 1.0 / static_cast<double>(s.ref_channels.size()));
}

// Differentiable balanced matching; mirrors the numeric sinkhorn exactly
// (same shift, same normalization order, same stopping rule) so the two
// paths can be cross-checked.
ad::VarId sinkhorn_match(BlockCtx& c, ad::VarId scores) {
  const ModelConfig& cfg = c.m.cfg;
  const ad::Tensor& sv = c.tape.val(scores);
  const std::size_t rows = sv.rows, cols = sv.cols;
  const std::size_t n = std::max(rows, cols);
  double gmax = -1e300;
  for (double x : sv.v) gmax = std::max(gmax, x);
  const double pad = 0.0;
  if (rows != cols) gmax = std::max(gmax, pad);

  ad::VarId a = c.tape.exp_(c.tape.scale(c.tape.add_const(scores, -gmax), 1.0 / cfg.sinkhorn_tau));
  if (cols < n) {
    ad::Tensor right(rows, n - cols);
    std::fill(right.v.begin(), right.v.end(), std::exp((pad - gmax) / cfg.sinkhorn_tau));
    a = c.tape.concat_cols({a, c.tape.constant(std::move(right))});
  }
  if (rows < n) {
    ad::Tensor bottom(n - rows, n);
    std::fill(bottom.v.begin(), bottom.v.end(), std::exp((pad - gmax) / cfg.sinkhorn_tau));
    a = c.tape.concat_rows({a, c.tape.constant(std::move(bottom))});
  }
  for (int it = 0; it < cfg.sinkhorn_iters; ++it) {
    a = c.tape.div_rows(a, c.tape.row_sum(a));
    a = c.tape.div_cols(a, c.tape.col_sum(a));
    const ad::Tensor& av = c.tape.val(a);
    double dev = 0;
    for (std::size_t i = 0; i < n; ++i)
      dev = std::max(dev,
                     std::abs(kernels::sum_f64(av.v.data() + i * n, n) - 1.0));
    if (dev < cfg.sinkhorn_eps) break;
  }
  if (rows == n && cols == n) return a;
  std::vector<std::int32_t> keep(rows);
  for (std::size_t i = 0; i < rows; ++i) keep[i] = static_cast<std::int32_t>(i);
  ad::VarId top = c.tape.rows_gather(a, keep);
  if (cols == n) return top;
  ad::Tensor sel(n, cols);
  for (std::size_t j = 0; j < cols; ++j) sel.at(j, j) = 1.0;
  return c.tape.matmul(top, c.tape.constant(std::move(sel)));
}

ad::VarId intensity_head(BlockCtx& c, ad::VarId head_in) {
  ad::VarId x0 = c.tape.tanh_(c.tape.add_rowvec(
      c.tape.matmul(head_in, c.p("head.proj.w")), c.p("head.proj.b")));
  ad::VarId x1 = attention_block(c, "head.att", x0, c.m.cfg.hidden);
  ad::VarId o1 = c.tape.tanh_(
      c.tape.add_rowvec(c.tape.matmul(x1, c.p("head.o1.w")), c.p("head.o1.b")));
  return c.tape.sigmoid_(
      c.tape.add_rowvec(c.tape.matmul(o1, c.p("head.o2.w")), c.p("head.o2.b")));
}

}  // namespace detail

namespace {

RagStrategy effective_rag(const ModelConfig& cfg, const SampleInput& s) {
  switch (cfg.rag) {
    case RagStrategy::None:
      return RagStrategy::None;
    case RagStrategy::Concat:
      return s.ref_binned ? RagStrategy::Concat : RagStrategy::None;
    case RagStrategy::Hungarian:
    case RagStrategy::Rrwm:
      return (s.reference && !s.ref_channels.empty() && s.fixed_soft && s.fixed_affinity)
                 ? cfg.rag
                 : RagStrategy::None;
    case RagStrategy::Ngm:
      return (s.reference && !s.ref_channels.empty()) ? cfg.rag : RagStrategy::None;
  }
  return RagStrategy::None;
}

ad::Tensor mat_to_tensor(const Mat& m) {
  ad::Tensor t(m.rows, m.cols);
  t.v = m.v;
  return t;
}

}  // namespace

ForwardResult forward(ad::Tape& tape, const TapeBinding& bind, const Model& m,
                      const SampleInput& sample) {
  if (!sample.target) throw std::invalid_argument("forward: target DAG required");
  detail::BlockCtx c{tape, bind, m};
  const ModelConfig& cfg = m.cfg;
  const std::size_t n = sample.target->fragments.size();
  const std::size_t d = cfg.hidden, td = cfg.tdim;

  ForwardResult res;
  ad::VarId ht = detail::fragment_embed(c, "gt", "ft", *sample.target);

  RagStrategy rag = effective_rag(cfg, sample);
  ad::VarId ref_emb, ref_tab, match_scores, tan_col;
  switch (rag) {
    case RagStrategy::None: {
      ref_emb = tape.constant(ad::Tensor(n, d));
      ref_tab = tape.constant(ad::Tensor(n, td));
      match_scores = tape.constant(ad::Tensor(n, 1));
      tan_col = tape.constant(ad::Tensor(n, 1));
      break;
    }
    case RagStrategy::Concat: {
      // Coarse profile of the retrieved spectrum: window-max pooling down to
      // a fixed width, then a two-layer MLP, broadcast to every fragment.
      ad::Tensor pooled(1, kConcatPooled);
      const std::vector<double>& b = *sample.ref_binned;
      const std::size_t win = kSpectrumBins / kConcatPooled;
      for (std::size_t w = 0; w < kConcatPooled; ++w) {
        double mx = 0;
        for (std::size_t i = w * win; i < (w + 1) * win && i < b.size(); ++i)
          mx = std::max(mx, b[i]);
        pooled.v[w] = mx;
      }
      ad::VarId e1 = tape.tanh_(tape.add_rowvec(
          tape.matmul(tape.constant(std::move(pooled)), c.p("cx.w1")), c.p("cx.b1")));
      ad::VarId e2 = tape.tanh_(
          tape.add_rowvec(tape.matmul(e1, c.p("cx.w2")), c.p("cx.b2")));
      ad::Tensor ones(n, 1);
      std::fill(ones.v.begin(), ones.v.end(), 1.0);
      ref_emb = tape.matmul(tape.constant(std::move(ones)), e2);
      ref_tab = tape.constant(ad::Tensor(n, td));
      match_scores = tape.constant(ad::Tensor(n, 1));
      ad::Tensor tc(n, 1);
      std::fill(tc.v.begin(), tc.v.end(), sample.mol_tanimoto);
      tan_col = tape.constant(std::move(tc));
      break;
    }
    case RagStrategy::Hungarian:
    case RagStrategy::Rrwm:
    case RagStrategy::Ngm: {
      ad::VarId hr = detail::fragment_embed(c, "gr", "fr", *sample.reference);
      ad::VarId tr = detail::ref_intensity_embed(c, sample);
      ad::VarId soft, affinity;
      if (rag == RagStrategy::Ngm) {
        ad::VarId hmt, hmr;
        if (cfg.separate_match_gnn) {
          hmt = detail::fragment_embed(c, "gm", "fm", *sample.target);
          hmr = detail::fragment_embed(c, "gm", "fm", *sample.reference);
        } else {
          hmt = ht;
          hmr = hr;
        }
        ad::VarId bt = detail::dag_embed(c, hmt, *sample.target);
        ad::VarId br = detail::dag_embed(c, hmr, *sample.reference);
        affinity = tape.cosine_rows(bt, br);
        soft = cfg.match_layer == MatchLayer::Sinkhorn
                   ? sinkhorn_match(c, affinity)
                   : tape.softmax_rows(tape.scale(affinity, 1.0 / cfg.match_tau));
      } else {
        soft = tape.constant(mat_to_tensor(*sample.fixed_soft));
        affinity = tape.constant(mat_to_tensor(*sample.fixed_affinity));
      }
      res.match_soft = soft;
      res.match_affinity = affinity;
      ref_emb = tape.matmul(soft, hr);
      ref_tab = tape.matmul(soft, tr);
      match_scores = tape.row_sum(tape.mul(soft, affinity));
      ad::Tensor tc(n, 1);
      std::fill(tc.v.begin(), tc.v.end(), sample.mol_tanimoto);
      tan_col = tape.constant(std::move(tc));
      break;
    }
  }
  res.matching_scores = match_scores;

  ad::VarId head_in = tape.concat_cols(
      {ht, ref_emb, ref_tab, match_scores, tan_col,
       tape.constant(repeat_rows(energy_feature_row(sample.target_energy), n))});
  res.intensities = detail::intensity_head(c, head_in);
  return res;
}

LossTarget build_loss_target(const FragmentationDag& dag, double adduct_offset,
                             const BinnedSpectrum& truth) {
  LossTarget lt;
  const std::size_t n = dag.fragments.size();
  std::vector<std::int64_t> raw(n * kShiftCount, -1);
  std::vector<std::int64_t> support;
  for (std::size_t i = 0; i < n; ++i) {
    auto masses = shifted_masses(dag.fragments[i]);
    for (int k = 0; k < kShiftCount; ++k) {
      double mz = masses[k] + adduct_offset;
      if (!(mz > 0)) continue;
      std::size_t b = bin_index(mz);
      if (b >= kSpectrumBins) continue;
      raw[i * kShiftCount + k] = static_cast<std::int64_t>(b);
      support.push_back(static_cast<std::int64_t>(b));
    }
  }
  for (std::size_t b = 0; b < truth.values.size(); ++b)
    if (truth.values[b] > 0) support.push_back(static_cast<std::int64_t>(b));
  std::sort(support.begin(), support.end());
  support.erase(std::unique(support.begin(), support.end()), support.end());

  const std::size_t trash = support.size();
  lt.entry_bins.assign(n * kShiftCount, static_cast<std::int32_t>(trash));
  for (std::size_t t = 0; t < raw.size(); ++t) {
    if (raw[t] < 0) continue;
    auto it = std::lower_bound(support.begin(), support.end(), raw[t]);
    lt.entry_bins[t] = static_cast<std::int32_t>(it - support.begin());
  }
  lt.target_vec.assign(trash + 1, 0.0);
  for (std::size_t s = 0; s < support.size(); ++s)
    lt.target_vec[s] = truth.values[static_cast<std::size_t>(support[s])];
  return lt;
}

ad::VarId cosine_loss(ad::Tape& tape, ad::VarId pred, const LossTarget& target) {
  ad::VarId pb = tape.max_scatter(pred, target.entry_bins, target.target_vec.size());
  ad::Tensor tv(1, target.target_vec.size());
  tv.v = target.target_vec;
  double nb = std::sqrt(kernels::dot_f64(tv.v.data(), tv.v.data(), tv.v.size()));
  nb = std::max(nb, 1e-12);
  ad::VarId tvc = tape.constant(std::move(tv));
  ad::VarId dot = tape.sum_all(tape.mul(pb, tvc));
  ad::VarId na = tape.sqrt_(tape.add_const(tape.sum_all(tape.mul(pb, pb)), 1e-18));
  ad::VarId cosv = tape.mul_scalarvar(dot, tape.recip(tape.scale(na, nb)));
  return tape.add_const(tape.scale(cosv, -1.0), 1.0);
}

Mat predict_intensities(Model& m, const SampleInput& sample) {
  ad::Tape tape;
  TapeBinding bind = bind_params(tape, m, false);
  ForwardResult fr = forward(tape, bind, m, sample);
  const ad::Tensor& t = tape.val(fr.intensities);
  Mat out(t.rows, t.cols);
  out.v = t.v;
  return out;
}

TrainCurve train(Model& m, const std::vector<TrainItem>& items, const TrainConfig& cfg) {
  TrainCurve curve;
  std::vector<ad::Tensor> velocity;
  velocity.reserve(m.params.size());
  for (std::size_t i = 0; i < m.params.size(); ++i)
    velocity.emplace_back(m.params.value(i).rows, m.params.value(i).cols);

  std::uint64_t rng_state = splitmix64(cfg.seed ^ 0x747261696eull);
  auto next_u64 = [&rng_state]() { return rng_state = splitmix64(rng_state); };

  std::vector<std::size_t> order(items.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;

  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    for (std::size_t i = order.size(); i > 1; --i)
      std::swap(order[i - 1], order[next_u64() % i]);
    double lr = cfg.lr * std::pow(cfg.lr_decay, epoch);
    double loss_sum = 0;
    std::size_t count = 0;

    for (std::size_t oi = 0; oi < order.size(); ++oi) {
      const TrainItem& item = items[order[oi]];
      if (item.variants.empty()) continue;
      std::size_t vi = (static_cast<std::size_t>(epoch) + order[oi]) % item.variants.size();

      ad::Tape tape;
      TapeBinding bind = bind_params(tape, m, true);
      ForwardResult fr = forward(tape, bind, m, item.variants[vi]);
      ad::VarId loss = cosine_loss(tape, fr.intensities, item.targets[vi]);
      double lv = tape.val(loss).v[0];
      if (!std::isfinite(lv))
        throw std::runtime_error("train: non-finite loss at epoch " + std::to_string(epoch) +
                                 ", item " + std::to_string(order[oi]));
      loss_sum += lv;
      ++count;
      tape.backward(loss);

      double norm2 = 0;
      for (std::size_t pi = 0; pi < m.params.size(); ++pi) {
        const ad::Tensor& g = tape.grad(bind.ids[pi]);
        norm2 += kernels::dot_f64(g.v.data(), g.v.data(), g.size());
      }
      double norm = std::sqrt(norm2);
      double scale = norm > cfg.clip_norm && norm > 0 ? cfg.clip_norm / norm : 1.0;

      for (std::size_t pi = 0; pi < m.params.size(); ++pi) {
        const ad::Tensor& g = tape.grad(bind.ids[pi]);
        ad::Tensor& v = velocity[pi];
        ad::Tensor& w = m.params.value(pi);
        kernels::scale_f64(cfg.momentum, v.v.data(), v.size());
        kernels::axpy_f64(-lr * scale, g.v.data(), v.v.data(), v.size());
        kernels::axpy_f64(1.0, v.v.data(), w.v.data(), w.size());
      }
    }
    curve.epoch_mean_loss.push_back(count ? loss_sum / count : 0.0);
  }
  return curve;
}

namespace {

nlohmann::ordered_json config_to_json(const ModelConfig& cfg) {
  nlohmann::ordered_json j;
  j["hidden"] = cfg.hidden;
  j["mp_layers"] = cfg.mp_layers;
  j["tdim"] = cfg.tdim;
  j["match_tau"] = cfg.match_tau;
  j["sinkhorn_tau"] = cfg.sinkhorn_tau;
  j["sinkhorn_iters"] = cfg.sinkhorn_iters;
  j["sinkhorn_eps"] = cfg.sinkhorn_eps;
  j["variant"] = variant_name(cfg);
  j["separate_match_gnn"] = cfg.separate_match_gnn;
  j["broken_cap"] = cfg.broken_cap;
  j["fp_radius"] = cfg.fp.radius;
  j["fp_nbits"] = cfg.fp.nbits;
  return j;
}

ModelConfig config_from_json(const nlohmann::json& j) {
  ModelConfig cfg;
  cfg.hidden = j.at("hidden").get<int>();
  cfg.mp_layers = j.at("mp_layers").get<int>();
  cfg.tdim = j.at("tdim").get<int>();
  cfg.match_tau = j.at("match_tau").get<double>();
  cfg.sinkhorn_tau = j.at("sinkhorn_tau").get<double>();
  cfg.sinkhorn_iters = j.at("sinkhorn_iters").get<int>();
  cfg.sinkhorn_eps = j.at("sinkhorn_eps").get<double>();
  apply_variant(cfg, j.at("variant").get<std::string>());
  cfg.separate_match_gnn = j.at("separate_match_gnn").get<bool>();
  cfg.broken_cap = j.at("broken_cap").get<int>();
  cfg.fp.radius = j.at("fp_radius").get<int>();
  cfg.fp.nbits = j.at("fp_nbits").get<std::size_t>();
  return cfg;
}

}  // namespace

void save_model(const Model& m, std::ostream& out) {
  nlohmann::ordered_json j;
  j["format"] = "model-v1";
  j["config"] = config_to_json(m.cfg);
  j["tensors"] = nlohmann::ordered_json::array();
  for (std::size_t i = 0; i < m.params.size(); ++i) {
    const ad::Tensor& t = m.params.value(i);
    nlohmann::ordered_json e;
    e["name"] = m.params.name(i);
    e["rows"] = t.rows;
    e["cols"] = t.cols;
    e["data"] = t.v;
    j["tensors"].push_back(std::move(e));
  }
  out << j.dump() << "\n";
}

Model load_model(std::istream& in) {
  nlohmann::json j = nlohmann::json::parse(in);
  if (!j.contains("format") || j["format"] != "model-v1")
    throw std::invalid_argument("load_model: unrecognized format tag");
  Model m;
  m.cfg = config_from_json(j.at("config"));
  for (const auto& e : j.at("tensors")) {
    ad::Tensor t(e.at("rows").get<std::size_t>(), e.at("cols").get<std::size_t>());
    const auto& data = e.at("data");
    if (data.size() != t.size())
      throw std::invalid_argument("load_model: tensor size mismatch");
    for (std::size_t i = 0; i < t.size(); ++i) t.v[i] = data[i].get<double>();
    m.params.add(e.at("name").get<std::string>(), std::move(t));
  }
  return m;
}

}  // namespace specmatch
