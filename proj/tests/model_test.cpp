#include <doctest.h>

#include <cmath>
#include <sstream>
#include <stdexcept>
#include <tuple>
#include <vector>

#include "specmatch/evalkit.hpp"
#include "specmatch/gradcheck.hpp"
#include "specmatch/model.hpp"
#include "specmatch/synth.hpp"
#include "testutil.hpp"

using namespace specmatch;
using testutil::Rng;

namespace {

struct Fixture {
  SyntheticDataset data;
  RefStore refs;
};

const Fixture& fx() {
  static Fixture* f = [] {
    auto* out = new Fixture;
    SynthConfig sc;
    sc.molecules = 40;
    out->data = synth_generate(sc, 11);
    out->refs = build_ref_store(out->data, out->data.train, sc.fp);
    return out;
  }();
  return *f;
}

bool same_tensor(const ad::Tensor& a, const ad::Tensor& b) {
  return a.rows == b.rows && a.cols == b.cols && a.v == b.v;
}

bool same_params(const Model& a, const Model& b) {
  if (a.params.size() != b.params.size()) return false;
  for (std::size_t i = 0; i < a.params.size(); ++i) {
    if (a.params.name(i) != b.params.name(i)) return false;
    if (!same_tensor(a.params.value(i), b.params.value(i))) return false;
  }
  return true;
}

// Wiring knobs excluded; the remaining fields must agree across variants.
auto shared_fields(const ModelConfig& c) {
  return std::tuple(c.hidden, c.mp_layers, c.tdim, c.match_tau, c.sinkhorn_tau, c.sinkhorn_iters,
                    c.sinkhorn_eps, c.separate_match_gnn, c.broken_cap, c.fp.radius, c.fp.nbits);
}

}  // namespace

TEST_CASE("model: every registered gradient check passes") {
  for (const GradCase& gc : run_grad_checks(1)) {
    INFO(gc.name, " max_rel ", gc.report.max_rel_err, " tol ", gc.tolerance);
    CHECK(gc.passed);
    CHECK(gc.report.checked > 0);
  }
}

TEST_CASE("model: initialization is seed deterministic") {
  ModelConfig cfg;
  Model a = init_model(cfg, 7);
  Model b = init_model(cfg, 7);
  Model c = init_model(cfg, 8);
  CHECK(same_params(a, b));
  CHECK_FALSE(same_params(a, c));
}

TEST_CASE("model: checkpoint round trip is bit exact") {
  ModelConfig cfg;
  apply_variant(cfg, "ngm-sinkhorn");
  Model m = init_model(cfg, 3);
  std::stringstream buf;
  save_model(m, buf);
  Model back = load_model(buf);
  CHECK(back.cfg.hidden == m.cfg.hidden);
  CHECK(back.cfg.tdim == m.cfg.tdim);
  CHECK(back.cfg.rag == m.cfg.rag);
  CHECK(back.cfg.match_layer == m.cfg.match_layer);
  CHECK(same_params(m, back));

  const Fixture& f = fx();
  PreparedSample ps = prepare_sample(f.refs, f.data.molecules[f.data.test[0]], 20.0, m.cfg, {});
  Mat a = predict_intensities(m, ps.input);
  Mat b = predict_intensities(back, ps.input);
  CHECK(a.v == b.v);
}

TEST_CASE("model: molecule embedding is invariant to atom order") {
  ModelConfig cfg;
  Model m = init_model(cfg, 5);
  MolGraph g = parse_smiles("CC(C)C(N)CO");
  Rng rng(17);
  ad::Tape tape;
  TapeBinding bind = bind_params(tape, m, false);
  detail::BlockCtx c{tape, bind, m};
  const ad::Tensor base = tape.val(detail::gnn_molecule(c, "gt", g));
  for (int trial = 0; trial < 5; ++trial) {
    MolGraph p = testutil::permute_atoms(g, testutil::random_permutation(rng, g.atoms.size()));
    const ad::Tensor got = tape.val(detail::gnn_molecule(c, "gt", p));
    REQUIRE(got.size() == base.size());
    for (std::size_t i = 0; i < base.size(); ++i)
      CHECK(std::fabs(got.v[i] - base.v[i]) <= 1e-9);
  }
}

TEST_CASE("model: zeroed parameters embed everything to zero") {
  ModelConfig cfg;
  Model m = init_model(cfg, 5);
  for (std::size_t i = 0; i < m.params.size(); ++i)
    for (double& v : m.params.value(i).v) v = 0.0;
  ad::Tape tape;
  TapeBinding bind = bind_params(tape, m, false);
  detail::BlockCtx c{tape, bind, m};
  const ad::Tensor e = tape.val(detail::gnn_molecule(c, "gt", parse_smiles("CCO")));
  for (double v : e.v) CHECK(v == 0.0);
}

TEST_CASE("model: dag update is the identity on an edgeless graph") {
  ModelConfig cfg;
  Model m = init_model(cfg, 9);
  FragmentationDag dag = testutil::skeleton_dag(3, {});
  Rng rng(29);
  ad::Tensor h(3, static_cast<std::size_t>(cfg.hidden));
  for (double& v : h.v) v = rng.uniform(-1, 1);
  ad::Tape tape;
  TapeBinding bind = bind_params(tape, m, false);
  detail::BlockCtx c{tape, bind, m};
  ad::VarId hid = tape.leaf(h, false);
  const ad::Tensor out = tape.val(detail::dag_embed(c, hid, dag));
  CHECK(out.v == h.v);
}

TEST_CASE("model: learned matching forward pass has coherent shapes") {
  const Fixture& f = fx();
  ModelConfig cfg;
  apply_variant(cfg, "ngm-softmax");
  Model m = init_model(cfg, 1);
  PreparedSample ps = prepare_sample(f.refs, f.data.molecules[f.data.test[1]], 20.0, cfg, {});
  REQUIRE(ps.input.reference != nullptr);
  ad::Tape tape;
  TapeBinding bind = bind_params(tape, m, false);
  ForwardResult fr = forward(tape, bind, m, ps.input);
  const std::size_t n = ps.input.target->fragments.size();
  const std::size_t nr = ps.input.reference->fragments.size();

  const ad::Tensor& intens = tape.val(fr.intensities);
  REQUIRE(intens.rows == n);
  REQUIRE(intens.cols == static_cast<std::size_t>(kShiftCount));
  for (double v : intens.v) {
    CHECK(v > 0.0);
    CHECK(v < 1.0);
  }

  REQUIRE(fr.match_soft >= 0);
  const ad::Tensor& soft = tape.val(fr.match_soft);
  REQUIRE(soft.rows == n);
  REQUIRE(soft.cols == nr);
  for (std::size_t i = 0; i < n; ++i) {
    double rowsum = 0;
    for (std::size_t j = 0; j < nr; ++j) rowsum += soft.at(i, j);
    CHECK(std::fabs(rowsum - 1.0) <= 1e-9);
  }

  const ad::Tensor& aff = tape.val(fr.match_affinity);
  for (double v : aff.v) {
    CHECK(v >= -1.0 - 1e-12);
    CHECK(v <= 1.0 + 1e-12);
  }

  const ad::Tensor& scores = tape.val(fr.matching_scores);
  REQUIRE(scores.rows == n);
  REQUIRE(scores.cols == 1);
  double manual;
  for (std::size_t i = 0; i < n; ++i) {
    manual = 0;
    for (std::size_t j = 0; j < nr; ++j) manual += soft.at(i, j) * aff.at(i, j);
    CHECK(std::fabs(scores.at(i, 0) - manual) <= 1e-12);
  }
}

TEST_CASE("model: fixed matching scores read the hard alignment") {
  const Fixture& f = fx();
  ModelConfig cfg;
  apply_variant(cfg, "hungarian");
  Model m = init_model(cfg, 1);
  PreparedSample ps = prepare_sample(f.refs, f.data.molecules[f.data.test[2]], 20.0, cfg, {});
  REQUIRE(ps.input.fixed_soft != nullptr);
  REQUIRE(ps.input.fixed_affinity != nullptr);
  ad::Tape tape;
  TapeBinding bind = bind_params(tape, m, false);
  ForwardResult fr = forward(tape, bind, m, ps.input);
  const ad::Tensor& scores = tape.val(fr.matching_scores);
  const Mat& soft = *ps.input.fixed_soft;
  const Mat& aff = *ps.input.fixed_affinity;
  REQUIRE(scores.rows == soft.rows);
  for (std::size_t i = 0; i < soft.rows; ++i) {
    double manual = 0;
    for (std::size_t j = 0; j < soft.cols; ++j) manual += soft.at(i, j) * aff.at(i, j);
    CHECK(std::fabs(scores.at(i, 0) - manual) <= 1e-12);
  }
}

TEST_CASE("model: reference-free wiring ignores reference inputs") {
  const Fixture& f = fx();
  ModelConfig rag_cfg;
  apply_variant(rag_cfg, "ngm-softmax");
  PreparedSample ps = prepare_sample(f.refs, f.data.molecules[f.data.test[0]], 40.0, rag_cfg, {});
  REQUIRE(ps.input.reference != nullptr);

  ModelConfig cfg;
  apply_variant(cfg, "no-rag");
  Model m = init_model(cfg, 2);
  SampleInput bare = ps.input;
  bare.reference = nullptr;
  bare.ref_channels.clear();
  bare.mol_tanimoto = 0;
  bare.ref_binned = nullptr;
  Mat with_refs = predict_intensities(m, ps.input);
  Mat without = predict_intensities(m, bare);
  CHECK(with_refs.v == without.v);
}

TEST_CASE("model: predictions are invariant to reference fragment order") {
  const Fixture& f = fx();
  ModelConfig cfg;
  apply_variant(cfg, "ngm-softmax");
  Model m = init_model(cfg, 1);
  PreparedSample ps = prepare_sample(f.refs, f.data.molecules[f.data.test[3]], 20.0, cfg, {});
  REQUIRE(ps.input.reference != nullptr);
  const FragmentationDag& rd = *ps.input.reference;
  const std::size_t nr = rd.fragments.size();
  if (nr < 2) return;

  // Root stays at slot zero; everything else is shuffled consistently.
  Rng rng(41);
  std::vector<std::uint32_t> perm(nr);
  perm[0] = 0;
  {
    auto tail = testutil::random_permutation(rng, nr - 1);
    for (std::size_t i = 1; i < nr; ++i) perm[i] = 1 + tail[i - 1];
  }
  FragmentationDag shuffled;
  shuffled.fragments.resize(nr);
  for (std::size_t i = 0; i < nr; ++i) {
    FragmentNode node = rd.fragments[i];
    node.id = perm[i];
    shuffled.fragments[perm[i]] = std::move(node);
  }
  for (auto [p, c] : rd.edges) shuffled.edges.push_back({perm[p], perm[c]});

  std::vector<AssignedIntensities> tables(ps.input.ref_channels.size());
  SampleInput moved = ps.input;
  moved.reference = &shuffled;
  for (std::size_t k = 0; k < ps.input.ref_channels.size(); ++k) {
    tables[k].table.resize(nr);
    for (std::size_t i = 0; i < nr; ++i)
      tables[k].table[perm[i]] = ps.input.ref_channels[k].table->table[i];
    moved.ref_channels[k].table = &tables[k];
  }

  Mat base = predict_intensities(m, ps.input);
  Mat got = predict_intensities(m, moved);
  REQUIRE(got.v.size() == base.v.size());
  for (std::size_t i = 0; i < base.v.size(); ++i) CHECK(std::fabs(got.v[i] - base.v[i]) <= 1e-9);
}

TEST_CASE("model: loss is zero on an exact match and one when orthogonal") {
  FragmentationDag dag;
  FragmentNode node;
  node.id = 0;
  node.mass = 100.0;
  dag.fragments.push_back(node);

  Spectrum hit;
  hit.peaks = {{100.0, 1.0}};
  LossTarget exact = build_loss_target(dag, 0.0, bin_spectrum(hit));
  ad::Tape tape;
  ad::Tensor pred(1, kShiftCount);
  pred.at(0, 6) = 0.9;
  ad::VarId pv = tape.leaf(pred, false);
  CHECK(std::fabs(tape.val(cosine_loss(tape, pv, exact)).v[0]) <= 1e-9);

  Spectrum miss;
  miss.peaks = {{500.0, 1.0}};
  LossTarget ortho = build_loss_target(dag, 0.0, bin_spectrum(miss));
  ad::Tape tape2;
  ad::VarId pv2 = tape2.leaf(pred, false);
  CHECK(std::fabs(tape2.val(cosine_loss(tape2, pv2, ortho)).v[0] - 1.0) <= 1e-9);
}

TEST_CASE("model: zero learning rate leaves parameters untouched") {
  const Fixture& f = fx();
  ModelConfig cfg;
  apply_variant(cfg, "ngm-softmax");
  Model m = init_model(cfg, 1);
  Model before = m;
  std::vector<std::size_t> mols(f.data.train.begin(), f.data.train.begin() + 6);
  std::vector<PreparedSample> storage;
  auto items = build_train_items(f.data, mols, f.refs, cfg, {}, storage);
  TrainConfig tc;
  tc.epochs = 2;
  tc.lr = 0.0;
  TrainCurve curve = train(m, items, tc);
  CHECK(curve.epoch_mean_loss.size() == 2);
  CHECK(same_params(m, before));
}

TEST_CASE("model: training loss decreases epoch over epoch") {
  const Fixture& f = fx();
  ModelConfig cfg;
  apply_variant(cfg, "ngm-softmax");
  Model m = init_model(cfg, 1);
  std::vector<std::size_t> mols(f.data.train.begin(), f.data.train.begin() + 24);
  std::vector<PreparedSample> storage;
  auto items = build_train_items(f.data, mols, f.refs, cfg, {}, storage);
  TrainConfig tc;
  tc.epochs = 5;
  TrainCurve curve = train(m, items, tc);
  REQUIRE(curve.epoch_mean_loss.size() == 5);
  for (std::size_t i = 1; i < curve.epoch_mean_loss.size(); ++i) {
    INFO("epoch ", i, " loss ", curve.epoch_mean_loss[i]);
    CHECK(curve.epoch_mean_loss[i] < curve.epoch_mean_loss[i - 1]);
  }
}

TEST_CASE("model: training is bit deterministic for a fixed seed") {
  const Fixture& f = fx();
  ModelConfig cfg;
  apply_variant(cfg, "ngm-softmax");
  std::vector<std::size_t> mols(f.data.train.begin(), f.data.train.begin() + 8);
  std::vector<PreparedSample> storage;
  auto items = build_train_items(f.data, mols, f.refs, cfg, {}, storage);
  TrainConfig tc;
  tc.epochs = 2;

  Model a = init_model(cfg, 5);
  Model b = init_model(cfg, 5);
  TrainCurve ca = train(a, items, tc);
  TrainCurve cb = train(b, items, tc);
  CHECK(ca.epoch_mean_loss == cb.epoch_mean_loss);
  CHECK(same_params(a, b));
}

TEST_CASE("model: variants differ only in their wiring knobs") {
  const char* names[] = {"no-rag", "concat", "hungarian", "rrwm", "ngm-sinkhorn", "ngm-softmax"};
  ModelConfig base;
  for (const char* name : names) {
    ModelConfig c;
    apply_variant(c, name);
    CHECK(shared_fields(c) == shared_fields(base));
    CHECK(variant_name(c) == name);
  }
  ModelConfig c;
  apply_variant(c, "no-rag");
  CHECK(c.rag == RagStrategy::None);
  apply_variant(c, "concat");
  CHECK(c.rag == RagStrategy::Concat);
  apply_variant(c, "hungarian");
  CHECK(c.rag == RagStrategy::Hungarian);
  apply_variant(c, "rrwm");
  CHECK(c.rag == RagStrategy::Rrwm);
  apply_variant(c, "ngm-softmax");
  CHECK(c.rag == RagStrategy::Ngm);
  CHECK(c.match_layer == MatchLayer::Softmax);
  apply_variant(c, "ngm-sinkhorn");
  CHECK(c.rag == RagStrategy::Ngm);
  CHECK(c.match_layer == MatchLayer::Sinkhorn);
  CHECK_THROWS_AS(apply_variant(c, "banana"), std::invalid_argument);
}

TEST_CASE("model: plain prediction equals the taped forward pass") {
  const Fixture& f = fx();
  ModelConfig cfg;
  apply_variant(cfg, "ngm-softmax");
  Model m = init_model(cfg, 1);
  PreparedSample ps = prepare_sample(f.refs, f.data.molecules[f.data.test[0]], 10.0, cfg, {});
  ad::Tape tape;
  TapeBinding bind = bind_params(tape, m, false);
  ForwardResult fr = forward(tape, bind, m, ps.input);
  Mat p = predict_intensities(m, ps.input);
  const ad::Tensor& t = tape.val(fr.intensities);
  REQUIRE(p.rows == t.rows);
  REQUIRE(p.cols == t.cols);
  CHECK(p.v == t.v);
}
