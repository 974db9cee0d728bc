#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "specmatch/evalkit.hpp"
#include "specmatch/synth.hpp"

using namespace specmatch;

namespace {

SynthConfig small_config() {
  SynthConfig sc;
  sc.molecules = 40;
  return sc;
}

const SyntheticDataset& small_data() {
  static SyntheticDataset d = synth_generate(small_config(), 5);
  return d;
}

const RefStore& small_refs() {
  static RefStore r = build_ref_store(small_data(), small_data().train, small_config().fp);
  return r;
}

bool same_peaks(const Spectrum& a, const Spectrum& b) {
  if (a.peaks.size() != b.peaks.size()) return false;
  for (std::size_t i = 0; i < a.peaks.size(); ++i)
    if (a.peaks[i] != b.peaks[i]) return false;
  return true;
}

std::string whole_formula(const MolGraph& g) { return formula_of(g).to_string(); }

}  // namespace

TEST_CASE("synth: generation is deterministic in the seed") {
  const SyntheticDataset& a = small_data();
  SyntheticDataset b = synth_generate(small_config(), 5);
  REQUIRE(a.molecules.size() == b.molecules.size());
  CHECK(a.train == b.train);
  CHECK(a.val == b.val);
  CHECK(a.test == b.test);
  for (std::size_t i = 0; i < a.molecules.size(); ++i) {
    CHECK(a.molecules[i].id == b.molecules[i].id);
    CHECK(a.molecules[i].smiles == b.molecules[i].smiles);
    REQUIRE(a.molecules[i].spectra.size() == b.molecules[i].spectra.size());
    for (std::size_t e = 0; e < a.molecules[i].spectra.size(); ++e)
      CHECK(same_peaks(a.molecules[i].spectra[e], b.molecules[i].spectra[e]));
  }

  SyntheticDataset c = synth_generate(small_config(), 6);
  bool all_equal = a.molecules.size() == c.molecules.size();
  if (all_equal)
    for (std::size_t i = 0; i < a.molecules.size(); ++i)
      all_equal = all_equal && a.molecules[i].smiles == c.molecules[i].smiles &&
                  same_peaks(a.molecules[i].spectra[0], c.molecules[i].spectra[0]);
  CHECK_FALSE(all_equal);
}

TEST_CASE("synth: splits partition the dataset and keys are unique") {
  const SyntheticDataset& d = small_data();
  REQUIRE(d.molecules.size() == 40);
  std::set<std::size_t> seen;
  for (auto split : {&d.train, &d.val, &d.test}) {
    CHECK_FALSE(split->empty());
    for (std::size_t i : *split) {
      REQUIRE(i < d.molecules.size());
      CHECK(seen.insert(i).second);
    }
  }
  CHECK(seen.size() == d.molecules.size());
  CHECK(d.train.size() > d.val.size());
  CHECK(d.train.size() > d.test.size());

  std::set<std::string> keys;
  for (const auto& m : d.molecules) CHECK(keys.insert(canonical_key(m.mol)).second);
}

TEST_CASE("synth: spectra are normalized and fully annotated") {
  const SyntheticDataset& d = small_data();
  for (const auto& m : d.molecules) {
    REQUIRE(m.spectra.size() == d.config.energies.size());
    CHECK(m.dag.fragments.size() >= 1);
    for (std::size_t e = 0; e < m.spectra.size(); ++e) {
      const Spectrum& s = m.spectra[e];
      CHECK(s.name == m.id);
      CHECK(s.adduct == d.config.adduct);
      CHECK(s.instrument == d.config.instrument);
      REQUIRE(s.collision_energy.has_value());
      CHECK(*s.collision_energy == d.config.energies[e]);
      CHECK(s.precursor_mz > 0.0);
      REQUIRE_FALSE(s.peaks.empty());
      double max_int = 0;
      for (std::size_t i = 0; i < s.peaks.size(); ++i) {
        if (i) CHECK(s.peaks[i - 1].first <= s.peaks[i].first);
        CHECK(s.peaks[i].second > 0.0);
        max_int = std::max(max_int, s.peaks[i].second);
      }
      CHECK(max_int == 1.0);
    }
  }
}

TEST_CASE("synth: shared fragments share their hidden intensities") {
  const SyntheticDataset& d = small_data();
  std::map<std::string, const FragmentNode*> first;
  std::size_t pairs = 0;
  for (const auto& m : d.molecules) {
    for (const auto& node : m.dag.fragments) {
      auto [it, inserted] = first.emplace(node.key, &node);
      if (inserted) continue;
      auto a = hidden_intensities(*it->second, 20.0, d.seed);
      auto b = hidden_intensities(node, 20.0, d.seed);
      CHECK(a == b);
      ++pairs;
    }
  }
  // Small random molecules overlap heavily; the property must actually fire.
  CHECK(pairs > 10);
}

TEST_CASE("synth: dataset save and load round trip") {
  namespace fs = std::filesystem;
  const SyntheticDataset& d = small_data();
  const fs::path dir = fs::temp_directory_path() / "specmatch_synth_io";
  fs::remove_all(dir);
  save_dataset(d, dir.string());
  SyntheticDataset back = load_dataset(dir.string());
  fs::remove_all(dir);

  CHECK(back.seed == d.seed);
  CHECK(back.config.molecules == d.config.molecules);
  CHECK(back.config.energies == d.config.energies);
  CHECK(back.config.adduct == d.config.adduct);
  CHECK(back.config.instrument == d.config.instrument);
  CHECK(back.train == d.train);
  CHECK(back.val == d.val);
  CHECK(back.test == d.test);
  REQUIRE(back.molecules.size() == d.molecules.size());
  for (std::size_t i = 0; i < d.molecules.size(); ++i) {
    const SynthMolecule& a = d.molecules[i];
    const SynthMolecule& b = back.molecules[i];
    CHECK(b.id == a.id);
    CHECK(b.smiles == a.smiles);
    REQUIRE(b.dag.fragments.size() == a.dag.fragments.size());
    for (std::size_t k = 0; k < a.dag.fragments.size(); ++k) {
      CHECK(b.dag.fragments[k].key == a.dag.fragments[k].key);
      CHECK(b.dag.fragments[k].mass == a.dag.fragments[k].mass);
    }
    REQUIRE(b.spectra.size() == a.spectra.size());
    for (std::size_t e = 0; e < a.spectra.size(); ++e) {
      REQUIRE(b.spectra[e].peaks.size() == a.spectra[e].peaks.size());
      for (std::size_t p = 0; p < a.spectra[e].peaks.size(); ++p) {
        CHECK(std::fabs(b.spectra[e].peaks[p].first - a.spectra[e].peaks[p].first) <= 1e-7);
        CHECK(std::fabs(b.spectra[e].peaks[p].second - a.spectra[e].peaks[p].second) <= 1e-7);
      }
    }
  }
}

TEST_CASE("evalkit: reference store mirrors its split") {
  const SyntheticDataset& d = small_data();
  const RefStore& refs = small_refs();
  CHECK(refs.adduct == d.config.adduct);
  CHECK(refs.instrument == d.config.instrument);
  CHECK(std::fabs(refs.adduct_offset - adduct_mass_offset(d.config.adduct)) <= 1e-12);
  REQUIRE(refs.lib.records.size() == d.train.size());
  for (std::size_t i : d.train) {
    const SynthMolecule& m = d.molecules[i];
    auto it = refs.by_id.find(m.id);
    REQUIRE(it != refs.by_id.end());
    CHECK(it->second == &m);
    auto tab = refs.tables.find(m.id);
    REQUIRE(tab != refs.tables.end());
    REQUIRE(tab->second.size() == m.spectra.size());
    for (const AssignedIntensities& t : tab->second)
      CHECK(t.table.size() == m.dag.fragments.size());
  }
}

TEST_CASE("evalkit: decoy selection prefers isomers and excludes the target") {
  const SyntheticDataset& d = small_data();
  const RefStore& refs = small_refs();
  const ReferenceLibrary& lib = refs.lib;

  auto check_target = [&](const SynthMolecule& target) {
    const std::string tkey = canonical_key(target.mol);
    const std::string tformula = whole_formula(target.mol);
    Fingerprint tfp = morgan_fingerprint(target.mol, lib.fp_config);
    std::vector<std::size_t> decoys = select_decoys(lib, target.mol, 10);

    std::size_t eligible = 0;
    for (const auto& rec : lib.records)
      if (canonical_key(rec.mol) != tkey) ++eligible;
    CHECK(decoys.size() == std::min<std::size_t>(10, eligible));

    std::set<std::size_t> chosen(decoys.begin(), decoys.end());
    REQUIRE(chosen.size() == decoys.size());
    bool seen_plain = false;
    double min_chosen_plain = 2.0;
    for (std::size_t idx : decoys) {
      REQUIRE(idx < lib.records.size());
      const LibraryRecord& rec = lib.records[idx];
      CHECK(canonical_key(rec.mol) != tkey);
      const bool isomer = whole_formula(rec.mol) == tformula;
      if (isomer) {
        CHECK_FALSE(seen_plain);  // isomers form a prefix
      } else {
        seen_plain = true;
        min_chosen_plain = std::min(min_chosen_plain, tanimoto(tfp, rec.fp));
      }
    }
    for (std::size_t i = 0; i < lib.records.size(); ++i) {
      if (chosen.count(i)) continue;
      const LibraryRecord& rec = lib.records[i];
      if (canonical_key(rec.mol) == tkey) continue;
      if (whole_formula(rec.mol) == tformula) {
        // An unchosen isomer means the budget was spent entirely on isomers.
        CHECK(decoys.size() == 10);
        CHECK_FALSE(seen_plain);
      } else if (seen_plain) {
        CHECK(tanimoto(tfp, rec.fp) <= min_chosen_plain + 1e-12);
      }
    }
  };

  check_target(d.molecules[d.test[0]]);
  check_target(d.molecules[d.train[0]]);  // in-library target must not pick itself
}

TEST_CASE("evalkit: cosine baselines behave at their extremes") {
  const SyntheticDataset& d = small_data();
  const RefStore& refs = small_refs();
  std::vector<std::size_t> mols(d.test.begin(), d.test.begin() + 5);

  CosineEval oracle = eval_cosine_split(nullptr, d, mols, refs, {}, Baseline::Oracle);
  CHECK(oracle.count == mols.size() * d.config.energies.size());
  CHECK(oracle.mean >= 1.0 - 1e-9);
  CHECK(oracle.mean <= 1.0 + 1e-9);

  CosineEval zero = eval_cosine_split(nullptr, d, mols, refs, {}, Baseline::Zero);
  CHECK(zero.count == oracle.count);
  CHECK(zero.mean == 0.0);

  CosineEval retr = eval_cosine_split(nullptr, d, mols, refs, {}, Baseline::Retrieved);
  CHECK(retr.count == oracle.count);
  CHECK(retr.mean > 0.0);
  CHECK(retr.mean < 1.0);
}

TEST_CASE("evalkit: retrieval ranking separates oracle from constant") {
  const SyntheticDataset& d = small_data();
  const RefStore& refs = small_refs();
  const std::vector<int> ks = {1, 3, 5, 10};

  EvalReport oracle =
      eval_retrieval_at_k(oracle_simulator(d), d, d.test, refs, ks, 20, 9, 10);
  REQUIRE(oracle.samples.size() == std::min<std::size_t>(20, d.test.size() * 3));
  REQUIRE(oracle.accuracy.size() == ks.size());
  for (double a : oracle.accuracy) CHECK(a == 1.0);
  for (const auto& s : oracle.samples) {
    CHECK(s.truth_rank == 1);
    CHECK(s.truth_cosine >= 1.0 - 1e-9);
    CHECK_FALSE(s.id.empty());
  }
  CHECK(oracle.mean_cosine >= 1.0 - 1e-9);

  EvalReport flat =
      eval_retrieval_at_k(constant_simulator(), d, d.test, refs, ks, 20, 9, 10);
  for (double a : flat.accuracy) CHECK(a == 0.0);
  for (const auto& s : flat.samples) {
    CHECK(s.truth_rank > 10);   // equal scores rank the truth last
    CHECK(s.truth_rank <= 11);  // ten decoys plus the truth
  }
  for (std::size_t i = 1; i < flat.accuracy.size(); ++i)
    CHECK(flat.accuracy[i] >= flat.accuracy[i - 1]);

  EvalReport seven =
      eval_retrieval_at_k(oracle_simulator(d), d, d.test, refs, ks, 7, 9, 10);
  CHECK(seven.samples.size() == 7);
}

TEST_CASE("evalkit: model simulator produces a usable binned spectrum") {
  const SyntheticDataset& d = small_data();
  const RefStore& refs = small_refs();
  ModelConfig cfg;
  apply_variant(cfg, "ngm-softmax");
  Model m = init_model(cfg, 1);
  Simulator sim = model_simulator(m, refs, {});
  BinnedSpectrum out = sim(d.molecules[d.test[0]], 20.0);
  REQUIRE(out.values.size() == kSpectrumBins);
  double mx = 0;
  for (double v : out.values) {
    CHECK(v >= 0.0);
    mx = std::max(mx, v);
  }
  CHECK(mx <= 1.0 + 1e-12);
  CHECK(mx > 0.0);
}

TEST_CASE("evalkit: ablation runs end to end and its CSV is byte stable") {
  const SyntheticDataset& d = small_data();
  AblationSettings s;
  s.variants = {"no-rag"};
  s.train.epochs = 1;
  s.train_molecules = 0;
  AblationTable t1 = ablation_run(d, s, 1);
  REQUIRE(t1.rows.size() == 2);
  CHECK(t1.rows[0].variant == "no-rag");
  CHECK_FALSE(t1.rows[0].failed);
  CHECK(t1.rows[0].delta == 0.0);
  CHECK(t1.rows[0].test_cosine > 0.0);
  CHECK(t1.rows[1].variant == "retrieved");
  CHECK_FALSE(t1.rows[1].failed);

  AblationTable t2 = ablation_run(d, s, 1);
  const std::string csv1 = ablation_csv(t1);
  const std::string csv2 = ablation_csv(t2);
  CHECK(csv1 == csv2);
  CHECK(csv1.rfind("variant,test_cosine,delta_vs_no_rag,status", 0) == 0);
}

TEST_CASE("evalkit: matched-pair export self-matches an in-library molecule") {
  const SyntheticDataset& d = small_data();
  const RefStore& refs = small_refs();
  ModelConfig cfg;
  apply_variant(cfg, "ngm-softmax");
  Model m = init_model(cfg, 1);
  const SynthMolecule& mol = d.molecules[d.train[0]];
  PreparedSample ps = prepare_sample(refs, mol, 20.0, cfg, {});
  REQUIRE(ps.input.reference != nullptr);
  REQUIRE(ps.input.reference->fragments.size() == mol.dag.fragments.size());

  std::ostringstream out;
  export_matched_pairs(m, ps.input, out);
  std::istringstream in(out.str());
  std::string line;
  REQUIRE(std::getline(in, line));
  CHECK(line == "target,reference,score,affinity");
  std::size_t rows = 0;
  double prev_score = 1e300;
  while (std::getline(in, line)) {
    std::size_t tgt = 0, ref = 0;
    double score = 0, aff = 0;
    REQUIRE(std::sscanf(line.c_str(), "%zu,%zu,%lf,%lf", &tgt, &ref, &score, &aff) == 4);
    CHECK(tgt == ref);  // retrieving itself aligns every fragment to itself
    CHECK(score <= prev_score + 1e-12);
    CHECK(aff >= 1.0 - 1e-9);
    prev_score = score;
    ++rows;
  }
  CHECK(rows == mol.dag.fragments.size());
}
