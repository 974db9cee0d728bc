#include "specmatch/evalkit.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <ostream>
#include <stdexcept>

namespace specmatch {

namespace {

std::uint64_t splitmix64(std::uint64_t& state) {
  std::uint64_t z = (state += 0x9e3779b97f4a7c15ull);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
  return z ^ (z >> 31);
}

// Seeded subsample that keeps ascending order so iteration stays aligned
// across variants.
std::vector<std::size_t> subsample(std::vector<std::size_t> v, std::size_t keep, std::uint64_t seed) {
  if (keep == 0 || keep >= v.size()) return v;
  std::uint64_t st = seed;
  for (std::size_t i = v.size(); i > 1; --i) std::swap(v[i - 1], v[splitmix64(st) % i]);
  v.resize(keep);
  std::sort(v.begin(), v.end());
  return v;
}

AssignedIntensities to_table(const Mat& pred) {
  AssignedIntensities ai;
  ai.table.resize(pred.rows);
  for (std::size_t i = 0; i < pred.rows; ++i)
    for (int k = 0; k < kShiftCount; ++k) ai.table[i][k] = pred.at(i, k);
  return ai;
}

BinnedSpectrum predict_binned(Model& m, const RefStore& refs, const SynthMolecule& mol,
                              double energy, const EvalOptions& opts,
                              const std::set<std::string>& exclude) {
  PreparedSample ps = prepare_sample(refs, mol, energy, m.cfg, opts, exclude);
  const Mat pred = predict_intensities(m, ps.input);
  const Spectrum sp = merge_predictions(mol.dag, to_table(pred), refs.adduct_offset);
  return bin_spectrum(sp);
}

Mat tensor_to_mat(const ad::Tensor& t) {
  Mat m(t.rows, t.cols);
  m.v = t.v;
  return m;
}

}  // namespace

RefStore build_ref_store(const SyntheticDataset& data, const std::vector<std::size_t>& split,
                         const FingerprintConfig& fp) {
  std::vector<LibraryEntry> entries;
  for (std::size_t idx : split) {
    const SynthMolecule& sm = data.molecules[idx];
    for (const Spectrum& sp : sm.spectra) {
      LibraryEntry e;
      e.id = sm.id;
      e.smiles = sm.smiles;
      e.adduct = data.config.adduct;
      e.instrument = data.config.instrument;
      e.energy = sp.collision_energy.value_or(0);
      e.spectrum = sp;
      entries.push_back(std::move(e));
    }
  }
  RefStore refs;
  refs.lib = build_library(entries, fp);
  refs.adduct = data.config.adduct;
  refs.instrument = data.config.instrument;
  refs.adduct_offset = adduct_mass_offset(data.config.adduct);
  for (std::size_t idx : split) refs.by_id.emplace(data.molecules[idx].id, &data.molecules[idx]);
  for (const LibraryRecord& rec : refs.lib.records) {
    const SynthMolecule* src = refs.by_id.at(rec.id);
    auto& tabs = refs.tables[rec.id];
    tabs.reserve(rec.spectra.size());
    for (const auto& [energy, sp] : rec.spectra)
      tabs.push_back(assign_peaks(sp, src->dag, refs.adduct_offset));
  }
  return refs;
}

PreparedSample prepare_sample(const RefStore& refs, const SynthMolecule& target, double energy,
                              const ModelConfig& cfg, const EvalOptions& opts,
                              const std::set<std::string>& exclude) {
  PreparedSample ps;
  ps.input.target = &target.dag;
  ps.input.target_energy = energy;
  ps.input.adduct_offset = refs.adduct_offset;
  if (cfg.rag == RagStrategy::None) return ps;

  RetrievalQuery q;
  q.fp = morgan_fingerprint(target.mol, refs.lib.fp_config);
  q.adduct = refs.adduct;
  q.instrument = refs.instrument;
  q.target_energy = energy;
  q.max_spectra = opts.max_ref_spectra;
  q.exclude = exclude;
  const RetrievalResult res = retrieve(refs.lib, q);
  if (!res.found) return ps;

  const LibraryRecord& rec = refs.lib.records[res.record];
  const SynthMolecule* src = refs.by_id.at(res.id);
  ps.input.reference = &src->dag;
  ps.input.mol_tanimoto = res.tanimoto;

  std::vector<std::size_t> order(rec.spectra.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    const double da = std::abs(rec.spectra[a].first - energy);
    const double db = std::abs(rec.spectra[b].first - energy);
    if (da != db) return da < db;
    return rec.spectra[a].first < rec.spectra[b].first;
  });
  const auto& tabs = refs.tables.at(res.id);
  for (std::size_t i = 0; i < std::min(opts.max_ref_spectra, order.size()); ++i)
    ps.input.ref_channels.push_back({&tabs[order[i]], rec.spectra[order[i]].first});

  if (cfg.rag == RagStrategy::Concat) {
    ps.binned = std::make_unique<std::vector<double>>(
        bin_spectrum(rec.spectra[order[0]].second).values);
    ps.input.ref_binned = ps.binned.get();
  } else if (cfg.rag == RagStrategy::Hungarian || cfg.rag == RagStrategy::Rrwm) {
    ps.affinity = std::make_unique<Mat>(build_node_affinity(target.dag, src->dag, refs.lib.fp_config));
    if (cfg.rag == RagStrategy::Hungarian) {
      ps.soft = std::make_unique<Mat>(hungarian(*ps.affinity).x);
    } else {
      const QapAffinity k = build_qap_affinity(target.dag, src->dag, *ps.affinity, opts.qap_lambda);
      ps.soft = std::make_unique<Mat>(rrwm(k, opts.rrwm).assignment.x);
    }
    ps.input.fixed_soft = ps.soft.get();
    ps.input.fixed_affinity = ps.affinity.get();
  }
  return ps;
}

std::vector<TrainItem> build_train_items(const SyntheticDataset& data,
                                         const std::vector<std::size_t>& mols, const RefStore& refs,
                                         const ModelConfig& cfg, const EvalOptions& opts,
                                         std::vector<PreparedSample>& storage) {
  std::vector<TrainItem> items;
  items.reserve(mols.size());
  for (std::size_t idx : mols) {
    const SynthMolecule& sm = data.molecules[idx];
    TrainItem item;
    for (std::size_t e = 0; e < sm.spectra.size(); ++e) {
      const double energy = sm.spectra[e].collision_energy.value_or(0);
      storage.push_back(prepare_sample(refs, sm, energy, cfg, opts, {sm.id}));
      item.variants.push_back(storage.back().input);
      item.targets.push_back(
          build_loss_target(sm.dag, refs.adduct_offset, bin_spectrum(sm.spectra[e])));
    }
    items.push_back(std::move(item));
  }
  return items;
}

CosineEval eval_cosine_split(Model* m, const SyntheticDataset& data,
                             const std::vector<std::size_t>& mols, const RefStore& refs,
                             const EvalOptions& opts, Baseline baseline) {
  if (baseline == Baseline::Model && m == nullptr)
    throw std::invalid_argument("model baseline needs a model");
  CosineEval ev;
  double sum = 0;
  for (std::size_t idx : mols) {
    const SynthMolecule& sm = data.molecules[idx];
    for (const Spectrum& truth : sm.spectra) {
      const double energy = truth.collision_energy.value_or(0);
      const BinnedSpectrum tb = bin_spectrum(truth);
      double cos = 0;
      switch (baseline) {
        case Baseline::Model:
          cos = cosine_similarity(predict_binned(*m, refs, sm, energy, opts, {sm.id}), tb);
          break;
        case Baseline::Retrieved: {
          const RetrievalResult res =
              retrieve(refs.lib, sm.mol, refs.adduct, refs.instrument, energy, {sm.id});
          if (res.found && !res.spectra.empty())
            cos = cosine_similarity(bin_spectrum(*res.spectra.front().second), tb);
          break;
        }
        case Baseline::Oracle:
          cos = cosine_similarity(tb, tb);
          break;
        case Baseline::Zero: {
          BinnedSpectrum z;
          z.values.assign(kSpectrumBins, 0.0);
          cos = cosine_similarity(z, tb);
          break;
        }
      }
      sum += cos;
      ev.count += 1;
    }
  }
  ev.mean = ev.count ? sum / static_cast<double>(ev.count) : 0.0;
  return ev;
}

std::vector<std::size_t> select_decoys(const ReferenceLibrary& lib, const MolGraph& target,
                                       std::size_t count) {
  const Fingerprint tfp = morgan_fingerprint(target, lib.fp_config);
  const Formula tform = formula_of(target);
  const std::string tkey = canonical_key(target);

  struct Scored {
    std::size_t idx;
    double tan;
    bool isomer;
  };
  std::vector<Scored> scored;
  scored.reserve(lib.records.size());
  for (std::size_t i = 0; i < lib.records.size(); ++i) {
    const LibraryRecord& rec = lib.records[i];
    const Formula rform = formula_of(rec.mol);
    const bool isomer = rform == tform;
    if (isomer && canonical_key(rec.mol) == tkey) continue;  // the target itself
    scored.push_back({i, tanimoto(tfp, rec.fp), isomer});
  }
  std::stable_sort(scored.begin(), scored.end(), [&](const Scored& a, const Scored& b) {
    if (a.isomer != b.isomer) return a.isomer;
    if (a.tan != b.tan) return a.tan > b.tan;
    return lib.records[a.idx].id < lib.records[b.idx].id;
  });
  std::vector<std::size_t> out;
  for (const Scored& s : scored) {
    if (out.size() >= count) break;
    out.push_back(s.idx);
  }
  return out;
}

Simulator model_simulator(Model& m, const RefStore& refs, const EvalOptions& opts) {
  return [&m, &refs, opts](const SynthMolecule& cand, double energy) {
    return predict_binned(m, refs, cand, energy, opts, {cand.id});
  };
}

Simulator oracle_simulator(const SyntheticDataset&) {
  return [](const SynthMolecule& cand, double energy) {
    for (const Spectrum& s : cand.spectra)
      if (s.collision_energy && std::abs(*s.collision_energy - energy) < 1e-9)
        return bin_spectrum(s);
    throw std::invalid_argument("no spectrum at the requested energy for " + cand.id);
  };
}

Simulator constant_simulator() {
  return [](const SynthMolecule&, double) {
    BinnedSpectrum b;
    b.values.assign(kSpectrumBins, 0.0);
    b.values[1000] = 1.0;
    return b;
  };
}

EvalReport eval_retrieval_at_k(const Simulator& sim, const SyntheticDataset& data,
                               const std::vector<std::size_t>& mols, const RefStore& refs,
                               const std::vector<int>& ks, std::size_t max_samples,
                               std::uint64_t seed, std::size_t decoys) {
  std::vector<std::pair<std::size_t, std::size_t>> pairs;
  for (std::size_t idx : mols)
    for (std::size_t e = 0; e < data.molecules[idx].spectra.size(); ++e) pairs.emplace_back(idx, e);
  if (max_samples > 0 && max_samples < pairs.size()) {
    std::uint64_t st = seed ^ 0x657661366bull;
    for (std::size_t i = pairs.size(); i > 1; --i) std::swap(pairs[i - 1], pairs[splitmix64(st) % i]);
    pairs.resize(max_samples);
    std::sort(pairs.begin(), pairs.end());
  }

  EvalReport rep;
  rep.seed = seed;
  rep.ks = ks;
  rep.accuracy.assign(ks.size(), 0.0);
  double cos_sum = 0;
  for (const auto& [idx, e] : pairs) {
    const SynthMolecule& sm = data.molecules[idx];
    const Spectrum& truth = sm.spectra[e];
    const double energy = truth.collision_energy.value_or(0);
    const BinnedSpectrum tb = bin_spectrum(truth);

    const double truth_cos = cosine_similarity(sim(sm, energy), tb);
    int better = 0, ties = 0;
    for (std::size_t rec_idx : select_decoys(refs.lib, sm.mol, decoys)) {
      const SynthMolecule* cand = refs.by_id.at(refs.lib.records[rec_idx].id);
      const double c = cosine_similarity(sim(*cand, energy), tb);
      if (c > truth_cos)
        ++better;
      else if (c == truth_cos)
        ++ties;  // pessimistic: the truth ranks behind every tie
    }
    const int rank = 1 + better + ties;
    for (std::size_t k = 0; k < ks.size(); ++k)
      if (rank <= ks[k]) rep.accuracy[k] += 1;
    cos_sum += truth_cos;
    rep.samples.push_back({sm.id, energy, rank, truth_cos});
  }
  if (!rep.samples.empty()) {
    for (double& a : rep.accuracy) a /= static_cast<double>(rep.samples.size());
    rep.mean_cosine = cos_sum / static_cast<double>(rep.samples.size());
  }
  return rep;
}

AblationTable ablation_run(const SyntheticDataset& data, const AblationSettings& s,
                           std::uint64_t seed) {
  AblationTable table;
  table.seed = seed;
  const RefStore refs = build_ref_store(data, data.train, s.base.fp);
  const std::vector<std::size_t> train_mols = subsample(data.train, s.train_molecules, seed ^ 0x747261696eull);
  const std::vector<std::size_t> eval_mols = subsample(data.test, s.eval_molecules, seed ^ 0x7465737431ull);

  for (const std::string& name : s.variants) {
    AblationRow row;
    row.variant = name;
    try {
      ModelConfig cfg = s.base;
      apply_variant(cfg, name);
      Model m = init_model(cfg, seed);
      std::vector<PreparedSample> storage;
      const std::vector<TrainItem> items = build_train_items(data, train_mols, refs, cfg, s.eval, storage);
      TrainConfig tc = s.train;
      tc.seed = seed;
      train(m, items, tc);
      row.test_cosine = eval_cosine_split(&m, data, eval_mols, refs, s.eval).mean;
    } catch (const std::exception& ex) {
      row.failed = true;
      row.error = ex.what();
    }
    table.rows.push_back(std::move(row));
  }
  {
    AblationRow row;
    row.variant = "retrieved";
    row.test_cosine =
        eval_cosine_split(nullptr, data, eval_mols, refs, s.eval, Baseline::Retrieved).mean;
    table.rows.push_back(std::move(row));
  }

  double base = 0;
  bool have_base = false;
  for (const AblationRow& r : table.rows)
    if (r.variant == "no-rag" && !r.failed) {
      base = r.test_cosine;
      have_base = true;
      break;
    }
  if (!have_base && !table.rows.empty() && !table.rows.front().failed) {
    base = table.rows.front().test_cosine;
    have_base = true;
  }
  for (AblationRow& r : table.rows)
    if (have_base && !r.failed) r.delta = r.test_cosine - base;
  return table;
}

std::string ablation_csv(const AblationTable& t) {
  std::string out = "variant,test_cosine,delta_vs_no_rag,status\n";
  char buf[128];
  for (const AblationRow& r : t.rows) {
    if (r.failed) {
      out += r.variant + ",nan,nan,failed\n";
    } else {
      std::snprintf(buf, sizeof buf, "%s,%.6f,%.6f,ok\n", r.variant.c_str(), r.test_cosine, r.delta);
      out += buf;
    }
  }
  return out;
}

void export_matched_pairs(Model& m, const SampleInput& sample, std::ostream& out) {
  ad::Tape tape;
  TapeBinding bind = bind_params(tape, m, false);
  const ForwardResult fr = forward(tape, bind, m, sample);
  if (fr.match_soft < 0 || fr.match_affinity < 0)
    throw std::invalid_argument("sample produced no fragment matching");
  write_matched_pairs_csv(tensor_to_mat(tape.val(fr.match_soft)),
                          tensor_to_mat(tape.val(fr.match_affinity)), out);
}

}  // namespace specmatch
