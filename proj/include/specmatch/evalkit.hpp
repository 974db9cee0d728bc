#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <memory>
#include <set>
#include <string>
#include <vector>

#include "specmatch/assign.hpp"
#include "specmatch/model.hpp"
#include "specmatch/retrieval.hpp"
#include "specmatch/synth.hpp"

// Evaluation harness over synthetic datasets: reference stores shared by
// training and scoring, binned-cosine evaluation against baselines,
// decoy-ranked retrieval accuracy, and the ablation driver.

namespace specmatch {

// Library built from one split plus everything sample preparation reuses:
// source molecules by id and per-record peak assignments aligned with each
// record's energy-sorted spectra.
struct RefStore {
  ReferenceLibrary lib;
  std::string adduct, instrument;
  double adduct_offset = 0;
  std::map<std::string, const SynthMolecule*> by_id;
  std::map<std::string, std::vector<AssignedIntensities>> tables;
};

RefStore build_ref_store(const SyntheticDataset& data, const std::vector<std::size_t>& split,
                         const FingerprintConfig& fp);

struct EvalOptions {
  // Edge co-occurrence weight when the fixed matching comes from the
  // quadratic solver.
  double qap_lambda = 0.25;
  RrwmConfig rrwm;
  // Reference channels fed to the model, nearest collision energy first.
  // One channel keeps the aligned intensities undiluted by the channel
  // mean and is the strongest setting on the synthetic benchmark.
  std::size_t max_ref_spectra = 1;
};

// One forward-ready example; the fixed matrices and the binned reference
// live here so SampleInput's pointers survive container moves.
struct PreparedSample {
  SampleInput input;
  std::unique_ptr<Mat> soft, affinity;
  std::unique_ptr<std::vector<double>> binned;
};

PreparedSample prepare_sample(const RefStore& refs, const SynthMolecule& target, double energy,
                              const ModelConfig& cfg, const EvalOptions& opts,
                              const std::set<std::string>& exclude = {});

// Train items for the molecules listed in `mols`, one forward variant per
// collision energy; `storage` owns the prepared inputs and must outlive the
// returned items.
std::vector<TrainItem> build_train_items(const SyntheticDataset& data,
                                         const std::vector<std::size_t>& mols, const RefStore& refs,
                                         const ModelConfig& cfg, const EvalOptions& opts,
                                         std::vector<PreparedSample>& storage);

enum class Baseline { Model, Retrieved, Oracle, Zero };

struct CosineEval {
  double mean = 0;
  std::size_t count = 0;
};

// Mean binned cosine between predictions and truth over all (molecule,
// energy) pairs of the split. Self-retrieval is excluded by molecule id.
// `m` may be null for the non-model baselines.
CosineEval eval_cosine_split(Model* m, const SyntheticDataset& data,
                             const std::vector<std::size_t>& mols, const RefStore& refs,
                             const EvalOptions& opts, Baseline baseline = Baseline::Model);

// Highest-Tanimoto library records with same-formula candidates first,
// backfilled by plain Tanimoto; never contains a record structurally equal
// to the target. Returns record indices.
std::vector<std::size_t> select_decoys(const ReferenceLibrary& lib, const MolGraph& target,
                                       std::size_t count = 49);

using Simulator = std::function<BinnedSpectrum(const SynthMolecule&, double energy)>;

Simulator model_simulator(Model& m, const RefStore& refs, const EvalOptions& opts);
Simulator oracle_simulator(const SyntheticDataset& data);
Simulator constant_simulator();

struct EvalReport {
  std::string variant;
  std::uint64_t seed = 0;
  double mean_cosine = 0;  // truth candidate's prediction vs experiment
  std::vector<int> ks;
  std::vector<double> accuracy;  // aligned with ks, nondecreasing
  struct SampleRecord {
    std::string id;
    double energy = 0;
    int truth_rank = 0;
    double truth_cosine = 0;
  };
  std::vector<SampleRecord> samples;
};

// Ranks the true structure among itself plus decoy candidates by cosine
// between each candidate's simulated spectrum and the observed one. Equal
// cosines rank the truth last. `max_samples` 0 means every (molecule,
// energy) pair; otherwise a seeded subsample.
EvalReport eval_retrieval_at_k(const Simulator& sim, const SyntheticDataset& data,
                               const std::vector<std::size_t>& mols, const RefStore& refs,
                               const std::vector<int>& ks, std::size_t max_samples,
                               std::uint64_t seed, std::size_t decoys = 49);

struct AblationSettings {
  std::vector<std::string> variants = {"no-rag",       "concat",       "hungarian",
                                       "rrwm",         "ngm-sinkhorn", "ngm-softmax"};
  ModelConfig base;
  TrainConfig train;
  // 0 keeps the full split; otherwise a seeded subsample, identical across
  // variants. Training on a subsample while retrieval keeps the whole
  // library mirrors the intended deployment: the library holds measured
  // spectra the model never saw, so references carry information training
  // cannot.
  std::size_t train_molecules = 500;
  std::size_t eval_molecules = 0;
  EvalOptions eval;
};

struct AblationRow {
  std::string variant;
  double test_cosine = 0;
  double delta = 0;  // against the no-rag row
  bool failed = false;
  std::string error;
};

struct AblationTable {
  std::uint64_t seed = 0;
  std::vector<AblationRow> rows;
};

// Trains every variant from the same init seed on identically ordered data,
// scores the test split, and appends the untrained retrieved-spectrum
// baseline row. A variant that throws is reported as failed without
// aborting the batch.
AblationTable ablation_run(const SyntheticDataset& data, const AblationSettings& s,
                           std::uint64_t seed);

// Fixed-format CSV (six decimals), byte-stable for identical inputs.
std::string ablation_csv(const AblationTable& t);

// Learned soft matching of a prepared sample as argmax pairs sorted by
// score. Requires a sample whose strategy produces a matching.
void export_matched_pairs(Model& m, const SampleInput& sample, std::ostream& out);

}  // namespace specmatch
