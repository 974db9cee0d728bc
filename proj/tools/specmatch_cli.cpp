// Command-line front end: dataset synthesis, fragmentation, retrieval,
// matching, training, prediction, evaluation, and the ablation table.
// Machine output is CSV; human-readable tables go to stderr so stdout
// stays byte-stable for diffing.

#include <algorithm>
#include <cstdint>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "specmatch/assign.hpp"
#include "specmatch/evalkit.hpp"
#include "specmatch/fragdag.hpp"
#include "specmatch/model.hpp"
#include "specmatch/molgraph.hpp"
#include "specmatch/retrieval.hpp"
#include "specmatch/spectrum.hpp"
#include "specmatch/synth.hpp"

using namespace specmatch;

namespace {

std::vector<std::string> split_csv_list(const std::string& s) {
  std::vector<std::string> out;
  std::string cur;
  for (char c : s) {
    if (c == ',') {
      if (!cur.empty()) out.push_back(cur);
      cur.clear();
    } else if (!std::isspace(static_cast<unsigned char>(c))) {
      cur += c;
    }
  }
  if (!cur.empty()) out.push_back(cur);
  return out;
}

std::vector<double> split_csv_doubles(const std::string& s) {
  std::vector<double> out;
  for (const std::string& t : split_csv_list(s)) out.push_back(std::stod(t));
  return out;
}

std::vector<int> split_csv_ints(const std::string& s) {
  std::vector<int> out;
  for (const std::string& t : split_csv_list(s)) out.push_back(std::stoi(t));
  return out;
}

// "key value", "key = value", or "key=value" lines; '#' starts a comment.
// Entries become "--key value" tokens appended after the real argv, so with
// a take-last option policy the file overrides command-line flags.
std::vector<std::string> config_tokens(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open config file: " + path);
  std::vector<std::string> tokens;
  std::string line;
  while (std::getline(in, line)) {
    if (auto pos = line.find('#'); pos != std::string::npos) line.erase(pos);
    std::replace(line.begin(), line.end(), '=', ' ');
    std::istringstream ls(line);
    std::string key, value;
    if (!(ls >> key)) continue;
    std::getline(ls, value);
    auto b = value.find_first_not_of(" \t");
    value = b == std::string::npos ? std::string{} : value.substr(b);
    auto e = value.find_last_not_of(" \t");
    if (e != std::string::npos) value.erase(e + 1);
    tokens.push_back("--" + key);
    if (!value.empty() && value != "true") tokens.push_back(value);
    if (value == "false") tokens.pop_back(), tokens.pop_back();
  }
  return tokens;
}

std::ofstream open_out(const std::string& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot open output file: " + path);
  return out;
}

std::ifstream open_in(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open input file: " + path);
  return in;
}

Model load_model_file(const std::string& path) {
  std::ifstream in = open_in(path);
  return load_model(in);
}

FragmentationDag load_dag_file(const std::string& path) {
  std::ifstream in = open_in(path);
  return read_dag_json(in);
}

std::vector<std::size_t> subsample_split(std::vector<std::size_t> v, std::size_t count,
                                         std::uint64_t seed) {
  if (count == 0 || count >= v.size()) return v;
  std::uint64_t state = seed;
  auto next = [&state] {
    std::uint64_t z = (state += 0x9e3779b97f4a7c15ull);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
    return z ^ (z >> 31);
  };
  for (std::size_t i = v.size() - 1; i > 0; --i) std::swap(v[i], v[next() % (i + 1)]);
  v.resize(count);
  std::sort(v.begin(), v.end());
  return v;
}

const std::vector<std::size_t>& pick_split(const SyntheticDataset& d, const std::string& name) {
  if (name == "train") return d.train;
  if (name == "val") return d.val;
  if (name == "test") return d.test;
  throw std::runtime_error("unknown split: " + name);
}

// Shared model-shape and evaluation flags.
struct ModelFlags {
  ModelConfig cfg;
  EvalOptions opts;

  void attach(CLI::App* sub) {
    sub->add_option("--hidden", cfg.hidden, "embedding width");
    sub->add_option("--tdim", cfg.tdim, "reference-table embedding width");
    sub->add_option("--mp-layers", cfg.mp_layers, "message-passing layers");
    sub->add_option("--tau", cfg.match_tau, "softmax matching temperature");
    sub->add_option("--sinkhorn-tau", cfg.sinkhorn_tau, "sinkhorn matching temperature");
    sub->add_option("--sinkhorn-iters", cfg.sinkhorn_iters, "sinkhorn matching iterations");
    sub->add_option("--broken-cap", cfg.broken_cap, "broken-bond one-hot cap");
    sub->add_flag("!--shared-match-gnn", cfg.separate_match_gnn,
                  "reuse the intensity GNNs for matching");
    sub->add_option("--qap-lambda", opts.qap_lambda, "edge weight for the rrwm matching");
    sub->add_option("--channels", opts.max_ref_spectra, "reference spectra per sample");
  }
};

void run_synth(const SynthConfig& sc, const std::string& out_dir, const std::string& library,
               std::uint64_t seed) {
  SyntheticDataset data = synth_generate(sc, seed);
  if (!out_dir.empty()) save_dataset(data, out_dir);
  if (!library.empty()) {
    RefStore refs = build_ref_store(data, data.train, sc.fp);
    std::ofstream out = open_out(library);
    save_library(refs.lib, out);
  }
  std::size_t peaks = 0;
  for (const SynthMolecule& m : data.molecules)
    for (const Spectrum& s : m.spectra) peaks += s.peaks.size();
  std::fprintf(stderr, "molecules %zu  train %zu  val %zu  test %zu\n", data.molecules.size(),
               data.train.size(), data.val.size(), data.test.size());
  std::fprintf(stderr, "spectra %zu  mean peaks %.1f\n", 3 * data.molecules.size(),
               static_cast<double>(peaks) / (3.0 * data.molecules.size()));
  if (!out_dir.empty()) std::fprintf(stderr, "dataset written to %s\n", out_dir.c_str());
  if (!library.empty()) std::fprintf(stderr, "library written to %s\n", library.c_str());
}

void run_fragment(const std::string& smiles, const FragConfig& fc, const std::string& out_json,
                  const std::string& out_csv) {
  MolGraph mol = parse_smiles(smiles);
  FragmentationDag dag = enumerate_fragments(mol, fc);
  if (!out_json.empty()) {
    std::ofstream out = open_out(out_json);
    write_dag_json(dag, out);
  }
  std::ostringstream csv;
  csv << "id,depth,broken_bonds,mass,formula,smiles\n";
  for (const FragmentNode& n : dag.fragments) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.6f", n.mass);
    csv << n.id << ',' << n.depth << ',' << n.broken_bonds << ',' << buf << ','
        << n.formula.to_string() << ',' << print_smiles(n.graph) << '\n';
  }
  if (!out_csv.empty())
    open_out(out_csv) << csv.str();
  else
    std::cout << csv.str();
  std::fprintf(stderr, "%zu fragments, %zu edges, depth <= %d\n", dag.fragments.size(),
               dag.edges.size(), fc.max_depth);
}

void run_retrieve(const std::string& library, const std::string& smiles, const std::string& adduct,
                  const std::string& instrument, double energy, std::size_t max_spectra,
                  const std::string& exclude_csv, const std::string& out_csv) {
  std::ifstream in = open_in(library);
  ReferenceLibrary lib = load_library(in);
  RetrievalQuery q;
  q.fp = morgan_fingerprint(parse_smiles(smiles), lib.fp_config);
  q.adduct = adduct;
  q.instrument = instrument;
  q.target_energy = energy;
  q.max_spectra = max_spectra;
  for (const std::string& id : split_csv_list(exclude_csv)) q.exclude.insert(id);
  RetrievalResult r = retrieve(lib, q);
  std::ostringstream csv;
  csv << "id,tanimoto,energy\n";
  if (r.found) {
    char buf[64];
    for (const auto& [e, sp] : r.spectra) {
      std::snprintf(buf, sizeof buf, "%.6f,%g", r.tanimoto, e);
      csv << r.id << ',' << buf << '\n';
    }
    std::fprintf(stderr, "hit %s  tanimoto %.4f  smiles %s  spectra %zu\n", r.id.c_str(),
                 r.tanimoto, lib.records[r.record].smiles.c_str(), r.spectra.size());
  } else {
    std::fprintf(stderr, "no record passed the filters\n");
  }
  if (!out_csv.empty())
    open_out(out_csv) << csv.str();
  else
    std::cout << csv.str();
}

void run_match(const std::string& target_path, const std::string& reference_path,
               const std::string& solver, double tau, double lambda, const std::string& out_csv) {
  FragmentationDag target = load_dag_file(target_path);
  FragmentationDag reference = load_dag_file(reference_path);
  Mat node = build_node_affinity(target, reference);

  Mat soft;
  double objective = 0;
  if (solver == "hungarian") {
    Assignment a = hungarian(node);
    soft = a.x;
    objective = a.objective;
  } else if (solver == "rrwm") {
    QapAffinity k = build_qap_affinity(target, reference, node, lambda);
    RrwmResult r = rrwm(k);
    soft = r.assignment.x;
    objective = r.objective;
  } else if (solver == "sinkhorn") {
    SinkhornConfig sc;
    sc.tau = tau;
    SoftAssignment s = sinkhorn(node, sc);
    soft = s.x;
  } else if (solver == "softmax") {
    soft = softmax_match(node, tau);
  } else {
    throw std::runtime_error("unknown solver: " + solver);
  }

  // Rows pair each target fragment with its argmax reference fragment. The
  // hard solvers report the node affinity of the pair, the soft solvers
  // their assignment weight; the soft objective collects node affinity
  // along the argmax pairs.
  const bool soft_solver = solver == "sinkhorn" || solver == "softmax";
  std::ostringstream csv;
  csv << "i,j,score\n";
  char buf[64];
  for (std::size_t i = 0; i < soft.rows; ++i) {
    std::size_t bj = 0;
    for (std::size_t j = 1; j < soft.cols; ++j)
      if (soft.at(i, j) > soft.at(i, bj)) bj = j;
    if (soft.at(i, bj) <= 0) continue;
    if (soft_solver) objective += node.at(i, bj);
    std::snprintf(buf, sizeof buf, "%.6f", soft_solver ? soft.at(i, bj) : node.at(i, bj));
    csv << i << ',' << bj << ',' << buf << '\n';
  }
  if (!out_csv.empty())
    open_out(out_csv) << csv.str();
  else
    std::cout << csv.str();
  std::fprintf(stderr, "solver %s  objective %.6f  target %zu x reference %zu\n", solver.c_str(),
               objective, target.fragments.size(), reference.fragments.size());
}

void run_train(const std::string& dataset_dir, const std::string& variant, ModelFlags& mf,
               TrainConfig tc, std::size_t train_molecules, const std::string& out_model,
               const std::string& out_curve, std::uint64_t seed) {
  SyntheticDataset data = load_dataset(dataset_dir);
  apply_variant(mf.cfg, variant);
  mf.cfg.fp = data.config.fp;
  RefStore refs = build_ref_store(data, data.train, data.config.fp);
  std::vector<std::size_t> mols = subsample_split(data.train, train_molecules, seed ^ 0x747261696eull);

  Model m = init_model(mf.cfg, seed);
  std::vector<PreparedSample> storage;
  std::vector<TrainItem> items = build_train_items(data, mols, refs, mf.cfg, mf.opts, storage);
  tc.seed = seed;
  TrainCurve curve = train(m, items, tc);

  std::ofstream out = open_out(out_model);
  save_model(m, out);
  std::ostringstream csv;
  csv << "epoch,mean_loss\n";
  char buf[64];
  for (std::size_t e = 0; e < curve.epoch_mean_loss.size(); ++e) {
    std::snprintf(buf, sizeof buf, "%.6f", curve.epoch_mean_loss[e]);
    csv << e + 1 << ',' << buf << '\n';
  }
  if (!out_curve.empty())
    open_out(out_curve) << csv.str();
  else
    std::cout << csv.str();
  std::fprintf(stderr, "variant %s  molecules %zu  items %zu\n", variant.c_str(), mols.size(),
               items.size());
  for (std::size_t e = 0; e < curve.epoch_mean_loss.size(); ++e)
    std::fprintf(stderr, "epoch %2zu  loss %.6f\n", e + 1, curve.epoch_mean_loss[e]);
  std::fprintf(stderr, "model written to %s\n", out_model.c_str());
}

void run_predict(const std::string& dataset_dir, const std::string& model_path,
                 const std::string& id, double energy, const ModelFlags& mf, bool exclude_self,
                 const std::string& out_csv, const std::string& out_msp) {
  SyntheticDataset data = load_dataset(dataset_dir);
  Model m = load_model_file(model_path);
  RefStore refs = build_ref_store(data, data.train, data.config.fp);
  const SynthMolecule* target = nullptr;
  for (const SynthMolecule& sm : data.molecules)
    if (sm.id == id) target = &sm;
  if (!target) throw std::runtime_error("molecule id not in dataset: " + id);

  std::set<std::string> exclude;
  if (exclude_self) exclude.insert(id);
  PreparedSample ps = prepare_sample(refs, *target, energy, m.cfg, mf.opts, exclude);
  Mat pred = predict_intensities(m, ps.input);
  AssignedIntensities table;
  table.table.resize(pred.rows);
  for (std::size_t i = 0; i < pred.rows; ++i)
    for (int k = 0; k < kShiftCount; ++k) table.table[i][k] = pred.at(i, k);
  Spectrum s = merge_predictions(target->dag, table, refs.adduct_offset);
  s.name = id;
  s.adduct = refs.adduct;
  s.collision_energy = energy;
  BinnedSpectrum binned = bin_spectrum(s);

  if (!out_msp.empty()) {
    std::ofstream out = open_out(out_msp);
    write_msp({s}, out);
  }
  if (!out_csv.empty()) {
    std::ofstream out = open_out(out_csv);
    write_binned_csv(binned, out);
  } else {
    write_binned_csv(binned, std::cout);
  }
  std::vector<Peak> top = s.peaks;
  std::sort(top.begin(), top.end(), [](const Peak& a, const Peak& b) {
    return a.intensity > b.intensity;
  });
  std::fprintf(stderr, "%s @ %g eV: %zu peaks, reference %s\n", id.c_str(), energy,
               s.peaks.size(), ps.input.reference ? "yes" : "no");
  for (std::size_t i = 0; i < std::min<std::size_t>(top.size(), 8); ++i)
    std::fprintf(stderr, "  m/z %9.4f  intensity %.4f\n", top[i].mz, top[i].intensity);
}

void run_eval_cosine(const std::string& dataset_dir, const std::string& model_path,
                     const std::string& baseline, const std::string& split, const ModelFlags& mf,
                     const std::string& out_csv) {
  SyntheticDataset data = load_dataset(dataset_dir);
  RefStore refs = build_ref_store(data, data.train, data.config.fp);
  const std::vector<std::size_t>& mols = pick_split(data, split);

  Model m;
  Model* mp = nullptr;
  Baseline b = Baseline::Model;
  if (!model_path.empty()) {
    m = load_model_file(model_path);
    mp = &m;
  } else if (baseline == "retrieved") {
    b = Baseline::Retrieved;
  } else if (baseline == "oracle") {
    b = Baseline::Oracle;
  } else if (baseline == "zero") {
    b = Baseline::Zero;
  } else {
    throw std::runtime_error("need --model or --baseline {retrieved,oracle,zero}");
  }
  CosineEval ev = eval_cosine_split(mp, data, mols, refs, mf.opts, b);
  std::ostringstream csv;
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.6f", ev.mean);
  csv << "split,samples,mean_cosine\n" << split << ',' << ev.count << ',' << buf << '\n';
  if (!out_csv.empty())
    open_out(out_csv) << csv.str();
  else
    std::cout << csv.str();
  std::fprintf(stderr, "%s on %s: mean cosine %.6f over %zu samples\n",
               mp ? "model" : baseline.c_str(), split.c_str(), ev.mean, ev.count);
}

void run_eval_retrieval(const std::string& dataset_dir, const std::string& model_path,
                        const std::string& baseline, const std::string& split,
                        const std::string& ks_csv, std::size_t max_samples, std::size_t decoys,
                        ModelFlags& mf, std::uint64_t seed, const std::string& out_csv) {
  SyntheticDataset data = load_dataset(dataset_dir);
  RefStore refs = build_ref_store(data, data.train, data.config.fp);
  const std::vector<std::size_t>& mols = pick_split(data, split);
  std::vector<int> ks = split_csv_ints(ks_csv);

  Model m;
  Simulator sim;
  std::string label = baseline;
  if (!model_path.empty()) {
    m = load_model_file(model_path);
    sim = model_simulator(m, refs, mf.opts);
    label = "model";
  } else if (baseline == "oracle") {
    sim = oracle_simulator(data);
  } else if (baseline == "constant") {
    sim = constant_simulator();
  } else {
    throw std::runtime_error("need --model or --baseline {oracle,constant}");
  }
  EvalReport rep = eval_retrieval_at_k(sim, data, mols, refs, ks, max_samples, seed, decoys);
  std::ostringstream csv;
  csv << "k,accuracy\n";
  char buf[64];
  for (std::size_t i = 0; i < rep.ks.size(); ++i) {
    std::snprintf(buf, sizeof buf, "%.6f", rep.accuracy[i]);
    csv << rep.ks[i] << ',' << buf << '\n';
  }
  std::snprintf(buf, sizeof buf, "%.6f", rep.mean_cosine);
  csv << "mean," << buf << '\n';
  if (!out_csv.empty())
    open_out(out_csv) << csv.str();
  else
    std::cout << csv.str();
  std::fprintf(stderr, "%s on %s: %zu ranked samples, %zu decoys\n", label.c_str(), split.c_str(),
               rep.samples.size(), decoys);
  for (std::size_t i = 0; i < rep.ks.size(); ++i)
    std::fprintf(stderr, "  top-%-2d  %.4f\n", rep.ks[i], rep.accuracy[i]);
  std::fprintf(stderr, "  truth prediction cosine %.4f\n", rep.mean_cosine);
}

void run_ablate(const std::string& dataset_dir, const std::string& variants_csv, ModelFlags& mf,
                TrainConfig tc, std::size_t train_molecules, std::size_t eval_molecules,
                std::size_t molecules, std::uint64_t seed, const std::string& out_csv) {
  SyntheticDataset data;
  if (!dataset_dir.empty()) {
    data = load_dataset(dataset_dir);
  } else {
    SynthConfig sc;
    sc.molecules = molecules;
    data = synth_generate(sc, seed);
  }
  AblationSettings s;
  if (!variants_csv.empty()) s.variants = split_csv_list(variants_csv);
  s.base = mf.cfg;
  s.base.fp = data.config.fp;
  s.train = tc;
  s.train_molecules = train_molecules;
  s.eval_molecules = eval_molecules;
  s.eval = mf.opts;
  AblationTable t = ablation_run(data, s, seed);
  std::string csv = ablation_csv(t);
  if (!out_csv.empty())
    open_out(out_csv) << csv;
  else
    std::cout << csv;
  std::fprintf(stderr, "%-14s %12s %10s\n", "variant", "test_cosine", "delta");
  for (const AblationRow& r : t.rows) {
    if (r.failed)
      std::fprintf(stderr, "%-14s %12s %10s  %s\n", r.variant.c_str(), "-", "-", r.error.c_str());
    else
      std::fprintf(stderr, "%-14s %12.6f %+10.6f\n", r.variant.c_str(), r.test_cosine, r.delta);
  }
}

void run_export_pairs(const std::string& dataset_dir, const std::string& model_path,
                      const std::string& id, double energy, const ModelFlags& mf,
                      const std::string& out_csv) {
  SyntheticDataset data = load_dataset(dataset_dir);
  Model m = load_model_file(model_path);
  RefStore refs = build_ref_store(data, data.train, data.config.fp);
  const SynthMolecule* target = nullptr;
  for (const SynthMolecule& sm : data.molecules)
    if (sm.id == id) target = &sm;
  if (!target) throw std::runtime_error("molecule id not in dataset: " + id);
  PreparedSample ps = prepare_sample(refs, *target, energy, m.cfg, mf.opts, {id});
  if (!ps.input.reference) throw std::runtime_error("retrieval found no reference for " + id);
  if (!out_csv.empty()) {
    std::ofstream out = open_out(out_csv);
    export_matched_pairs(m, ps.input, out);
  } else {
    export_matched_pairs(m, ps.input, std::cout);
  }
  std::fprintf(stderr, "%s @ %g eV matched against a %zu-fragment reference\n", id.c_str(), energy,
               ps.input.reference->fragments.size());
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"spectrum simulation toolkit"};
  app.require_subcommand(1);

  std::uint64_t seed = 1;
  std::string config_path;
  app.add_option("--seed", seed, "seed for every random choice")->capture_default_str();
  app.add_option("--config", config_path, "key-value file; entries override flags");

  // synth
  auto* synth = app.add_subcommand("synth", "generate a synthetic dataset");
  SynthConfig sc;
  std::string synth_out, synth_library, energies_csv;
  synth->add_option("--out", synth_out, "dataset directory");
  synth->add_option("--library", synth_library, "also write the train-split reference library");
  synth->add_option("--molecules", sc.molecules, "molecule count")->capture_default_str();
  synth->add_option("--min-heavy", sc.min_heavy, "minimum heavy atoms")->capture_default_str();
  synth->add_option("--max-heavy", sc.max_heavy, "maximum heavy atoms")->capture_default_str();
  synth->add_option("--energies", energies_csv, "collision energy grid, comma separated");
  synth->add_option("--noise", sc.noise, "multiplicative peak noise")->capture_default_str();
  synth->add_option("--train-frac", sc.train_frac, "training fraction")->capture_default_str();
  synth->add_option("--val-frac", sc.val_frac, "validation fraction")->capture_default_str();
  synth->add_option("--max-depth", sc.frag.max_depth, "fragmentation depth")->capture_default_str();
  synth->add_option("--max-fragments", sc.frag.max_fragments, "fragments per molecule")
      ->capture_default_str();

  // fragment
  auto* fragment = app.add_subcommand("fragment", "enumerate a fragmentation DAG");
  std::string frag_smiles, frag_json, frag_csv;
  FragConfig fc;
  fragment->add_option("--smiles", frag_smiles, "input structure")->required();
  fragment->add_option("--out", frag_json, "DAG JSON output path");
  fragment->add_option("--csv", frag_csv, "fragment table CSV path (default stdout)");
  fragment->add_option("--max-depth", fc.max_depth, "maximum depth")->capture_default_str();
  fragment->add_option("--max-fragments", fc.max_fragments, "fragment cap")->capture_default_str();
  fragment->add_option("--max-ring-breaks", fc.max_ring_breaks, "ring bonds broken per step")
      ->capture_default_str();

  // retrieve
  auto* retrieve_cmd = app.add_subcommand("retrieve", "query a reference library");
  std::string lib_path, query_smiles, adduct = "[M+H]+", instrument, exclude_csv, retrieve_csv;
  double energy = 20;
  std::size_t max_spectra = 3;
  retrieve_cmd->add_option("--library", lib_path, "library file")->required();
  retrieve_cmd->add_option("--smiles", query_smiles, "query structure")->required();
  retrieve_cmd->add_option("--adduct", adduct, "adduct filter, empty matches all")
      ->capture_default_str();
  retrieve_cmd->add_option("--instrument", instrument, "instrument filter, empty matches all");
  retrieve_cmd->add_option("--energy", energy, "target collision energy")->capture_default_str();
  retrieve_cmd->add_option("--max-spectra", max_spectra, "spectra returned")->capture_default_str();
  retrieve_cmd->add_option("--exclude", exclude_csv, "molecule ids to skip, comma separated");
  retrieve_cmd->add_option("--out", retrieve_csv, "result CSV path (default stdout)");

  // match
  auto* match = app.add_subcommand("match", "align two fragmentation DAGs");
  std::string match_target, match_reference, solver = "hungarian", match_csv;
  double tau = 0.1, lambda = 0.25;
  match->add_option("target", match_target, "target DAG JSON")->required();
  match->add_option("reference", match_reference, "reference DAG JSON")->required();
  match->add_option("--solver", solver, "hungarian | rrwm | sinkhorn | softmax")
      ->capture_default_str();
  match->add_option("--tau", tau, "temperature for the soft solvers")->capture_default_str();
  match->add_option("--lambda", lambda, "edge weight for rrwm")->capture_default_str();
  match->add_option("--out", match_csv, "assignment CSV path (default stdout)");

  // train
  auto* train_cmd = app.add_subcommand("train", "train a model variant");
  std::string train_dataset, train_variant = "ngm-softmax", train_model, train_curve;
  std::size_t train_molecules = 500;
  ModelFlags train_mf;
  TrainConfig tc;
  train_cmd->add_option("--dataset", train_dataset, "dataset directory")->required();
  train_cmd->add_option("--variant", train_variant,
                        "no-rag | concat | hungarian | rrwm | ngm-sinkhorn | ngm-softmax")
      ->capture_default_str();
  train_cmd->add_option("--out", train_model, "checkpoint path")->required();
  train_cmd->add_option("--curve", train_curve, "training-curve CSV path (default stdout)");
  train_cmd->add_option("--epochs", tc.epochs, "training epochs")->capture_default_str();
  train_cmd->add_option("--lr", tc.lr, "learning rate")->capture_default_str();
  train_cmd->add_option("--momentum", tc.momentum, "momentum")->capture_default_str();
  train_cmd->add_option("--clip", tc.clip_norm, "gradient norm clip")->capture_default_str();
  train_cmd->add_option("--lr-decay", tc.lr_decay, "per-epoch learning-rate factor")
      ->capture_default_str();
  train_cmd->add_option("--train-molecules", train_molecules,
                        "training subsample, 0 = full split")
      ->capture_default_str();
  train_mf.attach(train_cmd);

  // predict
  auto* predict = app.add_subcommand("predict", "simulate one spectrum");
  std::string pred_dataset, pred_model, pred_id, pred_csv, pred_msp;
  double pred_energy = 20;
  bool pred_exclude_self = false;
  ModelFlags pred_mf;
  predict->add_option("--dataset", pred_dataset, "dataset directory")->required();
  predict->add_option("--model", pred_model, "checkpoint path")->required();
  predict->add_option("--id", pred_id, "molecule id")->required();
  predict->add_option("--energy", pred_energy, "collision energy")->capture_default_str();
  predict->add_flag("--exclude-self", pred_exclude_self, "drop the molecule itself from retrieval");
  predict->add_option("--out", pred_csv, "binned CSV path (default stdout)");
  predict->add_option("--msp", pred_msp, "peak-list MSP path");
  pred_mf.attach(predict);

  // eval-cosine
  auto* evalc = app.add_subcommand("eval-cosine", "mean binned cosine over a split");
  std::string ec_dataset, ec_model, ec_baseline, ec_split = "test", ec_csv;
  ModelFlags ec_mf;
  evalc->add_option("--dataset", ec_dataset, "dataset directory")->required();
  evalc->add_option("--model", ec_model, "checkpoint path");
  evalc->add_option("--baseline", ec_baseline, "retrieved | oracle | zero");
  evalc->add_option("--split", ec_split, "train | val | test")->capture_default_str();
  evalc->add_option("--out", ec_csv, "result CSV path (default stdout)");
  ec_mf.attach(evalc);

  // eval-retrieval
  auto* evalr = app.add_subcommand("eval-retrieval", "rank truth among decoys");
  std::string er_dataset, er_model, er_baseline, er_split = "test", er_ks = "1,2,3,4,5,8,10",
                                                 er_csv;
  std::size_t er_samples = 0, er_decoys = 49;
  ModelFlags er_mf;
  evalr->add_option("--dataset", er_dataset, "dataset directory")->required();
  evalr->add_option("--model", er_model, "checkpoint path");
  evalr->add_option("--baseline", er_baseline, "oracle | constant");
  evalr->add_option("--split", er_split, "train | val | test")->capture_default_str();
  evalr->add_option("--ks", er_ks, "accuracy cutoffs, comma separated")->capture_default_str();
  evalr->add_option("--max-samples", er_samples, "0 = every (molecule, energy) pair")
      ->capture_default_str();
  evalr->add_option("--decoys", er_decoys, "decoy count")->capture_default_str();
  evalr->add_option("--out", er_csv, "result CSV path (default stdout)");
  er_mf.attach(evalr);

  // ablate
  auto* ablate = app.add_subcommand("ablate", "train and compare all variants");
  std::string ab_dataset, ab_variants, ab_csv;
  std::size_t ab_train_molecules = 500, ab_eval_molecules = 0, ab_molecules = 2000;
  ModelFlags ab_mf;
  TrainConfig ab_tc;
  ablate->add_option("--dataset", ab_dataset, "dataset directory; generated when omitted");
  ablate->add_option("--molecules", ab_molecules, "molecule count for the generated dataset")
      ->capture_default_str();
  ablate->add_option("--variants", ab_variants, "variant list, comma separated");
  ablate->add_option("--epochs", ab_tc.epochs, "training epochs")->capture_default_str();
  ablate->add_option("--lr", ab_tc.lr, "learning rate")->capture_default_str();
  ablate->add_option("--train-molecules", ab_train_molecules, "training subsample, 0 = full split")
      ->capture_default_str();
  ablate->add_option("--eval-molecules", ab_eval_molecules, "test subsample, 0 = full split")
      ->capture_default_str();
  ablate->add_option("--out", ab_csv, "table CSV path (default stdout)");
  ab_mf.attach(ablate);

  // export-pairs
  auto* pairs = app.add_subcommand("export-pairs", "learned matching of one sample");
  std::string xp_dataset, xp_model, xp_id, xp_csv;
  double xp_energy = 20;
  ModelFlags xp_mf;
  pairs->add_option("--dataset", xp_dataset, "dataset directory")->required();
  pairs->add_option("--model", xp_model, "checkpoint path")->required();
  pairs->add_option("--id", xp_id, "molecule id")->required();
  pairs->add_option("--energy", xp_energy, "collision energy")->capture_default_str();
  pairs->add_option("--out", xp_csv, "pairs CSV path (default stdout)");
  xp_mf.attach(pairs);

  // Config-file entries are appended after argv so take-last lets them win.
  std::vector<std::string> args(argv + 1, argv + argc);
  for (std::size_t i = 0; i < args.size(); ++i) {
    std::string value;
    if (args[i] == "--config" && i + 1 < args.size())
      value = args[i + 1];
    else if (args[i].rfind("--config=", 0) == 0)
      value = args[i].substr(9);
    if (!value.empty()) {
      std::vector<std::string> extra = config_tokens(value);
      args.insert(args.end(), extra.begin(), extra.end());
      break;
    }
  }
  for (CLI::App* sub : app.get_subcommands({}))
    for (CLI::Option* o : sub->get_options())
      o->multi_option_policy(CLI::MultiOptionPolicy::TakeLast);
  for (CLI::Option* o : app.get_options()) o->multi_option_policy(CLI::MultiOptionPolicy::TakeLast);

  try {
    std::vector<const char*> cargs;
    cargs.push_back(argv[0]);
    for (const std::string& a : args) cargs.push_back(a.c_str());
    app.parse(static_cast<int>(cargs.size()), cargs.data());
  } catch (const CLI::ParseError& e) {
    return app.exit(e);
  }

  try {
    if (*synth) {
      if (!energies_csv.empty()) sc.energies = split_csv_doubles(energies_csv);
      run_synth(sc, synth_out, synth_library, seed);
    } else if (*fragment) {
      run_fragment(frag_smiles, fc, frag_json, frag_csv);
    } else if (*retrieve_cmd) {
      run_retrieve(lib_path, query_smiles, adduct, instrument, energy, max_spectra, exclude_csv,
                   retrieve_csv);
    } else if (*match) {
      run_match(match_target, match_reference, solver, tau, lambda, match_csv);
    } else if (*train_cmd) {
      run_train(train_dataset, train_variant, train_mf, tc, train_molecules, train_model,
                train_curve, seed);
    } else if (*predict) {
      run_predict(pred_dataset, pred_model, pred_id, pred_energy, pred_mf, pred_exclude_self,
                  pred_csv, pred_msp);
    } else if (*evalc) {
      run_eval_cosine(ec_dataset, ec_model, ec_baseline, ec_split, ec_mf, ec_csv);
    } else if (*evalr) {
      run_eval_retrieval(er_dataset, er_model, er_baseline, er_split, er_ks, er_samples, er_decoys,
                         er_mf, seed, er_csv);
    } else if (*ablate) {
      run_ablate(ab_dataset, ab_variants, ab_mf, ab_tc, ab_train_molecules, ab_eval_molecules,
                 ab_molecules, seed, ab_csv);
    } else if (*pairs) {
      run_export_pairs(xp_dataset, xp_model, xp_id, xp_energy, xp_mf, xp_csv);
    }
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
  return 0;
}
