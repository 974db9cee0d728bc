#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "specmatch/fingerprint.hpp"
#include "specmatch/fragdag.hpp"
#include "specmatch/molgraph.hpp"
#include "specmatch/spectrum.hpp"

// Synthetic benchmark data: randomly grown small molecules, their
// fragmentation DAGs, and spectra produced by a hidden intensity function
// that depends only on fragment features and collision energy. Shared
// fragments therefore receive identical raw intensities across molecules,
// which is the structure a retrieval-augmented predictor can exploit.

namespace specmatch {

struct SynthConfig {
  std::size_t molecules = 2000;
  int min_heavy = 4;
  int max_heavy = 8;
  std::vector<double> energies = {10, 20, 40};
  // Multiplicative per-peak noise amplitude; 0 gives the bare hidden
  // function (oracle setting).
  double noise = 0.05;
  double train_frac = 0.8;
  double val_frac = 0.1;
  FragConfig frag{.max_depth = 2, .max_fragments = 16};
  FingerprintConfig fp;
  std::string adduct = "[M+H]+";
  std::string instrument = "SYNTH";
};

struct SynthMolecule {
  std::string id;
  std::string smiles;  // round-trip canonical form
  MolGraph mol;
  FragmentationDag dag;
  std::vector<Spectrum> spectra;  // aligned with SynthConfig::energies
};

struct SyntheticDataset {
  SynthConfig config;
  std::uint64_t seed = 0;
  std::vector<SynthMolecule> molecules;  // unique by canonical key
  std::vector<std::size_t> train, val, test;
};

// Raw hidden-function output for one fragment at one energy, before noise
// and per-spectrum normalization. Deterministic in (fragment features,
// energy, seed); structurally identical fragments map to identical values.
std::array<double, kShiftCount> hidden_intensities(const FragmentNode& node, double energy,
                                                   std::uint64_t seed);

SyntheticDataset synth_generate(const SynthConfig& cfg, std::uint64_t seed);

// Directory layout: config.json, molecules.csv (id,split,smiles),
// spectra.msp. DAGs are recomputed on load from the stored structures and
// fragmentation settings, so the files stay small and cannot drift from the
// graphs.
void save_dataset(const SyntheticDataset& d, const std::string& dir);
SyntheticDataset load_dataset(const std::string& dir);

}  // namespace specmatch
