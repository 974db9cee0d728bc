#pragma once

#include <iosfwd>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include "specmatch/fingerprint.hpp"
#include "specmatch/molgraph.hpp"
#include "specmatch/spectrum.hpp"

// Reference library: annotated structure-spectrum pairs indexed by packed
// fingerprints, queried by Tanimoto nearest-structure with adduct and
// instrument filters and collision-energy selection.

namespace specmatch {

// One input row; rows sharing an id merge into one record with the union of
// their spectra. Rows of one id must agree on structure, adduct, and
// instrument.
struct LibraryEntry {
  std::string id;
  std::string smiles;
  std::string adduct;
  std::string instrument;
  double energy = 0;
  Spectrum spectrum;
};

struct LibraryRecord {
  std::string id;
  std::string smiles;  // canonical form, reparsed on load
  MolGraph mol;
  Fingerprint fp;
  std::string adduct;
  std::string instrument;
  std::vector<std::pair<double, Spectrum>> spectra;  // energy ascending
};

struct ReferenceLibrary {
  FingerprintConfig fp_config;
  std::vector<LibraryRecord> records;
};

// Throws std::invalid_argument on unparseable structures, masses above the
// pipeline ceiling, or rows of one id that disagree on structure or labels.
ReferenceLibrary build_library(const std::vector<LibraryEntry>& entries,
                               const FingerprintConfig& fp = {});

// MSP-compatible flat file with leading '#' directives carrying the format
// version and fingerprint parameters; every stored fingerprint is verified
// against its structure on load.
void save_library(const ReferenceLibrary& lib, std::ostream& out);
ReferenceLibrary load_library(std::istream& in);

struct RetrievalQuery {
  Fingerprint fp;
  std::string adduct;      // exact match; empty matches anything
  std::string instrument;  // exact match; empty matches anything
  double target_energy = 0;
  std::size_t max_spectra = 3;
  std::set<std::string> exclude;  // molecule ids, caller-controlled
};

struct RetrievalResult {
  bool found = false;
  std::size_t record = 0;  // index into ReferenceLibrary::records
  std::string id;
  double tanimoto = 0;
  // Closest first by |energy - target|, ties toward the lower energy;
  // pointers stay owned by the library.
  std::vector<std::pair<double, const Spectrum*>> spectra;
};

// Linear scan over the filtered records; argmax Tanimoto with ties broken
// toward the lexicographically lower id. An empty candidate set yields
// found = false (callers fall back to reference-free wiring).
RetrievalResult retrieve(const ReferenceLibrary& lib, const RetrievalQuery& q);
RetrievalResult retrieve(const ReferenceLibrary& lib, const MolGraph& query,
                         const std::string& adduct, const std::string& instrument,
                         double target_energy, const std::set<std::string>& exclude = {});

}  // namespace specmatch
