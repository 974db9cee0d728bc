#include "specmatch/retrieval.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <istream>
#include <map>
#include <ostream>
#include <sstream>
#include <stdexcept>

namespace specmatch {

namespace {

std::string lower(std::string s) {
  for (char& c : s) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  return s;
}

const std::string* find_extra(const Spectrum& s, const std::string& want) {
  for (const auto& [k, v] : s.extras)
    if (lower(k) == want) return &v;
  return nullptr;
}

double record_energy(const Spectrum& s, const std::string& id) {
  if (!s.collision_energy) throw std::invalid_argument("library spectrum for '" + id + "' lacks a collision energy");
  return *s.collision_energy;
}

}  // namespace

ReferenceLibrary build_library(const std::vector<LibraryEntry>& entries, const FingerprintConfig& fp) {
  ReferenceLibrary lib;
  lib.fp_config = fp;
  std::map<std::string, std::size_t> by_id;
  for (const auto& e : entries) {
    if (e.id.empty()) throw std::invalid_argument("library entry with empty id");
    auto it = by_id.find(e.id);
    if (it == by_id.end()) {
      LibraryRecord rec;
      rec.id = e.id;
      rec.mol = parse_smiles(e.smiles);
      if (monoisotopic_mass(rec.mol) > kMaxPipelineMass)
        throw std::invalid_argument("library molecule '" + e.id + "' above the mass ceiling");
      rec.smiles = print_smiles(rec.mol);
      rec.fp = morgan_fingerprint(rec.mol, fp);
      rec.adduct = e.adduct;
      rec.instrument = e.instrument;
      by_id.emplace(e.id, lib.records.size());
      lib.records.push_back(std::move(rec));
      it = by_id.find(e.id);
    } else {
      LibraryRecord& rec = lib.records[it->second];
      MolGraph mol = parse_smiles(e.smiles);
      if (canonical_key(mol) != canonical_key(rec.mol))
        throw std::invalid_argument("conflicting structures for library id '" + e.id + "'");
      if (e.adduct != rec.adduct || e.instrument != rec.instrument)
        throw std::invalid_argument("conflicting annotations for library id '" + e.id + "'");
    }
    LibraryRecord& rec = lib.records[it->second];
    Spectrum sp = e.spectrum;
    sp.collision_energy = e.energy;
    rec.spectra.emplace_back(e.energy, std::move(sp));
  }
  for (auto& rec : lib.records)
    std::stable_sort(rec.spectra.begin(), rec.spectra.end(),
                     [](const auto& a, const auto& b) { return a.first < b.first; });
  return lib;
}

void save_library(const ReferenceLibrary& lib, std::ostream& out) {
  out << "# specmatch-library-v1\n";
  out << "# fingerprint radius=" << lib.fp_config.radius << " nbits=" << lib.fp_config.nbits << "\n\n";
  std::vector<Spectrum> flat;
  for (const auto& rec : lib.records) {
    for (const auto& [energy, sp] : rec.spectra) {
      Spectrum s = sp;
      s.name = rec.id;
      s.adduct = rec.adduct;
      s.instrument = rec.instrument;
      s.collision_energy = energy;
      s.extras["SMILES"] = rec.smiles;
      s.extras["Fingerprint"] = rec.fp.to_hex();
      flat.push_back(std::move(s));
    }
  }
  write_msp(flat, out);
}

ReferenceLibrary load_library(std::istream& in) {
  // Directives ride on '#' lines that the MSP parser skips, so the stream is
  // scanned for them first.
  std::ostringstream buf;
  buf << in.rdbuf();
  const std::string text = buf.str();

  FingerprintConfig fp;
  bool versioned = false;
  std::istringstream head(text);
  std::string line;
  while (std::getline(head, line)) {
    if (line.empty() || line[0] != '#') continue;
    if (line.find("specmatch-library-v1") != std::string::npos) versioned = true;
    std::istringstream ls(line.substr(1));
    std::string tok;
    while (ls >> tok) {
      if (tok.rfind("radius=", 0) == 0) fp.radius = std::stoul(tok.substr(7));
      if (tok.rfind("nbits=", 0) == 0) fp.nbits = std::stoul(tok.substr(6));
    }
  }
  if (!versioned) throw std::invalid_argument("not a specmatch library file");

  std::istringstream body(text);
  std::vector<Spectrum> specs = parse_msp(body, true);

  ReferenceLibrary lib;
  lib.fp_config = fp;
  std::map<std::string, std::size_t> by_id;
  for (auto& sp : specs) {
    const std::string* smiles = find_extra(sp, "smiles");
    if (!smiles) throw std::invalid_argument("library spectrum '" + sp.name + "' lacks a SMILES annotation");
    const std::string* fphex = find_extra(sp, "fingerprint");
    const double energy = record_energy(sp, sp.name);

    auto it = by_id.find(sp.name);
    if (it == by_id.end()) {
      LibraryRecord rec;
      rec.id = sp.name;
      rec.mol = parse_smiles(*smiles);
      rec.smiles = print_smiles(rec.mol);
      rec.fp = morgan_fingerprint(rec.mol, fp);
      if (fphex && Fingerprint::from_hex(*fphex, fp.nbits).words != rec.fp.words)
        throw std::invalid_argument("stored fingerprint for '" + sp.name + "' does not match its structure");
      rec.adduct = sp.adduct;
      rec.instrument = sp.instrument;
      by_id.emplace(sp.name, lib.records.size());
      lib.records.push_back(std::move(rec));
      it = by_id.find(sp.name);
    }
    LibraryRecord& rec = lib.records[it->second];
    if (sp.adduct != rec.adduct || sp.instrument != rec.instrument)
      throw std::invalid_argument("conflicting annotations for library id '" + sp.name + "'");
    sp.extras.erase("SMILES");
    sp.extras.erase("Fingerprint");
    rec.spectra.emplace_back(energy, std::move(sp));
  }
  for (auto& rec : lib.records)
    std::stable_sort(rec.spectra.begin(), rec.spectra.end(),
                     [](const auto& a, const auto& b) { return a.first < b.first; });
  return lib;
}

RetrievalResult retrieve(const ReferenceLibrary& lib, const RetrievalQuery& q) {
  RetrievalResult res;
  for (std::size_t i = 0; i < lib.records.size(); ++i) {
    const LibraryRecord& rec = lib.records[i];
    if (!q.adduct.empty() && rec.adduct != q.adduct) continue;
    if (!q.instrument.empty() && rec.instrument != q.instrument) continue;
    if (q.exclude.count(rec.id)) continue;
    const double t = tanimoto(q.fp, rec.fp);
    if (!res.found || t > res.tanimoto || (t == res.tanimoto && rec.id < res.id)) {
      res.found = true;
      res.record = i;
      res.id = rec.id;
      res.tanimoto = t;
    }
  }
  if (!res.found) return res;

  const LibraryRecord& rec = lib.records[res.record];
  std::vector<std::size_t> order(rec.spectra.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    const double da = std::abs(rec.spectra[a].first - q.target_energy);
    const double db = std::abs(rec.spectra[b].first - q.target_energy);
    if (da != db) return da < db;
    return rec.spectra[a].first < rec.spectra[b].first;
  });
  const std::size_t n = std::min(q.max_spectra, order.size());
  for (std::size_t i = 0; i < n; ++i)
    res.spectra.emplace_back(rec.spectra[order[i]].first, &rec.spectra[order[i]].second);
  return res;
}

RetrievalResult retrieve(const ReferenceLibrary& lib, const MolGraph& query, const std::string& adduct,
                         const std::string& instrument, double target_energy,
                         const std::set<std::string>& exclude) {
  RetrievalQuery q;
  q.fp = morgan_fingerprint(query, lib.fp_config);
  q.adduct = adduct;
  q.instrument = instrument;
  q.target_energy = target_energy;
  q.exclude = exclude;
  return retrieve(lib, q);
}

}  // namespace specmatch
