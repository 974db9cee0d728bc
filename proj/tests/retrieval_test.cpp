#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <set>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "specmatch/evalkit.hpp"
#include "specmatch/retrieval.hpp"
#include "specmatch/synth.hpp"

using namespace specmatch;

namespace {

LibraryEntry entry(const std::string& id, const std::string& smiles, double energy,
                   double peak_mz, const std::string& adduct = "[M+H]+",
                   const std::string& instrument = "orbitrap") {
  LibraryEntry e;
  e.id = id;
  e.smiles = smiles;
  e.adduct = adduct;
  e.instrument = instrument;
  e.energy = energy;
  e.spectrum.peaks = {{peak_mz, 1.0}};
  return e;
}

ReferenceLibrary small_library() {
  // Energies of "a" arrive out of order on purpose.
  std::vector<LibraryEntry> rows = {
      entry("a", "CCO", 40.0, 40.0),
      entry("a", "CCO", 10.0, 10.0),
      entry("a", "CCO", 20.0, 20.0),
      entry("b", "CCN", 15.0, 15.0),
      entry("c", "CCC", 35.0, 35.0),
      entry("dup1", "CCCO", 25.0, 25.0),
      entry("dup2", "CCCO", 25.0, 25.5),
      entry("qtof-a", "CCO", 30.0, 30.0, "[M+H]+", "qtof"),
      entry("qtof-b", "CC(C)O", 30.0, 31.0, "[M+H]+", "qtof"),
  };
  return build_library(rows);
}

RetrievalQuery query_for(const ReferenceLibrary& lib, const std::string& smiles,
                         double energy = 20.0, const std::string& instrument = "orbitrap") {
  RetrievalQuery q;
  q.fp = morgan_fingerprint(parse_smiles(smiles), lib.fp_config);
  q.adduct = "[M+H]+";
  q.instrument = instrument;
  q.target_energy = energy;
  return q;
}

// Straight linear scan: filter, argmax Tanimoto, ties to the lower id.
RetrievalResult scan_reference(const ReferenceLibrary& lib, const RetrievalQuery& q) {
  RetrievalResult best;
  for (std::size_t i = 0; i < lib.records.size(); ++i) {
    const LibraryRecord& rec = lib.records[i];
    if (!q.adduct.empty() && rec.adduct != q.adduct) continue;
    if (!q.instrument.empty() && rec.instrument != q.instrument) continue;
    if (q.exclude.count(rec.id)) continue;
    double t = tanimoto(q.fp, rec.fp);
    if (!best.found || t > best.tanimoto || (t == best.tanimoto && rec.id < best.id)) {
      best.found = true;
      best.record = i;
      best.id = rec.id;
      best.tanimoto = t;
    }
  }
  return best;
}

}  // namespace

TEST_CASE("retrieval: build_library merges rows and sorts energies") {
  ReferenceLibrary lib = small_library();
  REQUIRE(lib.records.size() == 7);
  auto it = std::find_if(lib.records.begin(), lib.records.end(),
                         [](const LibraryRecord& r) { return r.id == "a"; });
  REQUIRE(it != lib.records.end());
  REQUIRE(it->spectra.size() == 3);
  CHECK(it->spectra[0].first == 10.0);
  CHECK(it->spectra[1].first == 20.0);
  CHECK(it->spectra[2].first == 40.0);
  CHECK(it->spectra[0].second.peaks[0].first == 10.0);
  CHECK(*it->spectra[2].second.collision_energy == 40.0);

  // Stored structure is canonical and the fingerprint matches a recomputation.
  for (const auto& rec : lib.records) {
    MolGraph reparsed = parse_smiles(rec.smiles);
    CHECK(canonical_key(reparsed) == canonical_key(rec.mol));
    Fingerprint fresh = morgan_fingerprint(reparsed, lib.fp_config);
    CHECK(fresh.words == rec.fp.words);
  }
}

TEST_CASE("retrieval: build_library rejects inconsistent rows") {
  CHECK(build_library({}).records.empty());
  CHECK_THROWS_AS(build_library({entry("", "CCO", 10.0, 10.0)}), std::invalid_argument);
  CHECK_THROWS_AS(build_library({entry("x", "C(", 10.0, 10.0)}), ParseError);
  CHECK_THROWS_AS(
      build_library({entry("x", "CCO", 10.0, 10.0), entry("x", "CCN", 20.0, 20.0)}),
      std::invalid_argument);
  CHECK_THROWS_AS(
      build_library({entry("x", "CCO", 10.0, 10.0), entry("x", "CCO", 20.0, 20.0, "[M+Na]+")}),
      std::invalid_argument);
  CHECK_THROWS_AS(build_library({entry("big", std::string(120, 'C'), 10.0, 10.0)}),
                  std::invalid_argument);
}

TEST_CASE("retrieval: nearest structure with filters and tie breaks") {
  ReferenceLibrary lib = small_library();

  SUBCASE("exact structure wins with tanimoto one") {
    RetrievalResult r = retrieve(lib, query_for(lib, "CCO"));
    REQUIRE(r.found);
    CHECK(r.id == "a");
    CHECK(r.tanimoto == 1.0);
    CHECK(lib.records[r.record].id == "a");
  }

  SUBCASE("identical records tie toward the lower id, exclusion yields the runner-up") {
    RetrievalQuery q = query_for(lib, "CCCO", 25.0);
    RetrievalResult r = retrieve(lib, q);
    REQUIRE(r.found);
    CHECK(r.id == "dup1");
    CHECK(r.tanimoto == 1.0);

    q.exclude = {"dup1"};
    r = retrieve(lib, q);
    REQUIRE(r.found);
    CHECK(r.id == "dup2");
    CHECK(r.tanimoto == 1.0);
  }

  SUBCASE("adduct filter can empty the candidate set") {
    RetrievalQuery q = query_for(lib, "CCO");
    q.adduct = "[M+Na]+";
    CHECK_FALSE(retrieve(lib, q).found);
  }

  SUBCASE("instrument filter trumps structural identity") {
    RetrievalResult r = retrieve(lib, query_for(lib, "CC(C)O", 30.0, "qtof"));
    REQUIRE(r.found);
    CHECK(r.id == "qtof-b");
    // The orbitrap copy of the exact structure is filtered out.
    r = retrieve(lib, query_for(lib, "CCO", 30.0, "qtof"));
    REQUIRE(r.found);
    CHECK(r.id == "qtof-a");
  }

  SUBCASE("empty instrument matches anything, ties resolve by id") {
    RetrievalResult r = retrieve(lib, query_for(lib, "CCO", 20.0, ""));
    REQUIRE(r.found);
    CHECK(r.id == "a");
  }

  SUBCASE("convenience overload agrees with the query form") {
    MolGraph g = parse_smiles("CCN");
    RetrievalResult a = retrieve(lib, g, "[M+H]+", "orbitrap", 15.0);
    RetrievalResult b = retrieve(lib, query_for(lib, "CCN", 15.0));
    REQUIRE(a.found);
    CHECK(a.id == b.id);
    CHECK(a.tanimoto == b.tanimoto);
  }
}

TEST_CASE("retrieval: spectra come back nearest-energy first") {
  ReferenceLibrary lib = small_library();
  RetrievalQuery q = query_for(lib, "CCO", 22.0);
  RetrievalResult r = retrieve(lib, q);
  REQUIRE(r.found);
  REQUIRE(r.spectra.size() == 3);
  CHECK(r.spectra[0].first == 20.0);
  CHECK(r.spectra[1].first == 10.0);
  CHECK(r.spectra[2].first == 40.0);

  // 10 and 40 are both 15 away from 25; the lower energy goes first.
  q.target_energy = 25.0;
  r = retrieve(lib, q);
  REQUIRE(r.spectra.size() == 3);
  CHECK(r.spectra[0].first == 20.0);
  CHECK(r.spectra[1].first == 10.0);
  CHECK(r.spectra[2].first == 40.0);

  q.max_spectra = 2;
  r = retrieve(lib, q);
  REQUIRE(r.spectra.size() == 2);
  CHECK(r.spectra[0].first == 20.0);
  CHECK(r.spectra[1].first == 10.0);
}

TEST_CASE("retrieval: agrees with a linear-scan reference on synthetic data") {
  SynthConfig sc;
  sc.molecules = 40;
  SyntheticDataset data = synth_generate(sc, 23);
  RefStore refs = build_ref_store(data, data.train, sc.fp);
  const std::size_t n = std::min<std::size_t>(20, data.test.size());
  REQUIRE(n > 0);
  for (std::size_t k = 0; k < n; ++k) {
    const SynthMolecule& mol = data.molecules[data.test[k]];
    RetrievalQuery q;
    q.fp = morgan_fingerprint(mol.mol, refs.lib.fp_config);
    q.adduct = refs.adduct;
    q.instrument = refs.instrument;
    q.target_energy = 20.0;
    RetrievalResult got = retrieve(refs.lib, q);
    RetrievalResult want = scan_reference(refs.lib, q);
    REQUIRE(got.found == want.found);
    if (got.found) {
      CHECK(got.id == want.id);
      CHECK(got.tanimoto == want.tanimoto);
      CHECK(got.tanimoto >= 0.0);
      CHECK(got.tanimoto <= 1.0);
    }
  }
}

TEST_CASE("retrieval: library round trip preserves queries") {
  ReferenceLibrary lib = small_library();
  std::stringstream buf;
  save_library(lib, buf);
  ReferenceLibrary back = load_library(buf);
  CHECK(back.fp_config.radius == lib.fp_config.radius);
  CHECK(back.fp_config.nbits == lib.fp_config.nbits);
  REQUIRE(back.records.size() == lib.records.size());

  RetrievalQuery q = query_for(lib, "CCO", 22.0);
  RetrievalResult a = retrieve(lib, q);
  RetrievalResult b = retrieve(back, q);
  REQUIRE(a.found);
  REQUIRE(b.found);
  CHECK(a.id == b.id);
  CHECK(a.tanimoto == b.tanimoto);
  REQUIRE(a.spectra.size() == b.spectra.size());
  for (std::size_t i = 0; i < a.spectra.size(); ++i) {
    CHECK(a.spectra[i].first == b.spectra[i].first);
    REQUIRE(b.spectra[i].second->peaks.size() == a.spectra[i].second->peaks.size());
    CHECK(b.spectra[i].second->peaks[0].first == a.spectra[i].second->peaks[0].first);
  }
}

TEST_CASE("retrieval: tampered serializations are rejected") {
  ReferenceLibrary lib = small_library();
  std::stringstream buf;
  save_library(lib, buf);
  const std::string text = buf.str();

  SUBCASE("missing version directive") {
    std::string headless = text.substr(text.find('\n') + 1);
    std::istringstream in(headless);
    CHECK_THROWS_AS(load_library(in), std::invalid_argument);
  }

  SUBCASE("corrupted fingerprint annotation") {
    std::string broken = text;
    auto pos = broken.find("Fingerprint: ");
    REQUIRE(pos != std::string::npos);
    pos += std::string("Fingerprint: ").size();
    broken[pos] = broken[pos] == '0' ? '1' : '0';
    std::istringstream in(broken);
    CHECK_THROWS_AS(load_library(in), std::invalid_argument);
  }
}
