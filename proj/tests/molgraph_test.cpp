#include <doctest.h>

#include <cmath>
#include <set>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "specmatch/molgraph.hpp"
#include "testutil.hpp"

using namespace specmatch;
using testutil::Rng;

TEST_CASE("molgraph: methane parses to one carbon with four hydrogens") {
  MolGraph g = parse_smiles("C");
  REQUIRE(g.atoms.size() == 1);
  CHECK(g.atoms[0].element == Element::C);
  CHECK(g.atoms[0].hydrogens == 4);
  CHECK(g.bonds.empty());
  CHECK(std::fabs(monoisotopic_mass(g) - 16.0313) <= 1e-4);
  Formula f = formula_of(g);
  CHECK(f.counts[static_cast<int>(Element::C)] == 1);
  CHECK(f.counts[static_cast<int>(Element::H)] == 4);
}

TEST_CASE("molgraph: ethane has one bond and six hydrogens") {
  MolGraph g = parse_smiles("CC");
  REQUIRE(g.atoms.size() == 2);
  REQUIRE(g.bonds.size() == 1);
  CHECK(g.bonds[0].order == BondOrder::Single);
  CHECK(g.atoms[0].hydrogens == 3);
  CHECK(g.atoms[1].hydrogens == 3);
  CHECK(formula_of(g).counts[static_cast<int>(Element::H)] == 6);
}

TEST_CASE("molgraph: benzene is an aromatic six-ring at the book mass") {
  MolGraph g = parse_smiles("c1ccccc1");
  REQUIRE(g.atoms.size() == 6);
  REQUIRE(g.bonds.size() == 6);
  for (const Atom& a : g.atoms) {
    CHECK(a.element == Element::C);
    CHECK(a.aromatic);
    CHECK(a.hydrogens == 1);
  }
  for (const Bond& b : g.bonds) CHECK(b.order == BondOrder::Aromatic);
  CHECK(std::fabs(monoisotopic_mass(g) - 78.0470) <= 1e-4);
  CHECK(formula_of(g).to_string() == "C6H6");
}

TEST_CASE("molgraph: hydrogen counts respect bond multiplicity") {
  MolGraph g = parse_smiles("C=O");
  CHECK(g.atoms[0].hydrogens == 2);
  CHECK(g.atoms[1].hydrogens == 0);
  CHECK(bond_multiplicity(BondOrder::Double) == 2);
  CHECK(bond_multiplicity(BondOrder::Aromatic) == 1);
  MolGraph eth = parse_smiles("CCO");
  CHECK(eth.atoms[2].hydrogens == 1);
}

TEST_CASE("molgraph: degree and neighbors follow the bond list") {
  MolGraph g = parse_smiles("CC(C)O");
  CHECK(g.degree(1) == 3);
  CHECK(g.degree(0) == 1);
  auto nb = g.neighbors(1);
  REQUIRE(nb.size() == 3);
  std::set<std::uint32_t> ids;
  for (auto [v, bi] : nb) {
    ids.insert(v);
    CHECK((g.bonds[bi].a == 1 || g.bonds[bi].b == 1));
  }
  CHECK(ids == std::set<std::uint32_t>{0, 2, 3});
}

TEST_CASE("molgraph: canonical key survives 1000 relabelings") {
  MolGraph g = parse_smiles("CC(C)C(N)CO");
  const std::string key = canonical_key(g);
  Rng rng(42);
  for (int trial = 0; trial < 1000; ++trial) {
    MolGraph p = testutil::permute_atoms(g, testutil::random_permutation(rng, g.atoms.size()));
    CHECK(canonical_key(p) == key);
  }
}

TEST_CASE("molgraph: canonical key separates close structures") {
  CHECK(canonical_key(parse_smiles("CCO")) != canonical_key(parse_smiles("CCN")));
  CHECK(canonical_key(parse_smiles("CCO")) != canonical_key(parse_smiles("CCC")));
  CHECK(canonical_key(parse_smiles("CC(C)O")) != canonical_key(parse_smiles("CCCO")));
}

TEST_CASE("molgraph: print then parse reproduces the structure") {
  for (const char* smiles : {"C", "CC", "CCO", "CCN", "c1ccccc1", "CC(C)O", "C1CC1", "CC(=O)O",
                             "C#N", "CS(=O)C", "c1ccncc1", "FC(F)F"}) {
    MolGraph g = parse_smiles(smiles);
    MolGraph back = parse_smiles(print_smiles(g));
    CHECK(canonical_key(back) == canonical_key(g));
    CHECK(formula_of(back) == formula_of(g));
  }
}

TEST_CASE("molgraph: parse rejects malformed input with an offset") {
  CHECK_THROWS_AS(parse_smiles(""), ParseError);
  CHECK_THROWS_AS(parse_smiles("C("), ParseError);
  CHECK_THROWS_AS(parse_smiles("C1CC"), ParseError);
  CHECK_THROWS_AS(parse_smiles("Cq"), ParseError);
  try {
    parse_smiles("CCq");
  } catch (const ParseError& e) {
    CHECK(e.offset == 2);
  }
}

TEST_CASE("molgraph: connectivity check") {
  CHECK(is_connected(parse_smiles("C")));
  CHECK(is_connected(parse_smiles("CCO")));
  MolGraph two;
  two.atoms.resize(2);
  CHECK_FALSE(is_connected(two));
}

TEST_CASE("molgraph: aromatic flags are demoted off broken rings") {
  MolGraph g = parse_smiles("c1ccccc1");
  g.bonds.erase(g.bonds.begin());
  CHECK(normalize_aromatic_flags(g));
  for (const Bond& b : g.bonds) CHECK(b.order == BondOrder::Single);
  for (const Atom& a : g.atoms) CHECK_FALSE(a.aromatic);
  MolGraph intact = parse_smiles("c1ccccc1");
  CHECK_FALSE(normalize_aromatic_flags(intact));
}

TEST_CASE("molgraph: formula containment and empty-graph mass") {
  Formula big = formula_of(parse_smiles("CCO"));
  Formula small = formula_of(parse_smiles("C"));
  CHECK(big.contains(small));
  CHECK_FALSE(small.contains(big));
  CHECK_THROWS_AS(monoisotopic_mass(MolGraph{}), std::invalid_argument);
}

TEST_CASE("molgraph: smiles list reader skips blanks and comments") {
  std::istringstream in("CCO\n\n# comment\nCCN\n");
  auto lines = read_smiles_list(in);
  REQUIRE(lines.size() == 2);
  CHECK(lines[0] == "CCO");
  CHECK(lines[1] == "CCN");
}
