#include <doctest.h>

#include <cmath>

#include "specmatch/fingerprint.hpp"
#include "specmatch/molgraph.hpp"
#include "testutil.hpp"

using namespace specmatch;
using testutil::Rng;

TEST_CASE("fingerprint: tanimoto on hand-built bitsets") {
  Fingerprint a = testutil::make_fingerprint({1, 2, 3});
  Fingerprint b = testutil::make_fingerprint({2, 3, 4});
  CHECK(tanimoto(a, b) == doctest::Approx(0.5).epsilon(1e-12));
  CHECK(tanimoto(a, a) == 1.0);
  Fingerprint empty = testutil::make_fingerprint({});
  CHECK(tanimoto(empty, empty) == 1.0);
  CHECK(tanimoto(empty, a) == 0.0);
  CHECK(a.popcount() == 3);
  CHECK(a.test(2));
  CHECK_FALSE(a.test(5));
}

TEST_CASE("fingerprint: invariant under atom relabeling") {
  MolGraph g = parse_smiles("CC(C)C(N)CO");
  Fingerprint base = morgan_fingerprint(g);
  Rng rng(7);
  for (int trial = 0; trial < 50; ++trial) {
    MolGraph p = testutil::permute_atoms(g, testutil::random_permutation(rng, g.atoms.size()));
    Fingerprint fp = morgan_fingerprint(p);
    CHECK(fp.words == base.words);
  }
}

TEST_CASE("fingerprint: self similarity is exactly one") {
  for (const char* smiles : {"C", "CCO", "c1ccccc1", "CC(C)O"}) {
    Fingerprint fp = morgan_fingerprint(parse_smiles(smiles));
    CHECK(fp.popcount() > 0);
    CHECK(tanimoto(fp, fp) == 1.0);
  }
}

TEST_CASE("fingerprint: heteroatom substitution flips bits at radius one") {
  FingerprintConfig cfg;
  cfg.radius = 1;
  Fingerprint o = morgan_fingerprint(parse_smiles("CCO"), cfg);
  Fingerprint n = morgan_fingerprint(parse_smiles("CCN"), cfg);
  CHECK(o.words != n.words);
  CHECK(tanimoto(o, n) < 1.0);
}

TEST_CASE("fingerprint: similar pair scores above dissimilar pair") {
  Fingerprint hexane = morgan_fingerprint(parse_smiles("CCCCCC"));
  Fingerprint hexanol = morgan_fingerprint(parse_smiles("CCCCCCO"));
  Fingerprint water = morgan_fingerprint(parse_smiles("O"));
  CHECK(tanimoto(hexane, hexanol) > tanimoto(hexane, water));
}

TEST_CASE("fingerprint: hex round trip") {
  Fingerprint fp = morgan_fingerprint(parse_smiles("CC(C)c1ccccc1"));
  Fingerprint back = Fingerprint::from_hex(fp.to_hex(), fp.nbits);
  CHECK(back.words == fp.words);
  CHECK(back.nbits == fp.nbits);
}
