#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "specmatch/molgraph.hpp"

// Circular substructure fingerprints: each atom contributes hashed
// environment identifiers for radii 0..r, folded onto a fixed-width bitset.
// Similarity is Tanimoto over the bitsets, computed with the popcount
// kernels.

namespace specmatch {

struct FingerprintConfig {
  int radius = 2;
  std::size_t nbits = 2048;  // power of two, >= 64
};

struct Fingerprint {
  std::vector<std::uint64_t> words;
  std::size_t nbits = 0;

  std::size_t popcount() const;
  bool test(std::size_t bit) const;
  std::string to_hex() const;
  static Fingerprint from_hex(const std::string& hex, std::size_t nbits);
};

Fingerprint morgan_fingerprint(const MolGraph& g, const FingerprintConfig& cfg = {});

// |A & B| / |A | B|; two empty sets count as identical.
double tanimoto(const Fingerprint& a, const Fingerprint& b);

}  // namespace specmatch
