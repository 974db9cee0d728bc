#pragma once

#include <array>
#include <cstdint>
#include <iosfwd>
#include <stdexcept>
#include <string>
#include <vector>

// Heavy-atom molecular graphs over a fixed element vocabulary, parsed from a
// SMILES subset. Hydrogens are stored as per-atom counts, never as graph
// nodes. Aromaticity is carried as atom/bond flags taken from the input
// notation; no perception is done beyond checking that aromatic atoms sit on
// a cycle of aromatic bonds.

namespace specmatch {

enum class Element : std::uint8_t { C = 0, H, N, O, S, P, F, Cl, Br, I };
inline constexpr std::size_t kElementCount = 10;
extern const std::array<const char*, kElementCount> kElementSymbols;
extern const std::array<double, kElementCount> kMonoisotopicMass;
inline constexpr double kElectronMass = 0.000548579909;
inline constexpr double kHydrogenShift = 1.00782503207;  // monoisotopic H
inline constexpr double kMaxPipelineMass = 1500.0;

enum class BondOrder : std::uint8_t { Single = 1, Double = 2, Triple = 3, Aromatic = 4 };

// Bond multiplicity used for valence and hydrogen bookkeeping; aromatic
// counts as one.
int bond_multiplicity(BondOrder o);

struct Atom {
  Element element = Element::C;
  std::int8_t charge = 0;
  std::uint8_t hydrogens = 0;
  bool aromatic = false;
};

struct Bond {
  std::uint32_t a = 0;
  std::uint32_t b = 0;
  BondOrder order = BondOrder::Single;
};

struct MolGraph {
  std::vector<Atom> atoms;
  std::vector<Bond> bonds;

  std::size_t size() const { return atoms.size(); }
  int degree(std::uint32_t v) const;
  // (neighbor, bond index) pairs in bond order.
  std::vector<std::pair<std::uint32_t, std::uint32_t>> neighbors(std::uint32_t v) const;
};

struct ParseError : std::runtime_error {
  std::size_t offset;
  ParseError(const std::string& msg, std::size_t off)
      : std::runtime_error(msg + " (at byte " + std::to_string(off) + ")"), offset(off) {}
};

MolGraph parse_smiles(const std::string& text);

// All-bracket writer; parse_smiles(print_smiles(g)) reproduces g up to atom
// order, verified via canonical_key.
std::string print_smiles(const MolGraph& g);

bool is_connected(const MolGraph& g);

// Demotes aromatic bonds that no longer sit on an aromatic cycle (2-core of
// the aromatic-bond subgraph) to single bonds and clears the flag on atoms
// left outside it. Hydrogen counts are not touched. Returns true if anything
// changed; the parser treats a change as a validation failure, fragment
// extraction applies it after cutting rings open.
bool normalize_aromatic_flags(MolGraph& g);

// Element counts (H included) plus total charge.
struct Formula {
  std::array<int, kElementCount> counts{};
  int charge = 0;

  bool operator==(const Formula&) const = default;
  // True when every count and the charge of rhs is <= this.
  bool contains(const Formula& rhs) const;
  std::string to_string() const;
};

Formula formula_of(const MolGraph& g);

// Sum of atomic monoisotopic masses plus hydrogens, net charge adjusted by
// electron mass. Throws std::invalid_argument on an empty graph.
double monoisotopic_mass(const MolGraph& g);
double monoisotopic_mass(const Formula& f);

// Permutation-invariant structure key via iterative neighborhood hashing.
// Equal keys identify identical labeled graphs for this toolkit; collisions
// are possible in principle but not observed at pipeline scale.
std::string canonical_key(const MolGraph& g);

// Lines of a text stream as SMILES strings; blank lines and '#' comments are
// skipped.
std::vector<std::string> read_smiles_list(std::istream& in);

}  // namespace specmatch
