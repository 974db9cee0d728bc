#pragma once

#include <array>
#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

#include "specmatch/molgraph.hpp"

// Combinatorial fragmentation DAGs. Children arise from breaking one bridge
// bond, or a pair of ring bonds whose joint removal splits the fragment.
// Each broken bond endpoint that stays in a fragment is capped with
// hydrogens matching the bond multiplicity. Structurally identical fragments
// (by canonical key) share a node, so the result is a rooted DAG.

namespace specmatch {

struct FragConfig {
  int max_depth = 3;
  std::size_t max_fragments = 100;
  int max_ring_breaks = 2;   // <2 disables ring fragmentation
  std::size_t gen_cap = 4000;  // per-construction candidate ceiling
};

struct FragmentNode {
  std::uint32_t id = 0;
  MolGraph graph;
  Formula formula;
  double mass = 0;       // monoisotopic, hydrogens capped
  int broken_bonds = 0;  // along the discovery path
  int depth = 0;         // shortest edge distance from root
  std::string key;
};

struct FragmentationDag {
  std::vector<FragmentNode> fragments;
  std::vector<std::pair<std::uint32_t, std::uint32_t>> edges;  // parent -> child
  static constexpr std::uint32_t kRoot = 0;

  std::vector<std::vector<std::uint32_t>> children_lists() const;
  std::vector<std::vector<std::uint32_t>> parent_lists() const;
};

// Edge-reversed view used by the reverse message passes.
std::vector<std::pair<std::uint32_t, std::uint32_t>> reverse_edges(const FragmentationDag& dag);

// Throws std::invalid_argument on an empty, disconnected, or over-mass
// (> 1500 Da) input.
FragmentationDag enumerate_fragments(const MolGraph& molecule, const FragConfig& cfg = {});

inline constexpr int kShiftCount = 13;  // hydrogen shifts -6..+6

// Fragment mass under each hydrogen rearrangement shift.
std::array<double, kShiftCount> shifted_masses(const FragmentNode& node);

void write_dag_json(const FragmentationDag& dag, std::ostream& out);
FragmentationDag read_dag_json(std::istream& in);

}  // namespace specmatch
