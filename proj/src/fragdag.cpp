#include "specmatch/fragdag.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <ostream>
#include <set>
#include <stdexcept>

#include <json.hpp>

namespace specmatch {

std::vector<std::vector<std::uint32_t>> FragmentationDag::children_lists() const {
  std::vector<std::vector<std::uint32_t>> out(fragments.size());
  for (auto [p, c] : edges) out[p].push_back(c);
  return out;
}

std::vector<std::vector<std::uint32_t>> FragmentationDag::parent_lists() const {
  std::vector<std::vector<std::uint32_t>> out(fragments.size());
  for (auto [p, c] : edges) out[c].push_back(p);
  return out;
}

std::vector<std::pair<std::uint32_t, std::uint32_t>> reverse_edges(const FragmentationDag& dag) {
  std::vector<std::pair<std::uint32_t, std::uint32_t>> rev;
  rev.reserve(dag.edges.size());
  for (auto [p, c] : dag.edges) rev.emplace_back(c, p);
  return rev;
}

namespace {

std::vector<std::vector<std::uint32_t>> split_components(const MolGraph& g,
                                                         const std::vector<std::size_t>& removed) {
  std::vector<std::vector<std::uint32_t>> adj(g.atoms.size());
  for (std::size_t i = 0; i < g.bonds.size(); ++i) {
    if (std::find(removed.begin(), removed.end(), i) != removed.end()) continue;
    adj[g.bonds[i].a].push_back(g.bonds[i].b);
    adj[g.bonds[i].b].push_back(g.bonds[i].a);
  }
  std::vector<int> comp(g.atoms.size(), -1);
  int ncomp = 0;
  for (std::uint32_t s = 0; s < g.atoms.size(); ++s) {
    if (comp[s] >= 0) continue;
    comp[s] = ncomp;
    std::vector<std::uint32_t> stack{s};
    while (!stack.empty()) {
      std::uint32_t v = stack.back();
      stack.pop_back();
      for (std::uint32_t u : adj[v])
        if (comp[u] < 0) {
          comp[u] = ncomp;
          stack.push_back(u);
        }
    }
    ++ncomp;
  }
  std::vector<std::vector<std::uint32_t>> out(ncomp);
  for (std::uint32_t v = 0; v < g.atoms.size(); ++v)
    out[comp[v]].push_back(v);  // ascending within each component by construction
  return out;
}

std::vector<bool> bridge_flags(const MolGraph& g) {
  std::vector<bool> flags(g.bonds.size(), false);
  for (std::size_t i = 0; i < g.bonds.size(); ++i)
    flags[i] = split_components(g, {i}).size() > 1;
  return flags;
}

MolGraph extract_fragment(const MolGraph& parent, const std::vector<std::uint32_t>& atoms,
                          const std::vector<std::size_t>& removed) {
  MolGraph child;
  std::vector<int> remap(parent.atoms.size(), -1);
  for (std::uint32_t old : atoms) {
    remap[old] = static_cast<int>(child.atoms.size());
    child.atoms.push_back(parent.atoms[old]);
  }
  for (std::size_t i = 0; i < parent.bonds.size(); ++i) {
    if (std::find(removed.begin(), removed.end(), i) != removed.end()) continue;
    const Bond& b = parent.bonds[i];
    if (remap[b.a] < 0 || remap[b.b] < 0) continue;
    Bond nb = b;
    nb.a = static_cast<std::uint32_t>(remap[b.a]);
    nb.b = static_cast<std::uint32_t>(remap[b.b]);
    child.bonds.push_back(nb);
  }
  // Cap the cut site: each severed bond donates hydrogens matching its
  // multiplicity to whichever endpoint stays in this fragment.
  for (std::size_t i : removed) {
    const Bond& b = parent.bonds[i];
    int m = bond_multiplicity(b.order);
    if (remap[b.a] >= 0)
      child.atoms[remap[b.a]].hydrogens = static_cast<std::uint8_t>(
          child.atoms[remap[b.a]].hydrogens + m);
    if (remap[b.b] >= 0)
      child.atoms[remap[b.b]].hydrogens = static_cast<std::uint8_t>(
          child.atoms[remap[b.b]].hydrogens + m);
  }
  normalize_aromatic_flags(child);
  return child;
}

void verify_acyclic(const FragmentationDag& dag) {
  std::vector<int> indeg(dag.fragments.size(), 0);
  for (auto [p, c] : dag.edges) {
    (void)p;
    ++indeg[c];
  }
  std::vector<std::uint32_t> queue;
  for (std::uint32_t v = 0; v < dag.fragments.size(); ++v)
    if (indeg[v] == 0) queue.push_back(v);
  auto children = dag.children_lists();
  std::size_t seen = 0;
  while (!queue.empty()) {
    std::uint32_t v = queue.back();
    queue.pop_back();
    ++seen;
    for (std::uint32_t c : children[v])
      if (--indeg[c] == 0) queue.push_back(c);
  }
  if (seen != dag.fragments.size())
    throw std::logic_error("fragmentation graph contains a cycle");
}

struct NodeOrder {
  std::size_t heavy;
  double mass;
  const std::string* key;
  std::uint32_t id;
  bool operator<(const NodeOrder& o) const {
    if (heavy != o.heavy) return heavy > o.heavy;
    if (mass != o.mass) return mass > o.mass;
    if (*key != *o.key) return *key < *o.key;
    return id < o.id;
  }
};

// Keeps the flagged nodes, remaps ids preserving relative order (root stays
// 0), drops dangling edges, and restores deterministic edge order.
void rebuild_subset(FragmentationDag& dag, const std::vector<bool>& keep) {
  std::vector<int> remap(dag.fragments.size(), -1);
  std::vector<FragmentNode> kept;
  for (std::uint32_t v = 0; v < dag.fragments.size(); ++v) {
    if (!keep[v]) continue;
    remap[v] = static_cast<int>(kept.size());
    kept.push_back(std::move(dag.fragments[v]));
    kept.back().id = static_cast<std::uint32_t>(kept.size() - 1);
  }
  std::vector<std::pair<std::uint32_t, std::uint32_t>> edges;
  for (auto [p, c] : dag.edges)
    if (remap[p] >= 0 && remap[c] >= 0)
      edges.emplace_back(static_cast<std::uint32_t>(remap[p]),
                         static_cast<std::uint32_t>(remap[c]));
  std::sort(edges.begin(), edges.end());
  dag.fragments = std::move(kept);
  dag.edges = std::move(edges);
}

}  // namespace

FragmentationDag enumerate_fragments(const MolGraph& molecule, const FragConfig& cfg) {
  if (molecule.atoms.empty()) throw std::invalid_argument("enumerate_fragments: empty molecule");
  if (!is_connected(molecule))
    throw std::invalid_argument("enumerate_fragments: molecule must be connected");
  double mass = monoisotopic_mass(molecule);
  if (mass > kMaxPipelineMass)
    throw std::invalid_argument("enumerate_fragments: precursor mass exceeds 1500 Da");
  if (cfg.max_fragments < 1) throw std::invalid_argument("enumerate_fragments: max_fragments < 1");

  FragmentationDag dag;
  {
    FragmentNode root;
    root.id = 0;
    root.graph = molecule;
    root.formula = formula_of(molecule);
    root.mass = mass;
    root.broken_bonds = 0;
    root.depth = 0;
    root.key = canonical_key(molecule);
    dag.fragments.push_back(std::move(root));
  }
  std::map<std::string, std::uint32_t> by_key{{dag.fragments[0].key, 0}};
  std::set<std::pair<std::uint32_t, std::uint32_t>> edge_set;

  bool capped = false;
  for (int depth = 0; depth < cfg.max_depth && !capped; ++depth) {
    std::vector<std::uint32_t> level;
    for (std::uint32_t v = 0; v < dag.fragments.size(); ++v)
      if (dag.fragments[v].depth == depth) level.push_back(v);
    if (level.empty()) break;

    std::size_t nodes_before = dag.fragments.size();
    for (std::uint32_t pid : level) {
      // Expansion appends nodes, so take what we need by value up front.
      MolGraph pgraph = dag.fragments[pid].graph;
      int pbroken = dag.fragments[pid].broken_bonds;
      if (pgraph.atoms.size() < 2) continue;

      std::vector<std::vector<std::size_t>> cuts;
      std::vector<bool> bridge = bridge_flags(pgraph);
      for (std::size_t i = 0; i < pgraph.bonds.size(); ++i)
        if (bridge[i]) cuts.push_back({i});
      if (cfg.max_ring_breaks >= 2) {
        for (std::size_t i = 0; i < pgraph.bonds.size(); ++i) {
          if (bridge[i]) continue;
          for (std::size_t j = i + 1; j < pgraph.bonds.size(); ++j) {
            if (bridge[j]) continue;
            cuts.push_back({i, j});
          }
        }
      }

      for (const auto& removed : cuts) {
        auto comps = split_components(pgraph, removed);
        if (comps.size() < 2) continue;  // ring pair from different rings, nothing detached
        for (const auto& atoms : comps) {
          MolGraph child = extract_fragment(pgraph, atoms, removed);
          std::string key = canonical_key(child);
          auto it = by_key.find(key);
          std::uint32_t cid;
          if (it != by_key.end()) {
            cid = it->second;
          } else {
            FragmentNode node;
            node.id = static_cast<std::uint32_t>(dag.fragments.size());
            node.formula = formula_of(child);
            node.mass = monoisotopic_mass(child);
            node.graph = std::move(child);
            node.broken_bonds = pbroken + static_cast<int>(removed.size());
            node.depth = depth + 1;
            node.key = key;
            cid = node.id;
            by_key.emplace(std::move(key), cid);
            dag.fragments.push_back(std::move(node));
          }
          if (cid != pid && edge_set.emplace(pid, cid).second) dag.edges.emplace_back(pid, cid);
        }
      }
    }

    if (dag.fragments.size() > cfg.gen_cap) {
      // Trim the freshly generated level to the cap, largest fragments
      // first, and stop expanding.
      std::vector<NodeOrder> fresh;
      for (std::uint32_t v = static_cast<std::uint32_t>(nodes_before);
           v < dag.fragments.size(); ++v)
        fresh.push_back({dag.fragments[v].graph.atoms.size(), dag.fragments[v].mass,
                         &dag.fragments[v].key, v});
      std::sort(fresh.begin(), fresh.end());
      std::vector<bool> keep(dag.fragments.size(), false);
      for (std::size_t v = 0; v < nodes_before; ++v) keep[v] = true;
      std::size_t budget = cfg.gen_cap > nodes_before ? cfg.gen_cap - nodes_before : 0;
      for (std::size_t i = 0; i < fresh.size() && i < budget; ++i) keep[fresh[i].id] = true;
      rebuild_subset(dag, keep);
      by_key.clear();  // no further lookups happen once capped
      capped = true;
    }
  }

  if (dag.fragments.size() > cfg.max_fragments) {
    auto parents = dag.parent_lists();
    std::vector<NodeOrder> order;
    for (std::uint32_t v = 1; v < dag.fragments.size(); ++v)
      order.push_back({dag.fragments[v].graph.atoms.size(), dag.fragments[v].mass,
                       &dag.fragments[v].key, v});
    std::sort(order.begin(), order.end());
    std::vector<bool> keep(dag.fragments.size(), false);
    keep[0] = true;
    std::size_t kept = 1;
    // Parents have strictly more heavy atoms, so they are decided before
    // their children and reachability from the root is preserved.
    for (const NodeOrder& cand : order) {
      if (kept >= cfg.max_fragments) break;
      bool has_parent = false;
      for (std::uint32_t p : parents[cand.id])
        if (keep[p]) {
          has_parent = true;
          break;
        }
      if (has_parent) {
        keep[cand.id] = true;
        ++kept;
      }
    }
    rebuild_subset(dag, keep);
  } else {
    std::sort(dag.edges.begin(), dag.edges.end());
  }

  verify_acyclic(dag);
  return dag;
}

std::array<double, kShiftCount> shifted_masses(const FragmentNode& node) {
  std::array<double, kShiftCount> out;
  for (int k = 0; k < kShiftCount; ++k) out[k] = node.mass + (k - 6) * kHydrogenShift;
  return out;
}

void write_dag_json(const FragmentationDag& dag, std::ostream& out) {
  nlohmann::ordered_json j;
  j["format"] = "fragdag-v1";
  j["root"] = 0;
  j["fragments"] = nlohmann::ordered_json::array();
  for (const FragmentNode& f : dag.fragments) {
    nlohmann::ordered_json n;
    n["id"] = f.id;
    n["smiles"] = print_smiles(f.graph);
    n["formula"] = f.formula.to_string();
    n["mass"] = f.mass;
    n["broken_bonds"] = f.broken_bonds;
    n["depth"] = f.depth;
    j["fragments"].push_back(std::move(n));
  }
  j["edges"] = nlohmann::ordered_json::array();
  for (auto [p, c] : dag.edges) j["edges"].push_back({p, c});
  out << j.dump(2) << "\n";
}

FragmentationDag read_dag_json(std::istream& in) {
  nlohmann::json j = nlohmann::json::parse(in);
  if (!j.contains("format") || j["format"] != "fragdag-v1")
    throw std::invalid_argument("read_dag_json: unrecognized format tag");
  FragmentationDag dag;
  for (const auto& n : j.at("fragments")) {
    FragmentNode f;
    f.id = n.at("id").get<std::uint32_t>();
    if (f.id != dag.fragments.size())
      throw std::invalid_argument("read_dag_json: fragment ids must be dense and ordered");
    f.graph = parse_smiles(n.at("smiles").get<std::string>());
    f.formula = formula_of(f.graph);
    f.mass = monoisotopic_mass(f.graph);
    double stored = n.at("mass").get<double>();
    if (std::abs(stored - f.mass) > 1e-6)
      throw std::invalid_argument("read_dag_json: stored mass disagrees with structure");
    f.broken_bonds = n.at("broken_bonds").get<int>();
    f.depth = n.at("depth").get<int>();
    f.key = canonical_key(f.graph);
    dag.fragments.push_back(std::move(f));
  }
  if (dag.fragments.empty()) throw std::invalid_argument("read_dag_json: no fragments");
  for (const auto& e : j.at("edges")) {
    std::uint32_t p = e.at(0).get<std::uint32_t>();
    std::uint32_t c = e.at(1).get<std::uint32_t>();
    if (p >= dag.fragments.size() || c >= dag.fragments.size())
      throw std::invalid_argument("read_dag_json: edge endpoint out of range");
    dag.edges.emplace_back(p, c);
  }
  verify_acyclic(dag);
  return dag;
}

}  // namespace specmatch
