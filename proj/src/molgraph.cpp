#include "specmatch/molgraph.hpp"

#include <algorithm>
#include <cctype>
#include <cstdio>
#include <cstdlib>
#include <istream>
#include <map>

namespace specmatch {

const std::array<const char*, kElementCount> kElementSymbols = {"C", "H",  "N",  "O", "S",
                                                                "P", "F", "Cl", "Br", "I"};

const std::array<double, kElementCount> kMonoisotopicMass = {
    12.0,           1.00782503207, 14.0030740048, 15.9949146196, 31.97207100,
    30.97376163,    18.99840322,   34.96885268,   78.9183371,    126.904473};

namespace {

// Standard valences per element, ascending; implicit hydrogens fill to the
// lowest one that covers the explicit bond multiplicity.
const std::array<std::vector<int>, kElementCount> kValences = {{
    {4},        // C
    {1},        // H
    {3, 5},     // N
    {2},        // O
    {2, 4, 6},  // S
    {3, 5},     // P
    {1},        // F
    {1},        // Cl
    {1},        // Br
    {1},        // I
}};

int max_valence(Element e) { return kValences[static_cast<std::size_t>(e)].back(); }

bool aromatic_capable(Element e) {
  switch (e) {
    case Element::C:
    case Element::N:
    case Element::O:
    case Element::S:
    case Element::P:
      return true;
    default:
      return false;
  }
}

}  // namespace

int bond_multiplicity(BondOrder o) {
  switch (o) {
    case BondOrder::Single:
    case BondOrder::Aromatic:
      return 1;
    case BondOrder::Double:
      return 2;
    case BondOrder::Triple:
      return 3;
  }
  return 1;
}

int MolGraph::degree(std::uint32_t v) const {
  int d = 0;
  for (const Bond& b : bonds)
    if (b.a == v || b.b == v) ++d;
  return d;
}

std::vector<std::pair<std::uint32_t, std::uint32_t>> MolGraph::neighbors(std::uint32_t v) const {
  std::vector<std::pair<std::uint32_t, std::uint32_t>> out;
  for (std::uint32_t i = 0; i < bonds.size(); ++i) {
    if (bonds[i].a == v) out.emplace_back(bonds[i].b, i);
    else if (bonds[i].b == v) out.emplace_back(bonds[i].a, i);
  }
  return out;
}

namespace {

struct SmilesParser {
  const std::string& s;
  std::size_t pos = 0;
  MolGraph g;
  std::vector<bool> bracketed;  // explicit hydrogen count, no implicit fill

  explicit SmilesParser(const std::string& text) : s(text) {}

  [[noreturn]] void fail(const std::string& msg, std::size_t at) { throw ParseError(msg, at); }
  [[noreturn]] void fail(const std::string& msg) { fail(msg, pos); }

  bool eof() const { return pos >= s.size(); }
  char peek() const { return s[pos]; }

  std::uint32_t add_atom(Element e, int charge, int hcount, bool aromatic, bool from_bracket) {
    if (e == Element::H) fail("standalone hydrogen atoms are not supported");
    if (aromatic && !aromatic_capable(e)) fail("element cannot be aromatic");
    Atom a;
    a.element = e;
    a.charge = static_cast<std::int8_t>(charge);
    a.hydrogens = static_cast<std::uint8_t>(hcount);
    a.aromatic = aromatic;
    g.atoms.push_back(a);
    bracketed.push_back(from_bracket);
    return static_cast<std::uint32_t>(g.atoms.size() - 1);
  }

  Element parse_organic(bool& aromatic) {
    std::size_t at = pos;
    char c = s[pos];
    if (c == 'C' && pos + 1 < s.size() && s[pos + 1] == 'l') {
      pos += 2;
      aromatic = false;
      return Element::Cl;
    }
    if (c == 'B' && pos + 1 < s.size() && s[pos + 1] == 'r') {
      pos += 2;
      aromatic = false;
      return Element::Br;
    }
    ++pos;
    aromatic = static_cast<bool>(std::islower(static_cast<unsigned char>(c)));
    switch (std::toupper(static_cast<unsigned char>(c))) {
      case 'C': return Element::C;
      case 'N': return Element::N;
      case 'O': return Element::O;
      case 'S': return Element::S;
      case 'P': return Element::P;
      case 'F':
        if (aromatic) fail("element cannot be aromatic", at);
        return Element::F;
      case 'I':
        if (aromatic) fail("element cannot be aromatic", at);
        return Element::I;
      default:
        fail("unknown element in organic subset", at);
    }
  }

  std::uint32_t parse_bracket() {
    std::size_t open = pos;
    ++pos;  // '['
    if (eof()) fail("unterminated bracket atom", open);
    if (std::isdigit(static_cast<unsigned char>(peek())))
      fail("isotope labels are not supported");

    bool aromatic = false;
    Element elem;
    char c = peek();
    if (std::islower(static_cast<unsigned char>(c))) {
      aromatic = true;
      ++pos;
      switch (c) {
        case 'c': elem = Element::C; break;
        case 'n': elem = Element::N; break;
        case 'o': elem = Element::O; break;
        case 's': elem = Element::S; break;
        case 'p': elem = Element::P; break;
        default: fail("unknown aromatic element", pos - 1);
      }
    } else if (std::isupper(static_cast<unsigned char>(c))) {
      std::string sym(1, c);
      ++pos;
      if (!eof() && std::islower(static_cast<unsigned char>(peek()))) {
        // Two-letter symbols: only Cl and Br are in the vocabulary, and a
        // lone lowercase after H would otherwise be swallowed.
        std::string two = sym + peek();
        if (two == "Cl" || two == "Br") {
          sym = two;
          ++pos;
        }
      }
      bool found = false;
      elem = Element::C;
      for (std::size_t i = 0; i < kElementCount; ++i) {
        if (sym == kElementSymbols[i]) {
          elem = static_cast<Element>(i);
          found = true;
          break;
        }
      }
      if (!found) fail("element '" + sym + "' is outside the supported vocabulary", open + 1);
    } else {
      fail("expected element symbol in bracket atom");
    }

    if (!eof() && (peek() == '@')) fail("stereochemistry is not supported");

    int hcount = 0;
    if (!eof() && peek() == 'H') {
      ++pos;
      hcount = 1;
      if (!eof() && std::isdigit(static_cast<unsigned char>(peek()))) {
        hcount = 0;
        while (!eof() && std::isdigit(static_cast<unsigned char>(peek()))) {
          hcount = hcount * 10 + (peek() - '0');
          if (hcount > 20) fail("implausible hydrogen count");
          ++pos;
        }
      }
    }

    int charge = 0;
    if (!eof() && (peek() == '+' || peek() == '-')) {
      int sign = peek() == '+' ? 1 : -1;
      char sc = peek();
      ++pos;
      if (!eof() && std::isdigit(static_cast<unsigned char>(peek()))) {
        int mag = 0;
        while (!eof() && std::isdigit(static_cast<unsigned char>(peek()))) {
          mag = mag * 10 + (peek() - '0');
          if (mag > 9) fail("implausible charge magnitude");
          ++pos;
        }
        charge = sign * mag;
      } else {
        charge = sign;
        while (!eof() && peek() == sc) {
          charge += sign;
          if (charge > 9 || charge < -9) fail("implausible charge magnitude");
          ++pos;
        }
      }
    }

    if (eof() || peek() != ']') fail("expected ']' to close bracket atom");
    ++pos;
    return add_atom(elem, charge, hcount, aromatic, true);
  }

  MolGraph run() {
    struct OpenRing {
      std::uint32_t atom;
      int order;  // 0 while unspecified
      std::size_t where;
    };
    std::map<int, OpenRing> rings;
    struct Frame {
      int prev;
      std::size_t atoms_at_open;
    };
    std::vector<Frame> stack;
    int prev = -1;
    int pending = 0;  // 0 none, else BondOrder value
    std::size_t pending_at = 0;

    auto default_order = [&](std::uint32_t a, std::uint32_t b) {
      return (g.atoms[a].aromatic && g.atoms[b].aromatic) ? BondOrder::Aromatic
                                                          : BondOrder::Single;
    };
    auto add_bond = [&](std::uint32_t a, std::uint32_t b, int order, std::size_t at) {
      if (a == b) fail("atom bonded to itself", at);
      for (const Bond& e : g.bonds)
        if ((e.a == a && e.b == b) || (e.a == b && e.b == a))
          fail("duplicate bond between atoms", at);
      Bond e;
      e.a = a;
      e.b = b;
      e.order = order == 0 ? default_order(a, b) : static_cast<BondOrder>(order);
      g.bonds.push_back(e);
    };

    while (!eof()) {
      char c = peek();
      if (std::isspace(static_cast<unsigned char>(c))) {
        if (pos + 1 != s.size() || !(c == '\n' || c == '\r'))
          fail("whitespace inside SMILES");
        break;
      }
      if (c == '-' || c == '=' || c == '#' || c == ':') {
        if (pending != 0) fail("two bond symbols in a row");
        pending = c == '-' ? 1 : c == '=' ? 2 : c == '#' ? 3 : 4;
        pending_at = pos;
        ++pos;
        continue;
      }
      if (c == '/' || c == '\\') fail("stereochemistry is not supported");
      if (c == '.') fail("multi-fragment input is not supported");
      if (c == '(') {
        if (prev < 0) fail("branch before any atom");
        if (pending != 0) fail("bond symbol before '('", pending_at);
        stack.push_back({prev, g.atoms.size()});
        ++pos;
        continue;
      }
      if (c == ')') {
        if (stack.empty()) fail("unmatched ')'");
        if (pending != 0) fail("dangling bond before ')'", pending_at);
        if (g.atoms.size() == stack.back().atoms_at_open) fail("empty branch");
        prev = stack.back().prev;
        stack.pop_back();
        ++pos;
        continue;
      }
      if (std::isdigit(static_cast<unsigned char>(c)) || c == '%') {
        if (prev < 0) fail("ring closure before any atom");
        int num;
        if (c == '%') {
          if (pos + 2 >= s.size() || !std::isdigit(static_cast<unsigned char>(s[pos + 1])) ||
              !std::isdigit(static_cast<unsigned char>(s[pos + 2])))
            fail("'%' ring closure needs two digits");
          num = (s[pos + 1] - '0') * 10 + (s[pos + 2] - '0');
          pos += 3;
        } else {
          num = c - '0';
          ++pos;
        }
        auto it = rings.find(num);
        if (it == rings.end()) {
          rings[num] = {static_cast<std::uint32_t>(prev), pending, pos - 1};
        } else {
          OpenRing open = it->second;
          rings.erase(it);
          int order = open.order;
          if (pending != 0) {
            if (order != 0 && order != pending)
              fail("conflicting bond orders on ring closure", pending_at);
            order = pending;
          }
          add_bond(open.atom, static_cast<std::uint32_t>(prev), order, pos - 1);
        }
        pending = 0;
        continue;
      }

      std::uint32_t idx;
      std::size_t atom_at = pos;
      if (c == '[') {
        idx = parse_bracket();
      } else if (std::isalpha(static_cast<unsigned char>(c))) {
        bool aromatic = false;
        Element e = parse_organic(aromatic);
        idx = add_atom(e, 0, 0, aromatic, false);
      } else {
        fail("unexpected character '" + std::string(1, c) + "'");
      }
      if (prev >= 0) {
        add_bond(static_cast<std::uint32_t>(prev), idx, pending, atom_at);
      } else if (pending != 0) {
        fail("bond symbol before first atom", pending_at);
      }
      pending = 0;
      prev = static_cast<int>(idx);
    }

    if (pending != 0) fail("dangling bond at end of input", pending_at);
    if (!stack.empty()) fail("unmatched '('");
    if (!rings.empty()) fail("unclosed ring bond " + std::to_string(rings.begin()->first),
                             rings.begin()->second.where);
    if (g.atoms.empty()) fail("empty SMILES", 0);

    finish();
    return std::move(g);
  }

  void finish() {
    std::vector<int> mult(g.atoms.size(), 0);
    for (const Bond& b : g.bonds) {
      int m = bond_multiplicity(b.order);
      mult[b.a] += m;
      mult[b.b] += m;
      if (b.order == BondOrder::Aromatic &&
          (!g.atoms[b.a].aromatic || !g.atoms[b.b].aromatic))
        fail("aromatic bond on a non-aromatic atom", 0);
    }

    {
      MolGraph probe = g;
      if (normalize_aromatic_flags(probe))
        fail("aromatic atom is not part of an aromatic ring", 0);
    }

    for (std::size_t v = 0; v < g.atoms.size(); ++v) {
      Atom& a = g.atoms[v];
      std::size_t ei = static_cast<std::size_t>(a.element);
      if (bracketed[v]) {
        if (mult[v] + a.hydrogens > max_valence(a.element) + std::abs(a.charge))
          fail("valence violation on bracket atom " + std::to_string(v), 0);
        continue;
      }
      if (a.aromatic) {
        // Aromatic carbon keeps one hydrogen unless substituted; aromatic
        // heteroatoms written without brackets carry none.
        if (a.element == Element::C) {
          if (mult[v] > 4) fail("valence violation on aromatic atom " + std::to_string(v), 0);
          a.hydrogens = static_cast<std::uint8_t>(std::max(0, 3 - mult[v]));
        } else {
          if (mult[v] > max_valence(a.element))
            fail("valence violation on aromatic atom " + std::to_string(v), 0);
          a.hydrogens = 0;
        }
        continue;
      }
      int fill = -1;
      for (int val : kValences[ei]) {
        if (val >= mult[v]) {
          fill = val - mult[v];
          break;
        }
      }
      if (fill < 0)
        fail("valence violation on atom " + std::to_string(v), 0);
      a.hydrogens = static_cast<std::uint8_t>(fill);
    }
  }
};

}  // namespace

MolGraph parse_smiles(const std::string& text) {
  SmilesParser p(text);
  return p.run();
}

bool normalize_aromatic_flags(MolGraph& g) {
  std::vector<int> adeg(g.atoms.size(), 0);
  for (const Bond& b : g.bonds)
    if (b.order == BondOrder::Aromatic) {
      ++adeg[b.a];
      ++adeg[b.b];
    }
  std::vector<bool> dropped(g.bonds.size(), false);
  bool changed_round = true;
  while (changed_round) {
    changed_round = false;
    for (std::size_t i = 0; i < g.bonds.size(); ++i) {
      const Bond& b = g.bonds[i];
      if (b.order != BondOrder::Aromatic || dropped[i]) continue;
      if (adeg[b.a] <= 1 || adeg[b.b] <= 1) {
        dropped[i] = true;
        --adeg[b.a];
        --adeg[b.b];
        changed_round = true;
      }
    }
  }
  bool changed = false;
  for (std::size_t i = 0; i < g.bonds.size(); ++i)
    if (dropped[i]) {
      g.bonds[i].order = BondOrder::Single;
      changed = true;
    }
  for (std::size_t v = 0; v < g.atoms.size(); ++v)
    if (g.atoms[v].aromatic && adeg[v] < 2) {
      g.atoms[v].aromatic = false;
      changed = true;
    }
  return changed;
}

bool is_connected(const MolGraph& g) {
  if (g.atoms.empty()) return true;
  std::vector<bool> seen(g.atoms.size(), false);
  std::vector<std::uint32_t> queue{0};
  seen[0] = true;
  std::size_t found = 1;
  std::vector<std::vector<std::uint32_t>> adj(g.atoms.size());
  for (const Bond& b : g.bonds) {
    adj[b.a].push_back(b.b);
    adj[b.b].push_back(b.a);
  }
  while (!queue.empty()) {
    std::uint32_t v = queue.back();
    queue.pop_back();
    for (std::uint32_t u : adj[v])
      if (!seen[u]) {
        seen[u] = true;
        ++found;
        queue.push_back(u);
      }
  }
  return found == g.atoms.size();
}

namespace {

void write_atom_token(std::string& out, const Atom& a) {
  out += '[';
  std::string sym = kElementSymbols[static_cast<std::size_t>(a.element)];
  if (a.aromatic)
    for (char& c : sym) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  out += sym;
  if (a.hydrogens > 0) {
    out += 'H';
    if (a.hydrogens > 1) out += std::to_string(static_cast<int>(a.hydrogens));
  }
  if (a.charge != 0) {
    out += a.charge > 0 ? '+' : '-';
    int mag = std::abs(static_cast<int>(a.charge));
    if (mag > 1) out += std::to_string(mag);
  }
  out += ']';
}

void write_bond_token(std::string& out, const MolGraph& g, const Bond& b) {
  switch (b.order) {
    case BondOrder::Double: out += '='; break;
    case BondOrder::Triple: out += '#'; break;
    case BondOrder::Single:
      if (g.atoms[b.a].aromatic && g.atoms[b.b].aromatic) out += '-';
      break;
    case BondOrder::Aromatic:
      if (!(g.atoms[b.a].aromatic && g.atoms[b.b].aromatic)) out += ':';
      break;
  }
}

}  // namespace

std::string print_smiles(const MolGraph& g) {
  if (g.atoms.empty()) throw std::invalid_argument("print_smiles: empty graph");
  if (!is_connected(g)) throw std::invalid_argument("print_smiles: disconnected graph");

  std::vector<std::vector<std::pair<std::uint32_t, std::uint32_t>>> adj(g.atoms.size());
  for (std::uint32_t i = 0; i < g.bonds.size(); ++i) {
    adj[g.bonds[i].a].emplace_back(g.bonds[i].b, i);
    adj[g.bonds[i].b].emplace_back(g.bonds[i].a, i);
  }

  // Iterative DFS pass to classify tree vs ring-closure bonds.
  std::vector<int> bond_kind(g.bonds.size(), 0);  // 0 unseen, 1 tree, 2 closure
  std::vector<bool> visited(g.atoms.size(), false);
  {
    std::vector<std::uint32_t> stack{0};
    visited[0] = true;
    while (!stack.empty()) {
      std::uint32_t v = stack.back();
      stack.pop_back();
      for (auto [u, bi] : adj[v]) {
        if (bond_kind[bi] != 0) continue;
        if (visited[u]) {
          bond_kind[bi] = 2;
        } else {
          bond_kind[bi] = 1;
          visited[u] = true;
          stack.push_back(u);
        }
      }
    }
  }

  std::vector<int> ring_digit(g.bonds.size(), 0);
  int next_digit = 1;
  for (std::uint32_t i = 0; i < g.bonds.size(); ++i) {
    if (bond_kind[i] == 2) {
      if (next_digit > 99) throw std::invalid_argument("print_smiles: too many ring closures");
      ring_digit[i] = next_digit++;
    }
  }

  std::string out;
  std::vector<bool> emitted(g.atoms.size(), false);

  auto emit_digit = [&](int d) {
    if (d > 9) {
      out += '%';
      out += static_cast<char>('0' + d / 10);
      out += static_cast<char>('0' + d % 10);
    } else {
      out += static_cast<char>('0' + d);
    }
  };

  // Recursive writer; fragment graphs stay small so depth is not a concern.
  auto rec = [&](auto&& self, std::uint32_t v) -> void {
    emitted[v] = true;
    write_atom_token(out, g.atoms[v]);
    for (auto [u, bi] : adj[v]) {
      (void)u;
      if (bond_kind[bi] == 2) {
        write_bond_token(out, g, g.bonds[bi]);
        emit_digit(ring_digit[bi]);
      }
    }
    std::vector<std::pair<std::uint32_t, std::uint32_t>> children;
    for (auto [u, bi] : adj[v])
      if (bond_kind[bi] == 1 && !emitted[u]) children.emplace_back(u, bi);
    for (std::size_t i = 0; i < children.size(); ++i) {
      bool last = (i + 1 == children.size());
      if (!last) out += '(';
      write_bond_token(out, g, g.bonds[children[i].second]);
      self(self, children[i].first);
      if (!last) out += ')';
    }
  };
  rec(rec, 0);
  return out;
}

bool Formula::contains(const Formula& rhs) const {
  for (std::size_t i = 0; i < kElementCount; ++i)
    if (rhs.counts[i] > counts[i]) return false;
  return true;
}

std::string Formula::to_string() const {
  std::string out;
  for (std::size_t i = 0; i < kElementCount; ++i) {
    if (counts[i] <= 0) continue;
    out += kElementSymbols[i];
    if (counts[i] > 1) out += std::to_string(counts[i]);
  }
  if (out.empty()) out = "-";
  if (charge != 0) {
    out += charge > 0 ? '+' : '-';
    int mag = std::abs(charge);
    if (mag > 1) out += std::to_string(mag);
  }
  return out;
}

Formula formula_of(const MolGraph& g) {
  Formula f;
  for (const Atom& a : g.atoms) {
    ++f.counts[static_cast<std::size_t>(a.element)];
    f.counts[static_cast<std::size_t>(Element::H)] += a.hydrogens;
    f.charge += a.charge;
  }
  return f;
}

double monoisotopic_mass(const Formula& f) {
  double m = 0;
  for (std::size_t i = 0; i < kElementCount; ++i) m += f.counts[i] * kMonoisotopicMass[i];
  m -= f.charge * kElectronMass;
  return m;
}

double monoisotopic_mass(const MolGraph& g) {
  if (g.atoms.empty()) throw std::invalid_argument("monoisotopic_mass: empty graph");
  return monoisotopic_mass(formula_of(g));
}

namespace {

inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ull;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
  return x ^ (x >> 31);
}

inline std::uint64_t mix(std::uint64_t h, std::uint64_t v) { return splitmix64(h ^ v); }

std::uint64_t graph_fold(const MolGraph& g, std::uint64_t seed) {
  const std::size_t n = g.atoms.size();
  std::vector<std::uint64_t> h(n);
  for (std::size_t v = 0; v < n; ++v) {
    const Atom& a = g.atoms[v];
    std::uint64_t x = seed;
    x = mix(x, static_cast<std::uint64_t>(a.element) + 1);
    x = mix(x, static_cast<std::uint64_t>(a.charge + 64));
    x = mix(x, a.hydrogens);
    x = mix(x, a.aromatic ? 2 : 1);
    h[v] = x;
  }
  std::vector<std::vector<std::pair<std::uint32_t, std::uint32_t>>> adj(n);
  for (std::uint32_t i = 0; i < g.bonds.size(); ++i) {
    adj[g.bonds[i].a].emplace_back(g.bonds[i].b, i);
    adj[g.bonds[i].b].emplace_back(g.bonds[i].a, i);
  }

  std::size_t rounds = std::min<std::size_t>(n, 24) + 2;
  std::vector<std::uint64_t> next(n);
  std::vector<std::pair<std::uint64_t, std::uint64_t>> neigh;
  for (std::size_t r = 0; r < rounds; ++r) {
    for (std::size_t v = 0; v < n; ++v) {
      neigh.clear();
      for (auto [u, bi] : adj[v])
        neigh.emplace_back(static_cast<std::uint64_t>(g.bonds[bi].order), h[u]);
      std::sort(neigh.begin(), neigh.end());
      std::uint64_t x = mix(h[v], 0xabcdef12345ull);
      for (auto& [o, hu] : neigh) {
        x = mix(x, o);
        x = mix(x, hu);
      }
      next[v] = x;
    }
    h.swap(next);
  }

  std::vector<std::uint64_t> edges;
  edges.reserve(g.bonds.size());
  for (const Bond& b : g.bonds) {
    std::uint64_t lo = std::min(h[b.a], h[b.b]);
    std::uint64_t hi = std::max(h[b.a], h[b.b]);
    edges.push_back(mix(mix(static_cast<std::uint64_t>(b.order), lo), hi));
  }
  std::sort(edges.begin(), edges.end());

  std::sort(h.begin(), h.end());
  std::uint64_t out = mix(seed, n);
  for (std::uint64_t v : h) out = mix(out, v);
  out = mix(out, g.bonds.size());
  for (std::uint64_t e : edges) out = mix(out, e);

  Formula f = formula_of(g);
  for (int c : f.counts) out = mix(out, static_cast<std::uint64_t>(c + 1));
  out = mix(out, static_cast<std::uint64_t>(f.charge + 64));
  return out;
}

}  // namespace

std::string canonical_key(const MolGraph& g) {
  if (g.atoms.empty()) throw std::invalid_argument("canonical_key: empty graph");
  std::uint64_t a = graph_fold(g, 0x5eed0001u);
  std::uint64_t b = graph_fold(g, 0x5eed0002u);
  char buf[33];
  std::snprintf(buf, sizeof buf, "%016llx%016llx", static_cast<unsigned long long>(a),
                static_cast<unsigned long long>(b));
  return std::string(buf);
}

std::vector<std::string> read_smiles_list(std::istream& in) {
  std::vector<std::string> out;
  std::string line;
  while (std::getline(in, line)) {
    while (!line.empty() && (line.back() == '\r' || line.back() == '\n' || line.back() == ' ' ||
                             line.back() == '\t'))
      line.pop_back();
    std::size_t start = line.find_first_not_of(" \t");
    if (start == std::string::npos) continue;
    if (line[start] == '#') continue;
    // Anything after whitespace is treated as a name column and dropped.
    std::size_t end = line.find_first_of(" \t", start);
    out.push_back(line.substr(start, end == std::string::npos ? std::string::npos : end - start));
  }
  return out;
}

}  // namespace specmatch
