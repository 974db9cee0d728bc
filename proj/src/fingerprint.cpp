#include "specmatch/fingerprint.hpp"

#include <algorithm>
#include <bit>
#include <stdexcept>

#include "specmatch/kernels.hpp"

namespace specmatch {

namespace {

constexpr std::uint64_t kFpSeed = 0x46503230u;  // committed so bits are stable across builds

inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ull;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
  return x ^ (x >> 31);
}

inline std::uint64_t mix(std::uint64_t h, std::uint64_t v) { return splitmix64(h ^ v); }

}  // namespace

std::size_t Fingerprint::popcount() const {
  return kernels::popcount_and(words.data(), words.data(), words.size());
}

bool Fingerprint::test(std::size_t bit) const {
  return (words[bit / 64] >> (bit % 64)) & 1u;
}

std::string Fingerprint::to_hex() const {
  static const char* digits = "0123456789abcdef";
  std::string out;
  out.reserve(words.size() * 16);
  for (std::uint64_t w : words)
    for (int shift = 60; shift >= 0; shift -= 4) out += digits[(w >> shift) & 0xf];
  return out;
}

Fingerprint Fingerprint::from_hex(const std::string& hex, std::size_t nbits) {
  if (nbits % 64 != 0 || hex.size() != nbits / 4)
    throw std::invalid_argument("fingerprint hex length does not match bit width");
  Fingerprint fp;
  fp.nbits = nbits;
  fp.words.assign(nbits / 64, 0);
  for (std::size_t i = 0; i < hex.size(); ++i) {
    char c = hex[i];
    std::uint64_t v;
    if (c >= '0' && c <= '9') v = c - '0';
    else if (c >= 'a' && c <= 'f') v = 10 + (c - 'a');
    else if (c >= 'A' && c <= 'F') v = 10 + (c - 'A');
    else throw std::invalid_argument("invalid fingerprint hex digit");
    std::size_t word = i / 16;
    std::size_t shift = 60 - 4 * (i % 16);
    fp.words[word] |= v << shift;
  }
  return fp;
}

Fingerprint morgan_fingerprint(const MolGraph& g, const FingerprintConfig& cfg) {
  if (cfg.nbits < 64 || (cfg.nbits & (cfg.nbits - 1)) != 0)
    throw std::invalid_argument("fingerprint width must be a power of two >= 64");
  if (cfg.radius < 0) throw std::invalid_argument("fingerprint radius must be >= 0");

  Fingerprint fp;
  fp.nbits = cfg.nbits;
  fp.words.assign(cfg.nbits / 64, 0);
  auto set_bit = [&](std::uint64_t id) {
    std::size_t bit = id & (cfg.nbits - 1);
    fp.words[bit / 64] |= std::uint64_t(1) << (bit % 64);
  };

  const std::size_t n = g.atoms.size();
  std::vector<std::uint64_t> h(n);
  for (std::size_t v = 0; v < n; ++v) {
    const Atom& a = g.atoms[v];
    std::uint64_t x = kFpSeed;
    x = mix(x, static_cast<std::uint64_t>(a.element) + 1);
    x = mix(x, static_cast<std::uint64_t>(a.charge + 64));
    x = mix(x, a.hydrogens);
    x = mix(x, a.aromatic ? 2 : 1);
    x = mix(x, g.degree(static_cast<std::uint32_t>(v)));
    h[v] = x;
    set_bit(x);
  }

  std::vector<std::vector<std::pair<std::uint32_t, std::uint32_t>>> adj(n);
  for (std::uint32_t i = 0; i < g.bonds.size(); ++i) {
    adj[g.bonds[i].a].emplace_back(g.bonds[i].b, i);
    adj[g.bonds[i].b].emplace_back(g.bonds[i].a, i);
  }

  std::vector<std::uint64_t> next(n);
  std::vector<std::pair<std::uint64_t, std::uint64_t>> neigh;
  for (int r = 1; r <= cfg.radius; ++r) {
    for (std::size_t v = 0; v < n; ++v) {
      neigh.clear();
      for (auto [u, bi] : adj[v])
        neigh.emplace_back(static_cast<std::uint64_t>(g.bonds[bi].order), h[u]);
      std::sort(neigh.begin(), neigh.end());
      std::uint64_t x = mix(h[v], static_cast<std::uint64_t>(r));
      for (auto& [o, hu] : neigh) {
        x = mix(x, o);
        x = mix(x, hu);
      }
      next[v] = x;
      set_bit(x);
    }
    h.swap(next);
  }
  return fp;
}

double tanimoto(const Fingerprint& a, const Fingerprint& b) {
  if (a.nbits != b.nbits) throw std::invalid_argument("tanimoto: width mismatch");
  std::uint64_t inter = kernels::popcount_and(a.words.data(), b.words.data(), a.words.size());
  std::uint64_t uni = kernels::popcount_or(a.words.data(), b.words.data(), a.words.size());
  if (uni == 0) return 1.0;
  return static_cast<double>(inter) / static_cast<double>(uni);
}

}  // namespace specmatch
