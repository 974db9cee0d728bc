#include "specmatch/synth.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <stdexcept>

#include <json.hpp>

namespace specmatch {

namespace {

std::uint64_t splitmix64(std::uint64_t& state) {
  std::uint64_t z = (state += 0x9e3779b97f4a7c15ull);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
  return z ^ (z >> 31);
}

struct Rng {
  std::uint64_t state;
  explicit Rng(std::uint64_t seed) : state(seed) {}
  std::uint64_t next() { return splitmix64(state); }
  std::size_t below(std::size_t n) { return static_cast<std::size_t>(next() % n); }
  double unit() { return static_cast<double>(next() >> 11) * 0x1p-53; }  // [0, 1)
};

// Growth palette: a carbon-heavy subset so structural motifs recur across
// the dataset and retrieval has near neighbors to find.
constexpr Element kPalette[] = {Element::C, Element::C, Element::C, Element::C, Element::C,
                                Element::C, Element::C, Element::N, Element::N, Element::O,
                                Element::O, Element::S};

int growth_valence(Element e) {
  switch (e) {
    case Element::C: return 4;
    case Element::N: return 3;
    case Element::O: return 2;
    case Element::S: return 2;
    case Element::P: return 3;
    default: return 1;  // halogens
  }
}

// Random tree over the palette plus at most one ring closure; hydrogens fill
// the leftover valence.
MolGraph grow_molecule(Rng& rng, int min_heavy, int max_heavy) {
  const int target = min_heavy + static_cast<int>(rng.below(static_cast<std::size_t>(max_heavy - min_heavy + 1)));
  MolGraph g;
  std::vector<int> used;
  g.atoms.push_back({Element::C, 0, 0, false});
  used.push_back(0);
  while (static_cast<int>(g.atoms.size()) < target) {
    std::vector<std::uint32_t> open;
    for (std::uint32_t i = 0; i < g.atoms.size(); ++i)
      if (growth_valence(g.atoms[i].element) - used[i] >= 1) open.push_back(i);
    if (open.empty()) break;
    const std::uint32_t at = open[rng.below(open.size())];
    const Element e = kPalette[rng.below(std::size(kPalette))];
    BondOrder order = BondOrder::Single;
    const bool both_carbon = e == Element::C && g.atoms[at].element == Element::C;
    if (both_carbon && growth_valence(g.atoms[at].element) - used[at] >= 2 && rng.below(100) < 10)
      order = BondOrder::Double;
    const std::uint32_t nv = static_cast<std::uint32_t>(g.atoms.size());
    g.atoms.push_back({e, 0, 0, false});
    used.push_back(0);
    g.bonds.push_back({at, nv, order});
    used[at] += bond_multiplicity(order);
    used[nv] += bond_multiplicity(order);
  }
  if (rng.below(100) < 20) {
    // Candidate ring closures: non-adjacent atom pairs with spare valence at
    // tree distance >= 2, so the new cycle has at least three atoms.
    std::vector<std::vector<int>> dist(g.atoms.size(), std::vector<int>(g.atoms.size(), -1));
    for (std::uint32_t s = 0; s < g.atoms.size(); ++s) {
      std::vector<std::uint32_t> q{s};
      dist[s][s] = 0;
      for (std::size_t h = 0; h < q.size(); ++h)
        for (auto [nb, bi] : g.neighbors(q[h]))
          if (dist[s][nb] < 0) {
            dist[s][nb] = dist[s][q[h]] + 1;
            q.push_back(nb);
          }
    }
    std::vector<std::pair<std::uint32_t, std::uint32_t>> cand;
    for (std::uint32_t a = 0; a < g.atoms.size(); ++a)
      for (std::uint32_t b = a + 1; b < g.atoms.size(); ++b)
        if (dist[a][b] >= 2 && growth_valence(g.atoms[a].element) - used[a] >= 1 &&
            growth_valence(g.atoms[b].element) - used[b] >= 1)
          cand.emplace_back(a, b);
    if (!cand.empty()) {
      auto [a, b] = cand[rng.below(cand.size())];
      g.bonds.push_back({a, b, BondOrder::Single});
      used[a] += 1;
      used[b] += 1;
    }
  }
  for (std::uint32_t i = 0; i < g.atoms.size(); ++i)
    g.atoms[i].hydrogens = static_cast<std::uint8_t>(growth_valence(g.atoms[i].element) - used[i]);
  return g;
}

constexpr std::size_t kHiddenIn = 23;
constexpr std::size_t kHiddenMid = 24;

struct HiddenMlp {
  std::array<double, kHiddenIn * kHiddenMid> w1;
  std::array<double, kHiddenMid> b1;
  std::array<double, kHiddenMid * kShiftCount> w2;
  std::array<double, kShiftCount> b2;

  explicit HiddenMlp(std::uint64_t seed) {
    Rng rng(seed ^ 0x68696464656eull);
    auto uni = [&](double s) { return (2.0 * rng.unit() - 1.0) * s; };
    // Two thirds of the hidden units read the identity features with
    // saturating weights, so those units flip per fragment rather than
    // varying smoothly with composition. Intensities then transfer exactly
    // through an aligned identical fragment but cannot be regressed from
    // coarse features.
    for (std::size_t i = 0; i < kHiddenIn; ++i)
      for (std::size_t j = 0; j < kHiddenMid; ++j) {
        const bool identity_row = i >= 12 && i < 20;
        const bool sharp_unit = j >= kHiddenMid / 3;
        double s = 1.5 / std::sqrt(static_cast<double>(kHiddenIn));
        if (identity_row) s = sharp_unit ? 6.0 : 0.0;
        w1[i * kHiddenMid + j] = uni(s);
      }
    for (double& b : b1) b = uni(0.5);
    for (double& w : w2) w = uni(1.5 / std::sqrt(static_cast<double>(kHiddenMid)));
    for (double& b : b2) b = uni(0.5);
  }

  std::array<double, kShiftCount> eval(const std::array<double, kHiddenIn>& f) const {
    std::array<double, kHiddenMid> h;
    for (std::size_t j = 0; j < kHiddenMid; ++j) {
      double s = b1[j];
      for (std::size_t i = 0; i < kHiddenIn; ++i) s += f[i] * w1[i * kHiddenMid + j];
      h[j] = std::tanh(s);
    }
    std::array<double, kShiftCount> out;
    for (std::size_t k = 0; k < kShiftCount; ++k) {
      double s = b2[k];
      for (std::size_t j = 0; j < kHiddenMid; ++j) s += h[j] * w2[j * kShiftCount + k];
      const double sig = 1.0 / (1.0 + std::exp(-3.0 * s));
      out[k] = std::pow(sig, 6.0);
    }
    return out;
  }
};

std::array<double, kHiddenIn> hidden_features(const FragmentNode& node, double energy) {
  std::array<double, kHiddenIn> f{};
  std::size_t k = 0;
  for (int c : node.formula.counts) f[k++] = 0.25 * c;
  f[k++] = node.mass / 300.0;
  f[k++] = node.broken_bonds / 4.0;
  // Identity features: unit floats drawn from the structure key, constant
  // for a given fragment and unrelated between distinct fragments. Half of
  // them also flip with the energy bucket, so one fragment carries several
  // unrelated slot patterns across the energy grid.
  std::uint64_t h = 0xcbf29ce484222325ull;  // FNV-1a
  for (unsigned char c : node.key) h = (h ^ c) * 0x100000001b3ull;
  std::uint64_t he = h ^ (0x9e3779b9ull * static_cast<std::uint64_t>(std::llround(energy)));
  for (std::size_t s = 0; s < 4; ++s) f[k++] = static_cast<double>(splitmix64(h) >> 11) * 0x1p-53;
  for (std::size_t s = 0; s < 4; ++s) f[k++] = static_cast<double>(splitmix64(he) >> 11) * 0x1p-53;
  f[k++] = energy / 40.0;
  f[k++] = std::sin(energy / 13.0);
  f[k++] = std::cos(energy / 17.0);
  return f;
}

Spectrum render_spectrum(const HiddenMlp& mlp, const SynthMolecule& sm, const SynthConfig& cfg,
                         double energy, double offset, Rng& noise_rng) {
  AssignedIntensities table;
  table.table.reserve(sm.dag.fragments.size());
  for (const FragmentNode& node : sm.dag.fragments)
    table.table.push_back(mlp.eval(hidden_features(node, energy)));
  Spectrum s = merge_predictions(sm.dag, table, offset, 0.02);
  if (cfg.noise > 0)
    for (Peak& p : s.peaks) p.intensity *= 1.0 + cfg.noise * (2.0 * noise_rng.unit() - 1.0);
  normalize_spectrum(s);
  s.name = sm.id;
  s.adduct = cfg.adduct;
  s.instrument = cfg.instrument;
  s.collision_energy = energy;
  s.precursor_mz = sm.dag.fragments[FragmentationDag::kRoot].mass + offset;
  return s;
}

std::string split_name(const SyntheticDataset& d, std::size_t idx) {
  if (std::binary_search(d.train.begin(), d.train.end(), idx)) return "train";
  if (std::binary_search(d.val.begin(), d.val.end(), idx)) return "val";
  return "test";
}

}  // namespace

std::array<double, kShiftCount> hidden_intensities(const FragmentNode& node, double energy,
                                                   std::uint64_t seed) {
  return HiddenMlp(seed).eval(hidden_features(node, energy));
}

SyntheticDataset synth_generate(const SynthConfig& cfg, std::uint64_t seed) {
  if (cfg.min_heavy < 2 || cfg.max_heavy < cfg.min_heavy)
    throw std::invalid_argument("bad heavy atom range");
  SyntheticDataset d;
  d.config = cfg;
  d.seed = seed;

  const double offset = adduct_mass_offset(cfg.adduct);
  const HiddenMlp mlp(seed);
  Rng grow_rng(seed ^ 0x6d6f6c65ull);
  std::set<std::string> seen;
  const std::size_t attempt_cap = 80 * std::max<std::size_t>(cfg.molecules, 1);
  for (std::size_t attempt = 0; attempt < attempt_cap && d.molecules.size() < cfg.molecules; ++attempt) {
    MolGraph g = grow_molecule(grow_rng, cfg.min_heavy, cfg.max_heavy);
    if (static_cast<int>(g.atoms.size()) < cfg.min_heavy) continue;
    const std::string key = canonical_key(g);
    if (!seen.insert(key).second) continue;
    SynthMolecule sm;
    sm.mol = std::move(g);
    sm.smiles = print_smiles(sm.mol);
    sm.dag = enumerate_fragments(sm.mol, cfg.frag);
    d.molecules.push_back(std::move(sm));
  }
  if (d.molecules.size() < cfg.molecules)
    throw std::runtime_error("molecule generation exhausted its attempt budget");

  char buf[32];
  for (std::size_t i = 0; i < d.molecules.size(); ++i) {
    std::snprintf(buf, sizeof buf, "m%05zu", i);
    d.molecules[i].id = buf;
    Rng noise_rng(seed ^ 0x6e6f697365ull ^ (i * 0x100000001b3ull));
    for (double e : cfg.energies)
      d.molecules[i].spectra.push_back(render_spectrum(mlp, d.molecules[i], cfg, e, offset, noise_rng));
  }

  std::vector<std::size_t> order(d.molecules.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  Rng split_rng(seed ^ 0x73706c6974ull);
  for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[split_rng.below(i)]);
  const std::size_t n_train = static_cast<std::size_t>(cfg.train_frac * order.size());
  const std::size_t n_val = static_cast<std::size_t>(cfg.val_frac * order.size());
  d.train.assign(order.begin(), order.begin() + n_train);
  d.val.assign(order.begin() + n_train, order.begin() + n_train + n_val);
  d.test.assign(order.begin() + n_train + n_val, order.end());
  std::sort(d.train.begin(), d.train.end());
  std::sort(d.val.begin(), d.val.end());
  std::sort(d.test.begin(), d.test.end());
  return d;
}

void save_dataset(const SyntheticDataset& d, const std::string& dir) {
  namespace fs = std::filesystem;
  fs::create_directories(dir);

  nlohmann::json j;
  j["format"] = "synth-dataset-v1";
  j["seed"] = d.seed;
  j["molecules"] = d.config.molecules;
  j["min_heavy"] = d.config.min_heavy;
  j["max_heavy"] = d.config.max_heavy;
  j["energies"] = d.config.energies;
  j["noise"] = d.config.noise;
  j["train_frac"] = d.config.train_frac;
  j["val_frac"] = d.config.val_frac;
  j["frag"] = {{"max_depth", d.config.frag.max_depth},
               {"max_fragments", d.config.frag.max_fragments},
               {"max_ring_breaks", d.config.frag.max_ring_breaks},
               {"gen_cap", d.config.frag.gen_cap}};
  j["fp"] = {{"radius", d.config.fp.radius}, {"nbits", d.config.fp.nbits}};
  j["adduct"] = d.config.adduct;
  j["instrument"] = d.config.instrument;
  std::ofstream cf(fs::path(dir) / "config.json");
  cf << j.dump(2) << "\n";

  std::ofstream mf(fs::path(dir) / "molecules.csv");
  mf << "id,split,smiles\n";
  for (std::size_t i = 0; i < d.molecules.size(); ++i)
    mf << d.molecules[i].id << "," << split_name(d, i) << "," << d.molecules[i].smiles << "\n";

  std::vector<Spectrum> flat;
  for (const SynthMolecule& sm : d.molecules)
    for (const Spectrum& s : sm.spectra) flat.push_back(s);
  std::ofstream sf(fs::path(dir) / "spectra.msp");
  write_msp(flat, sf);
}

SyntheticDataset load_dataset(const std::string& dir) {
  namespace fs = std::filesystem;
  std::ifstream cf(fs::path(dir) / "config.json");
  if (!cf) throw std::invalid_argument("missing config.json in " + dir);
  nlohmann::json j = nlohmann::json::parse(cf);
  if (j.value("format", "") != "synth-dataset-v1")
    throw std::invalid_argument("unrecognized dataset format in " + dir);

  SyntheticDataset d;
  d.seed = j["seed"].get<std::uint64_t>();
  d.config.molecules = j["molecules"].get<std::size_t>();
  d.config.min_heavy = j["min_heavy"].get<int>();
  d.config.max_heavy = j["max_heavy"].get<int>();
  d.config.energies = j["energies"].get<std::vector<double>>();
  d.config.noise = j["noise"].get<double>();
  d.config.train_frac = j["train_frac"].get<double>();
  d.config.val_frac = j["val_frac"].get<double>();
  d.config.frag.max_depth = j["frag"]["max_depth"].get<int>();
  d.config.frag.max_fragments = j["frag"]["max_fragments"].get<std::size_t>();
  d.config.frag.max_ring_breaks = j["frag"]["max_ring_breaks"].get<int>();
  d.config.frag.gen_cap = j["frag"]["gen_cap"].get<std::size_t>();
  d.config.fp.radius = j["fp"]["radius"].get<int>();
  d.config.fp.nbits = j["fp"]["nbits"].get<std::size_t>();
  d.config.adduct = j["adduct"].get<std::string>();
  d.config.instrument = j["instrument"].get<std::string>();

  std::ifstream sf(fs::path(dir) / "spectra.msp");
  if (!sf) throw std::invalid_argument("missing spectra.msp in " + dir);
  std::vector<Spectrum> specs = parse_msp(sf, true);
  std::map<std::string, std::vector<Spectrum>> by_id;
  for (auto& s : specs) by_id[s.name].push_back(std::move(s));

  std::ifstream mf(fs::path(dir) / "molecules.csv");
  if (!mf) throw std::invalid_argument("missing molecules.csv in " + dir);
  std::string line;
  std::getline(mf, line);  // header
  while (std::getline(mf, line)) {
    if (line.empty()) continue;
    const auto c1 = line.find(',');
    const auto c2 = line.find(',', c1 + 1);
    if (c1 == std::string::npos || c2 == std::string::npos)
      throw std::invalid_argument("malformed molecules.csv row: " + line);
    SynthMolecule sm;
    sm.id = line.substr(0, c1);
    const std::string split = line.substr(c1 + 1, c2 - c1 - 1);
    sm.smiles = line.substr(c2 + 1);
    sm.mol = parse_smiles(sm.smiles);
    sm.dag = enumerate_fragments(sm.mol, d.config.frag);

    auto it = by_id.find(sm.id);
    if (it == by_id.end() || it->second.size() != d.config.energies.size())
      throw std::invalid_argument("spectra missing for molecule " + sm.id);
    sm.spectra.resize(d.config.energies.size());
    std::vector<bool> taken(it->second.size(), false);
    for (std::size_t e = 0; e < d.config.energies.size(); ++e) {
      // Closest recorded energy wins; exact matches in practice.
      std::size_t best = it->second.size();
      double best_d = 0;
      for (std::size_t k = 0; k < it->second.size(); ++k) {
        if (taken[k] || !it->second[k].collision_energy) continue;
        const double dd = std::abs(*it->second[k].collision_energy - d.config.energies[e]);
        if (best == it->second.size() || dd < best_d) {
          best = k;
          best_d = dd;
        }
      }
      if (best == it->second.size())
        throw std::invalid_argument("spectra missing an energy for molecule " + sm.id);
      taken[best] = true;
      sm.spectra[e] = std::move(it->second[best]);
    }

    const std::size_t idx = d.molecules.size();
    if (split == "train")
      d.train.push_back(idx);
    else if (split == "val")
      d.val.push_back(idx);
    else if (split == "test")
      d.test.push_back(idx);
    else
      throw std::invalid_argument("unknown split label: " + split);
    d.molecules.push_back(std::move(sm));
  }
  return d;
}

}  // namespace specmatch
