#include "specmatch/spectrum.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdio>
#include <istream>
#include <ostream>
#include <sstream>
#include <stdexcept>

#include "specmatch/kernels.hpp"

namespace specmatch {

void IngestStats::warn(const std::string& msg) {
  if (warnings.size() < 50) warnings.push_back(msg);
}

void normalize_spectrum(Spectrum& s, IngestStats* stats) {
  std::vector<Peak> kept;
  kept.reserve(s.peaks.size());
  for (const Peak& p : s.peaks) {
    if (!(p.mz > 0) || p.intensity < 0 || p.mz >= kMaxPipelineMass) {
      if (stats) {
        ++stats->peaks_dropped;
        stats->warn("dropped peak mz=" + std::to_string(p.mz) + " in '" + s.name + "'");
      }
      continue;
    }
    kept.push_back(p);
  }
  std::sort(kept.begin(), kept.end(), [](const Peak& a, const Peak& b) {
    if (a.mz != b.mz) return a.mz < b.mz;
    return a.intensity < b.intensity;
  });
  double maxi = 0;
  for (const Peak& p : kept) maxi = std::max(maxi, p.intensity);
  if (maxi > 0)
    for (Peak& p : kept) p.intensity /= maxi;
  s.peaks = std::move(kept);
}

namespace {

std::string lower(std::string v) {
  for (char& c : v) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  return v;
}

std::string trim(const std::string& v) {
  std::size_t a = v.find_first_not_of(" \t\r\n");
  if (a == std::string::npos) return "";
  std::size_t b = v.find_last_not_of(" \t\r\n");
  return v.substr(a, b - a + 1);
}

// Leading float, tolerating units like "35 eV"; nullopt if none.
std::optional<double> parse_leading_double(const std::string& v) {
  try {
    std::size_t used = 0;
    double d = std::stod(v, &used);
    if (used == 0) return std::nullopt;
    return d;
  } catch (...) {
    return std::nullopt;
  }
}

bool parse_peak_line(const std::string& line, Peak& out) {
  std::string body = line;
  for (char& c : body)
    if (c == ',' || c == ';' || c == '\t') c = ' ';
  std::istringstream ss(body);
  if (!(ss >> out.mz >> out.intensity)) return false;
  return true;
}

void apply_header(Spectrum& s, const std::string& key, const std::string& value) {
  std::string k = lower(key);
  if (k == "name" || k == "title") s.name = value;
  else if (k == "precursormz" || k == "precursor_mz" || k == "pepmass")
    s.precursor_mz = parse_leading_double(value);
  else if (k == "precursor_type" || k == "precursortype" || k == "adduct") s.adduct = value;
  else if (k == "instrument" || k == "instrument_type") s.instrument = value;
  else if (k == "collision_energy" || k == "collisionenergy" || k == "ce")
    s.collision_energy = parse_leading_double(value);
  else s.extras[key] = value;
}

}  // namespace

std::vector<Spectrum> parse_msp(std::istream& in, bool strict, IngestStats* stats) {
  std::vector<Spectrum> out;
  std::string line;
  bool at_eof = false;
  std::size_t lineno = 0;
  while (!at_eof) {
    // One record: headers, then exactly Num Peaks peak lines.
    Spectrum s;
    long expected = -1;
    std::size_t got = 0;
    bool any_content = false;
    bool bad = false;
    std::string why;
    while (true) {
      if (!std::getline(in, line)) {
        at_eof = true;
        break;
      }
      ++lineno;
      std::string t = trim(line);
      if (t.empty()) {
        if (any_content) break;
        continue;
      }
      if (t[0] == '#') continue;
      any_content = true;
      if (expected < 0) {
        std::size_t colon = t.find(':');
        if (colon == std::string::npos) {
          bad = true;
          why = "header without ':' at line " + std::to_string(lineno);
          continue;
        }
        std::string key = trim(t.substr(0, colon));
        std::string value = trim(t.substr(colon + 1));
        if (lower(key) == "num peaks" || lower(key) == "numpeaks") {
          auto n = parse_leading_double(value);
          if (!n || *n < 0) {
            bad = true;
            why = "bad Num Peaks at line " + std::to_string(lineno);
          } else {
            expected = static_cast<long>(*n);
            if (expected == 0) break;
          }
        } else {
          apply_header(s, key, value);
        }
      } else {
        Peak p;
        if (!parse_peak_line(t, p)) {
          bad = true;
          why = "unparseable peak at line " + std::to_string(lineno);
          continue;
        }
        s.peaks.push_back(p);
        if (++got == static_cast<std::size_t>(expected)) break;
      }
    }
    if (!any_content) continue;
    if (expected < 0) {
      bad = true;
      why = "record without Num Peaks near line " + std::to_string(lineno);
    } else if (got != static_cast<std::size_t>(expected)) {
      bad = true;
      why = "expected " + std::to_string(expected) + " peaks, got " + std::to_string(got);
    }
    if (bad) {
      if (strict) throw std::runtime_error("parse_msp: " + why);
      if (stats) {
        ++stats->records_skipped;
        stats->warn("skipped record: " + why);
      }
      continue;
    }
    normalize_spectrum(s, stats);
    if (stats) ++stats->records_parsed;
    out.push_back(std::move(s));
  }
  return out;
}

void write_msp(const std::vector<Spectrum>& spectra, std::ostream& out) {
  char buf[64];
  for (const Spectrum& s : spectra) {
    out << "Name: " << s.name << "\n";
    if (s.precursor_mz) {
      std::snprintf(buf, sizeof buf, "%.10g", *s.precursor_mz);
      out << "PrecursorMZ: " << buf << "\n";
    }
    if (!s.adduct.empty()) out << "Precursor_type: " << s.adduct << "\n";
    if (!s.instrument.empty()) out << "Instrument_type: " << s.instrument << "\n";
    if (s.collision_energy) {
      std::snprintf(buf, sizeof buf, "%.10g", *s.collision_energy);
      out << "Collision_energy: " << buf << "\n";
    }
    for (const auto& [k, v] : s.extras) out << k << ": " << v << "\n";
    out << "Num Peaks: " << s.peaks.size() << "\n";
    for (const Peak& p : s.peaks) {
      std::snprintf(buf, sizeof buf, "%.10g %.10g", p.mz, p.intensity);
      out << buf << "\n";
    }
    out << "\n";
  }
}

std::vector<Spectrum> parse_mgf(std::istream& in, bool strict, IngestStats* stats) {
  std::vector<Spectrum> out;
  std::string line;
  bool inside = false;
  bool bad = false;
  std::string why;
  Spectrum s;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    std::string t = trim(line);
    if (t.empty() || t[0] == '#') continue;
    if (!inside) {
      if (t == "BEGIN IONS") {
        inside = true;
        bad = false;
        s = Spectrum{};
      } else if (strict) {
        throw std::runtime_error("parse_mgf: content outside BEGIN IONS at line " +
                                 std::to_string(lineno));
      }
      continue;
    }
    if (t == "END IONS") {
      inside = false;
      if (bad) {
        if (strict) throw std::runtime_error("parse_mgf: " + why);
        if (stats) {
          ++stats->records_skipped;
          stats->warn("skipped record: " + why);
        }
        continue;
      }
      normalize_spectrum(s, stats);
      if (stats) ++stats->records_parsed;
      out.push_back(std::move(s));
      continue;
    }
    std::size_t eq = t.find('=');
    if (eq != std::string::npos && !std::isdigit(static_cast<unsigned char>(t[0]))) {
      apply_header(s, trim(t.substr(0, eq)), trim(t.substr(eq + 1)));
      continue;
    }
    Peak p;
    if (!parse_peak_line(t, p)) {
      bad = true;
      why = "unparseable peak at line " + std::to_string(lineno);
      continue;
    }
    s.peaks.push_back(p);
  }
  if (inside) {
    if (strict) throw std::runtime_error("parse_mgf: unterminated BEGIN IONS block");
    if (stats) {
      ++stats->records_skipped;
      stats->warn("skipped unterminated record");
    }
  }
  return out;
}

std::size_t bin_index(double mz) {
  // The epsilon keeps values meant to land on a bin edge from being pulled
  // down by representation error.
  return static_cast<std::size_t>(std::floor(mz / kBinWidth + 1e-6));
}

BinnedSpectrum bin_spectrum(const Spectrum& s) {
  BinnedSpectrum b;
  b.values.assign(kSpectrumBins, 0.0);
  for (const Peak& p : s.peaks) {
    if (!(p.mz > 0) || p.mz >= kMaxPipelineMass) continue;
    std::size_t idx = bin_index(p.mz);
    if (idx >= kSpectrumBins) continue;
    b.values[idx] = std::max(b.values[idx], p.intensity);
  }
  double maxi = 0;
  for (double v : b.values) maxi = std::max(maxi, v);
  if (maxi > 0) kernels::scale_f64(1.0 / maxi, b.values.data(), b.values.size());
  return b;
}

void write_binned_csv(const BinnedSpectrum& b, std::ostream& out) {
  out << "bin,intensity\n";
  char buf[48];
  for (std::size_t i = 0; i < b.values.size(); ++i) {
    if (b.values[i] == 0) continue;
    std::snprintf(buf, sizeof buf, "%zu,%.10g\n", i, b.values[i]);
    out << buf;
  }
}

double cosine_similarity(const BinnedSpectrum& a, const BinnedSpectrum& b) {
  if (a.values.size() != b.values.size())
    throw std::invalid_argument("cosine_similarity: width mismatch");
  const std::size_t n = a.values.size();
  double dot = kernels::dot_f64(a.values.data(), b.values.data(), n);
  double na = kernels::dot_f64(a.values.data(), a.values.data(), n);
  double nb = kernels::dot_f64(b.values.data(), b.values.data(), n);
  if (na == 0 || nb == 0) return 0;
  return dot / (std::sqrt(na) * std::sqrt(nb));
}

double adduct_mass_offset(const std::string& adduct) {
  // Charge carriers only; electron mass included.
  if (adduct.empty() || adduct == "none") return 0.0;
  if (adduct == "[M+H]+") return 1.00727646677;
  if (adduct == "[M+Na]+") return 22.98922070;
  if (adduct == "[M+K]+") return 38.96315791;
  if (adduct == "[M+NH4]+") return 18.03382555;
  if (adduct == "[M-H]-") return -1.00727645216;
  throw std::invalid_argument("unknown adduct '" + adduct + "'");
}

AssignedIntensities assign_peaks(const Spectrum& s, const FragmentationDag& dag,
                                 double adduct_offset, double ppm) {
  AssignedIntensities out;
  out.table.assign(dag.fragments.size(), {});
  for (std::size_t fi = 0; fi < dag.fragments.size(); ++fi) {
    auto masses = shifted_masses(dag.fragments[fi]);
    for (int k = 0; k < kShiftCount; ++k) {
      double target = masses[k] + adduct_offset;
      if (!(target > 0)) continue;
      double tol = target * ppm * 1e-6;
      auto lo = std::lower_bound(s.peaks.begin(), s.peaks.end(), target - tol,
                                 [](const Peak& p, double v) { return p.mz < v; });
      double acc = 0;
      for (auto it = lo; it != s.peaks.end() && it->mz <= target + tol; ++it)
        acc += it->intensity;
      out.table[fi][k] = std::min(acc, 1.0);
    }
  }
  return out;
}

Spectrum merge_predictions(const FragmentationDag& dag, const AssignedIntensities& table,
                           double adduct_offset, double floor, double collide_eps) {
  if (table.table.size() != dag.fragments.size())
    throw std::invalid_argument("merge_predictions: table size mismatch");
  std::vector<Peak> entries;
  for (std::size_t fi = 0; fi < dag.fragments.size(); ++fi) {
    auto masses = shifted_masses(dag.fragments[fi]);
    for (int k = 0; k < kShiftCount; ++k) {
      double inten = table.table[fi][k];
      if (inten <= floor) continue;
      double mz = masses[k] + adduct_offset;
      if (!(mz > 0)) continue;
      entries.push_back({mz, inten});
    }
  }
  std::sort(entries.begin(), entries.end(), [](const Peak& a, const Peak& b) {
    if (a.mz != b.mz) return a.mz < b.mz;
    return a.intensity < b.intensity;
  });

  Spectrum out;
  std::size_t i = 0;
  while (i < entries.size()) {
    // Chain-merge entries closer than collide_eps to their predecessor.
    std::size_t j = i + 1;
    Peak rep = entries[i];
    while (j < entries.size() && entries[j].mz - entries[j - 1].mz <= collide_eps) {
      if (entries[j].intensity > rep.intensity) rep = entries[j];
      ++j;
    }
    out.peaks.push_back(rep);
    i = j;
  }
  double maxi = 0;
  for (const Peak& p : out.peaks) maxi = std::max(maxi, p.intensity);
  if (maxi > 0)
    for (Peak& p : out.peaks) p.intensity /= maxi;
  return out;
}

}  // namespace specmatch
