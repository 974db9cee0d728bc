#pragma once

#include <array>
#include <cstdint>
#include <iosfwd>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "specmatch/fragdag.hpp"

// Spectrum I/O and the peak <-> fragment bridge: fixed-width binning for
// similarity, ppm-window assignment of observed peaks onto fragment shift
// slots, and the inverse merge of per-fragment intensity tables back into a
// peak list.

namespace specmatch {

struct Peak {
  double mz = 0;
  double intensity = 0;
};

struct Spectrum {
  std::string name;
  std::vector<Peak> peaks;  // ascending m/z after normalize_spectrum
  std::string adduct;
  std::string instrument;
  std::optional<double> collision_energy;
  std::optional<double> precursor_mz;
  // Header fields this toolkit does not model directly (SMILES,
  // fingerprints in library files) ride along here.
  std::map<std::string, std::string> extras;
};

struct IngestStats {
  std::size_t records_parsed = 0;
  std::size_t records_skipped = 0;
  std::size_t peaks_dropped = 0;
  std::vector<std::string> warnings;  // capped at 50

  void warn(const std::string& msg);
};

// Sorts peaks, drops non-positive m/z, negative intensity, and >= 1500 Da
// entries (counted in stats when given), rescales max intensity to 1.
void normalize_spectrum(Spectrum& s, IngestStats* stats = nullptr);

// Blank-line separated "Key: Value" records with a "Num Peaks:" count
// followed by peak lines. Malformed records are skipped and counted unless
// strict, which throws.
std::vector<Spectrum> parse_msp(std::istream& in, bool strict = false,
                                IngestStats* stats = nullptr);
void write_msp(const std::vector<Spectrum>& spectra, std::ostream& out);

// BEGIN IONS / END IONS blocks with KEY=VALUE headers.
std::vector<Spectrum> parse_mgf(std::istream& in, bool strict = false,
                                IngestStats* stats = nullptr);

inline constexpr std::size_t kSpectrumBins = 15000;
inline constexpr double kBinWidth = 0.1;

struct BinnedSpectrum {
  std::vector<double> values;  // kSpectrumBins wide, max-normalized
};

std::size_t bin_index(double mz);
BinnedSpectrum bin_spectrum(const Spectrum& s);

// "bin,intensity" lines for nonzero bins; stable formatting so outputs can
// be compared byte for byte.
void write_binned_csv(const BinnedSpectrum& b, std::ostream& out);

double cosine_similarity(const BinnedSpectrum& a, const BinnedSpectrum& b);

// Mass offset applied to neutral fragment masses for a given adduct label;
// "" and "none" mean zero. Unknown labels throw.
double adduct_mass_offset(const std::string& adduct);

inline constexpr double kDefaultPpmWindow = 20.0;

struct AssignedIntensities {
  // Per fragment, per hydrogen shift slot; entries clamped to [0, 1].
  std::vector<std::array<double, kShiftCount>> table;
};

// Sums observed intensity within the ppm window around every (fragment,
// shift) slot mass; windows may overlap, a peak can feed several slots.
AssignedIntensities assign_peaks(const Spectrum& s, const FragmentationDag& dag,
                                 double adduct_offset, double ppm = kDefaultPpmWindow);

// Inverse of assignment: emits one peak per table entry above the floor,
// merges entries closer than collide_eps (max intensity, representative m/z
// from the strongest member), and max-normalizes.
Spectrum merge_predictions(const FragmentationDag& dag, const AssignedIntensities& table,
                           double adduct_offset, double floor = 1e-4,
                           double collide_eps = 1e-4);

}  // namespace specmatch
