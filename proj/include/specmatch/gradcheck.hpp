#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "specmatch/tensor.hpp"

namespace specmatch {

struct GradCase {
  std::string name;
  double tolerance;  // allowed max relative error against central differences
  ad::GradCheckReport report;
  bool passed = false;
};

// Checks the whole differentiable stack against central differences: each
// tape op in isolation, then the composite blocks (matching layers, fragment
// embedding, intensity head), then a miniature end-to-end prediction loss.
// Deterministic for a fixed seed.
std::vector<GradCase> run_grad_checks(std::uint64_t seed);

}  // namespace specmatch
