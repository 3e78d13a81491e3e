#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace uda {

/// Result of one finite-difference suite. The error of an instance is
/// |analytic - numeric| / max(|analytic|, |numeric|) over the whole gradient.
struct GradcheckSuite {
  std::string name;
  int instances = 0;
  double max_relative_error = 0.0;
  double tolerance = 0.0;

  bool passed() const { return instances > 0 && max_relative_error <= tolerance; }
};

struct GradcheckReport {
  std::vector<GradcheckSuite> suites;

  bool passed() const {
    for (const auto& s : suites) {
      if (!s.passed()) return false;
    }
    return !suites.empty();
  }
};

/// Runs every central-difference suite in double precision: conv3x3, conv1x1,
/// relu, l2 normalization, cross-entropy, both triplet negative modes, the
/// consistency loss and the full model. Instances whose hinge or relu inputs
/// sit within a small band of a kink are redrawn.
GradcheckReport run_gradchecks(std::uint64_t seed = 0, int instances = 20);

}  // namespace uda
