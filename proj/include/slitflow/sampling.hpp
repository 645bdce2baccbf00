#pragma once

#include <vector>

#include "slitflow/types.hpp"

namespace slitflow {

/// Posterior draws for one target spectrum, in physical (denormalized)
/// units. Out-of-bounds devices are flagged rather than clamped so the mode
/// geometry survives into evaluation.
struct PosteriorSamples {
  Matrix devices;               // n x 4
  std::vector<char> in_bounds;  // n flags
  Matrix z;                     // n x 4 latent vectors behind the draws

  Index size() const { return devices.rows(); }
};

}  // namespace slitflow
