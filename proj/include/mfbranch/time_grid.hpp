#pragma once

#include <algorithm>
#include <cmath>

namespace mfbranch {

/// End of the Euler sub-step starting at t: the next multiple of `step`
/// strictly after t, or `target` if that comes first. Sub-steps of every
/// system are aligned to the same global grid.
inline double next_substep_end(double t, double target, double step) {
  const double k = std::floor(t / step);
  double candidate = (k + 1.0) * step;
  if (candidate <= t + 1e-12 * step) candidate += step;
  return std::min(candidate, target);
}

}  // namespace mfbranch
