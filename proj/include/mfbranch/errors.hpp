#pragma once

#include <stdexcept>
#include <string>

namespace mfbranch {

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

#define MFBRANCH_DEFINE_ERROR(Name)        \
  class Name : public Error {              \
   public:                                 \
    using Error::Error;                    \
  }

/// Normalization or distance requested on a measure with no atoms.
MFBRANCH_DEFINE_ERROR(EmptyMeasure);
MFBRANCH_DEFINE_ERROR(ConfigError);
MFBRANCH_DEFINE_ERROR(DimensionError);
/// Sinkhorn iterations exhausted with marginal violation above tolerance.
MFBRANCH_DEFINE_ERROR(NoConvergence);
MFBRANCH_DEFINE_ERROR(EmptyReference);
/// (d, q) pair at which the empirical-measure rate has no closed form.
MFBRANCH_DEFINE_ERROR(ExcludedCase);
MFBRANCH_DEFINE_ERROR(DegenerateInput);
MFBRANCH_DEFINE_ERROR(InsufficientSamples);

#undef MFBRANCH_DEFINE_ERROR

}  // namespace mfbranch
