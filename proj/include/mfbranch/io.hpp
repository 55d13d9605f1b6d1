#pragma once

#include <string>

namespace mfbranch {

/// Shortest round-trip decimal representation; used for all CSV output so that
/// identical runs produce identical bytes.
std::string format_double(double v);

}  // namespace mfbranch
