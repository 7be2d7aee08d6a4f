#pragma once

#include <cstdint>

namespace mmsa {

// Runtime scalar for all tensor math. Dataset and checkpoint files always
// store 32-bit floats on disk regardless of this setting.
#ifdef MMSA_SCALAR_FLOAT
using Scalar = float;
#else
using Scalar = double;
#endif

// Additive score for masked-out attention keys. Large enough that exp()
// underflows to exactly 0 after max-subtraction, small enough to stay finite.
inline constexpr Scalar kMaskedScore = Scalar(-1e30);

}  // namespace mmsa
