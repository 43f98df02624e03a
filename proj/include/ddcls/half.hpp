#pragma once

#include <cstdint>

namespace ddcls {

/// IEEE 754 binary16 conversion, round-to-nearest-even. Overflow saturates to
/// infinity, subnormals are kept, NaN stays NaN (quiet).
std::uint16_t f32_to_f16(float value);
float f16_to_f32(std::uint16_t bits);

} // namespace ddcls
