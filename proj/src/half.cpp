#include "ddcls/half.hpp"

#include <bit>

namespace ddcls {

std::uint16_t f32_to_f16(float value)
{
    const auto bits = std::bit_cast<std::uint32_t>(value);
    const auto sign = static_cast<std::uint16_t>((bits >> 16) & 0x8000u);
    const std::uint32_t exp = (bits >> 23) & 0xFFu;
    std::uint32_t mant = bits & 0x7FFFFFu;

    if (exp == 0xFF) // inf / nan
        return static_cast<std::uint16_t>(sign | 0x7C00u | (mant ? 0x200u | (mant >> 13) : 0u));

    const int e = static_cast<int>(exp) - 127 + 15;
    if (e >= 0x1F)
        return static_cast<std::uint16_t>(sign | 0x7C00u);

    if (e <= 0) {
        // Result is subnormal (or zero) in half precision.
        if (e < -10)
            return sign;
        mant |= 0x800000u;
        const auto shift = static_cast<std::uint32_t>(14 - e);
        std::uint32_t half_mant = mant >> shift;
        const std::uint32_t rest = mant & ((1u << shift) - 1u);
        const std::uint32_t halfway = 1u << (shift - 1);
        if (rest > halfway || (rest == halfway && (half_mant & 1u)))
            ++half_mant;
        return static_cast<std::uint16_t>(sign | half_mant);
    }

    std::uint32_t out = (static_cast<std::uint32_t>(e) << 10) | (mant >> 13);
    const std::uint32_t rest = mant & 0x1FFFu;
    if (rest > 0x1000u || (rest == 0x1000u && (out & 1u)))
        ++out; // carry may roll into the exponent, up to infinity, which is correct
    return static_cast<std::uint16_t>(sign | out);
}

float f16_to_f32(std::uint16_t h)
{
    const std::uint32_t sign = static_cast<std::uint32_t>(h & 0x8000u) << 16;
    const std::uint32_t exp = (h >> 10) & 0x1Fu;
    std::uint32_t mant = h & 0x3FFu;

    if (exp == 0x1F)
        return std::bit_cast<float>(sign | 0x7F800000u | (mant << 13));
    if (exp == 0) {
        if (mant == 0)
            return std::bit_cast<float>(sign);
        int e = -14;
        while ((mant & 0x400u) == 0) {
            mant <<= 1;
            --e;
        }
        mant &= 0x3FFu;
        return std::bit_cast<float>(sign | (static_cast<std::uint32_t>(e + 127) << 23) | (mant << 13));
    }
    return std::bit_cast<float>(sign | ((exp - 15 + 127) << 23) | (mant << 13));
}

} // namespace ddcls
