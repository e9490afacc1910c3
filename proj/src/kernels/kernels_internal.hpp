#pragma once

#include "stamp/kernels/kernels.hpp"

namespace stamp::kernels {

inline constexpr float kLumaR = 0.299f;
inline constexpr float kLumaG = 0.587f;
inline constexpr float kLumaB = 0.114f;

inline constexpr float kLog2Of10 = 3.32192809488736234787f;

// Taylor coefficients of 2^f = exp(f ln 2), |f| <= 0.5.
inline constexpr float kExp2Poly[8] = {
    1.0f,
    0.693147180559945309f,
    0.240226506959100712f,
    0.0555041086648215800f,
    0.00961812910762847716f,
    0.00133335581464284434f,
    0.000154035303933816099f,
    0.0000152527338040598403f,
};

#if defined(STAMP_HAVE_AVX2)
const KernelTable& avx2_table_unchecked();
#endif

} // namespace stamp::kernels
