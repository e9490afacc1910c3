#pragma once

// Data-parallel inner loops of the pipeline. Every kernel has a scalar
// reference implementation and, where the target supports it, an AVX2+FMA
// variant; `active()` picks one at runtime. The image kernels evaluate in
// the same fused-multiply-add order in both variants, so their outputs are
// bit-identical. sgemm blocks differently and matches only to rounding.

#include <cstddef>
#include <cstdint>
#include <string_view>

namespace stamp::kernels {

enum class Isa { Scalar, Avx2 };

std::string_view to_string(Isa isa);

/// Precomputed per-slide coefficients for Macenko normalization of packed
/// RGB pixels.
struct StainCoeffs {
    float od_lut[256];    // optical density of an intensity value
    float pinv[2][3];     // least-squares solve against the source stain matrix
    float scale[2];       // target max concentration / source max concentration
    float target[3][2];   // target stain matrix, rows = R,G,B
    float i0;             // background intensity
};

struct KernelTable {
    Isa isa;

    /// C = alpha * A * B + beta * C with C row-major (ldc). A(i,k) is read at
    /// A[i*a_rs + k*a_cs] and B(k,j) at B[k*b_rs + j*b_cs], so transposed
    /// operands are expressed through strides. beta == 0 ignores C's content.
    void (*sgemm)(int m, int n, int k, float alpha, const float* a, std::ptrdiff_t a_rs,
                  std::ptrdiff_t a_cs, const float* b, std::ptrdiff_t b_rs, std::ptrdiff_t b_cs,
                  float beta, float* c, std::ptrdiff_t ldc);

    /// Luma (0.299 R + 0.587 G + 0.114 B) of n packed RGB pixels.
    void (*rgb_to_gray)(const std::uint8_t* rgb, float* gray, std::size_t n);

    /// dst[y][x] = sum_t k[t] * src[y][x + t] for x < width, y < rows.
    void (*conv5_rows)(const float* src, std::size_t src_stride, float* dst,
                       std::size_t dst_stride, int width, int rows, const float* k);

    /// dst[y][x] = sum_t k[t] * src[y + t][x] for x < width, y < rows.
    void (*conv5_cols)(const float* src, std::size_t src_stride, float* dst,
                       std::size_t dst_stride, int width, int rows, const float* k);

    /// 3x3 Sobel on an image padded by one pixel on every side; src points at
    /// the padded origin. Writes gx, gy and L2 magnitude (width*height each).
    void (*sobel)(const float* src, std::size_t src_stride, int width, int height, float* gx,
                  float* gy, float* mag);

    /// Macenko decomposition + reconstruction of n packed RGB pixels.
    void (*stain_normalize)(const std::uint8_t* rgb, std::uint8_t* out, std::size_t n,
                            const StainCoeffs& coeffs);
};

const KernelTable& scalar_table();

/// nullptr when the AVX2 variant is not compiled in or the CPU lacks AVX2/FMA.
const KernelTable* avx2_table();

/// Kernel table used by the pipeline. Chosen once: AVX2 when available unless
/// the environment variable STAMP_SIMD=scalar is set.
const KernelTable& active();

/// 10^x for x in [-30, 0], evaluated the way both stain_normalize variants do.
float exp10_neg(float x);

} // namespace stamp::kernels
