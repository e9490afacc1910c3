// Compiled with -mavx2 -mfma. Only reached through avx2_table() after a CPU
// check; keep standard-library templates out of this file so no AVX code is
// merged into inline functions shared with other translation units.

#include "kernels_internal.hpp"

#include <immintrin.h>

#include <cstdlib>
#include <cstring>

namespace stamp::kernels {
namespace {

constexpr int kMr = 6;
constexpr int kNr = 16;
constexpr int kKc = 256;

struct PackBuffer {
    float* data = nullptr;
    std::size_t capacity = 0;
    ~PackBuffer() { std::free(data); }
    float* reserve(std::size_t n)
    {
        if (n > capacity) {
            std::free(data);
            data = static_cast<float*>(std::aligned_alloc(64, ((n * sizeof(float) + 63) / 64) * 64));
            capacity = n;
        }
        return data;
    }
};

// B(k0 .. k0+kc, 0 .. n) into column panels of 16, zero padded.
void pack_b(const float* b, std::ptrdiff_t b_rs, std::ptrdiff_t b_cs, int k0, int kc, int n,
            float* out)
{
    const int panels = (n + kNr - 1) / kNr;
    for (int p = 0; p < panels; ++p) {
        const int j0 = p * kNr;
        const int nr = n - j0 < kNr ? n - j0 : kNr;
        float* dst = out + static_cast<std::size_t>(p) * kc * kNr;
        for (int kk = 0; kk < kc; ++kk) {
            const float* src = b + (k0 + kk) * b_rs + j0 * b_cs;
            float* row = dst + kk * kNr;
            if (b_cs == 1 && nr == kNr) {
                std::memcpy(row, src, kNr * sizeof(float));
            } else {
                int j = 0;
                for (; j < nr; ++j) row[j] = src[j * b_cs];
                for (; j < kNr; ++j) row[j] = 0.0f;
            }
        }
    }
}

template <int MR>
void micro_kernel(int kc, const float* a, std::ptrdiff_t a_rs, std::ptrdiff_t a_cs,
                  const float* panel, float alpha, float* c, std::ptrdiff_t ldc, int nr)
{
    __m256 acc[MR][2];
    for (int r = 0; r < MR; ++r) {
        acc[r][0] = _mm256_setzero_ps();
        acc[r][1] = _mm256_setzero_ps();
    }
    for (int kk = 0; kk < kc; ++kk) {
        const __m256 b0 = _mm256_load_ps(panel + kk * kNr);
        const __m256 b1 = _mm256_load_ps(panel + kk * kNr + 8);
        const float* ak = a + kk * a_cs;
        for (int r = 0; r < MR; ++r) {
            const __m256 av = _mm256_broadcast_ss(ak + r * a_rs);
            acc[r][0] = _mm256_fmadd_ps(av, b0, acc[r][0]);
            acc[r][1] = _mm256_fmadd_ps(av, b1, acc[r][1]);
        }
    }
    const __m256 va = _mm256_set1_ps(alpha);
    if (nr == kNr) {
        for (int r = 0; r < MR; ++r) {
            float* cr = c + r * ldc;
            _mm256_storeu_ps(cr, _mm256_fmadd_ps(va, acc[r][0], _mm256_loadu_ps(cr)));
            _mm256_storeu_ps(cr + 8, _mm256_fmadd_ps(va, acc[r][1], _mm256_loadu_ps(cr + 8)));
        }
    } else {
        alignas(32) float tmp[kNr];
        for (int r = 0; r < MR; ++r) {
            _mm256_store_ps(tmp, _mm256_mul_ps(va, acc[r][0]));
            _mm256_store_ps(tmp + 8, _mm256_mul_ps(va, acc[r][1]));
            float* cr = c + r * ldc;
            for (int j = 0; j < nr; ++j) cr[j] += tmp[j];
        }
    }
}

using MicroFn = void (*)(int, const float*, std::ptrdiff_t, std::ptrdiff_t, const float*, float,
                         float*, std::ptrdiff_t, int);

constexpr MicroFn kMicro[kMr + 1] = {
    nullptr,          micro_kernel<1>, micro_kernel<2>, micro_kernel<3>,
    micro_kernel<4>, micro_kernel<5>, micro_kernel<6>,
};

void sgemm_avx2(int m, int n, int k, float alpha, const float* a, std::ptrdiff_t a_rs,
                std::ptrdiff_t a_cs, const float* b, std::ptrdiff_t b_rs, std::ptrdiff_t b_cs,
                float beta, float* c, std::ptrdiff_t ldc)
{
    for (int i = 0; i < m; ++i) {
        float* row = c + i * ldc;
        if (beta == 0.0f) {
            std::memset(row, 0, static_cast<std::size_t>(n) * sizeof(float));
        } else if (beta != 1.0f) {
            for (int j = 0; j < n; ++j) row[j] *= beta;
        }
    }
    if (m == 0 || n == 0 || k == 0) return;

    thread_local PackBuffer buffer;
    const int panels = (n + kNr - 1) / kNr;
    for (int k0 = 0; k0 < k; k0 += kKc) {
        const int kc = k - k0 < kKc ? k - k0 : kKc;
        float* packed = buffer.reserve(static_cast<std::size_t>(panels) * kc * kNr);
        pack_b(b, b_rs, b_cs, k0, kc, n, packed);
        for (int i0 = 0; i0 < m; i0 += kMr) {
            const int mr = m - i0 < kMr ? m - i0 : kMr;
            const float* ablock = a + i0 * a_rs + k0 * a_cs;
            for (int p = 0; p < panels; ++p) {
                const int j0 = p * kNr;
                const int nr = n - j0 < kNr ? n - j0 : kNr;
                kMicro[mr](kc, ablock, a_rs, a_cs, packed + static_cast<std::size_t>(p) * kc * kNr,
                           alpha, c + i0 * ldc + j0, ldc, nr);
            }
        }
    }
}

void rgb_to_gray_avx2(const std::uint8_t* rgb, float* gray, std::size_t n)
{
    const __m256 wr = _mm256_set1_ps(kLumaR);
    const __m256 wg = _mm256_set1_ps(kLumaG);
    const __m256 wb = _mm256_set1_ps(kLumaB);
    std::size_t i = 0;
    alignas(32) std::int32_t r[8], g[8], b[8];
    for (; i + 8 <= n; i += 8) {
        const std::uint8_t* p = rgb + 3 * i;
        for (int l = 0; l < 8; ++l) {
            r[l] = p[3 * l];
            g[l] = p[3 * l + 1];
            b[l] = p[3 * l + 2];
        }
        const __m256 vr = _mm256_cvtepi32_ps(_mm256_load_si256(reinterpret_cast<const __m256i*>(r)));
        const __m256 vg = _mm256_cvtepi32_ps(_mm256_load_si256(reinterpret_cast<const __m256i*>(g)));
        const __m256 vb = _mm256_cvtepi32_ps(_mm256_load_si256(reinterpret_cast<const __m256i*>(b)));
        const __m256 y = _mm256_fmadd_ps(wb, vb, _mm256_fmadd_ps(wg, vg, _mm256_mul_ps(wr, vr)));
        _mm256_storeu_ps(gray + i, y);
    }
    for (; i < n; ++i) {
        const float fr = rgb[3 * i], fg = rgb[3 * i + 1], fb = rgb[3 * i + 2];
        const __m128 y = _mm_fmadd_ss(_mm_set_ss(kLumaB), _mm_set_ss(fb),
                                      _mm_fmadd_ss(_mm_set_ss(kLumaG), _mm_set_ss(fg),
                                                   _mm_mul_ss(_mm_set_ss(kLumaR), _mm_set_ss(fr))));
        gray[i] = _mm_cvtss_f32(y);
    }
}

inline float fma_ss(float a, float b, float c)
{
    return _mm_cvtss_f32(_mm_fmadd_ss(_mm_set_ss(a), _mm_set_ss(b), _mm_set_ss(c)));
}

void conv5_rows_avx2(const float* src, std::size_t src_stride, float* dst, std::size_t dst_stride,
                     int width, int rows, const float* k)
{
    const __m256 k0 = _mm256_set1_ps(k[0]), k1 = _mm256_set1_ps(k[1]), k2 = _mm256_set1_ps(k[2]),
                 k3 = _mm256_set1_ps(k[3]), k4 = _mm256_set1_ps(k[4]);
    for (int y = 0; y < rows; ++y) {
        const float* s = src + y * src_stride;
        float* d = dst + y * dst_stride;
        int x = 0;
        for (; x + 8 <= width; x += 8) {
            __m256 acc = _mm256_mul_ps(k0, _mm256_loadu_ps(s + x));
            acc = _mm256_fmadd_ps(k1, _mm256_loadu_ps(s + x + 1), acc);
            acc = _mm256_fmadd_ps(k2, _mm256_loadu_ps(s + x + 2), acc);
            acc = _mm256_fmadd_ps(k3, _mm256_loadu_ps(s + x + 3), acc);
            acc = _mm256_fmadd_ps(k4, _mm256_loadu_ps(s + x + 4), acc);
            _mm256_storeu_ps(d + x, acc);
        }
        for (; x < width; ++x) {
            float acc = k[0] * s[x];
            acc = fma_ss(k[1], s[x + 1], acc);
            acc = fma_ss(k[2], s[x + 2], acc);
            acc = fma_ss(k[3], s[x + 3], acc);
            acc = fma_ss(k[4], s[x + 4], acc);
            d[x] = acc;
        }
    }
}

void conv5_cols_avx2(const float* src, std::size_t src_stride, float* dst, std::size_t dst_stride,
                     int width, int rows, const float* k)
{
    const __m256 k0 = _mm256_set1_ps(k[0]), k1 = _mm256_set1_ps(k[1]), k2 = _mm256_set1_ps(k[2]),
                 k3 = _mm256_set1_ps(k[3]), k4 = _mm256_set1_ps(k[4]);
    for (int y = 0; y < rows; ++y) {
        const float* s = src + y * src_stride;
        float* d = dst + y * dst_stride;
        int x = 0;
        for (; x + 8 <= width; x += 8) {
            __m256 acc = _mm256_mul_ps(k0, _mm256_loadu_ps(s + x));
            acc = _mm256_fmadd_ps(k1, _mm256_loadu_ps(s + x + src_stride), acc);
            acc = _mm256_fmadd_ps(k2, _mm256_loadu_ps(s + x + 2 * src_stride), acc);
            acc = _mm256_fmadd_ps(k3, _mm256_loadu_ps(s + x + 3 * src_stride), acc);
            acc = _mm256_fmadd_ps(k4, _mm256_loadu_ps(s + x + 4 * src_stride), acc);
            _mm256_storeu_ps(d + x, acc);
        }
        for (; x < width; ++x) {
            float acc = k[0] * s[x];
            acc = fma_ss(k[1], s[x + src_stride], acc);
            acc = fma_ss(k[2], s[x + 2 * src_stride], acc);
            acc = fma_ss(k[3], s[x + 3 * src_stride], acc);
            acc = fma_ss(k[4], s[x + 4 * src_stride], acc);
            d[x] = acc;
        }
    }
}

void sobel_avx2(const float* src, std::size_t stride, int width, int height, float* gx, float* gy,
                float* mag)
{
    const __m256 two = _mm256_set1_ps(2.0f);
    for (int y = 0; y < height; ++y) {
        const float* top = src + y * stride;
        const float* mid = top + stride;
        const float* bot = mid + stride;
        const std::size_t row = static_cast<std::size_t>(y) * width;
        int x = 0;
        for (; x + 8 <= width; x += 8) {
            const __m256 t0 = _mm256_loadu_ps(top + x), t1 = _mm256_loadu_ps(top + x + 1),
                         t2 = _mm256_loadu_ps(top + x + 2);
            const __m256 m0 = _mm256_loadu_ps(mid + x), m2 = _mm256_loadu_ps(mid + x + 2);
            const __m256 b0 = _mm256_loadu_ps(bot + x), b1 = _mm256_loadu_ps(bot + x + 1),
                         b2 = _mm256_loadu_ps(bot + x + 2);
            const __m256 right = _mm256_add_ps(_mm256_fmadd_ps(two, m2, t2), b2);
            const __m256 left = _mm256_add_ps(_mm256_fmadd_ps(two, m0, t0), b0);
            const __m256 lower = _mm256_add_ps(_mm256_fmadd_ps(two, b1, b0), b2);
            const __m256 upper = _mm256_add_ps(_mm256_fmadd_ps(two, t1, t0), t2);
            const __m256 dx = _mm256_sub_ps(right, left);
            const __m256 dy = _mm256_sub_ps(lower, upper);
            _mm256_storeu_ps(gx + row + x, dx);
            _mm256_storeu_ps(gy + row + x, dy);
            _mm256_storeu_ps(mag + row + x,
                             _mm256_sqrt_ps(_mm256_fmadd_ps(dx, dx, _mm256_mul_ps(dy, dy))));
        }
        for (; x < width; ++x) {
            const float right = fma_ss(2.0f, mid[x + 2], top[x + 2]) + bot[x + 2];
            const float left = fma_ss(2.0f, mid[x], top[x]) + bot[x];
            const float lower = fma_ss(2.0f, bot[x + 1], bot[x]) + bot[x + 2];
            const float upper = fma_ss(2.0f, top[x + 1], top[x]) + top[x + 2];
            const float dx = right - left;
            const float dy = lower - upper;
            gx[row + x] = dx;
            gy[row + x] = dy;
            mag[row + x] = _mm_cvtss_f32(_mm_sqrt_ss(_mm_set_ss(fma_ss(dx, dx, dy * dy))));
        }
    }
}

inline __m256 exp10_neg_avx2(__m256 x)
{
    __m256 t = _mm256_mul_ps(x, _mm256_set1_ps(kLog2Of10));
    t = _mm256_max_ps(t, _mm256_set1_ps(-100.0f));
    const __m256 nf = _mm256_round_ps(t, _MM_FROUND_TO_NEAREST_INT | _MM_FROUND_NO_EXC);
    const __m256 f = _mm256_sub_ps(t, nf);
    __m256 p = _mm256_set1_ps(kExp2Poly[7]);
    for (int i = 6; i >= 0; --i) p = _mm256_fmadd_ps(p, f, _mm256_set1_ps(kExp2Poly[i]));
    const __m256i bits =
        _mm256_slli_epi32(_mm256_add_epi32(_mm256_cvtps_epi32(nf), _mm256_set1_epi32(127)), 23);
    return _mm256_mul_ps(p, _mm256_castsi256_ps(bits));
}

void stain_normalize_avx2(const std::uint8_t* rgb, std::uint8_t* out, std::size_t n,
                          const StainCoeffs& k)
{
    const __m256 zero = _mm256_setzero_ps();
    const __m256 hi = _mm256_set1_ps(255.0f);
    const __m256 i0 = _mm256_set1_ps(k.i0);
    const __m256 p00 = _mm256_set1_ps(k.pinv[0][0]), p01 = _mm256_set1_ps(k.pinv[0][1]),
                 p02 = _mm256_set1_ps(k.pinv[0][2]);
    const __m256 p10 = _mm256_set1_ps(k.pinv[1][0]), p11 = _mm256_set1_ps(k.pinv[1][1]),
                 p12 = _mm256_set1_ps(k.pinv[1][2]);
    const __m256 s0 = _mm256_set1_ps(k.scale[0]), s1 = _mm256_set1_ps(k.scale[1]);
    alignas(32) std::int32_t ir[8], ig[8], ib[8];
    alignas(32) std::int32_t res[3][8];
    std::size_t i = 0;
    for (; i + 8 <= n; i += 8) {
        const std::uint8_t* p = rgb + 3 * i;
        for (int l = 0; l < 8; ++l) {
            ir[l] = p[3 * l];
            ig[l] = p[3 * l + 1];
            ib[l] = p[3 * l + 2];
        }
        const __m256 odr = _mm256_i32gather_ps(k.od_lut, _mm256_load_si256(reinterpret_cast<const __m256i*>(ir)), 4);
        const __m256 odg = _mm256_i32gather_ps(k.od_lut, _mm256_load_si256(reinterpret_cast<const __m256i*>(ig)), 4);
        const __m256 odb = _mm256_i32gather_ps(k.od_lut, _mm256_load_si256(reinterpret_cast<const __m256i*>(ib)), 4);
        __m256 c0 = _mm256_fmadd_ps(p02, odb, _mm256_fmadd_ps(p01, odg, _mm256_mul_ps(p00, odr)));
        __m256 c1 = _mm256_fmadd_ps(p12, odb, _mm256_fmadd_ps(p11, odg, _mm256_mul_ps(p10, odr)));
        c0 = _mm256_mul_ps(_mm256_and_ps(c0, _mm256_cmp_ps(c0, zero, _CMP_GT_OQ)), s0);
        c1 = _mm256_mul_ps(_mm256_and_ps(c1, _mm256_cmp_ps(c1, zero, _CMP_GT_OQ)), s1);
        for (int ch = 0; ch < 3; ++ch) {
            const __m256 od = _mm256_fmadd_ps(_mm256_set1_ps(k.target[ch][1]), c1,
                                              _mm256_mul_ps(_mm256_set1_ps(k.target[ch][0]), c0));
            __m256 v = _mm256_mul_ps(i0, exp10_neg_avx2(_mm256_sub_ps(zero, od)));
            v = _mm256_min_ps(_mm256_max_ps(v, zero), hi);
            v = _mm256_round_ps(v, _MM_FROUND_TO_NEAREST_INT | _MM_FROUND_NO_EXC);
            _mm256_store_si256(reinterpret_cast<__m256i*>(res[ch]), _mm256_cvtps_epi32(v));
        }
        std::uint8_t* o = out + 3 * i;
        for (int l = 0; l < 8; ++l) {
            o[3 * l] = static_cast<std::uint8_t>(res[0][l]);
            o[3 * l + 1] = static_cast<std::uint8_t>(res[1][l]);
            o[3 * l + 2] = static_cast<std::uint8_t>(res[2][l]);
        }
    }
    if (i < n) scalar_table().stain_normalize(rgb + 3 * i, out + 3 * i, n - i, k);
}

} // namespace

const KernelTable& avx2_table_unchecked()
{
    static const KernelTable table{
        Isa::Avx2,  sgemm_avx2, rgb_to_gray_avx2, conv5_rows_avx2, conv5_cols_avx2,
        sobel_avx2, stain_normalize_avx2,
    };
    return table;
}

} // namespace stamp::kernels
