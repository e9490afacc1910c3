#include "kernels_internal.hpp"

#include <cmath>
#include <cstring>

namespace stamp::kernels {
namespace {

void sgemm_scalar(int m, int n, int k, float alpha, const float* a, std::ptrdiff_t a_rs,
                  std::ptrdiff_t a_cs, const float* b, std::ptrdiff_t b_rs, std::ptrdiff_t b_cs,
                  float beta, float* c, std::ptrdiff_t ldc)
{
    for (int i = 0; i < m; ++i) {
        for (int j = 0; j < n; ++j) {
            float acc = 0.0f;
            for (int p = 0; p < k; ++p) acc += a[i * a_rs + p * a_cs] * b[p * b_rs + j * b_cs];
            float& out = c[i * ldc + j];
            out = (beta == 0.0f) ? alpha * acc : alpha * acc + beta * out;
        }
    }
}

void rgb_to_gray_scalar(const std::uint8_t* rgb, float* gray, std::size_t n)
{
    for (std::size_t i = 0; i < n; ++i) {
        const float r = rgb[3 * i], g = rgb[3 * i + 1], b = rgb[3 * i + 2];
        gray[i] = std::fma(kLumaB, b, std::fma(kLumaG, g, kLumaR * r));
    }
}

void conv5_rows_scalar(const float* src, std::size_t src_stride, float* dst, std::size_t dst_stride,
                       int width, int rows, const float* k)
{
    for (int y = 0; y < rows; ++y) {
        const float* s = src + y * src_stride;
        float* d = dst + y * dst_stride;
        for (int x = 0; x < width; ++x) {
            float acc = k[0] * s[x];
            acc = std::fma(k[1], s[x + 1], acc);
            acc = std::fma(k[2], s[x + 2], acc);
            acc = std::fma(k[3], s[x + 3], acc);
            acc = std::fma(k[4], s[x + 4], acc);
            d[x] = acc;
        }
    }
}

void conv5_cols_scalar(const float* src, std::size_t src_stride, float* dst, std::size_t dst_stride,
                       int width, int rows, const float* k)
{
    for (int y = 0; y < rows; ++y) {
        const float* s0 = src + y * src_stride;
        float* d = dst + y * dst_stride;
        for (int x = 0; x < width; ++x) {
            float acc = k[0] * s0[x];
            acc = std::fma(k[1], s0[x + src_stride], acc);
            acc = std::fma(k[2], s0[x + 2 * src_stride], acc);
            acc = std::fma(k[3], s0[x + 3 * src_stride], acc);
            acc = std::fma(k[4], s0[x + 4 * src_stride], acc);
            d[x] = acc;
        }
    }
}

void sobel_scalar(const float* src, std::size_t stride, int width, int height, float* gx, float* gy,
                  float* mag)
{
    for (int y = 0; y < height; ++y) {
        const float* top = src + y * stride;
        const float* mid = top + stride;
        const float* bot = mid + stride;
        for (int x = 0; x < width; ++x) {
            const float right = std::fma(2.0f, mid[x + 2], top[x + 2]) + bot[x + 2];
            const float left = std::fma(2.0f, mid[x], top[x]) + bot[x];
            const float lower = std::fma(2.0f, bot[x + 1], bot[x]) + bot[x + 2];
            const float upper = std::fma(2.0f, top[x + 1], top[x]) + top[x + 2];
            const float dx = right - left;
            const float dy = lower - upper;
            const std::size_t o = static_cast<std::size_t>(y) * width + x;
            gx[o] = dx;
            gy[o] = dy;
            mag[o] = std::sqrt(std::fma(dx, dx, dy * dy));
        }
    }
}

void stain_normalize_scalar(const std::uint8_t* rgb, std::uint8_t* out, std::size_t n,
                            const StainCoeffs& k)
{
    for (std::size_t i = 0; i < n; ++i) {
        const float odr = k.od_lut[rgb[3 * i]];
        const float odg = k.od_lut[rgb[3 * i + 1]];
        const float odb = k.od_lut[rgb[3 * i + 2]];
        float c0 = std::fma(k.pinv[0][2], odb, std::fma(k.pinv[0][1], odg, k.pinv[0][0] * odr));
        float c1 = std::fma(k.pinv[1][2], odb, std::fma(k.pinv[1][1], odg, k.pinv[1][0] * odr));
        c0 = (c0 > 0.0f ? c0 : 0.0f) * k.scale[0];
        c1 = (c1 > 0.0f ? c1 : 0.0f) * k.scale[1];
        for (int ch = 0; ch < 3; ++ch) {
            const float od = std::fma(k.target[ch][1], c1, k.target[ch][0] * c0);
            float v = k.i0 * exp10_neg(-od);
            v = v < 0.0f ? 0.0f : (v > 255.0f ? 255.0f : v);
            out[3 * i + ch] = static_cast<std::uint8_t>(std::nearbyint(v));
        }
    }
}

} // namespace

float exp10_neg(float x)
{
    float t = x * kLog2Of10;
    t = t > -100.0f ? t : -100.0f;
    const float nf = std::nearbyint(t);
    const float f = t - nf;
    float p = kExp2Poly[7];
    for (int i = 6; i >= 0; --i) p = std::fma(p, f, kExp2Poly[i]);
    const std::int32_t bits = (static_cast<std::int32_t>(nf) + 127) << 23;
    float scale;
    std::memcpy(&scale, &bits, sizeof scale);
    return p * scale;
}

const KernelTable& scalar_table()
{
    static const KernelTable table{
        Isa::Scalar,      sgemm_scalar, rgb_to_gray_scalar, conv5_rows_scalar, conv5_cols_scalar,
        sobel_scalar, stain_normalize_scalar,
    };
    return table;
}

} // namespace stamp::kernels
