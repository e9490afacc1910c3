#include "stamp/slide/canny.hpp"

#include <cmath>
#include <numeric>

namespace stamp::slide {
namespace {

inline int reflect101(int i, int n)
{
    if (n == 1) return 0;
    while (i < 0 || i >= n) {
        if (i < 0) i = -i;
        if (i >= n) i = 2 * n - 2 - i;
    }
    return i;
}

// Copies a plane into a buffer with `pad` reflected pixels on each side.
std::vector<float> pad_reflect(const std::vector<float>& src, int w, int h, int pad)
{
    const int pw = w + 2 * pad, ph = h + 2 * pad;
    std::vector<float> out(static_cast<std::size_t>(pw) * ph);
    for (int y = 0; y < ph; ++y) {
        const float* s = src.data() + static_cast<std::size_t>(reflect101(y - pad, h)) * w;
        float* d = out.data() + static_cast<std::size_t>(y) * pw;
        for (int x = 0; x < pad; ++x) d[x] = s[reflect101(x - pad, w)];
        std::copy(s, s + w, d + pad);
        for (int x = pad + w; x < pw; ++x) d[x] = s[reflect101(x - pad, w)];
    }
    return out;
}

} // namespace

double EdgeMaps::edge_fraction() const
{
    if (edges.empty()) return 0.0;
    const std::size_t n = std::accumulate(edges.begin(), edges.end(), std::size_t{0});
    return static_cast<double>(n) / static_cast<double>(edges.size());
}

std::vector<float> gaussian_kernel5(float sigma)
{
    std::vector<double> k(5);
    double sum = 0.0;
    for (int i = 0; i < 5; ++i) {
        const double d = i - 2;
        k[i] = std::exp(-(d * d) / (2.0 * sigma * sigma));
        sum += k[i];
    }
    std::vector<float> out(5);
    for (int i = 0; i < 5; ++i) out[i] = static_cast<float>(k[i] / sum);
    return out;
}

std::vector<float> to_gray(const RgbImage& image, const kernels::KernelTable& k)
{
    std::vector<float> gray(image.pixel_count());
    k.rgb_to_gray(image.pixels.data(), gray.data(), gray.size());
    return gray;
}

EdgeMaps canny(const RgbImage& image, const CannyParams& params, const kernels::KernelTable& k)
{
    return canny_gray(to_gray(image, k), image.width, image.height, params, k);
}

EdgeMaps canny_gray(std::vector<float> gray, int w, int h, const CannyParams& params,
                    const kernels::KernelTable& k)
{
    EdgeMaps m;
    m.width = w;
    m.height = h;
    const std::size_t n = static_cast<std::size_t>(w) * h;
    m.gray = std::move(gray);
    m.gx.resize(n);
    m.gy.resize(n);
    m.magnitude.resize(n);
    m.edges.assign(n, 0);
    if (n == 0) return m;

    const auto g = gaussian_kernel5(params.sigma);
    const auto padded = pad_reflect(m.gray, w, h, 2);
    const int pw = w + 4;
    std::vector<float> rows(static_cast<std::size_t>(w) * (h + 4));
    k.conv5_rows(padded.data(), pw, rows.data(), w, w, h + 4, g.data());
    std::vector<float> smooth(n);
    k.conv5_cols(rows.data(), w, smooth.data(), w, w, h, g.data());

    const auto sp = pad_reflect(smooth, w, h, 1);
    k.sobel(sp.data(), static_cast<std::size_t>(w) + 2, w, h, m.gx.data(), m.gy.data(), m.magnitude.data());

    // Non-maximum suppression; the gradient direction is quantized to
    // 0, 45, 90 or 135 degrees. Neighbors outside the image count as 0.
    constexpr float kTan22 = 0.41421356f;   // tan(22.5 deg)
    constexpr float kTan67 = 2.41421356f;   // tan(67.5 deg)
    std::vector<float> nms(n, 0.0f);
    auto mag_at = [&](int x, int y) -> float {
        if (x < 0 || y < 0 || x >= w || y >= h) return 0.0f;
        return m.magnitude[static_cast<std::size_t>(y) * w + x];
    };
    for (int y = 0; y < h; ++y) {
        for (int x = 0; x < w; ++x) {
            const std::size_t o = static_cast<std::size_t>(y) * w + x;
            const float mag = m.magnitude[o];
            if (mag <= params.low) continue;
            const float ax = std::fabs(m.gx[o]), ay = std::fabs(m.gy[o]);
            float a, b;
            if (ay <= kTan22 * ax) {
                a = mag_at(x - 1, y);
                b = mag_at(x + 1, y);
            } else if (ay >= kTan67 * ax) {
                a = mag_at(x, y - 1);
                b = mag_at(x, y + 1);
            } else if ((m.gx[o] > 0) == (m.gy[o] > 0)) {
                a = mag_at(x - 1, y - 1);
                b = mag_at(x + 1, y + 1);
            } else {
                a = mag_at(x + 1, y - 1);
                b = mag_at(x - 1, y + 1);
            }
            if (mag > a && mag >= b) nms[o] = mag;
        }
    }

    std::vector<std::size_t> stack;
    for (std::size_t o = 0; o < n; ++o) {
        if (nms[o] > params.high && !m.edges[o]) {
            m.edges[o] = 1;
            stack.push_back(o);
            while (!stack.empty()) {
                const std::size_t c = stack.back();
                stack.pop_back();
                const int cx = static_cast<int>(c % w), cy = static_cast<int>(c / w);
                for (int dy = -1; dy <= 1; ++dy) {
                    for (int dx = -1; dx <= 1; ++dx) {
                        const int nx = cx + dx, ny = cy + dy;
                        if (nx < 0 || ny < 0 || nx >= w || ny >= h) continue;
                        const std::size_t q = static_cast<std::size_t>(ny) * w + nx;
                        if (!m.edges[q] && nms[q] > params.low) {
                            m.edges[q] = 1;
                            stack.push_back(q);
                        }
                    }
                }
            }
        }
    }
    return m;
}

} // namespace stamp::slide
