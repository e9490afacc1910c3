#include "stamp/image.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>

namespace stamp {
namespace {

struct Tap {
    int index;   // source index, may be outside [0, n)
    double weight;
};

// For each output sample, the source pixels its box overlaps and the
// normalized overlap weights.
std::vector<std::vector<Tap>> area_taps(double start, double step, int out_n)
{
    std::vector<std::vector<Tap>> taps(static_cast<std::size_t>(out_n));
    for (int o = 0; o < out_n; ++o) {
        const double lo = start + o * step;
        const double hi = lo + step;
        auto& t = taps[static_cast<std::size_t>(o)];
        const int first = static_cast<int>(std::floor(lo));
        const int last = static_cast<int>(std::ceil(hi)) - 1;
        for (int s = first; s <= last; ++s) {
            const double overlap = std::min(hi, s + 1.0) - std::max(lo, static_cast<double>(s));
            if (overlap > 1e-12) t.push_back({s, overlap / step});
        }
    }
    return taps;
}

} // namespace

void blit(const RgbImage& src, RgbImage& dst, int x, int y)
{
    const int x0 = std::max(0, x), y0 = std::max(0, y);
    const int x1 = std::min(dst.width, x + src.width), y1 = std::min(dst.height, y + src.height);
    if (x1 <= x0 || y1 <= y0) return;
    for (int yy = y0; yy < y1; ++yy) {
        std::memcpy(dst.at(x0, yy), src.at(x0 - x, yy - y), static_cast<std::size_t>(x1 - x0) * 3);
    }
}

RgbImage crop(const RgbImage& src, int x, int y, int w, int h, std::uint8_t fill)
{
    RgbImage out(w, h, fill);
    const int x0 = std::max(0, -x), y0 = std::max(0, -y);
    const int x1 = std::min(w, src.width - x), y1 = std::min(h, src.height - y);
    for (int yy = y0; yy < y1; ++yy) {
        if (x1 > x0)
            std::memcpy(out.at(x0, yy), src.at(x + x0, y + yy), static_cast<std::size_t>(x1 - x0) * 3);
    }
    return out;
}

RgbImage resample_area(const RgbImage& src, double x0, double y0, double step_x, double step_y,
                       int out_w, int out_h, std::uint8_t fill)
{
    const auto tx = area_taps(x0, step_x, out_w);
    const auto ty = area_taps(y0, step_y, out_h);

    // Horizontal pass over every source row the vertical taps touch.
    int row_lo = 0, row_hi = -1;
    if (out_h > 0) {
        row_lo = ty.front().empty() ? 0 : ty.front().front().index;
        row_hi = ty.back().empty() ? -1 : ty.back().back().index;
    }
    const int rows = std::max(0, row_hi - row_lo + 1);
    std::vector<double> horiz(static_cast<std::size_t>(rows) * out_w * 3, 0.0);
    for (int r = 0; r < rows; ++r) {
        const int sy = row_lo + r;
        const bool row_inside = sy >= 0 && sy < src.height;
        double* h = horiz.data() + static_cast<std::size_t>(r) * out_w * 3;
        for (int o = 0; o < out_w; ++o) {
            double acc[3] = {0.0, 0.0, 0.0};
            for (const Tap& t : tx[static_cast<std::size_t>(o)]) {
                if (row_inside && t.index >= 0 && t.index < src.width) {
                    const std::uint8_t* p = src.at(t.index, sy);
                    for (int c = 0; c < 3; ++c) acc[c] += t.weight * p[c];
                } else {
                    for (int c = 0; c < 3; ++c) acc[c] += t.weight * fill;
                }
            }
            for (int c = 0; c < 3; ++c) h[3 * o + c] = acc[c];
        }
    }

    RgbImage out(out_w, out_h);
    for (int o = 0; o < out_h; ++o) {
        std::uint8_t* dst = out.row(o);
        for (int x = 0; x < out_w; ++x) {
            double acc[3] = {0.0, 0.0, 0.0};
            for (const Tap& t : ty[static_cast<std::size_t>(o)]) {
                const double* h = horiz.data() + (static_cast<std::size_t>(t.index - row_lo) * out_w + x) * 3;
                for (int c = 0; c < 3; ++c) acc[c] += t.weight * h[c];
            }
            for (int c = 0; c < 3; ++c) {
                dst[3 * x + c] = static_cast<std::uint8_t>(std::clamp(std::lround(acc[c]), 0L, 255L));
            }
        }
    }
    return out;
}

RgbImage resize_area(const RgbImage& src, int out_w, int out_h)
{
    if (out_w == src.width && out_h == src.height) return src;
    return resample_area(src, 0.0, 0.0, static_cast<double>(src.width) / out_w,
                         static_cast<double>(src.height) / out_h, out_w, out_h);
}

} // namespace stamp
