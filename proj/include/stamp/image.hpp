#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

namespace stamp {

/// Interleaved 8-bit RGB raster, row-major.
struct RgbImage {
    int width = 0;
    int height = 0;
    std::vector<std::uint8_t> pixels;

    RgbImage() = default;
    RgbImage(int w, int h, std::uint8_t fill = 0)
        : width(w), height(h), pixels(static_cast<std::size_t>(w) * h * 3, fill)
    {
    }

    std::size_t pixel_count() const { return static_cast<std::size_t>(width) * height; }
    std::uint8_t* row(int y) { return pixels.data() + static_cast<std::size_t>(y) * width * 3; }
    const std::uint8_t* row(int y) const
    {
        return pixels.data() + static_cast<std::size_t>(y) * width * 3;
    }
    std::uint8_t* at(int x, int y) { return row(y) + 3 * x; }
    const std::uint8_t* at(int x, int y) const { return row(y) + 3 * x; }

    bool operator==(const RgbImage&) const = default;
};

/// Copies `src` into `dst` with its top-left corner at (x, y); clipped.
void blit(const RgbImage& src, RgbImage& dst, int x, int y);

/// Crops [x, x+w) x [y, y+h); pixels outside `src` take `fill`.
RgbImage crop(const RgbImage& src, int x, int y, int w, int h, std::uint8_t fill = 255);

/// Area-averaging resample: output pixel (i, j) averages the source box
/// [x0 + i*step_x, x0 + (i+1)*step_x) x [y0 + j*step_y, ...) with fractional
/// coverage weights. Source pixels outside `src` count as `fill`.
RgbImage resample_area(const RgbImage& src, double x0, double y0, double step_x, double step_y,
                       int out_w, int out_h, std::uint8_t fill = 255);

/// Area-averaging resize of the whole image.
RgbImage resize_area(const RgbImage& src, int out_w, int out_h);

} // namespace stamp
