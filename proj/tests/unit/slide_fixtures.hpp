#pragma once

#include "helpers.hpp"

#include "stamp/slide/tiff.hpp"

#include <functional>

namespace testutil {

/// Streams a single-level tiled TIFF whose pixels come from `paint(x, y, rgb)`.
inline void write_slide(const fs::path& path, int width, int height, std::optional<double> mpp,
                        const std::function<void(int, int, std::uint8_t*)>& paint,
                        stamp::tiff::Compression compression = stamp::tiff::Compression::Deflate,
                        const std::string& description = {})
{
    fs::create_directories(path.parent_path());
    stamp::tiff::WriteOptions o;
    o.tile_size = 256;
    o.compression = compression;
    o.mpp = mpp;
    o.description = description;
    stamp::tiff::TiledWriter w(path, o);
    w.begin_level(width, height);
    for (int y0 = 0; y0 < height; y0 += 256)
        for (int x0 = 0; x0 < width; x0 += 256) {
            stamp::RgbImage t(256, 256, 255);
            for (int y = 0; y < 256; ++y)
                for (int x = 0; x < 256; ++x)
                    if (x0 + x < width && y0 + y < height) paint(x0 + x, y0 + y, t.at(x, y));
            w.write_tile(t);
        }
    w.finish();
}

/// Tissue-like texture: high-contrast speckle over a purple base.
inline void tissue_pixel(int x, int y, std::uint8_t* px)
{
    const std::uint64_t h = stamp::mix_seed(static_cast<std::uint64_t>(x / 3), static_cast<std::uint64_t>(y / 3));
    const int v = static_cast<int>(h % 120);
    px[0] = static_cast<std::uint8_t>(90 + v);
    px[1] = static_cast<std::uint8_t>(40 + v / 2);
    px[2] = static_cast<std::uint8_t>(120 + v);
}

} // namespace testutil
