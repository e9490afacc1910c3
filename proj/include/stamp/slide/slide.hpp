#pragma once

#include "stamp/image.hpp"

#include <filesystem>
#include <list>
#include <memory>
#include <optional>
#include <string>
#include <unordered_map>
#include <vector>

namespace stamp::tiff {
class TiffFile;
}

namespace stamp::slide {

inline constexpr int kTilePx = 224;

struct PyramidLevel {
    double downsample = 1.0;
    int width = 0;
    int height = 0;
};

/// An opened whole-slide image. Holds a tile cache, so a handle must not be
/// shared between threads; open one per worker.
class SlideHandle {
public:
    /// Metadata-only handle (no backing file); used for grid planning.
    SlideHandle(int base_width, int base_height, double mpp_base);

    const std::filesystem::path& path() const { return path_; }
    int base_width() const { return levels_.front().width; }
    int base_height() const { return levels_.front().height; }
    double mpp_base() const { return mpp_base_; }
    const std::vector<PyramidLevel>& levels() const { return levels_; }

    /// Region [x, x+w) x [y, y+h) of `level` in that level's pixel space;
    /// pixels outside the level are white.
    RgbImage read_region(std::size_t level, int x, int y, int w, int h) const;

private:
    friend SlideHandle open_slide(const std::filesystem::path& path);
    SlideHandle() = default;

    std::shared_ptr<const RgbImage> cached_tile(std::size_t level, std::size_t index) const;

    std::filesystem::path path_;
    double mpp_base_ = 0.0;
    std::vector<PyramidLevel> levels_;
    std::vector<std::size_t> level_dir_;
    std::shared_ptr<tiff::TiffFile> file_;

    struct CacheEntry {
        std::shared_ptr<const RgbImage> tile;
        std::list<std::uint64_t>::iterator lru;
    };
    mutable std::unordered_map<std::uint64_t, CacheEntry> cache_;
    mutable std::list<std::uint64_t> lru_;
    mutable std::size_t cache_bytes_ = 0;
    std::size_t cache_capacity_ = std::size_t{256} << 20;
};

/// Opens a slide and validates its resolution metadata. MPP comes from the
/// TIFF resolution tags (centimeter or inch units) or an "MPP = x" entry in
/// the image description; it is never estimated.
/// Throws UnsupportedFormat, CorruptFile or MissingResolution.
SlideHandle open_slide(const std::filesystem::path& path);

/// Microns-per-pixel extracted from metadata, if any.
std::optional<double> resolution_mpp(std::optional<double> x_resolution,
                                     std::optional<std::uint16_t> unit,
                                     const std::string& description);

struct TileSpec {
    int tile_px = kTilePx;
    double microns = 256.0;

    double target_mpp() const { return microns / tile_px; }
};

struct TileCoord {
    int x = 0;
    int y = 0;
    bool operator==(const TileCoord&) const = default;
};

/// Non-overlapping tile_px grid over the slide plane at the target MPP.
class TileGrid {
public:
    int plane_width = 0;    // target-MPP pixels
    int plane_height = 0;
    int cols = 0;
    int rows = 0;
    int tile_px = kTilePx;
    double target_mpp = 0.0;
    double ratio = 1.0;     // target_mpp / mpp_base
    std::size_t level = 0;  // pyramid level used for reading
    double level_downsample = 1.0;

    std::size_t size() const { return static_cast<std::size_t>(cols) * rows; }

    /// Row-major tile coordinates.
    std::vector<TileCoord> coords() const;

    /// Reads one tile at the target MPP: region read from the chosen level,
    /// area-averaged to tile_px, and white beyond the plane.
    RgbImage read_tile(const SlideHandle& slide, TileCoord coord) const;
};

/// Throws UpscaleRequested when the target MPP is finer than the base level.
TileGrid plan_tile_grid(const SlideHandle& slide, const TileSpec& spec);

} // namespace stamp::slide
