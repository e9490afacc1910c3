#include "stamp/slide/slide.hpp"

#include "stamp/error.hpp"
#include "stamp/slide/tiff.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <regex>

namespace stamp::slide {
namespace {

bool supported_compression(std::uint16_t c)
{
    return c == 1 || c == 5 || c == 7 || c == 8 || c == 32946;
}

void check_supported(const tiff::Directory& d, const std::filesystem::path& path)
{
    if (d.bits_per_sample != 8 || d.planar_config != 1 ||
        (d.samples_per_pixel != 3 && d.samples_per_pixel != 4) || !supported_compression(d.compression)) {
        throw Error(ErrorCode::UnsupportedFormat,
                    "Unsupported format error: slide encoding (compression " + std::to_string(d.compression) +
                        ", " + std::to_string(d.samples_per_pixel) + " samples of " +
                        std::to_string(d.bits_per_sample) + " bits)",
                    path.string());
    }
}

} // namespace

std::optional<double> resolution_mpp(std::optional<double> x_resolution, std::optional<std::uint16_t> unit,
                                     const std::string& description)
{
    if (x_resolution && *x_resolution > 0.0 && unit) {
        if (*unit == 3) return 10000.0 / *x_resolution;
        if (*unit == 2) return 25400.0 / *x_resolution;
    }
    static const std::regex mpp_re(R"(MPP\s*=\s*([0-9]*\.?[0-9]+(?:[eE][-+]?[0-9]+)?))");
    std::smatch m;
    if (std::regex_search(description, m, mpp_re)) {
        const double v = std::stod(m[1].str());
        if (v > 0.0) return v;
    }
    return std::nullopt;
}

SlideHandle::SlideHandle(int base_width, int base_height, double mpp_base)
    : mpp_base_(mpp_base), levels_{{1.0, base_width, base_height}}
{
    if (mpp_base <= 0.0) throw Error(ErrorCode::InvalidValue, "mpp_base must be positive");
}

SlideHandle open_slide(const std::filesystem::path& path)
{
    if (!std::filesystem::exists(path)) throw Error(ErrorCode::IoError, "slide not found", path.string());
    auto file = tiff::TiffFile::open(path);
    const auto& dirs = file->directories();
    const tiff::Directory& base = dirs.front();
    check_supported(base, path);

    const auto mpp = resolution_mpp(base.x_resolution, base.resolution_unit, base.description);
    if (!mpp) {
        throw Error(ErrorCode::MissingResolution, "Slide skipped due to missing resolution information",
                    path.string());
    }

    SlideHandle h;
    h.path_ = path;
    h.mpp_base_ = *mpp;
    h.file_ = file;
    h.levels_.push_back({1.0, base.width, base.height});
    h.level_dir_.push_back(0);

    const double aspect = static_cast<double>(base.width) / base.height;
    struct Candidate {
        double ds;
        std::size_t dir;
    };
    std::vector<Candidate> reduced;
    for (std::size_t i = 1; i < dirs.size(); ++i) {
        const auto& d = dirs[i];
        if (!d.tiled || d.width >= base.width || d.samples_per_pixel != base.samples_per_pixel) continue;
        const double a = static_cast<double>(d.width) / d.height;
        if (std::fabs(a - aspect) / aspect > 0.02) continue;   // label or macro image
        if (d.bits_per_sample != 8 || d.planar_config != 1 || !supported_compression(d.compression)) continue;
        reduced.push_back({static_cast<double>(base.width) / d.width, i});
    }
    std::sort(reduced.begin(), reduced.end(), [](const Candidate& a, const Candidate& b) { return a.ds < b.ds; });
    for (const auto& c : reduced) {
        if (c.ds <= h.levels_.back().downsample * 1.001) continue;
        h.levels_.push_back({c.ds, dirs[c.dir].width, dirs[c.dir].height});
        h.level_dir_.push_back(c.dir);
    }

    // Decode one tile so corrupt streams surface at open time.
    (void)h.cached_tile(0, 0);
    return h;
}

std::shared_ptr<const RgbImage> SlideHandle::cached_tile(std::size_t level, std::size_t index) const
{
    const std::uint64_t key = (static_cast<std::uint64_t>(level) << 40) | index;
    if (auto it = cache_.find(key); it != cache_.end()) {
        lru_.splice(lru_.begin(), lru_, it->second.lru);
        return it->second.tile;
    }
    auto tile = std::make_shared<const RgbImage>(file_->read_tile(level_dir_.at(level), index));
    lru_.push_front(key);
    cache_bytes_ += tile->pixels.size();
    cache_.emplace(key, CacheEntry{tile, lru_.begin()});
    while (cache_bytes_ > cache_capacity_ && lru_.size() > 1) {
        const std::uint64_t victim = lru_.back();
        lru_.pop_back();
        auto it = cache_.find(victim);
        cache_bytes_ -= it->second.tile->pixels.size();
        cache_.erase(it);
    }
    return tile;
}

RgbImage SlideHandle::read_region(std::size_t level, int x, int y, int w, int h) const
{
    RgbImage out(w, h, 255);
    if (!file_) throw Error(ErrorCode::IoError, "slide handle has no backing file");
    const PyramidLevel& lv = levels_.at(level);
    const tiff::Directory& d = file_->directories()[level_dir_[level]];
    const int x0 = std::max(0, x), y0 = std::max(0, y);
    const int x1 = std::min(lv.width, x + w), y1 = std::min(lv.height, y + h);
    if (x1 <= x0 || y1 <= y0) return out;
    const int tw = d.tile_width, th = d.tile_height;
    for (int ty = y0 / th; ty <= (y1 - 1) / th; ++ty) {
        for (int tx = x0 / tw; tx <= (x1 - 1) / tw; ++tx) {
            const auto tile = cached_tile(level, static_cast<std::size_t>(ty) * d.tiles_across() + tx);
            const int sx0 = std::max(x0, tx * tw), sx1 = std::min(x1, (tx + 1) * tw);
            const int sy0 = std::max(y0, ty * th), sy1 = std::min(y1, (ty + 1) * th);
            for (int yy = sy0; yy < sy1; ++yy) {
                std::memcpy(out.at(sx0 - x, yy - y), tile->at(sx0 - tx * tw, yy - ty * th),
                            static_cast<std::size_t>(sx1 - sx0) * 3);
            }
        }
    }
    return out;
}

std::vector<TileCoord> TileGrid::coords() const
{
    std::vector<TileCoord> out;
    out.reserve(size());
    for (int r = 0; r < rows; ++r)
        for (int c = 0; c < cols; ++c) out.push_back({c * tile_px, r * tile_px});
    return out;
}

RgbImage TileGrid::read_tile(const SlideHandle& slide, TileCoord coord) const
{
    const double s = ratio / level_downsample;
    const double fx = coord.x * s, fy = coord.y * s;
    const int lx0 = static_cast<int>(std::floor(fx)), ly0 = static_cast<int>(std::floor(fy));
    const int lx1 = static_cast<int>(std::ceil((coord.x + tile_px) * s));
    const int ly1 = static_cast<int>(std::ceil((coord.y + tile_px) * s));
    const RgbImage region = slide.read_region(level, lx0, ly0, lx1 - lx0, ly1 - ly0);
    RgbImage tile;
    if (std::fabs(s - 1.0) < 1e-12 && fx == lx0 && fy == ly0) {
        tile = crop(region, 0, 0, tile_px, tile_px);
    } else {
        tile = resample_area(region, fx - lx0, fy - ly0, s, s, tile_px, tile_px);
    }
    // Padding beyond the plane is white.
    const int valid_w = std::clamp(plane_width - coord.x, 0, tile_px);
    const int valid_h = std::clamp(plane_height - coord.y, 0, tile_px);
    for (int y = 0; y < tile_px; ++y) {
        std::uint8_t* row = tile.row(y);
        if (y >= valid_h) {
            std::memset(row, 255, static_cast<std::size_t>(tile_px) * 3);
        } else if (valid_w < tile_px) {
            std::memset(row + 3 * valid_w, 255, static_cast<std::size_t>(tile_px - valid_w) * 3);
        }
    }
    return tile;
}

TileGrid plan_tile_grid(const SlideHandle& slide, const TileSpec& spec)
{
    if (spec.microns <= 0.0 || spec.tile_px <= 0)
        throw Error(ErrorCode::InvalidValue, "microns and tile size must be positive", "preprocessing.microns");
    const double target = spec.target_mpp();
    if (target < slide.mpp_base() * (1.0 - 1e-9)) {
        throw Error(ErrorCode::UpscaleRequested,
                    "Requested resolution " + std::to_string(target) + " MPP is finer than the slide's base " +
                        std::to_string(slide.mpp_base()) + " MPP; upscaling is not allowed",
                    slide.path().string());
    }
    TileGrid g;
    g.tile_px = spec.tile_px;
    g.target_mpp = target;
    g.ratio = std::max(1.0, target / slide.mpp_base());
    g.plane_width = std::max(1, static_cast<int>(std::floor(slide.base_width() / g.ratio + 1e-6)));
    g.plane_height = std::max(1, static_cast<int>(std::floor(slide.base_height() / g.ratio + 1e-6)));
    g.cols = (g.plane_width + g.tile_px - 1) / g.tile_px;
    g.rows = (g.plane_height + g.tile_px - 1) / g.tile_px;
    const auto& levels = slide.levels();
    for (std::size_t i = 0; i < levels.size(); ++i) {
        if (levels[i].downsample <= g.ratio * (1.0 + 1e-9)) {
            g.level = i;
            g.level_downsample = levels[i].downsample;
        }
    }
    return g;
}

} // namespace stamp::slide
