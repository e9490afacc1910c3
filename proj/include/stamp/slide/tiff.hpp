#pragma once

#include "stamp/image.hpp"

#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <memory>
#include <optional>
#include <string>
#include <vector>

namespace stamp::tiff {

enum class Compression : std::uint16_t {
    None = 1,
    Lzw = 5,
    Jpeg = 7,
    Deflate = 8,
};

/// One image file directory, reduced to what an RGB slide reader needs.
struct Directory {
    int width = 0;
    int height = 0;
    bool tiled = false;
    int tile_width = 0;    // strip images: image width
    int tile_height = 0;   // strip images: rows per strip
    std::uint16_t compression = 1;
    std::uint16_t photometric = 2;
    std::uint16_t samples_per_pixel = 3;
    std::uint16_t bits_per_sample = 8;
    std::uint16_t planar_config = 1;
    std::uint16_t predictor = 1;
    std::uint32_t subfile_type = 0;
    std::vector<std::uint64_t> offsets;
    std::vector<std::uint64_t> byte_counts;
    std::vector<std::uint8_t> jpeg_tables;
    std::optional<double> x_resolution;
    std::optional<std::uint16_t> resolution_unit;
    std::string description;

    int tiles_across() const { return (width + tile_width - 1) / tile_width; }
    int tiles_down() const { return (height + tile_height - 1) / tile_height; }
};

/// Random-access reader over a classic or BigTIFF file. Reads use pread and
/// are safe from concurrent threads.
class TiffFile {
public:
    /// Throws Error{UnsupportedFormat} when the file is not a TIFF and
    /// Error{CorruptFile} when its structure is truncated or inconsistent.
    static std::shared_ptr<TiffFile> open(const std::filesystem::path& path);

    ~TiffFile();
    TiffFile(const TiffFile&) = delete;
    TiffFile& operator=(const TiffFile&) = delete;

    const std::vector<Directory>& directories() const { return dirs_; }
    const std::filesystem::path& path() const { return path_; }
    bool big() const { return big_; }

    /// Decodes tile (or strip) `index` of directory `dir` to a full
    /// tile_width x tile_height RGB raster.
    RgbImage read_tile(std::size_t dir, std::size_t index) const;

private:
    TiffFile() = default;
    void read_at(std::uint64_t offset, void* dst, std::size_t n) const;

    std::filesystem::path path_;
    int fd_ = -1;
    std::uint64_t size_ = 0;
    bool big_ = false;
    bool little_endian_ = true;
    std::vector<Directory> dirs_;
    friend class Parser;
};

struct WriteOptions {
    int tile_size = 256;
    Compression compression = Compression::Jpeg;
    int jpeg_quality = 90;
    /// Microns per pixel of the base level; written as X/YResolution in
    /// pixels per centimeter. Absent = no resolution tags.
    std::optional<double> mpp;
    /// Number of pyramid levels (each halves the previous one).
    int levels = 1;
    bool bigtiff = false;
    std::string description;
};

/// Streaming writer for tiled RGB TIFFs. Tiles of each level are appended in
/// row-major order; directories are written by finish().
class TiledWriter {
public:
    TiledWriter(const std::filesystem::path& path, WriteOptions options);
    ~TiledWriter();
    TiledWriter(const TiledWriter&) = delete;
    TiledWriter& operator=(const TiledWriter&) = delete;

    void begin_level(int width, int height);
    /// `tile` is tile_size x tile_size (edge tiles padded by the caller).
    void write_tile(const RgbImage& tile);
    void finish();

private:
    struct Level;
    void write_bytes(const void* data, std::size_t n);

    std::filesystem::path path_;
    WriteOptions options_;
    std::FILE* file_ = nullptr;
    std::uint64_t pos_ = 0;
    std::vector<Level> levels_;
    bool finished_ = false;
};

/// Writes `image` and `options.levels - 1` halved reductions.
void write_pyramid(const std::filesystem::path& path, const RgbImage& image,
                   const WriteOptions& options);

/// TIFF LZW decoding (MSB-first codes, early code-width change).
std::vector<std::uint8_t> lzw_decode(const std::uint8_t* data, std::size_t size,
                                     std::size_t expected);

} // namespace stamp::tiff
