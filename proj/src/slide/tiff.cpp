#include "stamp/slide/tiff.hpp"

#include "stamp/error.hpp"
#include "stamp/slide/image_io.hpp"

#include <fcntl.h>
#include <sys/stat.h>
#include <unistd.h>
#include <zlib.h>

#include <algorithm>
#include <cerrno>
#include <cmath>
#include <cstring>
#include <set>

namespace stamp::tiff {
namespace {

enum Tag : std::uint16_t {
    kNewSubfileType = 254,
    kImageWidth = 256,
    kImageLength = 257,
    kBitsPerSample = 258,
    kCompression = 259,
    kPhotometric = 262,
    kImageDescription = 270,
    kStripOffsets = 273,
    kSamplesPerPixel = 277,
    kRowsPerStrip = 278,
    kStripByteCounts = 279,
    kXResolution = 282,
    kYResolution = 283,
    kPlanarConfig = 284,
    kResolutionUnit = 296,
    kPredictor = 317,
    kTileWidth = 322,
    kTileLength = 323,
    kTileOffsets = 324,
    kTileByteCounts = 325,
    kJpegTables = 347,
    kYCbCrSubSampling = 530,
};

enum Type : std::uint16_t {
    kByte = 1,
    kAscii = 2,
    kShort = 3,
    kLong = 4,
    kRational = 5,
    kSByte = 6,
    kUndefined = 7,
    kSShort = 8,
    kSLong = 9,
    kSRational = 10,
    kFloat = 11,
    kDouble = 12,
    kLong8 = 16,
    kSLong8 = 17,
    kIfd8 = 18,
};

std::size_t type_size(std::uint16_t type)
{
    switch (type) {
    case kByte: case kAscii: case kSByte: case kUndefined: return 1;
    case kShort: case kSShort: return 2;
    case kLong: case kSLong: case kFloat: return 4;
    case kRational: case kSRational: case kDouble: case kLong8: case kSLong8: case kIfd8: return 8;
    default: return 0;
    }
}

[[noreturn]] void corrupt(const std::filesystem::path& path, const std::string& what)
{
    throw Error(ErrorCode::CorruptFile, "Corrupt TIFF: " + what, path.string());
}

[[noreturn]] void unsupported(const std::filesystem::path& path, const std::string& what)
{
    throw Error(ErrorCode::UnsupportedFormat, "Unsupported format error: " + what, path.string());
}

} // namespace

// Parses the directory chain; a friend of TiffFile.
class Parser {
public:
    explicit Parser(TiffFile& file) : f_(file) {}

    void run()
    {
        std::uint8_t header[16] = {};
        if (f_.size_ < 8) unsupported(f_.path_, "file too small to be a TIFF");
        f_.read_at(0, header, std::min<std::uint64_t>(16, f_.size_));
        if (header[0] == 'I' && header[1] == 'I') {
            f_.little_endian_ = true;
        } else if (header[0] == 'M' && header[1] == 'M') {
            f_.little_endian_ = false;
        } else {
            unsupported(f_.path_, "not a TIFF file");
        }
        const std::uint16_t magic = u16(header + 2);
        std::uint64_t ifd = 0;
        if (magic == 42) {
            f_.big_ = false;
            ifd = u32(header + 4);
        } else if (magic == 43) {
            f_.big_ = true;
            if (f_.size_ < 16 || u16(header + 4) != 8) corrupt(f_.path_, "bad BigTIFF header");
            ifd = u64(header + 8);
        } else {
            unsupported(f_.path_, "not a TIFF file");
        }

        std::set<std::uint64_t> seen;
        while (ifd != 0) {
            if (!seen.insert(ifd).second) corrupt(f_.path_, "directory loop");
            ifd = parse_directory(ifd);
        }
        if (f_.dirs_.empty()) corrupt(f_.path_, "no image directories");
    }

private:
    std::uint16_t u16(const std::uint8_t* p) const
    {
        return f_.little_endian_ ? static_cast<std::uint16_t>(p[0] | (p[1] << 8))
                                 : static_cast<std::uint16_t>((p[0] << 8) | p[1]);
    }
    std::uint32_t u32(const std::uint8_t* p) const
    {
        std::uint32_t v = 0;
        for (int i = 0; i < 4; ++i) {
            const int b = f_.little_endian_ ? 3 - i : i;
            v = (v << 8) | p[b];
        }
        return v;
    }
    std::uint64_t u64(const std::uint8_t* p) const
    {
        std::uint64_t v = 0;
        for (int i = 0; i < 8; ++i) {
            const int b = f_.little_endian_ ? 7 - i : i;
            v = (v << 8) | p[b];
        }
        return v;
    }

    struct Entry {
        std::uint16_t tag;
        std::uint16_t type;
        std::uint64_t count;
        std::vector<std::uint8_t> raw;
    };

    std::vector<std::uint64_t> as_uints(const Entry& e) const
    {
        std::vector<std::uint64_t> out;
        const std::size_t sz = type_size(e.type);
        out.reserve(e.count);
        for (std::uint64_t i = 0; i < e.count; ++i) {
            const std::uint8_t* p = e.raw.data() + i * sz;
            switch (e.type) {
            case kByte: case kUndefined: out.push_back(p[0]); break;
            case kShort: out.push_back(u16(p)); break;
            case kLong: case 13: out.push_back(u32(p)); break;
            case kLong8: case kIfd8: out.push_back(u64(p)); break;
            default: corrupt(f_.path_, "unexpected field type " + std::to_string(e.type));
            }
        }
        return out;
    }

    double as_double(const Entry& e) const
    {
        if (e.count < 1) corrupt(f_.path_, "empty numeric field");
        const std::uint8_t* p = e.raw.data();
        switch (e.type) {
        case kRational: {
            const std::uint32_t den = u32(p + 4);
            return den == 0 ? 0.0 : static_cast<double>(u32(p)) / den;
        }
        case kShort: return u16(p);
        case kLong: return u32(p);
        case kFloat: {
            const std::uint32_t bits = u32(p);
            float v;
            std::memcpy(&v, &bits, 4);
            return v;
        }
        case kDouble: {
            const std::uint64_t bits = u64(p);
            double v;
            std::memcpy(&v, &bits, 8);
            return v;
        }
        default: corrupt(f_.path_, "unexpected numeric field type");
        }
    }

    std::uint64_t parse_directory(std::uint64_t offset)
    {
        const std::size_t count_size = f_.big_ ? 8 : 2;
        const std::size_t entry_size = f_.big_ ? 20 : 12;
        const std::size_t inline_size = f_.big_ ? 8 : 4;
        if (offset + count_size > f_.size_) corrupt(f_.path_, "directory offset past end of file");
        std::uint8_t buf[8];
        f_.read_at(offset, buf, count_size);
        const std::uint64_t n = f_.big_ ? u64(buf) : u16(buf);
        const std::uint64_t table_size = n * entry_size;
        if (offset + count_size + table_size + inline_size > f_.size_)
            corrupt(f_.path_, "directory truncated");
        std::vector<std::uint8_t> table(table_size + inline_size);
        f_.read_at(offset + count_size, table.data(), table.size());

        std::vector<Entry> entries;
        entries.reserve(n);
        for (std::uint64_t i = 0; i < n; ++i) {
            const std::uint8_t* p = table.data() + i * entry_size;
            Entry e;
            e.tag = u16(p);
            e.type = u16(p + 2);
            e.count = f_.big_ ? u64(p + 4) : u32(p + 4);
            const std::size_t sz = type_size(e.type);
            if (sz == 0) continue;   // unknown types are skipped
            const std::uint64_t bytes = e.count * sz;
            if (e.count != 0 && bytes / e.count != sz) corrupt(f_.path_, "field size overflow");
            const std::uint8_t* value = p + (f_.big_ ? 12 : 8);
            if (bytes <= inline_size) {
                e.raw.assign(value, value + bytes);
            } else {
                const std::uint64_t at = f_.big_ ? u64(value) : u32(value);
                if (at + bytes > f_.size_ || at + bytes < at)
                    corrupt(f_.path_, "field data past end of file (tag " + std::to_string(e.tag) + ")");
                e.raw.resize(bytes);
                f_.read_at(at, e.raw.data(), bytes);
            }
            entries.push_back(std::move(e));
        }
        const std::uint8_t* next = table.data() + table_size;
        const std::uint64_t next_ifd = f_.big_ ? u64(next) : u32(next);

        Directory d;
        bool has_tile_w = false, has_tile_h = false;
        std::vector<std::uint64_t> strip_offsets, strip_counts, tile_offsets, tile_counts;
        int rows_per_strip = 0;
        for (const Entry& e : entries) {
            switch (e.tag) {
            case kNewSubfileType: d.subfile_type = static_cast<std::uint32_t>(as_uints(e).at(0)); break;
            case kImageWidth: d.width = static_cast<int>(as_uints(e).at(0)); break;
            case kImageLength: d.height = static_cast<int>(as_uints(e).at(0)); break;
            case kBitsPerSample: {
                const auto v = as_uints(e);
                d.bits_per_sample = static_cast<std::uint16_t>(v.at(0));
                for (auto b : v)
                    if (b != v[0]) d.bits_per_sample = 0;
                break;
            }
            case kCompression: d.compression = static_cast<std::uint16_t>(as_uints(e).at(0)); break;
            case kPhotometric: d.photometric = static_cast<std::uint16_t>(as_uints(e).at(0)); break;
            case kImageDescription: d.description.assign(e.raw.begin(), e.raw.end()); break;
            case kStripOffsets: strip_offsets = as_uints(e); break;
            case kSamplesPerPixel: d.samples_per_pixel = static_cast<std::uint16_t>(as_uints(e).at(0)); break;
            case kRowsPerStrip: rows_per_strip = static_cast<int>(std::min<std::uint64_t>(as_uints(e).at(0), 1u << 30)); break;
            case kStripByteCounts: strip_counts = as_uints(e); break;
            case kXResolution: d.x_resolution = as_double(e); break;
            case kPlanarConfig: d.planar_config = static_cast<std::uint16_t>(as_uints(e).at(0)); break;
            case kResolutionUnit: d.resolution_unit = static_cast<std::uint16_t>(as_uints(e).at(0)); break;
            case kPredictor: d.predictor = static_cast<std::uint16_t>(as_uints(e).at(0)); break;
            case kTileWidth: d.tile_width = static_cast<int>(as_uints(e).at(0)); has_tile_w = true; break;
            case kTileLength: d.tile_height = static_cast<int>(as_uints(e).at(0)); has_tile_h = true; break;
            case kTileOffsets: tile_offsets = as_uints(e); break;
            case kTileByteCounts: tile_counts = as_uints(e); break;
            case kJpegTables: d.jpeg_tables = e.raw; break;
            default: break;
            }
        }
        if (d.width <= 0 || d.height <= 0) corrupt(f_.path_, "missing image dimensions");
        if (has_tile_w && has_tile_h && !tile_offsets.empty()) {
            d.tiled = true;
            if (d.tile_width <= 0 || d.tile_height <= 0) corrupt(f_.path_, "bad tile size");
            d.offsets = std::move(tile_offsets);
            d.byte_counts = std::move(tile_counts);
        } else {
            d.tiled = false;
            d.tile_width = d.width;
            d.tile_height = rows_per_strip > 0 ? std::min(rows_per_strip, d.height) : d.height;
            d.offsets = std::move(strip_offsets);
            d.byte_counts = std::move(strip_counts);
        }
        const std::size_t expected = static_cast<std::size_t>(d.tiles_across()) * d.tiles_down();
        if (d.offsets.size() < expected || d.byte_counts.size() < d.offsets.size())
            corrupt(f_.path_, "tile table shorter than the image");
        f_.dirs_.push_back(std::move(d));
        return next_ifd;
    }

    TiffFile& f_;
};

std::shared_ptr<TiffFile> TiffFile::open(const std::filesystem::path& path)
{
    std::shared_ptr<TiffFile> file(new TiffFile());
    file->path_ = path;
    file->fd_ = ::open(path.c_str(), O_RDONLY | O_CLOEXEC);
    if (file->fd_ < 0) throw Error(ErrorCode::IoError, "cannot open slide", path.string());
    struct stat st {};
    if (::fstat(file->fd_, &st) != 0) throw Error(ErrorCode::IoError, "cannot stat slide", path.string());
    file->size_ = static_cast<std::uint64_t>(st.st_size);
    Parser(*file).run();
    return file;
}

TiffFile::~TiffFile()
{
    if (fd_ >= 0) ::close(fd_);
}

void TiffFile::read_at(std::uint64_t offset, void* dst, std::size_t n) const
{
    auto* out = static_cast<std::uint8_t*>(dst);
    while (n > 0) {
        const ssize_t got = ::pread(fd_, out, n, static_cast<off_t>(offset));
        if (got < 0 && errno == EINTR) continue;
        if (got <= 0) corrupt(path_, "unexpected end of file");
        out += got;
        offset += static_cast<std::uint64_t>(got);
        n -= static_cast<std::size_t>(got);
    }
}

RgbImage TiffFile::read_tile(std::size_t dir, std::size_t index) const
{
    const Directory& d = dirs_.at(dir);
    if (d.bits_per_sample != 8 || d.planar_config != 1 ||
        (d.samples_per_pixel != 3 && d.samples_per_pixel != 4)) {
        unsupported(path_, "only 8-bit interleaved RGB slides are supported");
    }
    if (index >= d.offsets.size()) corrupt(path_, "tile index out of range");
    const int tw = d.tile_width;
    // Strips: the last strip may hold fewer rows.
    const int rows = d.tiled ? d.tile_height
                             : std::min(d.tile_height, d.height - static_cast<int>(index) * d.tile_height);
    const std::size_t spp = d.samples_per_pixel;
    const std::size_t expected = static_cast<std::size_t>(tw) * rows * spp;

    RgbImage tile(tw, d.tile_height, 255);
    const std::uint64_t off = d.offsets[index];
    const std::uint64_t count = d.byte_counts[index];
    if (count == 0) return tile;   // sparse tile
    if (off + count > size_ || off + count < off) corrupt(path_, "tile data past end of file");
    std::vector<std::uint8_t> data(count);
    read_at(off, data.data(), data.size());

    std::vector<std::uint8_t> raw;
    switch (d.compression) {
    case static_cast<std::uint16_t>(Compression::None):
        if (data.size() < expected) corrupt(path_, "truncated uncompressed tile");
        raw = std::move(data);
        break;
    case static_cast<std::uint16_t>(Compression::Lzw):
        raw = lzw_decode(data.data(), data.size(), expected);
        if (raw.size() < expected) corrupt(path_, "truncated LZW tile");
        break;
    case static_cast<std::uint16_t>(Compression::Deflate):
    case 32946: {
        raw.resize(expected);
        uLongf len = static_cast<uLongf>(expected);
        const int rc = ::uncompress(raw.data(), &len, data.data(), static_cast<uLong>(data.size()));
        if ((rc != Z_OK && rc != Z_BUF_ERROR) || len < expected) corrupt(path_, "invalid deflate tile");
        break;
    }
    case static_cast<std::uint16_t>(Compression::Jpeg): {
        if (spp != 3) unsupported(path_, "JPEG tiles must have three samples");
        RgbImage decoded;
        try {
            decoded = io::decode_jpeg(data, d.jpeg_tables);
        } catch (const Error& e) {
            throw Error(ErrorCode::CorruptFile, e.what(), path_.string());
        }
        if (decoded.width < tw || decoded.height < rows) corrupt(path_, "JPEG tile smaller than declared");
        for (int y = 0; y < rows; ++y)
            std::memcpy(tile.row(y), decoded.row(y), static_cast<std::size_t>(tw) * 3);
        return tile;
    }
    default:
        unsupported(path_, "compression scheme " + std::to_string(d.compression));
    }

    if (d.photometric != 2) unsupported(path_, "photometric interpretation " + std::to_string(d.photometric));
    if (d.predictor == 2) {
        for (int y = 0; y < rows; ++y) {
            std::uint8_t* r = raw.data() + static_cast<std::size_t>(y) * tw * spp;
            for (std::size_t x = spp; x < static_cast<std::size_t>(tw) * spp; ++x)
                r[x] = static_cast<std::uint8_t>(r[x] + r[x - spp]);
        }
    } else if (d.predictor != 1) {
        unsupported(path_, "predictor " + std::to_string(d.predictor));
    }
    for (int y = 0; y < rows; ++y) {
        const std::uint8_t* src = raw.data() + static_cast<std::size_t>(y) * tw * spp;
        std::uint8_t* dst = tile.row(y);
        if (spp == 3) {
            std::memcpy(dst, src, static_cast<std::size_t>(tw) * 3);
        } else {
            for (int x = 0; x < tw; ++x) std::memcpy(dst + 3 * x, src + spp * x, 3);
        }
    }
    return tile;
}

std::vector<std::uint8_t> lzw_decode(const std::uint8_t* data, std::size_t size, std::size_t expected)
{
    constexpr int kClear = 256, kEoi = 257;
    std::vector<std::uint8_t> out;
    out.reserve(expected);
    // Dictionary as (prefix code, last byte, length) chains.
    std::vector<int> prefix(4096), length(4096);
    std::vector<std::uint8_t> suffix(4096), first(4096);
    for (int i = 0; i < 256; ++i) {
        prefix[i] = -1;
        suffix[i] = static_cast<std::uint8_t>(i);
        first[i] = static_cast<std::uint8_t>(i);
        length[i] = 1;
    }
    int next = 258, width = 9, old = -1;
    std::uint64_t bitbuf = 0;
    int bits = 0;
    std::size_t pos = 0;
    std::vector<std::uint8_t> scratch;

    auto emit = [&](int code) {
        const int len = length[code];
        scratch.resize(static_cast<std::size_t>(len));
        for (int c = code, i = len - 1; i >= 0; --i, c = prefix[c])
            scratch[static_cast<std::size_t>(i)] = suffix[c];
        out.insert(out.end(), scratch.begin(), scratch.end());
    };

    while (out.size() < expected) {
        while (bits < width && pos < size) {
            bitbuf = (bitbuf << 8) | data[pos++];
            bits += 8;
        }
        if (bits < width) break;
        const int code = static_cast<int>((bitbuf >> (bits - width)) & ((1u << width) - 1));
        bits -= width;
        if (code == kEoi) break;
        if (code == kClear) {
            next = 258;
            width = 9;
            old = -1;
            continue;
        }
        if (old < 0) {
            if (code > 255) break;
            emit(code);
            old = code;
            continue;
        }
        if (code < next) {
            emit(code);
            if (next < 4096) {
                prefix[next] = old;
                suffix[next] = first[code];
                first[next] = first[old];
                length[next] = length[old] + 1;
                ++next;
            }
        } else if (code == next && next < 4096) {
            prefix[next] = old;
            suffix[next] = first[old];
            first[next] = first[old];
            length[next] = length[old] + 1;
            ++next;
            emit(code);
        } else {
            break;
        }
        old = code;
        if (next + 1 >= (1 << width) && width < 12) ++width;
    }
    return out;
}

// ---------------------------------------------------------------------------
// Writer

struct TiledWriter::Level {
    int width = 0;
    int height = 0;
    std::vector<std::uint64_t> offsets;
    std::vector<std::uint64_t> counts;
};

namespace {

struct OutEntry {
    std::uint16_t tag;
    std::uint16_t type;
    std::uint64_t count;
    std::vector<std::uint8_t> data;   // little endian
};

void put16(std::vector<std::uint8_t>& v, std::uint16_t x)
{
    v.push_back(static_cast<std::uint8_t>(x));
    v.push_back(static_cast<std::uint8_t>(x >> 8));
}
void put32(std::vector<std::uint8_t>& v, std::uint32_t x)
{
    for (int i = 0; i < 4; ++i) v.push_back(static_cast<std::uint8_t>(x >> (8 * i)));
}
void put64(std::vector<std::uint8_t>& v, std::uint64_t x)
{
    for (int i = 0; i < 8; ++i) v.push_back(static_cast<std::uint8_t>(x >> (8 * i)));
}

OutEntry short_entry(std::uint16_t tag, std::initializer_list<std::uint16_t> values)
{
    OutEntry e{tag, kShort, values.size(), {}};
    for (auto v : values) put16(e.data, v);
    return e;
}

OutEntry long_entry(std::uint16_t tag, std::uint32_t value)
{
    OutEntry e{tag, kLong, 1, {}};
    put32(e.data, value);
    return e;
}

OutEntry rational_entry(std::uint16_t tag, double value)
{
    std::uint32_t den = 1;
    while (den < 1000000 && std::fabs(value * den - std::round(value * den)) > 1e-9 * value * den &&
           value * den * 10 < 4.0e9)
        den *= 10;
    OutEntry e{tag, kRational, 1, {}};
    put32(e.data, static_cast<std::uint32_t>(std::llround(value * den)));
    put32(e.data, den);
    return e;
}

} // namespace

TiledWriter::TiledWriter(const std::filesystem::path& path, WriteOptions options)
    : path_(path), options_(std::move(options))
{
    if (options_.tile_size <= 0 || options_.tile_size % 16 != 0)
        throw Error(ErrorCode::InvalidValue, "TIFF tile size must be a positive multiple of 16");
    file_ = std::fopen(path.c_str(), "wb");
    if (file_ == nullptr) throw Error(ErrorCode::IoError, "cannot create TIFF", path.string());
    std::vector<std::uint8_t> header;
    header.push_back('I');
    header.push_back('I');
    if (options_.bigtiff) {
        put16(header, 43);
        put16(header, 8);
        put16(header, 0);
        put64(header, 0);
    } else {
        put16(header, 42);
        put32(header, 0);
    }
    write_bytes(header.data(), header.size());
}

TiledWriter::~TiledWriter()
{
    if (file_ != nullptr) std::fclose(file_);
}

void TiledWriter::write_bytes(const void* data, std::size_t n)
{
    if (n > 0 && std::fwrite(data, 1, n, file_) != n)
        throw Error(ErrorCode::IoError, "TIFF write failed", path_.string());
    pos_ += n;
}

void TiledWriter::begin_level(int width, int height)
{
    Level level;
    level.width = width;
    level.height = height;
    levels_.push_back(std::move(level));
}

void TiledWriter::write_tile(const RgbImage& tile)
{
    if (levels_.empty()) throw Error(ErrorCode::InvalidValue, "begin_level() not called");
    if (tile.width != options_.tile_size || tile.height != options_.tile_size)
        throw Error(ErrorCode::InvalidValue, "tile has the wrong size");
    std::vector<std::uint8_t> encoded;
    switch (options_.compression) {
    case Compression::None:
        encoded = tile.pixels;
        break;
    case Compression::Deflate: {
        uLongf len = ::compressBound(static_cast<uLong>(tile.pixels.size()));
        encoded.resize(len);
        if (::compress2(encoded.data(), &len, tile.pixels.data(), static_cast<uLong>(tile.pixels.size()), 6) != Z_OK)
            throw Error(ErrorCode::IoError, "deflate failed", path_.string());
        encoded.resize(len);
        break;
    }
    case Compression::Jpeg:
        encoded = io::encode_jpeg(tile, options_.jpeg_quality);
        break;
    case Compression::Lzw:
        throw Error(ErrorCode::InvalidValue, "LZW writing is not supported");
    }
    if (pos_ % 2) {
        const std::uint8_t pad = 0;
        write_bytes(&pad, 1);
    }
    if (!options_.bigtiff && pos_ + encoded.size() > 0xFFFFFFF0ULL)
        throw Error(ErrorCode::IoError, "classic TIFF exceeds 4 GiB; enable bigtiff", path_.string());
    levels_.back().offsets.push_back(pos_);
    levels_.back().counts.push_back(encoded.size());
    write_bytes(encoded.data(), encoded.size());
}

void TiledWriter::finish()
{
    if (finished_) return;
    const bool big = options_.bigtiff;
    const std::uint16_t offset_type = big ? kLong8 : kLong;
    const std::size_t inline_size = big ? 8 : 4;
    std::uint64_t first_ifd = 0;
    std::uint64_t prev_next_field = 0;   // file position of the previous IFD's next pointer

    for (std::size_t li = 0; li < levels_.size(); ++li) {
        const Level& level = levels_[li];
        const int ts = options_.tile_size;
        const std::size_t expected = static_cast<std::size_t>((level.width + ts - 1) / ts) *
                                     static_cast<std::size_t>((level.height + ts - 1) / ts);
        if (level.offsets.size() != expected)
            throw Error(ErrorCode::InvalidValue, "level " + std::to_string(li) + " has " +
                                                     std::to_string(level.offsets.size()) + " tiles, expected " +
                                                     std::to_string(expected));
        const bool jpeg = options_.compression == Compression::Jpeg;
        std::vector<OutEntry> entries;
        entries.push_back(long_entry(kNewSubfileType, li == 0 ? 0u : 1u));
        entries.push_back(long_entry(kImageWidth, static_cast<std::uint32_t>(level.width)));
        entries.push_back(long_entry(kImageLength, static_cast<std::uint32_t>(level.height)));
        entries.push_back(short_entry(kBitsPerSample, {8, 8, 8}));
        entries.push_back(short_entry(kCompression, {static_cast<std::uint16_t>(options_.compression)}));
        entries.push_back(short_entry(kPhotometric, {static_cast<std::uint16_t>(jpeg ? 6 : 2)}));
        if (li == 0 && !options_.description.empty()) {
            OutEntry e{kImageDescription, kAscii, options_.description.size() + 1, {}};
            e.data.assign(options_.description.begin(), options_.description.end());
            e.data.push_back(0);
            entries.push_back(std::move(e));
        }
        entries.push_back(short_entry(kSamplesPerPixel, {3}));
        if (options_.mpp) {
            const double scale = static_cast<double>(levels_[0].width) / level.width;
            const double px_per_cm = 10000.0 / (*options_.mpp * scale);
            entries.push_back(rational_entry(kXResolution, px_per_cm));
            entries.push_back(rational_entry(kYResolution, px_per_cm));
        }
        entries.push_back(short_entry(kPlanarConfig, {1}));
        if (options_.mpp) entries.push_back(short_entry(kResolutionUnit, {3}));
        entries.push_back(long_entry(kTileWidth, static_cast<std::uint32_t>(ts)));
        entries.push_back(long_entry(kTileLength, static_cast<std::uint32_t>(ts)));
        OutEntry offs{kTileOffsets, offset_type, level.offsets.size(), {}};
        OutEntry counts{kTileByteCounts, offset_type, level.counts.size(), {}};
        for (std::size_t i = 0; i < level.offsets.size(); ++i) {
            if (big) {
                put64(offs.data, level.offsets[i]);
                put64(counts.data, level.counts[i]);
            } else {
                put32(offs.data, static_cast<std::uint32_t>(level.offsets[i]));
                put32(counts.data, static_cast<std::uint32_t>(level.counts[i]));
            }
        }
        entries.push_back(std::move(offs));
        entries.push_back(std::move(counts));
        if (jpeg) entries.push_back(short_entry(kYCbCrSubSampling, {2, 2}));
        std::sort(entries.begin(), entries.end(), [](const OutEntry& a, const OutEntry& b) { return a.tag < b.tag; });

        if (pos_ % 2) {
            const std::uint8_t pad = 0;
            write_bytes(&pad, 1);
        }
        const std::uint64_t ifd_pos = pos_;
        const std::size_t entry_size = big ? 20 : 12;
        const std::size_t head = big ? 8 : 2;
        std::uint64_t overflow_pos = ifd_pos + head + entries.size() * entry_size + inline_size;
        std::vector<std::uint8_t> table, overflow;
        if (big) put64(table, entries.size()); else put16(table, static_cast<std::uint16_t>(entries.size()));
        for (const OutEntry& e : entries) {
            put16(table, e.tag);
            put16(table, e.type);
            if (big) put64(table, e.count); else put32(table, static_cast<std::uint32_t>(e.count));
            if (e.data.size() <= inline_size) {
                std::vector<std::uint8_t> v = e.data;
                v.resize(inline_size, 0);
                table.insert(table.end(), v.begin(), v.end());
            } else {
                const std::uint64_t at = overflow_pos + overflow.size();
                if (big) put64(table, at); else put32(table, static_cast<std::uint32_t>(at));
                overflow.insert(overflow.end(), e.data.begin(), e.data.end());
                if (overflow.size() % 2) overflow.push_back(0);
            }
        }
        const std::uint64_t next_field = ifd_pos + table.size();
        if (big) put64(table, 0); else put32(table, 0);
        write_bytes(table.data(), table.size());
        write_bytes(overflow.data(), overflow.size());

        if (li == 0) {
            first_ifd = ifd_pos;
        } else {
            std::vector<std::uint8_t> ptr;
            if (big) put64(ptr, ifd_pos); else put32(ptr, static_cast<std::uint32_t>(ifd_pos));
            ::fseeko(file_, static_cast<off_t>(prev_next_field), SEEK_SET);
            std::fwrite(ptr.data(), 1, ptr.size(), file_);
            ::fseeko(file_, 0, SEEK_END);
        }
        prev_next_field = next_field;
    }

    std::vector<std::uint8_t> ptr;
    if (big) put64(ptr, first_ifd); else put32(ptr, static_cast<std::uint32_t>(first_ifd));
    ::fseeko(file_, big ? 8 : 4, SEEK_SET);
    std::fwrite(ptr.data(), 1, ptr.size(), file_);
    if (std::fclose(file_) != 0) {
        file_ = nullptr;
        throw Error(ErrorCode::IoError, "TIFF close failed", path_.string());
    }
    file_ = nullptr;
    finished_ = true;
}

void write_pyramid(const std::filesystem::path& path, const RgbImage& image, const WriteOptions& options)
{
    TiledWriter writer(path, options);
    RgbImage level = image;
    const int ts = options.tile_size;
    for (int li = 0; li < std::max(1, options.levels); ++li) {
        if (li > 0) level = resize_area(level, std::max(1, level.width / 2), std::max(1, level.height / 2));
        writer.begin_level(level.width, level.height);
        for (int y = 0; y < level.height; y += ts)
            for (int x = 0; x < level.width; x += ts) writer.write_tile(crop(level, x, y, ts, ts, 255));
    }
    writer.finish();
}

} // namespace stamp::tiff
