#include "stamp/slide/image_io.hpp"

#include "stamp/error.hpp"

#include <csetjmp>
#include <cstdio>
#include <cstring>
#include <fstream>

#include <jpeglib.h>
#include <png.h>

namespace stamp::io {
namespace {

struct JpegErrorManager {
    jpeg_error_mgr pub;
    std::jmp_buf jump;
    char message[JMSG_LENGTH_MAX];
};

void jpeg_error_exit(j_common_ptr cinfo)
{
    auto* err = reinterpret_cast<JpegErrorManager*>(cinfo->err);
    (*cinfo->err->format_message)(cinfo, err->message);
    std::longjmp(err->jump, 1);
}

void jpeg_silent(j_common_ptr, int) {}

// The libjpeg calls below run between setjmp and any C++ object with a
// nontrivial destructor being constructed; buffers are preallocated by the
// callers.
bool decode_jpeg_raw(const std::uint8_t* data, std::size_t size, const std::uint8_t* tables,
                     std::size_t tables_size, std::uint8_t* out, std::size_t out_capacity,
                     int* width, int* height, char* message)
{
    jpeg_decompress_struct cinfo;
    JpegErrorManager err;
    cinfo.err = jpeg_std_error(&err.pub);
    err.pub.error_exit = jpeg_error_exit;
    err.pub.emit_message = jpeg_silent;
    err.message[0] = '\0';
    if (setjmp(err.jump)) {
        std::strncpy(message, err.message, JMSG_LENGTH_MAX);
        jpeg_destroy_decompress(&cinfo);
        return false;
    }
    jpeg_create_decompress(&cinfo);
    if (tables_size > 0) {
        jpeg_mem_src(&cinfo, tables, static_cast<unsigned long>(tables_size));
        jpeg_read_header(&cinfo, FALSE);
    }
    jpeg_mem_src(&cinfo, data, static_cast<unsigned long>(size));
    jpeg_read_header(&cinfo, TRUE);
    cinfo.out_color_space = JCS_RGB;
    jpeg_start_decompress(&cinfo);
    *width = static_cast<int>(cinfo.output_width);
    *height = static_cast<int>(cinfo.output_height);
    const std::size_t stride = static_cast<std::size_t>(*width) * 3;
    if (out == nullptr || cinfo.output_components != 3 || stride * (*height) > out_capacity) {
        jpeg_abort_decompress(&cinfo);
        jpeg_destroy_decompress(&cinfo);
        return true;   // header only: caller reallocates and retries
    }
    while (cinfo.output_scanline < cinfo.output_height) {
        JSAMPROW row = out + stride * cinfo.output_scanline;
        jpeg_read_scanlines(&cinfo, &row, 1);
    }
    jpeg_finish_decompress(&cinfo);
    jpeg_destroy_decompress(&cinfo);
    return true;
}

bool encode_jpeg_raw(const RgbImage& image, int quality, unsigned char** buffer,
                     unsigned long* size, char* message)
{
    jpeg_compress_struct cinfo;
    JpegErrorManager err;
    cinfo.err = jpeg_std_error(&err.pub);
    err.pub.error_exit = jpeg_error_exit;
    err.pub.emit_message = jpeg_silent;
    if (setjmp(err.jump)) {
        std::strncpy(message, err.message, JMSG_LENGTH_MAX);
        jpeg_destroy_compress(&cinfo);
        return false;
    }
    jpeg_create_compress(&cinfo);
    jpeg_mem_dest(&cinfo, buffer, size);
    cinfo.image_width = static_cast<JDIMENSION>(image.width);
    cinfo.image_height = static_cast<JDIMENSION>(image.height);
    cinfo.input_components = 3;
    cinfo.in_color_space = JCS_RGB;
    jpeg_set_defaults(&cinfo);
    jpeg_set_quality(&cinfo, quality, TRUE);
    jpeg_start_compress(&cinfo, TRUE);
    const std::size_t stride = static_cast<std::size_t>(image.width) * 3;
    while (cinfo.next_scanline < cinfo.image_height) {
        JSAMPROW row = const_cast<std::uint8_t*>(image.pixels.data()) + stride * cinfo.next_scanline;
        jpeg_write_scanlines(&cinfo, &row, 1);
    }
    jpeg_finish_compress(&cinfo);
    jpeg_destroy_compress(&cinfo);
    return true;
}

struct PngReadState {
    const std::uint8_t* data;
    std::size_t size;
    std::size_t pos;
};

void png_read_mem(png_structp png, png_bytep out, png_size_t count)
{
    auto* st = static_cast<PngReadState*>(png_get_io_ptr(png));
    if (st->pos + count > st->size) png_error(png, "truncated PNG stream");
    std::memcpy(out, st->data + st->pos, count);
    st->pos += count;
}

void png_write_mem(png_structp png, png_bytep data, png_size_t count)
{
    auto* out = static_cast<std::vector<std::uint8_t>*>(png_get_io_ptr(png));
    out->insert(out->end(), data, data + count);
}

void png_flush_noop(png_structp) {}

void png_error_handler(png_structp png, png_const_charp msg)
{
    auto* message = static_cast<char*>(png_get_error_ptr(png));
    std::strncpy(message, msg, 199);
    message[199] = '\0';
    png_longjmp(png, 1);
}

void png_warning_handler(png_structp, png_const_charp) {}

} // namespace

std::vector<std::uint8_t> encode_jpeg(const RgbImage& image, int quality)
{
    unsigned char* buffer = nullptr;
    unsigned long size = 0;
    char message[JMSG_LENGTH_MAX] = {};
    const bool ok = encode_jpeg_raw(image, quality, &buffer, &size, message);
    std::vector<std::uint8_t> out;
    if (ok) out.assign(buffer, buffer + size);
    std::free(buffer);
    if (!ok) throw Error(ErrorCode::IoError, std::string("JPEG encoding failed: ") + message);
    return out;
}

RgbImage decode_jpeg(std::span<const std::uint8_t> stream, std::span<const std::uint8_t> tables)
{
    char message[JMSG_LENGTH_MAX] = {};
    int w = 0, h = 0;
    if (!decode_jpeg_raw(stream.data(), stream.size(), tables.data(), tables.size(), nullptr, 0, &w,
                         &h, message)) {
        throw Error(ErrorCode::CorruptFile, message);
    }
    RgbImage image(w, h);
    if (!decode_jpeg_raw(stream.data(), stream.size(), tables.data(), tables.size(),
                         image.pixels.data(), image.pixels.size(), &w, &h, message)) {
        throw Error(ErrorCode::CorruptFile, message);
    }
    return image;
}

std::vector<std::uint8_t> encode_png(const RgbImage& image)
{
    std::vector<std::uint8_t> out;
    char message[200] = {};
    png_structp png =
        png_create_write_struct(PNG_LIBPNG_VER_STRING, message, png_error_handler, png_warning_handler);
    png_infop info = png_create_info_struct(png);
    std::vector<png_bytep> rows(static_cast<std::size_t>(image.height));
    for (int y = 0; y < image.height; ++y)
        rows[static_cast<std::size_t>(y)] = const_cast<std::uint8_t*>(image.row(y));
    if (setjmp(png_jmpbuf(png))) {
        png_destroy_write_struct(&png, &info);
        throw Error(ErrorCode::IoError, std::string("PNG encoding failed: ") + message);
    }
    png_set_write_fn(png, &out, png_write_mem, png_flush_noop);
    png_set_IHDR(png, info, static_cast<png_uint_32>(image.width),
                 static_cast<png_uint_32>(image.height), 8, PNG_COLOR_TYPE_RGB, PNG_INTERLACE_NONE,
                 PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
    png_write_info(png, info);
    png_write_image(png, rows.data());
    png_write_end(png, info);
    png_destroy_write_struct(&png, &info);
    return out;
}

RgbImage decode_png(std::span<const std::uint8_t> stream)
{
    char message[200] = {};
    png_structp png =
        png_create_read_struct(PNG_LIBPNG_VER_STRING, message, png_error_handler, png_warning_handler);
    png_infop info = png_create_info_struct(png);
    PngReadState state{stream.data(), stream.size(), 0};
    RgbImage image;
    std::vector<png_bytep> rows;
    if (setjmp(png_jmpbuf(png))) {
        png_destroy_read_struct(&png, &info, nullptr);
        throw Error(ErrorCode::CorruptFile, message);
    }
    png_set_read_fn(png, &state, png_read_mem);
    png_read_info(png, info);
    const auto color = png_get_color_type(png, info);
    const auto depth = png_get_bit_depth(png, info);
    if (depth == 16) png_set_strip_16(png);
    if (color == PNG_COLOR_TYPE_PALETTE) png_set_palette_to_rgb(png);
    if (color == PNG_COLOR_TYPE_GRAY && depth < 8) png_set_expand_gray_1_2_4_to_8(png);
    if (color == PNG_COLOR_TYPE_GRAY || color == PNG_COLOR_TYPE_GRAY_ALPHA) png_set_gray_to_rgb(png);
    if (color & PNG_COLOR_MASK_ALPHA) png_set_strip_alpha(png);
    png_read_update_info(png, info);
    image = RgbImage(static_cast<int>(png_get_image_width(png, info)),
                     static_cast<int>(png_get_image_height(png, info)));
    rows.resize(static_cast<std::size_t>(image.height));
    for (int y = 0; y < image.height; ++y) rows[static_cast<std::size_t>(y)] = image.row(y);
    png_read_image(png, rows.data());
    png_read_end(png, nullptr);
    png_destroy_read_struct(&png, &info, nullptr);
    return image;
}

std::vector<std::uint8_t> read_file(const std::filesystem::path& path)
{
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error(ErrorCode::IoError, "cannot open file", path.string());
    in.seekg(0, std::ios::end);
    const auto size = static_cast<std::size_t>(in.tellg());
    in.seekg(0);
    std::vector<std::uint8_t> bytes(size);
    in.read(reinterpret_cast<char*>(bytes.data()), static_cast<std::streamsize>(size));
    return bytes;
}

void write_file(const std::filesystem::path& path, std::span<const std::uint8_t> bytes)
{
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw Error(ErrorCode::IoError, "cannot write file", path.string());
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw Error(ErrorCode::IoError, "write failed", path.string());
}

RgbImage read_image(const std::filesystem::path& path)
{
    const auto bytes = read_file(path);
    static constexpr std::uint8_t kPng[8] = {0x89, 'P', 'N', 'G', 0x0d, 0x0a, 0x1a, 0x0a};
    try {
        if (bytes.size() >= 8 && std::memcmp(bytes.data(), kPng, 8) == 0) return decode_png(bytes);
        return decode_jpeg(bytes);
    } catch (const Error& e) {
        throw Error(e.code(), e.what(), path.string());
    }
}

void write_image(const std::filesystem::path& path, const RgbImage& image, int jpeg_quality)
{
    const auto ext = path.extension().string();
    if (ext == ".png") {
        write_file(path, encode_png(image));
    } else {
        write_file(path, encode_jpeg(image, jpeg_quality));
    }
}

} // namespace stamp::io
