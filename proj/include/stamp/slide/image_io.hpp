#pragma once

#include "stamp/image.hpp"

#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

namespace stamp::io {

/// Encodes RGB as a baseline JFIF stream (YCbCr 4:2:0).
std::vector<std::uint8_t> encode_jpeg(const RgbImage& image, int quality = 90);

/// Decodes a JPEG stream to RGB. `tables` is an optional abbreviated
/// table-only stream (TIFF JPEGTables) loaded before the image stream.
/// Throws Error{CorruptFile} with the decoder's message on invalid input.
RgbImage decode_jpeg(std::span<const std::uint8_t> stream,
                     std::span<const std::uint8_t> tables = {});

std::vector<std::uint8_t> encode_png(const RgbImage& image);
RgbImage decode_png(std::span<const std::uint8_t> stream);

/// Reads a JPEG or PNG file, detected by signature.
RgbImage read_image(const std::filesystem::path& path);

/// Writes by extension: .jpg/.jpeg or .png.
void write_image(const std::filesystem::path& path, const RgbImage& image, int jpeg_quality = 90);

std::vector<std::uint8_t> read_file(const std::filesystem::path& path);
void write_file(const std::filesystem::path& path, std::span<const std::uint8_t> bytes);

} // namespace stamp::io
