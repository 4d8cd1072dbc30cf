#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "scenecaps/sdf.hpp"

namespace scenecaps {

// 8-bit grayscale images; values map linearly between [0,255] and [0,1].
// RGB(A) PNGs are converted to luminance on read.

PixelLayer decode_png(std::span<const std::uint8_t> bytes);
std::vector<std::uint8_t> encode_png(const PixelLayer& layer);

/// Binary (P5) or ASCII (P2) graymap.
PixelLayer decode_pgm(std::span<const std::uint8_t> bytes);
std::vector<std::uint8_t> encode_pgm(const PixelLayer& layer);

/// Dispatches on the file signature; throws DataError for anything else.
PixelLayer decode_image(std::span<const std::uint8_t> bytes);

PixelLayer read_image(const std::filesystem::path& path);
/// Writes PGM for a ".pgm" extension, PNG otherwise.
void write_image(const std::filesystem::path& path, const PixelLayer& layer);

std::vector<std::uint8_t> read_file_bytes(const std::filesystem::path& path);
void write_file_bytes(const std::filesystem::path& path, std::span<const std::uint8_t> bytes);

/// Quantizes to the 8-bit grid used by the image formats.
inline std::uint8_t to_byte(double v) {
  const double c = v < 0.0 ? 0.0 : (v > 1.0 ? 1.0 : v);
  return static_cast<std::uint8_t>(c * 255.0 + 0.5);
}

}  // namespace scenecaps
