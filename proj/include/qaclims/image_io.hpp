#pragma once

#include "qaclims/types.hpp"

#include <string>
#include <utility>
#include <vector>

namespace qaclims::io {

/// Reads an 8-bit PNG (gray, gray+alpha, RGB, RGBA or palette) or a JPEG,
/// chosen by file extension. Alpha is dropped.
RasterImage read_image(const std::string& path);

/// Writes 8-bit RGB PNG. Values are clamped to [0, 1] and rounded.
/// Optional text chunks are stored as tEXt (keyword, value) pairs.
void write_png(const std::string& path, const RasterImage& image,
               const std::vector<std::pair<std::string, std::string>>& text = {});

/// Single-channel index image. Palette PNGs yield raw palette indices.
SegMask read_index_png(const std::string& path);
void write_index_png(const std::string& path, const SegMask& mask);

/// Text chunks stored in a PNG, in file order.
std::vector<std::pair<std::string, std::string>> read_png_text(const std::string& path);

/// Round-trip an image through 8-bit quantisation, matching what write_png
/// followed by read_image would produce.
RasterImage quantize8(const RasterImage& image);

}  // namespace qaclims::io
