#include "qaclims/image_io.hpp"

#include <png.h>
// jpeglib.h needs FILE and size_t declared first
#include <cstdio>
#include <jpeglib.h>

#include <algorithm>
#include <cmath>
#include <csetjmp>
#include <filesystem>
#include <memory>

namespace qaclims::io {

namespace {

struct FileCloser {
  void operator()(std::FILE* f) const {
    if (f) std::fclose(f);
  }
};
using FilePtr = std::unique_ptr<std::FILE, FileCloser>;

FilePtr open_file(const std::string& path, const char* mode) {
  FilePtr f(std::fopen(path.c_str(), mode));
  if (!f) throw IoError(std::string("cannot open ") + path + (mode[0] == 'r' ? " for reading" : " for writing"));
  return f;
}

[[noreturn]] void png_error_fn(png_structp png, png_const_charp msg) {
  auto* what = static_cast<std::string*>(png_get_error_ptr(png));
  if (what) *what = msg;
  png_longjmp(png, 1);
}

void png_warning_fn(png_structp, png_const_charp) {}

std::uint8_t to_byte(double v) { return static_cast<std::uint8_t>(std::lround(std::clamp(v, 0.0, 1.0) * 255.0)); }

struct DecodedPng {
  png_uint_32 width = 0, height = 0;
  int channels = 0;
  std::vector<std::uint8_t> data;
  std::vector<std::pair<std::string, std::string>> text;
};

/// Decodes to 8-bit samples. With `keep_palette`, palette images keep raw indices.
DecodedPng decode_png(const std::string& path, bool keep_palette) {
  FilePtr f = open_file(path, "rb");
  std::string err;
  png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, &err, png_error_fn, png_warning_fn);
  if (!png) throw IoError("libpng init failed");
  png_infop info = png_create_info_struct(png);
  DecodedPng out;
  std::vector<png_bytep> rows;
  // Everything with a destructor is declared above the longjmp target.
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw FormatError("unreadable PNG " + path + ": " + err);
  }
  png_init_io(png, f.get());
  png_read_info(png, info);

  const int color_type = png_get_color_type(png, info);
  const int bit_depth = png_get_bit_depth(png, info);
  if (bit_depth == 16) png_set_strip_16(png);
  if (color_type == PNG_COLOR_TYPE_PALETTE) {
    if (!keep_palette) png_set_palette_to_rgb(png);
    else if (bit_depth < 8) png_set_packing(png);
  }
  if (color_type == PNG_COLOR_TYPE_GRAY && bit_depth < 8) png_set_expand_gray_1_2_4_to_8(png);
  if (!keep_palette && png_get_valid(png, info, PNG_INFO_tRNS)) png_set_tRNS_to_alpha(png);
  png_read_update_info(png, info);

  out.width = png_get_image_width(png, info);
  out.height = png_get_image_height(png, info);
  out.channels = png_get_channels(png, info);
  const std::size_t stride = png_get_rowbytes(png, info);
  out.data.resize(stride * out.height);
  rows.resize(out.height);
  for (png_uint_32 y = 0; y < out.height; ++y) rows[y] = out.data.data() + y * stride;
  png_read_image(png, rows.data());
  png_read_end(png, info);

  png_textp text = nullptr;
  int num_text = 0;
  png_get_text(png, info, &text, &num_text);
  for (int i = 0; i < num_text; ++i) out.text.emplace_back(text[i].key, std::string(text[i].text, text[i].text_length));
  png_destroy_read_struct(&png, &info, nullptr);
  return out;
}

void encode_png(const std::string& path, png_uint_32 width, png_uint_32 height, int color_type,
                const std::vector<std::uint8_t>& data, int channels,
                const std::vector<std::pair<std::string, std::string>>& text) {
  const auto parent = std::filesystem::path(path).parent_path();
  if (!parent.empty() && !std::filesystem::exists(parent)) throw IoError("directory does not exist: " + parent.string());
  FilePtr f = open_file(path, "wb");
  std::string err;
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, &err, png_error_fn, png_warning_fn);
  if (!png) throw IoError("libpng init failed");
  png_infop info = png_create_info_struct(png);
  std::vector<png_text> chunks(text.size());
  std::vector<png_bytep> rows(height);
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    throw IoError("failed writing PNG " + path + ": " + err);
  }
  png_init_io(png, f.get());
  png_set_IHDR(png, info, width, height, 8, color_type, PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT,
               PNG_FILTER_TYPE_DEFAULT);
  for (std::size_t i = 0; i < text.size(); ++i) {
    chunks[i].compression = PNG_TEXT_COMPRESSION_NONE;
    chunks[i].key = const_cast<char*>(text[i].first.c_str());
    chunks[i].text = const_cast<char*>(text[i].second.c_str());
    chunks[i].text_length = text[i].second.size();
  }
  if (!chunks.empty()) png_set_text(png, info, chunks.data(), static_cast<int>(chunks.size()));
  png_write_info(png, info);
  for (png_uint_32 y = 0; y < height; ++y)
    rows[y] = const_cast<png_bytep>(data.data() + static_cast<std::size_t>(y) * width * channels);
  png_write_image(png, rows.data());
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
}

struct JpegErrorMgr {
  jpeg_error_mgr pub;
  std::jmp_buf jump;
  char message[JMSG_LENGTH_MAX];
};

[[noreturn]] void jpeg_error_exit(j_common_ptr cinfo) {
  auto* mgr = reinterpret_cast<JpegErrorMgr*>(cinfo->err);
  (*cinfo->err->format_message)(cinfo, mgr->message);
  std::longjmp(mgr->jump, 1);
}

RasterImage read_jpeg(const std::string& path) {
  FilePtr f = open_file(path, "rb");
  jpeg_decompress_struct cinfo;
  JpegErrorMgr err;
  cinfo.err = jpeg_std_error(&err.pub);
  err.pub.error_exit = jpeg_error_exit;
  std::vector<std::uint8_t> buffer;
  if (setjmp(err.jump)) {
    jpeg_destroy_decompress(&cinfo);
    throw FormatError("unreadable JPEG " + path + ": " + err.message);
  }
  jpeg_create_decompress(&cinfo);
  jpeg_stdio_src(&cinfo, f.get());
  jpeg_read_header(&cinfo, TRUE);
  cinfo.out_color_space = JCS_RGB;
  jpeg_start_decompress(&cinfo);
  const auto w = cinfo.output_width, h = cinfo.output_height;
  buffer.resize(static_cast<std::size_t>(w) * h * 3);
  while (cinfo.output_scanline < h) {
    JSAMPROW row = buffer.data() + static_cast<std::size_t>(cinfo.output_scanline) * w * 3;
    jpeg_read_scanlines(&cinfo, &row, 1);
  }
  jpeg_finish_decompress(&cinfo);
  jpeg_destroy_decompress(&cinfo);

  RasterImage img(h, w);
  for (JDIMENSION y = 0; y < h; ++y)
    for (JDIMENSION x = 0; x < w; ++x)
      for (int c = 0; c < 3; ++c) img.rgb[c](y, x) = buffer[(static_cast<std::size_t>(y) * w + x) * 3 + c] / 255.0;
  return img;
}

bool has_extension(const std::string& path, std::initializer_list<const char*> exts) {
  std::string ext = std::filesystem::path(path).extension().string();
  std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  return std::any_of(exts.begin(), exts.end(), [&](const char* e) { return ext == e; });
}

}  // namespace

RasterImage read_image(const std::string& path) {
  if (has_extension(path, {".jpg", ".jpeg"})) return read_jpeg(path);
  const DecodedPng d = decode_png(path, false);
  RasterImage img(d.height, d.width);
  const int ch = d.channels;
  for (png_uint_32 y = 0; y < d.height; ++y)
    for (png_uint_32 x = 0; x < d.width; ++x) {
      const std::uint8_t* px = d.data.data() + (static_cast<std::size_t>(y) * d.width + x) * ch;
      for (int c = 0; c < 3; ++c) img.rgb[c](y, x) = (ch >= 3 ? px[c] : px[0]) / 255.0;
    }
  return img;
}

void write_png(const std::string& path, const RasterImage& image,
               const std::vector<std::pair<std::string, std::string>>& text) {
  const auto h = static_cast<png_uint_32>(image.height()), w = static_cast<png_uint_32>(image.width());
  if (h == 0 || w == 0) throw DimensionError("cannot write an empty image");
  std::vector<std::uint8_t> data(static_cast<std::size_t>(w) * h * 3);
  for (png_uint_32 y = 0; y < h; ++y)
    for (png_uint_32 x = 0; x < w; ++x)
      for (int c = 0; c < 3; ++c) data[(static_cast<std::size_t>(y) * w + x) * 3 + c] = to_byte(image.rgb[c](y, x));
  encode_png(path, w, h, PNG_COLOR_TYPE_RGB, data, 3, text);
}

SegMask read_index_png(const std::string& path) {
  const DecodedPng d = decode_png(path, true);
  if (d.channels != 1) throw FormatError("index mask " + path + " is not single-channel");
  SegMask m(d.height, d.width);
  for (png_uint_32 y = 0; y < d.height; ++y)
    for (png_uint_32 x = 0; x < d.width; ++x) m(y, x) = d.data[static_cast<std::size_t>(y) * d.width + x];
  return m;
}

void write_index_png(const std::string& path, const SegMask& mask) {
  const auto h = static_cast<png_uint_32>(mask.rows()), w = static_cast<png_uint_32>(mask.cols());
  if (h == 0 || w == 0) throw DimensionError("cannot write an empty mask");
  std::vector<std::uint8_t> data(static_cast<std::size_t>(w) * h);
  for (png_uint_32 y = 0; y < h; ++y)
    for (png_uint_32 x = 0; x < w; ++x) data[static_cast<std::size_t>(y) * w + x] = mask(y, x);
  encode_png(path, w, h, PNG_COLOR_TYPE_GRAY, data, 1, {});
}

std::vector<std::pair<std::string, std::string>> read_png_text(const std::string& path) {
  return decode_png(path, false).text;
}

RasterImage quantize8(const RasterImage& image) {
  RasterImage out = image;
  for (auto& c : out.rgb) c = c.unaryExpr([](double v) { return to_byte(v) / 255.0; });
  return out;
}

}  // namespace qaclims::io
