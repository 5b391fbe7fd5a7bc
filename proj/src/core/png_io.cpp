#include "synthfed/png_io.hpp"

#include <png.h>

#include <csetjmp>
#include <cstdio>
#include <cstring>
#include <memory>

#include "synthfed/error.hpp"

namespace synthfed::png {
namespace {

struct FileCloser {
  void operator()(std::FILE* f) const { std::fclose(f); }
};
using FilePtr = std::unique_ptr<std::FILE, FileCloser>;

FilePtr open(const std::filesystem::path& path, const char* mode) {
  FilePtr f(std::fopen(path.c_str(), mode));
  if (!f) throw DataError("cannot open " + path.string());
  return f;
}

void on_error(png_structp ptr, png_const_charp msg) {
  auto* what = static_cast<std::string*>(png_get_error_ptr(ptr));
  *what = msg;
  std::longjmp(png_jmpbuf(ptr), 1);
}

void on_warning(png_structp, png_const_charp) {}

}  // namespace

Raster read(const std::filesystem::path& path) {
  FilePtr file = open(path, "rb");
  std::string error;
  png_structp ptr = png_create_read_struct(PNG_LIBPNG_VER_STRING, &error, on_error, on_warning);
  png_infop info = png_create_info_struct(ptr);
  Raster out;
  std::vector<png_bytep> rows;
  if (setjmp(png_jmpbuf(ptr))) {
    png_destroy_read_struct(&ptr, &info, nullptr);
    throw DataError(path.string() + ": " + error);
  }
  png_init_io(ptr, file.get());
  png_read_info(ptr, info);

  const int color = png_get_color_type(ptr, info);
  int depth = png_get_bit_depth(ptr, info);
  if (color == PNG_COLOR_TYPE_PALETTE) png_set_palette_to_rgb(ptr);
  if (color == PNG_COLOR_TYPE_GRAY && depth < 8) png_set_expand_gray_1_2_4_to_8(ptr);
  if (png_get_valid(ptr, info, PNG_INFO_tRNS)) png_set_tRNS_to_alpha(ptr);
  if (depth == 16) png_set_swap(ptr);  // host little-endian samples
  png_set_strip_alpha(ptr);
  png_read_update_info(ptr, info);

  out.height = static_cast<int>(png_get_image_height(ptr, info));
  out.width = static_cast<int>(png_get_image_width(ptr, info));
  out.channels = png_get_channels(ptr, info);
  depth = png_get_bit_depth(ptr, info);
  out.bit_depth = depth;
  const std::size_t rowbytes = png_get_rowbytes(ptr, info);
  std::vector<unsigned char> buffer(rowbytes * static_cast<std::size_t>(out.height));
  rows.resize(static_cast<std::size_t>(out.height));
  for (int r = 0; r < out.height; ++r) rows[static_cast<std::size_t>(r)] = buffer.data() + r * rowbytes;
  png_read_image(ptr, rows.data());
  png_read_end(ptr, nullptr);
  png_destroy_read_struct(&ptr, &info, nullptr);

  if (out.channels != 1 && out.channels != 3)
    throw DataError(path.string() + ": unsupported channel count " + std::to_string(out.channels));
  const std::size_t n = static_cast<std::size_t>(out.height) * out.width * out.channels;
  out.samples.resize(n);
  if (depth == 16) {
    std::memcpy(out.samples.data(), buffer.data(), n * 2);
  } else {
    for (std::size_t i = 0; i < n; ++i) out.samples[i] = buffer[i];
  }
  return out;
}

void write(const std::filesystem::path& path, const Raster& raster) {
  if (raster.channels != 1 && raster.channels != 3) throw DataError("png write: channels must be 1 or 3");
  if (raster.bit_depth != 8 && raster.bit_depth != 16) throw DataError("png write: depth must be 8 or 16");
  FilePtr file = open(path, "wb");
  std::string error;
  png_structp ptr = png_create_write_struct(PNG_LIBPNG_VER_STRING, &error, on_error, on_warning);
  png_infop info = png_create_info_struct(ptr);
  const std::size_t bytes_per_sample = raster.bit_depth == 16 ? 2 : 1;
  const std::size_t rowbytes = static_cast<std::size_t>(raster.width) * raster.channels * bytes_per_sample;
  std::vector<unsigned char> buffer(rowbytes * static_cast<std::size_t>(raster.height));
  for (std::size_t i = 0; i < raster.samples.size(); ++i) {
    if (bytes_per_sample == 2) {
      buffer[2 * i] = static_cast<unsigned char>(raster.samples[i] >> 8);  // PNG is big-endian
      buffer[2 * i + 1] = static_cast<unsigned char>(raster.samples[i] & 0xff);
    } else {
      buffer[i] = static_cast<unsigned char>(raster.samples[i]);
    }
  }
  std::vector<png_bytep> rows(static_cast<std::size_t>(raster.height));
  for (int r = 0; r < raster.height; ++r) rows[static_cast<std::size_t>(r)] = buffer.data() + r * rowbytes;

  if (setjmp(png_jmpbuf(ptr))) {
    png_destroy_write_struct(&ptr, &info);
    throw DataError(path.string() + ": " + error);
  }
  png_init_io(ptr, file.get());
  png_set_IHDR(ptr, info, static_cast<png_uint_32>(raster.width), static_cast<png_uint_32>(raster.height),
               raster.bit_depth, raster.channels == 1 ? PNG_COLOR_TYPE_GRAY : PNG_COLOR_TYPE_RGB, PNG_INTERLACE_NONE,
               PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
  png_write_info(ptr, info);
  png_write_image(ptr, rows.data());
  png_write_end(ptr, nullptr);
  png_destroy_write_struct(&ptr, &info);
}

}  // namespace synthfed::png
