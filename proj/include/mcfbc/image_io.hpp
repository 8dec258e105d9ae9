#pragma once

#include <png.h>

#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <memory>
#include <string>
#include <vector>

#include "mcfbc/errors.hpp"
#include "mcfbc/image.hpp"

namespace mcfbc {

/// 8-bit interleaved RGB raster, the on-disk representation.
struct RasterRgb8 {
  int height = 0;
  int width = 0;
  std::vector<unsigned char> pixels;  // y*W*3 + x*3 + c

  RasterRgb8() = default;
  RasterRgb8(int h, int w)
      : height(h), width(w), pixels(static_cast<std::size_t>(h) * w * 3, 0) {}
};

template <class T>
RasterRgb8 quantize_image(const ImageTensor<T>& img) {
  RasterRgb8 out(img.height, img.width);
  const std::size_t n = img.pixel_count();
  for (std::size_t i = 0; i < n; ++i)
    for (int c = 0; c < 3; ++c)
      out.pixels[i * 3 + c] = quantize8(img.data[c * n + i]);
  return out;
}

/// Decode maps [0,255] -> [0,1] by division by 255. The space tag is the
/// caller's claim about what the bytes mean; files are raw rasters.
template <class T>
ImageTensor<T> dequantize_image(const RasterRgb8& raster,
                                ColorSpace space = ColorSpace::rgb) {
  ImageTensor<T> out(raster.height, raster.width, space);
  const std::size_t n = out.pixel_count();
  for (std::size_t i = 0; i < n; ++i)
    for (int c = 0; c < 3; ++c)
      out.data[c * n + i] = dequantize8<T>(raster.pixels[i * 3 + c]);
  return out;
}

namespace detail {

struct FileCloser {
  void operator()(std::FILE* f) const {
    if (f) std::fclose(f);
  }
};
using FilePtr = std::unique_ptr<std::FILE, FileCloser>;

}  // namespace detail

inline RasterRgb8 read_png(const std::filesystem::path& path) {
  detail::FilePtr file(std::fopen(path.string().c_str(), "rb"));
  if (!file) throw IoError("cannot open " + path.string());

  png_structp png =
      png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  if (!png) throw IoError("libpng init failed");
  png_infop info = png_create_info_struct(png);
  if (!info) {
    png_destroy_read_struct(&png, nullptr, nullptr);
    throw IoError("libpng init failed");
  }
  std::vector<png_bytep> row_ptrs;
  RasterRgb8 out;
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw IoError("failed to decode " + path.string());
  }
  png_init_io(png, file.get());
  png_read_info(png, info);

  // Normalize everything to 8-bit RGB.
  png_set_expand(png);
  png_set_strip_16(png);
  png_set_strip_alpha(png);
  if (png_get_color_type(png, info) == PNG_COLOR_TYPE_GRAY ||
      png_get_color_type(png, info) == PNG_COLOR_TYPE_GRAY_ALPHA)
    png_set_gray_to_rgb(png);
  png_read_update_info(png, info);

  out.height = static_cast<int>(png_get_image_height(png, info));
  out.width = static_cast<int>(png_get_image_width(png, info));
  out.pixels.resize(static_cast<std::size_t>(out.height) * out.width * 3);
  row_ptrs.resize(static_cast<std::size_t>(out.height));
  for (int y = 0; y < out.height; ++y)
    row_ptrs[y] = out.pixels.data() + static_cast<std::size_t>(y) * out.width * 3;
  png_read_image(png, row_ptrs.data());
  png_read_end(png, nullptr);
  png_destroy_read_struct(&png, &info, nullptr);
  return out;
}

inline void write_png(const std::filesystem::path& path, const RasterRgb8& img) {
  detail::FilePtr file(std::fopen(path.string().c_str(), "wb"));
  if (!file) throw IoError("cannot write " + path.string());

  png_structp png =
      png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  if (!png) throw IoError("libpng init failed");
  png_infop info = png_create_info_struct(png);
  if (!info) {
    png_destroy_write_struct(&png, nullptr);
    throw IoError("libpng init failed");
  }
  std::vector<png_bytep> row_ptrs;
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    throw IoError("failed to encode " + path.string());
  }
  png_init_io(png, file.get());
  png_set_IHDR(png, info, static_cast<png_uint_32>(img.width),
               static_cast<png_uint_32>(img.height), 8, PNG_COLOR_TYPE_RGB,
               PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT,
               PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  row_ptrs.resize(static_cast<std::size_t>(img.height));
  for (int y = 0; y < img.height; ++y)
    row_ptrs[y] = const_cast<png_bytep>(
        img.pixels.data() + static_cast<std::size_t>(y) * img.width * 3);
  png_write_image(png, row_ptrs.data());
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
}

inline RasterRgb8 read_ppm(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  std::string magic;
  in >> magic;
  if (magic != "P6") throw IoError(path.string() + ": not a binary PPM (P6)");

  auto next_int = [&in, &path]() {
    // Skip whitespace and '#' comment lines between header fields.
    int c = in.get();
    while (c != EOF && (std::isspace(c) || c == '#')) {
      if (c == '#')
        while (c != EOF && c != '\n') c = in.get();
      c = in.get();
    }
    int value = 0;
    bool any = false;
    while (c != EOF && std::isdigit(c)) {
      value = value * 10 + (c - '0');
      any = true;
      c = in.get();
    }
    if (!any) throw IoError(path.string() + ": malformed PPM header");
    return value;
  };

  const int width = next_int();
  const int height = next_int();
  const int maxval = next_int();
  if (maxval != 255) throw IoError(path.string() + ": only 8-bit PPM supported");
  RasterRgb8 out(height, width);
  in.read(reinterpret_cast<char*>(out.pixels.data()),
          static_cast<std::streamsize>(out.pixels.size()));
  if (in.gcount() != static_cast<std::streamsize>(out.pixels.size()))
    throw IoError(path.string() + ": truncated PPM payload");
  return out;
}

inline void write_ppm(const std::filesystem::path& path, const RasterRgb8& img) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path.string());
  out << "P6\n" << img.width << " " << img.height << "\n255\n";
  out.write(reinterpret_cast<const char*>(img.pixels.data()),
            static_cast<std::streamsize>(img.pixels.size()));
  if (!out) throw IoError("failed to write " + path.string());
}

/// Reads a PNG or PPM raster, chosen by file extension.
inline RasterRgb8 read_raster(const std::filesystem::path& path) {
  const std::string ext = path.extension().string();
  if (ext == ".png") return read_png(path);
  if (ext == ".ppm") return read_ppm(path);
  throw IoError("unsupported image format: " + path.string());
}

inline void write_raster(const std::filesystem::path& path, const RasterRgb8& img) {
  const std::string ext = path.extension().string();
  if (ext == ".png") return write_png(path, img);
  if (ext == ".ppm") return write_ppm(path, img);
  throw IoError("unsupported image format: " + path.string());
}

template <class T>
ImageTensor<T> read_image(const std::filesystem::path& path,
                          ColorSpace space = ColorSpace::rgb) {
  return dequantize_image<T>(read_raster(path), space);
}

template <class T>
void write_image(const std::filesystem::path& path, const ImageTensor<T>& img) {
  write_raster(path, quantize_image(img));
}

}  // namespace mcfbc
