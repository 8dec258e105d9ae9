#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <string>
#include <vector>

#include "mcfbc/errors.hpp"

namespace mcfbc {

enum class ColorSpace { rgb, ycbcr, yuv, hsv };

inline std::string to_string(ColorSpace s) {
  switch (s) {
    case ColorSpace::rgb: return "rgb";
    case ColorSpace::ycbcr: return "ycbcr";
    case ColorSpace::yuv: return "yuv";
    case ColorSpace::hsv: return "hsv";
  }
  return "?";
}

inline ColorSpace color_space_from_string(const std::string& s) {
  if (s == "rgb") return ColorSpace::rgb;
  if (s == "ycbcr") return ColorSpace::ycbcr;
  if (s == "yuv") return ColorSpace::yuv;
  if (s == "hsv") return ColorSpace::hsv;
  throw InvalidColorSpace("unknown color space '" + s + "'");
}

/// 3xHxW raster, channel-planar, values in [0, 1]. Chroma channels are
/// stored with a +0.5 offset so 0.5 means neutral.
template <class T>
struct ImageTensor {
  static constexpr int channels = 3;
  int height = 0;
  int width = 0;
  ColorSpace space = ColorSpace::rgb;
  std::vector<T> data;  // plane-major: c*H*W + y*W + x

  ImageTensor() = default;
  ImageTensor(int h, int w, ColorSpace s)
      : height(h), width(w), space(s),
        data(static_cast<std::size_t>(channels) * h * w, T(0)) {}

  T& at(int c, int y, int x) {
    return data[(static_cast<std::size_t>(c) * height + y) * width + x];
  }
  const T& at(int c, int y, int x) const {
    return data[(static_cast<std::size_t>(c) * height + y) * width + x];
  }
  std::size_t pixel_count() const {
    return static_cast<std::size_t>(height) * width;
  }
};

template <class T>
T clamp01(T v) {
  return std::clamp(v, T(0), T(1));
}

/// Maps an 8-bit code to [0,1] by division by 255.
template <class T>
T dequantize8(unsigned char v) {
  return static_cast<T>(v) / T(255);
}

/// Rounds to the nearest 8-bit code, saturating.
template <class T>
unsigned char quantize8(T v) {
  const double scaled = static_cast<double>(clamp01(v)) * 255.0;
  return static_cast<unsigned char>(std::lround(scaled));
}

}  // namespace mcfbc
