#pragma once

#include <array>
#include <cmath>

#include "mcfbc/errors.hpp"
#include "mcfbc/image.hpp"

namespace mcfbc {

// BT.601 full-range. Forward constants are the conventional rounded values;
// the luma row sums to 1 and each chroma row to 0, so gray maps to neutral
// chroma exactly. The inverse matrix is derived from these exact constants
// at compile time, which keeps rgb -> ycbcr -> rgb an algebraic identity.
namespace bt601 {
inline constexpr double kYR = 0.299, kYG = 0.587, kYB = 0.114;
inline constexpr double kCbR = -0.168736, kCbG = -0.331264, kCbB = 0.5;
inline constexpr double kCrR = 0.5, kCrG = -0.418688, kCrB = -0.081312;

using Mat3 = std::array<std::array<double, 3>, 3>;

inline constexpr Mat3 kForward{{{kYR, kYG, kYB},
                                {kCbR, kCbG, kCbB},
                                {kCrR, kCrG, kCrB}}};

inline constexpr Mat3 invert(const Mat3& m) {
  const double det = m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1]) -
                     m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0]) +
                     m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0]);
  Mat3 inv{};
  inv[0][0] = (m[1][1] * m[2][2] - m[1][2] * m[2][1]) / det;
  inv[0][1] = (m[0][2] * m[2][1] - m[0][1] * m[2][2]) / det;
  inv[0][2] = (m[0][1] * m[1][2] - m[0][2] * m[1][1]) / det;
  inv[1][0] = (m[1][2] * m[2][0] - m[1][0] * m[2][2]) / det;
  inv[1][1] = (m[0][0] * m[2][2] - m[0][2] * m[2][0]) / det;
  inv[1][2] = (m[0][2] * m[1][0] - m[0][0] * m[1][2]) / det;
  inv[2][0] = (m[1][0] * m[2][1] - m[1][1] * m[2][0]) / det;
  inv[2][1] = (m[0][1] * m[2][0] - m[0][0] * m[2][1]) / det;
  inv[2][2] = (m[0][0] * m[1][1] - m[0][1] * m[1][0]) / det;
  return inv;
}

inline constexpr Mat3 kInverse = invert(kForward);
}  // namespace bt601

// Analog YUV weights. Each chroma channel is rescaled to its own full
// range with 0.5 neutral; the scale factors cancel, so full-range YUV
// coincides with exact-constant YCbCr up to the rounding of the BT.601
// chroma constants (~1e-7).
namespace yuv {
inline constexpr double kU = 0.492, kV = 0.877;
inline constexpr double kUMax = kU * (1.0 - bt601::kYB);  // at pure blue
inline constexpr double kVMax = kV * (1.0 - bt601::kYR);  // at pure red
}  // namespace yuv

struct Rgb {
  double r, g, b;
};

inline std::array<double, 3> rgb_to_ycbcr_pixel(const Rgb& p) {
  using namespace bt601;
  return {kYR * p.r + kYG * p.g + kYB * p.b,
          0.5 + kCbR * p.r + kCbG * p.g + kCbB * p.b,
          0.5 + kCrR * p.r + kCrG * p.g + kCrB * p.b};
}

inline Rgb ycbcr_to_rgb_pixel(double y, double cb, double cr) {
  using namespace bt601;
  const double v[3] = {y, cb - 0.5, cr - 0.5};
  Rgb out{};
  out.r = kInverse[0][0] * v[0] + kInverse[0][1] * v[1] + kInverse[0][2] * v[2];
  out.g = kInverse[1][0] * v[0] + kInverse[1][1] * v[1] + kInverse[1][2] * v[2];
  out.b = kInverse[2][0] * v[0] + kInverse[2][1] * v[1] + kInverse[2][2] * v[2];
  return out;
}

inline std::array<double, 3> rgb_to_yuv_pixel(const Rgb& p) {
  const double y = bt601::kYR * p.r + bt601::kYG * p.g + bt601::kYB * p.b;
  const double u = yuv::kU * (p.b - y);
  const double v = yuv::kV * (p.r - y);
  return {y, 0.5 + u / (2.0 * yuv::kUMax), 0.5 + v / (2.0 * yuv::kVMax)};
}

/// Hexcone HSV. H is a fraction of a full turn in [0, 1); achromatic
/// pixels get H = 0.
inline std::array<double, 3> rgb_to_hsv_pixel(const Rgb& p) {
  const double maxc = std::max({p.r, p.g, p.b});
  const double minc = std::min({p.r, p.g, p.b});
  const double chroma = maxc - minc;
  double h = 0.0;
  if (chroma > 0.0) {
    double sector;
    if (maxc == p.r)
      sector = std::fmod((p.g - p.b) / chroma, 6.0);
    else if (maxc == p.g)
      sector = (p.b - p.r) / chroma + 2.0;
    else
      sector = (p.r - p.g) / chroma + 4.0;
    if (sector < 0.0) sector += 6.0;
    h = sector / 6.0;
    if (h >= 1.0) h -= 1.0;
  }
  const double s = maxc > 0.0 ? chroma / maxc : 0.0;
  return {h, s, maxc};
}

namespace detail {

template <class T, class Fn>
ImageTensor<T> convert_pixels(const ImageTensor<T>& img, ColorSpace from,
                              ColorSpace to, Fn&& fn) {
  if (img.space != from)
    throw InvalidColorSpace("expected " + to_string(from) + " input, got " +
                            to_string(img.space));
  ImageTensor<T> out(img.height, img.width, to);
  const std::size_t n = img.pixel_count();
  for (std::size_t i = 0; i < n; ++i) {
    const std::array<double, 3> res =
        fn(static_cast<double>(img.data[i]),
           static_cast<double>(img.data[n + i]),
           static_cast<double>(img.data[2 * n + i]));
    out.data[i] = clamp01(static_cast<T>(res[0]));
    out.data[n + i] = clamp01(static_cast<T>(res[1]));
    out.data[2 * n + i] = clamp01(static_cast<T>(res[2]));
  }
  return out;
}

}  // namespace detail

template <class T>
ImageTensor<T> rgb_to_ycbcr(const ImageTensor<T>& img) {
  return detail::convert_pixels(img, ColorSpace::rgb, ColorSpace::ycbcr,
                                [](double r, double g, double b) {
                                  return rgb_to_ycbcr_pixel({r, g, b});
                                });
}

template <class T>
ImageTensor<T> ycbcr_to_rgb(const ImageTensor<T>& img) {
  return detail::convert_pixels(
      img, ColorSpace::ycbcr, ColorSpace::rgb,
      [](double y, double cb, double cr) -> std::array<double, 3> {
        const Rgb p = ycbcr_to_rgb_pixel(y, cb, cr);
        return {p.r, p.g, p.b};
      });
}

template <class T>
ImageTensor<T> rgb_to_yuv(const ImageTensor<T>& img) {
  return detail::convert_pixels(img, ColorSpace::rgb, ColorSpace::yuv,
                                [](double r, double g, double b) {
                                  return rgb_to_yuv_pixel({r, g, b});
                                });
}

template <class T>
ImageTensor<T> rgb_to_hsv(const ImageTensor<T>& img) {
  return detail::convert_pixels(img, ColorSpace::rgb, ColorSpace::hsv,
                                [](double r, double g, double b) {
                                  return rgb_to_hsv_pixel({r, g, b});
                                });
}

/// Dispatcher over the supported conversion pairs. Identity when
/// from == to; anything else raises InvalidColorSpace.
template <class T>
ImageTensor<T> convert(const ImageTensor<T>& img, ColorSpace to) {
  if (img.space == to) return img;
  if (img.space == ColorSpace::rgb) {
    switch (to) {
      case ColorSpace::ycbcr: return rgb_to_ycbcr(img);
      case ColorSpace::yuv: return rgb_to_yuv(img);
      case ColorSpace::hsv: return rgb_to_hsv(img);
      default: break;
    }
  }
  if (img.space == ColorSpace::ycbcr && to == ColorSpace::rgb)
    return ycbcr_to_rgb(img);
  throw InvalidColorSpace("unsupported conversion " + to_string(img.space) +
                          " -> " + to_string(to));
}

}  // namespace mcfbc
