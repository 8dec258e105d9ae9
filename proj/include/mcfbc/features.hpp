#pragma once

#include <cstddef>
#include <vector>

#include "mcfbc/errors.hpp"
#include "mcfbc/image.hpp"

namespace mcfbc {

/// Backbone activations: C x H x W, channel-planar.
template <class T>
struct FeatureMap {
  int channels = 0;
  int height = 0;
  int width = 0;
  ColorSpace source_space = ColorSpace::rgb;
  std::vector<T> data;

  FeatureMap() = default;
  FeatureMap(int c, int h, int w, ColorSpace space = ColorSpace::rgb)
      : channels(c), height(h), width(w), source_space(space),
        data(static_cast<std::size_t>(c) * h * w, T(0)) {}

  T& at(int c, int y, int x) {
    return data[(static_cast<std::size_t>(c) * height + y) * width + x];
  }
  const T& at(int c, int y, int x) const {
    return data[(static_cast<std::size_t>(c) * height + y) * width + x];
  }
};

/// Per-location feature vectors (x_v, y_v), one pair per spatial location,
/// row-major over the shared H' x W' grid.
template <class T>
struct LocationPairSet {
  int p = 0;  // stream A channels
  int q = 0;  // stream B channels
  int count = 0;
  std::vector<T> xs;  // count x p, row-major
  std::vector<T> ys;  // count x q

  const T* x(int v) const { return xs.data() + static_cast<std::size_t>(v) * p; }
  const T* y(int v) const { return ys.data() + static_cast<std::size_t>(v) * q; }
};

/// Gathers channel vectors from the same (row, col) of both streams.
template <class T>
LocationPairSet<T> pair_locations(const FeatureMap<T>& fa, const FeatureMap<T>& fb) {
  if (fa.height != fb.height || fa.width != fb.width)
    throw ShapeMismatch("pair_locations: spatial grids differ");
  if (fa.height < 1 || fa.width < 1)
    throw ShapeMismatch("pair_locations: empty grid");

  LocationPairSet<T> out;
  out.p = fa.channels;
  out.q = fb.channels;
  out.count = fa.height * fa.width;
  out.xs.resize(static_cast<std::size_t>(out.count) * out.p);
  out.ys.resize(static_cast<std::size_t>(out.count) * out.q);
  int v = 0;
  for (int y = 0; y < fa.height; ++y) {
    for (int x = 0; x < fa.width; ++x, ++v) {
      for (int c = 0; c < fa.channels; ++c)
        out.xs[static_cast<std::size_t>(v) * out.p + c] = fa.at(c, y, x);
      for (int c = 0; c < fb.channels; ++c)
        out.ys[static_cast<std::size_t>(v) * out.q + c] = fb.at(c, y, x);
    }
  }
  return out;
}

}  // namespace mcfbc
