#pragma once

#include <cmath>
#include <cstddef>
#include <string>
#include <vector>

#include "mcfbc/errors.hpp"
#include "mcfbc/features.hpp"
#include "mcfbc/image.hpp"
#include "mcfbc/rng.hpp"

namespace mcfbc {

/// Stack of conv blocks: 3x3 conv (pad 1) + ReLU + 2x2 max pool, so the
/// spatial size is controlled only by pooling. Desk-scale stand-in for a
/// truncated large backbone.
struct BackboneConfig {
  int blocks = 3;
  std::vector<int> channels = {8, 16, 8};
  int input_size = 32;
  int in_channels = 3;

  void validate() const {
    if (blocks < 1) throw ConfigError("backbone: blocks must be >= 1");
    if (static_cast<int>(channels.size()) != blocks)
      throw ConfigError("backbone: channels list must have one entry per block");
    for (int c : channels)
      if (c < 1) throw ConfigError("backbone: channels must be positive");
    int size = input_size;
    for (int b = 0; b < blocks; ++b) {
      if (size < 2)
        throw ConfigError("backbone: spatial size collapses below 2x2 at block " +
                          std::to_string(b));
      size /= 2;
    }
    if (size < 1) throw ConfigError("backbone: final spatial size < 1");
  }

  int out_channels() const { return channels.back(); }
  int out_size() const {
    int size = input_size;
    for (int b = 0; b < blocks; ++b) size /= 2;
    return size;
  }
};

/// One 3x3 convolution: weights indexed [out][in][ky][kx], bias per out
/// channel.
template <class T>
struct ConvLayer {
  int in_ch = 0;
  int out_ch = 0;
  std::vector<T> weights;  // out*in*9
  std::vector<T> bias;     // out

  ConvLayer() = default;
  ConvLayer(int in, int out)
      : in_ch(in), out_ch(out),
        weights(static_cast<std::size_t>(out) * in * 9, T(0)),
        bias(static_cast<std::size_t>(out), T(0)) {}

  T& w(int o, int i, int ky, int kx) {
    return weights[((static_cast<std::size_t>(o) * in_ch + i) * 3 + ky) * 3 + kx];
  }
  const T& w(int o, int i, int ky, int kx) const {
    return weights[((static_cast<std::size_t>(o) * in_ch + i) * 3 + ky) * 3 + kx];
  }
};

template <class T>
struct BackboneWeights {
  BackboneConfig config;
  std::vector<ConvLayer<T>> layers;

  /// Fan-in-scaled Gaussian init (std = sqrt(2/fan_in)), zero biases.
  static BackboneWeights init(const BackboneConfig& cfg, Rng& rng) {
    cfg.validate();
    BackboneWeights w;
    w.config = cfg;
    int in = cfg.in_channels;
    for (int b = 0; b < cfg.blocks; ++b) {
      ConvLayer<T> layer(in, cfg.channels[b]);
      const double stddev = std::sqrt(2.0 / (in * 9));
      for (auto& v : layer.weights) v = static_cast<T>(rng.normal(0.0, stddev));
      w.layers.push_back(std::move(layer));
      in = cfg.channels[b];
    }
    return w;
  }
};

namespace detail {

/// Plain planar C x H x W buffer used inside the backbone.
template <class T>
struct Plane {
  int channels = 0, height = 0, width = 0;
  std::vector<T> data;

  Plane() = default;
  Plane(int c, int h, int w)
      : channels(c), height(h), width(w),
        data(static_cast<std::size_t>(c) * h * w, T(0)) {}

  T& at(int c, int y, int x) {
    return data[(static_cast<std::size_t>(c) * height + y) * width + x];
  }
  const T& at(int c, int y, int x) const {
    return data[(static_cast<std::size_t>(c) * height + y) * width + x];
  }
};

/// 3x3 same-padding cross-correlation.
template <class T>
void conv3x3_forward(const Plane<T>& in, const ConvLayer<T>& layer, Plane<T>& out) {
  out = Plane<T>(layer.out_ch, in.height, in.width);
  for (int o = 0; o < layer.out_ch; ++o) {
    for (int y = 0; y < in.height; ++y)
      for (int x = 0; x < in.width; ++x) {
        T acc = layer.bias[o];
        for (int i = 0; i < layer.in_ch; ++i)
          for (int ky = 0; ky < 3; ++ky) {
            const int sy = y + ky - 1;
            if (sy < 0 || sy >= in.height) continue;
            for (int kx = 0; kx < 3; ++kx) {
              const int sx = x + kx - 1;
              if (sx < 0 || sx >= in.width) continue;
              acc += layer.w(o, i, ky, kx) * in.at(i, sy, sx);
            }
          }
        out.at(o, y, x) = acc;
      }
  }
}

template <class T>
void conv3x3_backward(const Plane<T>& in, const ConvLayer<T>& layer,
                      const Plane<T>& dout, ConvLayer<T>& dlayer, Plane<T>& din) {
  dlayer = ConvLayer<T>(layer.in_ch, layer.out_ch);
  din = Plane<T>(in.channels, in.height, in.width);
  for (int o = 0; o < layer.out_ch; ++o) {
    for (int y = 0; y < in.height; ++y)
      for (int x = 0; x < in.width; ++x) {
        const T g = dout.at(o, y, x);
        if (g == T(0)) continue;
        dlayer.bias[o] += g;
        for (int i = 0; i < layer.in_ch; ++i)
          for (int ky = 0; ky < 3; ++ky) {
            const int sy = y + ky - 1;
            if (sy < 0 || sy >= in.height) continue;
            for (int kx = 0; kx < 3; ++kx) {
              const int sx = x + kx - 1;
              if (sx < 0 || sx >= in.width) continue;
              dlayer.w(o, i, ky, kx) += g * in.at(i, sy, sx);
              din.at(i, sy, sx) += g * layer.w(o, i, ky, kx);
            }
          }
      }
  }
}

/// 2x2 max pool, stride 2, floor semantics; argmax recorded for backward
/// (first index in row-major window order on ties).
template <class T>
void maxpool2x2_forward(const Plane<T>& in, Plane<T>& out, std::vector<int>& argmax) {
  const int oh = in.height / 2, ow = in.width / 2;
  out = Plane<T>(in.channels, oh, ow);
  argmax.assign(static_cast<std::size_t>(in.channels) * oh * ow, 0);
  for (int c = 0; c < in.channels; ++c)
    for (int y = 0; y < oh; ++y)
      for (int x = 0; x < ow; ++x) {
        T best = in.at(c, 2 * y, 2 * x);
        int best_idx = 0;
        for (int wy = 0; wy < 2; ++wy)
          for (int wx = 0; wx < 2; ++wx) {
            const T v = in.at(c, 2 * y + wy, 2 * x + wx);
            const int idx = wy * 2 + wx;
            if (v > best) {
              best = v;
              best_idx = idx;
            }
          }
        out.at(c, y, x) = best;
        argmax[(static_cast<std::size_t>(c) * oh + y) * ow + x] = best_idx;
      }
}

template <class T>
void maxpool2x2_backward(const Plane<T>& dout, const std::vector<int>& argmax,
                         int in_h, int in_w, Plane<T>& din) {
  din = Plane<T>(dout.channels, in_h, in_w);
  for (int c = 0; c < dout.channels; ++c)
    for (int y = 0; y < dout.height; ++y)
      for (int x = 0; x < dout.width; ++x) {
        const int idx = argmax[(static_cast<std::size_t>(c) * dout.height + y) *
                               dout.width + x];
        din.at(c, 2 * y + idx / 2, 2 * x + idx % 2) += dout.at(c, y, x);
      }
}

template <class T>
struct BlockCache {
  Plane<T> input;        // conv input
  Plane<T> pre_act;      // conv output before ReLU
  Plane<T> pooled_in;    // post-ReLU (pool input); kept for shapes
  std::vector<int> pool_argmax;
};

}  // namespace detail

template <class T>
struct BackboneCache {
  std::vector<detail::BlockCache<T>> blocks;
};

/// Runs the conv stack on a 3xHxW image. Deterministic given weights; all
/// outputs are post-ReLU, hence >= 0.
template <class T>
FeatureMap<T> backbone_forward(const ImageTensor<T>& img,
                               const BackboneWeights<T>& weights,
                               BackboneCache<T>* cache = nullptr) {
  const BackboneConfig& cfg = weights.config;
  if (img.height != cfg.input_size || img.width != cfg.input_size)
    throw ShapeMismatch("backbone_forward: expected " +
                        std::to_string(cfg.input_size) + "x" +
                        std::to_string(cfg.input_size) + " input, got " +
                        std::to_string(img.height) + "x" + std::to_string(img.width));

  detail::Plane<T> current(ImageTensor<T>::channels, img.height, img.width);
  current.data = img.data;
  if (cache) cache->blocks.assign(static_cast<std::size_t>(cfg.blocks), {});

  for (int b = 0; b < cfg.blocks; ++b) {
    detail::Plane<T> conv_out;
    detail::conv3x3_forward(current, weights.layers[b], conv_out);
    detail::Plane<T> activated = conv_out;
    for (auto& v : activated.data)
      if (v < T(0)) v = T(0);
    detail::Plane<T> pooled;
    std::vector<int> argmax;
    detail::maxpool2x2_forward(activated, pooled, argmax);
    if (cache) {
      cache->blocks[b].input = std::move(current);
      cache->blocks[b].pre_act = std::move(conv_out);
      cache->blocks[b].pooled_in = std::move(activated);
      cache->blocks[b].pool_argmax = std::move(argmax);
    }
    current = std::move(pooled);
  }

  FeatureMap<T> out(current.channels, current.height, current.width, img.space);
  out.data = std::move(current.data);
  return out;
}

template <class T>
struct BackboneGrads {
  std::vector<ConvLayer<T>> layers;  // dW, db per block
  detail::Plane<T> dinput;
};

/// Reverse pass through pool -> ReLU -> conv per block. ReLU subgradient
/// is 0 at exactly 0.
template <class T>
BackboneGrads<T> backbone_backward(const FeatureMap<T>& dfeat,
                                   const BackboneCache<T>& cache,
                                   const BackboneWeights<T>& weights) {
  if (cache.blocks.size() != weights.layers.size())
    throw Error("backbone_backward: missing forward cache");

  BackboneGrads<T> grads;
  grads.layers.resize(weights.layers.size());

  detail::Plane<T> dcurrent(dfeat.channels, dfeat.height, dfeat.width);
  dcurrent.data = dfeat.data;

  for (int b = static_cast<int>(weights.layers.size()) - 1; b >= 0; --b) {
    const auto& blk = cache.blocks[b];
    detail::Plane<T> dact;
    detail::maxpool2x2_backward(dcurrent, blk.pool_argmax, blk.pooled_in.height,
                                blk.pooled_in.width, dact);
    for (std::size_t i = 0; i < dact.data.size(); ++i)
      if (!(blk.pre_act.data[i] > T(0))) dact.data[i] = T(0);
    detail::Plane<T> din;
    detail::conv3x3_backward(blk.input, weights.layers[b], dact, grads.layers[b], din);
    dcurrent = std::move(din);
  }
  grads.dinput = std::move(dcurrent);
  return grads;
}

}  // namespace mcfbc
