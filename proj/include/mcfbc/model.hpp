#pragma once

#include <array>
#include <cmath>
#include <cstddef>
#include <map>
#include <string>
#include <vector>

#include "mcfbc/backbone.hpp"
#include "mcfbc/colorspace.hpp"
#include "mcfbc/errors.hpp"
#include "mcfbc/fbc.hpp"
#include "mcfbc/loss.hpp"

namespace mcfbc {

enum class Fusion { fbc, concat };

inline std::string to_string(Fusion f) {
  return f == Fusion::fbc ? "fbc" : "concat";
}

inline Fusion fusion_from_string(const std::string& s) {
  if (s == "fbc") return Fusion::fbc;
  if (s == "concat") return Fusion::concat;
  throw ConfigError("unknown fusion mode '" + s + "'");
}

/// Class index convention for the binary head.
inline constexpr int kBonafideClass = 0;
inline constexpr int kAttackClass = 1;

struct ModelConfig {
  ColorSpace space_a = ColorSpace::rgb;
  ColorSpace space_b = ColorSpace::ycbcr;
  BackboneConfig backbone;
  bool shared_streams = false;
  int k = 16;
  int r = 1;
  double lambda = 0.001;
  Fusion fusion = Fusion::fbc;
  bool normalize = false;  // signed-sqrt + l2 on the representation

  void validate() const {
    backbone.validate();
    if (k < 1 || r < 1) throw ConfigError("model: k and r must be >= 1");
    if (lambda < 0) throw ConfigError("model: lambda must be >= 0");
  }

  int representation_dim() const {
    return fusion == Fusion::fbc ? k : 2 * backbone.out_channels();
  }
};

/// Mutable view of one named parameter tensor.
template <class T>
struct ParamRef {
  std::string name;
  std::vector<int> shape;
  T* data;
  std::size_t size;
  bool decay;  // weight decay applies (biases excluded)
};

struct ParamLayout {
  std::string name;
  std::vector<int> shape;
  std::size_t size;
  bool decay;
};

template <class T>
struct ModelCache {
  ImageTensor<T> img_a, img_b;
  BackboneCache<T> bb_a, bb_b;
  FeatureMap<T> feat_a, feat_b;
  FbcCache<T> fbc;
  std::vector<T> rep;        // pre-normalization representation
  std::vector<T> rep_used;   // what the head saw
  std::vector<T> norm_s;     // signed-sqrt intermediate
  T norm_len = T(0);
  std::array<T, 2> logits{};
  std::array<T, 2> probs{};
};

template <class T>
struct Model {
  ModelConfig config;
  BackboneWeights<T> stream_a;
  BackboneWeights<T> stream_b;  // unused when shared_streams
  FbcParams<T> coder;
  ClassifierHead<T> head;

  static Model init(const ModelConfig& cfg, std::uint64_t seed) {
    cfg.validate();
    Model m;
    m.config = cfg;
    Rng rng(derive_seed(seed, 0));
    m.stream_a = BackboneWeights<T>::init(cfg.backbone, rng);
    if (!cfg.shared_streams) {
      Rng rng_b(derive_seed(seed, 1));
      m.stream_b = BackboneWeights<T>::init(cfg.backbone, rng_b);
    }
    const int p = cfg.backbone.out_channels();
    m.coder = FbcParams<T>(p, p, cfg.k, cfg.r, static_cast<T>(cfg.lambda));
    Rng rng_f(derive_seed(seed, 2));
    m.coder.init(rng_f);
    m.head = ClassifierHead<T>(cfg.representation_dim());
    Rng rng_h(derive_seed(seed, 3));
    m.head.init(rng_h);
    return m;
  }

  const BackboneWeights<T>& stream_b_weights() const {
    return config.shared_streams ? stream_a : stream_b;
  }

  /// Forward pass from a canonical RGB image; conversions to the two
  /// stream spaces happen here. Read-only on the weights, so concurrent
  /// calls over distinct samples are safe.
  std::array<T, 2> forward(const ImageTensor<T>& rgb, ModelCache<T>* cache) const {
    if (rgb.space != ColorSpace::rgb)
      throw InvalidColorSpace("model forward expects an rgb-tagged image");
    ModelCache<T> local;
    ModelCache<T>& c = cache ? *cache : local;

    c.img_a = convert(rgb, config.space_a);
    c.img_b = convert(rgb, config.space_b);
    c.feat_a = backbone_forward(c.img_a, stream_a, &c.bb_a);
    c.feat_b = backbone_forward(c.img_b, stream_b_weights(), &c.bb_b);

    if (config.fusion == Fusion::fbc) {
      c.rep = fbc_forward(c.feat_a, c.feat_b, coder, &c.fbc).z;
    } else {
      c.rep = concat_gap(c.feat_a, c.feat_b);
    }

    if (config.normalize) {
      c.norm_s.resize(c.rep.size());
      for (std::size_t i = 0; i < c.rep.size(); ++i) {
        const T v = c.rep[i];
        c.norm_s[i] = v >= T(0) ? std::sqrt(v) : -std::sqrt(-v);
      }
      T len2 = T(0);
      for (const T s : c.norm_s) len2 += s * s;
      c.norm_len = std::sqrt(len2);
      c.rep_used.resize(c.rep.size());
      const T denom = c.norm_len + static_cast<T>(1e-8);
      for (std::size_t i = 0; i < c.rep.size(); ++i)
        c.rep_used[i] = c.norm_s[i] / denom;
    } else {
      c.rep_used = c.rep;
    }

    c.logits = head.logits(c.rep_used);
    c.probs = softmax2(c.logits);
    return c.probs;
  }

  /// Bona fide probability for a forward result.
  static T score(const std::array<T, 2>& probs) { return probs[kBonafideClass]; }

  std::vector<ParamLayout> layout() const {
    std::vector<ParamLayout> out;
    visit_params(*this, [&out](const std::string& name, std::vector<int> shape,
                               const T*, std::size_t size, bool decay) {
      out.push_back({name, std::move(shape), size, decay});
    });
    return out;
  }

  std::vector<ParamRef<T>> params() {
    std::vector<ParamRef<T>> out;
    visit_params(*this, [&out](const std::string& name, std::vector<int> shape,
                               T* data, std::size_t size, bool decay) {
      out.push_back({name, std::move(shape), data, size, decay});
    });
    return out;
  }

  struct Grads {
    std::vector<std::vector<T>> tensors;  // aligned with layout()/params()

    void accumulate(const Grads& other, T scale) {
      for (std::size_t i = 0; i < tensors.size(); ++i)
        for (std::size_t j = 0; j < tensors[i].size(); ++j)
          tensors[i][j] += scale * other.tensors[i][j];
    }
  };

  Grads zero_grads() const {
    Grads g;
    for (const auto& p : layout()) g.tensors.emplace_back(p.size, T(0));
    return g;
  }

  Grads backward(const std::array<T, 2>& dlogits, const ModelCache<T>& c) const {
    const std::vector<ParamLayout> shapes = layout();
    Grads g;
    std::map<std::string, std::size_t> index;
    for (std::size_t i = 0; i < shapes.size(); ++i) {
      g.tensors.emplace_back(shapes[i].size, T(0));
      index.emplace(shapes[i].name, i);
    }
    auto grad_of = [&](const std::string& name) -> std::vector<T>& {
      return g.tensors[index.at(name)];
    };

    // Head.
    const int dim = head.weights.rows;
    std::vector<T>& dhw = grad_of("head.weight");
    std::vector<T>& dhb = grad_of("head.bias");
    std::vector<T> drep_used(static_cast<std::size_t>(dim), T(0));
    for (int i = 0; i < dim; ++i)
      for (int j = 0; j < 2; ++j) {
        dhw[static_cast<std::size_t>(i) * 2 + j] += c.rep_used[i] * dlogits[j];
        drep_used[i] += head.weights(i, j) * dlogits[j];
      }
    dhb[0] += dlogits[0];
    dhb[1] += dlogits[1];

    // Optional normalization backward: rep_used = s / (|s| + eps),
    // s_i = sign(rep_i) sqrt(|rep_i|).
    std::vector<T> drep;
    if (config.normalize) {
      const T denom = c.norm_len + static_cast<T>(1e-8);
      T dot = T(0);
      for (int i = 0; i < dim; ++i) dot += drep_used[i] * c.norm_s[i];
      std::vector<T> ds(static_cast<std::size_t>(dim));
      for (int i = 0; i < dim; ++i) {
        T v = drep_used[i] / denom;
        if (c.norm_len > T(0))
          v -= dot * c.norm_s[i] / (c.norm_len * denom * denom);
        ds[i] = v;
      }
      drep.assign(static_cast<std::size_t>(dim), T(0));
      for (int i = 0; i < dim; ++i)
        if (c.rep[i] != T(0)) drep[i] = ds[i] / (T(2) * std::abs(c.norm_s[i]));
    } else {
      drep = std::move(drep_used);
    }

    // Fusion backward into per-stream feature-map gradients.
    FeatureMap<T> dfa(c.feat_a.channels, c.feat_a.height, c.feat_a.width);
    FeatureMap<T> dfb(c.feat_b.channels, c.feat_b.height, c.feat_b.width);
    if (config.fusion == Fusion::fbc) {
      FbcGrads<T> fg = fbc_backward(drep, c.fbc, coder);
      grad_of("fbc.u_tilde") = std::move(fg.du_tilde.data);
      grad_of("fbc.v_tilde") = std::move(fg.dv_tilde.data);
      scatter_locations(fg.dxs, dfa);
      scatter_locations(fg.dys, dfb);
    } else {
      const int p = c.feat_a.channels;
      const T inv_n = T(1) / static_cast<T>(c.feat_a.height * c.feat_a.width);
      for (int ch = 0; ch < p; ++ch)
        for (int y = 0; y < c.feat_a.height; ++y)
          for (int x = 0; x < c.feat_a.width; ++x) {
            dfa.at(ch, y, x) = drep[ch] * inv_n;
            dfb.at(ch, y, x) = drep[p + ch] * inv_n;
          }
    }

    // Stream backbones; with shared streams both branches accumulate into
    // the same tensors.
    BackboneGrads<T> ga = backbone_backward(dfa, c.bb_a, stream_a);
    BackboneGrads<T> gb = backbone_backward(dfb, c.bb_b, stream_b_weights());
    for (std::size_t b = 0; b < stream_a.layers.size(); ++b) {
      const std::string base = "stream_a.block" + std::to_string(b);
      std::vector<T>& dw = grad_of(base + ".weight");
      std::vector<T>& db = grad_of(base + ".bias");
      for (std::size_t i = 0; i < dw.size(); ++i) dw[i] += ga.layers[b].weights[i];
      for (std::size_t i = 0; i < db.size(); ++i) db[i] += ga.layers[b].bias[i];
      if (config.shared_streams) {
        for (std::size_t i = 0; i < dw.size(); ++i) dw[i] += gb.layers[b].weights[i];
        for (std::size_t i = 0; i < db.size(); ++i) db[i] += gb.layers[b].bias[i];
      }
    }
    if (!config.shared_streams) {
      for (std::size_t b = 0; b < stream_b.layers.size(); ++b) {
        const std::string base = "stream_b.block" + std::to_string(b);
        std::vector<T>& dw = grad_of(base + ".weight");
        std::vector<T>& db = grad_of(base + ".bias");
        for (std::size_t i = 0; i < dw.size(); ++i) dw[i] += gb.layers[b].weights[i];
        for (std::size_t i = 0; i < db.size(); ++i) db[i] += gb.layers[b].bias[i];
      }
    }
    return g;
  }

 private:
  template <class Self, class Fn>
  static void visit_params(Self& self, Fn&& fn) {
    auto visit_backbone = [&fn](const std::string& prefix, auto& bb) {
      for (std::size_t b = 0; b < bb.layers.size(); ++b) {
        auto& layer = bb.layers[b];
        fn(prefix + ".block" + std::to_string(b) + ".weight",
           std::vector<int>{layer.out_ch, layer.in_ch, 3, 3},
           layer.weights.data(), layer.weights.size(), true);
        fn(prefix + ".block" + std::to_string(b) + ".bias",
           std::vector<int>{layer.out_ch}, layer.bias.data(), layer.bias.size(),
           false);
      }
    };
    visit_backbone("stream_a", self.stream_a);
    if (!self.config.shared_streams) visit_backbone("stream_b", self.stream_b);
    if (self.config.fusion == Fusion::fbc) {
      fn("fbc.u_tilde",
         std::vector<int>{self.coder.u_tilde.rows, self.coder.u_tilde.cols},
         self.coder.u_tilde.data.data(), self.coder.u_tilde.data.size(), true);
      fn("fbc.v_tilde",
         std::vector<int>{self.coder.v_tilde.rows, self.coder.v_tilde.cols},
         self.coder.v_tilde.data.data(), self.coder.v_tilde.data.size(), true);
    }
    fn("head.weight", std::vector<int>{self.head.weights.rows, self.head.weights.cols},
       self.head.weights.data.data(), self.head.weights.data.size(), true);
    fn("head.bias", std::vector<int>{2}, self.head.bias.data(),
       std::size_t{2}, false);
  }

  static std::vector<T> concat_gap(const FeatureMap<T>& fa, const FeatureMap<T>& fb) {
    std::vector<T> z(static_cast<std::size_t>(fa.channels) + fb.channels, T(0));
    const T inv_a = T(1) / static_cast<T>(fa.height * fa.width);
    const T inv_b = T(1) / static_cast<T>(fb.height * fb.width);
    for (int c = 0; c < fa.channels; ++c) {
      T acc = T(0);
      for (int y = 0; y < fa.height; ++y)
        for (int x = 0; x < fa.width; ++x) acc += fa.at(c, y, x);
      z[c] = acc * inv_a;
    }
    for (int c = 0; c < fb.channels; ++c) {
      T acc = T(0);
      for (int y = 0; y < fb.height; ++y)
        for (int x = 0; x < fb.width; ++x) acc += fb.at(c, y, x);
      z[static_cast<std::size_t>(fa.channels) + c] = acc * inv_b;
    }
    return z;
  }

  static void scatter_locations(const std::vector<T>& dvecs, FeatureMap<T>& dst) {
    const int channels = dst.channels;
    int v = 0;
    for (int y = 0; y < dst.height; ++y)
      for (int x = 0; x < dst.width; ++x, ++v)
        for (int c = 0; c < channels; ++c)
          dst.at(c, y, x) = dvecs[static_cast<std::size_t>(v) * channels + c];
  }
};

}  // namespace mcfbc
