#include "mcfbc/backbone.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <vector>

namespace mcfbc {
namespace {

ImageTensor<double> random_image(int size, std::uint64_t seed) {
  ImageTensor<double> img(size, size, ColorSpace::rgb);
  Rng rng(seed);
  for (auto& v : img.data) v = rng.uniform();
  return img;
}

// Independent re-implementation: explicit zero padding, accumulation with
// the kernel loops outermost, then ReLU and window-max.
FeatureMap<double> direct_conv_block_oracle(const ImageTensor<double>& img,
                                            const ConvLayer<double>& layer) {
  const int h = img.height, w = img.width;
  const int ph = h + 2, pw = w + 2;
  std::vector<double> padded(static_cast<std::size_t>(layer.in_ch) * ph * pw, 0.0);
  for (int c = 0; c < layer.in_ch; ++c)
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x)
        padded[(static_cast<std::size_t>(c) * ph + y + 1) * pw + x + 1] =
            img.at(c, y, x);

  std::vector<double> conv(static_cast<std::size_t>(layer.out_ch) * h * w, 0.0);
  for (int o = 0; o < layer.out_ch; ++o)
    for (std::size_t i = 0; i < static_cast<std::size_t>(h) * w; ++i)
      conv[o * static_cast<std::size_t>(h) * w + i] = layer.bias[o];
  for (int i = 0; i < layer.in_ch; ++i)
    for (int ky = 0; ky < 3; ++ky)
      for (int kx = 0; kx < 3; ++kx)
        for (int o = 0; o < layer.out_ch; ++o) {
          const double wgt = layer.w(o, i, ky, kx);
          for (int y = 0; y < h; ++y)
            for (int x = 0; x < w; ++x)
              conv[(static_cast<std::size_t>(o) * h + y) * w + x] +=
                  wgt * padded[(static_cast<std::size_t>(i) * ph + y + ky) * pw +
                               x + kx];
        }

  for (auto& v : conv) v = std::max(v, 0.0);

  FeatureMap<double> out(layer.out_ch, h / 2, w / 2);
  for (int o = 0; o < layer.out_ch; ++o)
    for (int y = 0; y < h / 2; ++y)
      for (int x = 0; x < w / 2; ++x) {
        double best = -1;
        for (int wy = 0; wy < 2; ++wy)
          for (int wx = 0; wx < 2; ++wx)
            best = std::max(
                best, conv[(static_cast<std::size_t>(o) * h + 2 * y + wy) * w +
                           2 * x + wx]);
        out.at(o, y, x) = best;
      }
  return out;
}

TEST(Backbone, ZeroImageZeroBiasGivesZeroFeatures) {
  BackboneConfig cfg;
  cfg.blocks = 2;
  cfg.channels = {4, 6};
  cfg.input_size = 16;
  Rng rng(5);
  const auto weights = BackboneWeights<double>::init(cfg, rng);
  ImageTensor<double> img(16, 16, ColorSpace::rgb);  // all zeros
  const auto feat = backbone_forward(img, weights);
  EXPECT_EQ(feat.channels, 6);
  EXPECT_EQ(feat.height, 4);
  for (const double v : feat.data) EXPECT_DOUBLE_EQ(v, 0.0);
}

TEST(Backbone, CenterTapIdentityReproducesPooledInput) {
  BackboneConfig cfg;
  cfg.blocks = 1;
  cfg.channels = {3};
  cfg.input_size = 8;
  Rng rng(6);
  auto weights = BackboneWeights<double>::init(cfg, rng);
  for (auto& v : weights.layers[0].weights) v = 0.0;
  for (int c = 0; c < 3; ++c) weights.layers[0].w(c, c, 1, 1) = 1.0;

  const auto img = random_image(8, 7);
  const auto feat = backbone_forward(img, weights);
  for (int c = 0; c < 3; ++c)
    for (int y = 0; y < 4; ++y)
      for (int x = 0; x < 4; ++x) {
        const double expected =
            std::max({img.at(c, 2 * y, 2 * x), img.at(c, 2 * y, 2 * x + 1),
                      img.at(c, 2 * y + 1, 2 * x), img.at(c, 2 * y + 1, 2 * x + 1)});
        EXPECT_DOUBLE_EQ(feat.at(c, y, x), expected);
      }
}

TEST(Backbone, Seed1337MatchesDirectConvolutionOracle) {
  BackboneConfig cfg;
  cfg.blocks = 1;
  cfg.channels = {5};
  cfg.input_size = 12;
  Rng rng(1337);
  const auto weights = BackboneWeights<double>::init(cfg, rng);
  const auto img = random_image(12, 1337);
  const auto feat = backbone_forward(img, weights);
  const auto ref = direct_conv_block_oracle(img, weights.layers[0]);
  ASSERT_EQ(feat.data.size(), ref.data.size());
  for (std::size_t i = 0; i < feat.data.size(); ++i)
    EXPECT_NEAR(feat.data[i], ref.data[i], 1e-6);
}

TEST(Backbone, MultiBlockMatchesChainedOracle) {
  BackboneConfig cfg;
  cfg.blocks = 2;
  cfg.channels = {4, 3};
  cfg.input_size = 12;
  Rng rng(2024);
  const auto weights = BackboneWeights<double>::init(cfg, rng);
  const auto img = random_image(12, 77);
  const auto feat = backbone_forward(img, weights);

  // Chain the same padded-convolution oracle by hand for the second block
  // (direct_conv_block_oracle takes a 3-channel image, block 2 sees 4).
  const auto mid = direct_conv_block_oracle(img, weights.layers[0]);
  ASSERT_EQ(mid.channels, 4);
  const std::vector<double>& mid_data = mid.data;
  const int h = mid.height, w = mid.width;
  const auto& layer = weights.layers[1];
  const int ph = h + 2, pw = w + 2;
  std::vector<double> padded(static_cast<std::size_t>(layer.in_ch) * ph * pw, 0.0);
  for (int c = 0; c < layer.in_ch; ++c)
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x)
        padded[(static_cast<std::size_t>(c) * ph + y + 1) * pw + x + 1] =
            mid_data[(static_cast<std::size_t>(c) * h + y) * w + x];
  std::vector<double> conv(static_cast<std::size_t>(layer.out_ch) * h * w, 0.0);
  for (int o = 0; o < layer.out_ch; ++o)
    for (std::size_t i = 0; i < static_cast<std::size_t>(h) * w; ++i)
      conv[o * static_cast<std::size_t>(h) * w + i] = layer.bias[o];
  for (int i = 0; i < layer.in_ch; ++i)
    for (int ky = 0; ky < 3; ++ky)
      for (int kx = 0; kx < 3; ++kx)
        for (int o = 0; o < layer.out_ch; ++o) {
          const double wgt = layer.w(o, i, ky, kx);
          for (int y = 0; y < h; ++y)
            for (int x = 0; x < w; ++x)
              conv[(static_cast<std::size_t>(o) * h + y) * w + x] +=
                  wgt * padded[(static_cast<std::size_t>(i) * ph + y + ky) * pw +
                               x + kx];
        }
  for (auto& v : conv) v = std::max(v, 0.0);
  for (int o = 0; o < layer.out_ch; ++o)
    for (int y = 0; y < h / 2; ++y)
      for (int x = 0; x < w / 2; ++x) {
        double best = -1;
        for (int wy = 0; wy < 2; ++wy)
          for (int wx = 0; wx < 2; ++wx)
            best = std::max(
                best, conv[(static_cast<std::size_t>(o) * h + 2 * y + wy) * w +
                           2 * x + wx]);
        EXPECT_NEAR(feat.at(o, y, x), best, 1e-6);
      }
}

TEST(Backbone, WrongInputSizeThrows) {
  BackboneConfig cfg;
  cfg.blocks = 1;
  cfg.channels = {2};
  cfg.input_size = 16;
  Rng rng(8);
  const auto weights = BackboneWeights<double>::init(cfg, rng);
  EXPECT_THROW(backbone_forward(random_image(8, 1), weights), ShapeMismatch);
}

TEST(Backbone, ConfigValidationRejectsCollapse) {
  BackboneConfig cfg;
  cfg.blocks = 5;
  cfg.channels = {2, 2, 2, 2, 2};
  cfg.input_size = 16;  // 16 -> 8 -> 4 -> 2 -> 1, block 5 has nothing left
  EXPECT_THROW(cfg.validate(), ConfigError);
}

TEST(Backbone, TranslationConsistencyAwayFromBorders) {
  BackboneConfig cfg;
  cfg.blocks = 1;
  cfg.channels = {4};
  cfg.input_size = 16;
  Rng rng(9);
  const auto weights = BackboneWeights<double>::init(cfg, rng);

  const auto img = random_image(16, 10);
  ImageTensor<double> shifted(16, 16, ColorSpace::rgb);
  for (int c = 0; c < 3; ++c)
    for (int y = 0; y < 16; ++y)
      for (int x = 2; x < 16; ++x) shifted.at(c, y, x) = img.at(c, y, x - 2);

  BackboneCache<double> cache_a, cache_b;
  backbone_forward(img, weights, &cache_a);
  backbone_forward(shifted, weights, &cache_b);
  const auto& act_a = cache_a.blocks[0].pooled_in;
  const auto& act_b = cache_b.blocks[0].pooled_in;
  for (int c = 0; c < 4; ++c)
    for (int y = 1; y < 15; ++y)
      for (int x = 3; x < 15; ++x)
        EXPECT_NEAR(act_b.at(c, y, x), act_a.at(c, y, x - 2), 1e-12);
}

TEST(Backbone, WeightGradientsMatchFiniteDifferences) {
  BackboneConfig cfg;
  cfg.blocks = 2;
  cfg.channels = {3, 4};
  cfg.input_size = 8;
  Rng rng(123);
  auto weights = BackboneWeights<double>::init(cfg, rng);
  const auto img = random_image(8, 11);

  std::vector<double> obj_weights(4ul * 2 * 2);
  for (auto& v : obj_weights) v = rng.normal();

  auto objective = [&](const BackboneWeights<double>& w) {
    const auto feat = backbone_forward(img, w);
    double obj = 0;
    for (std::size_t i = 0; i < feat.data.size(); ++i)
      obj += obj_weights[i] * feat.data[i];
    return obj;
  };

  BackboneCache<double> cache;
  const auto feat = backbone_forward(img, weights, &cache);
  FeatureMap<double> dfeat(feat.channels, feat.height, feat.width);
  dfeat.data = obj_weights;
  const auto grads = backbone_backward(dfeat, cache, weights);

  const double h = 1e-6;
  double max_rel = 0;
  for (std::size_t b = 0; b < weights.layers.size(); ++b) {
    auto check_buffer = [&](std::vector<double>& buf, const std::vector<double>& g) {
      for (std::size_t i = 0; i < buf.size(); ++i) {
        const double saved = buf[i];
        buf[i] = saved + h;
        const double up = objective(weights);
        buf[i] = saved - h;
        const double dn = objective(weights);
        buf[i] = saved;
        const double numeric = (up - dn) / (2 * h);
        const double rel = std::abs(numeric - g[i]) /
                           std::max({std::abs(numeric), std::abs(g[i]), 1e-6});
        max_rel = std::max(max_rel, rel);
      }
    };
    check_buffer(weights.layers[b].weights, grads.layers[b].weights);
    check_buffer(weights.layers[b].bias, grads.layers[b].bias);
  }
  EXPECT_LE(max_rel, 1e-4);
}

TEST(PairLocations, SingleCellGrid) {
  FeatureMap<double> fa(2, 1, 1), fb(3, 1, 1);
  fa.data = {1, 2};
  fb.data = {3, 4, 5};
  const auto pairs = pair_locations(fa, fb);
  EXPECT_EQ(pairs.count, 1);
  EXPECT_EQ(pairs.p, 2);
  EXPECT_EQ(pairs.q, 3);
  EXPECT_DOUBLE_EQ(pairs.x(0)[1], 2);
  EXPECT_DOUBLE_EQ(pairs.y(0)[2], 5);
}

TEST(PairLocations, RowMajorOrder) {
  FeatureMap<double> fa(1, 2, 2), fb(1, 2, 2);
  fa.data = {0, 1, 2, 3};  // value == row-major location index
  fb.data = {10, 11, 12, 13};
  const auto pairs = pair_locations(fa, fb);
  ASSERT_EQ(pairs.count, 4);
  for (int v = 0; v < 4; ++v) {
    EXPECT_DOUBLE_EQ(pairs.x(v)[0], v);
    EXPECT_DOUBLE_EQ(pairs.y(v)[0], 10 + v);
  }
}

TEST(PairLocations, ChannelVectorsPreservedExactly) {
  Rng rng(12);
  FeatureMap<double> fa(2, 3, 2), fb(3, 3, 2);
  for (auto& v : fa.data) v = rng.normal();
  for (auto& v : fb.data) v = rng.normal();
  const auto pairs = pair_locations(fa, fb);
  for (int y = 0; y < 3; ++y)
    for (int x = 0; x < 2; ++x) {
      const int v = y * 2 + x;
      for (int c = 0; c < 2; ++c) EXPECT_DOUBLE_EQ(pairs.x(v)[c], fa.at(c, y, x));
      for (int c = 0; c < 3; ++c) EXPECT_DOUBLE_EQ(pairs.y(v)[c], fb.at(c, y, x));
    }
}

TEST(PairLocations, GridMismatchThrows) {
  FeatureMap<double> fa(1, 2, 2), fb(1, 3, 3);
  EXPECT_THROW(pair_locations(fa, fb), ShapeMismatch);
}

}  // namespace
}  // namespace mcfbc
