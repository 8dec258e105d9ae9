#include "mcfbc/model.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <set>

namespace mcfbc {
namespace {

ModelConfig tiny_config() {
  ModelConfig cfg;
  cfg.backbone.blocks = 2;
  cfg.backbone.channels = {4, 6};
  cfg.backbone.input_size = 12;
  cfg.k = 8;
  cfg.r = 1;
  cfg.lambda = 0.001;
  return cfg;
}

ImageTensor<double> random_rgb(int size, std::uint64_t seed) {
  ImageTensor<double> img(size, size, ColorSpace::rgb);
  Rng rng(seed);
  for (auto& v : img.data) v = rng.uniform();
  return img;
}

TEST(Model, ForwardMatchesManualPipeline) {
  const ModelConfig cfg = tiny_config();
  const auto model = Model<double>::init(cfg, 21);
  const auto img = random_rgb(12, 22);

  ModelCache<double> cache;
  const auto probs = model.forward(img, &cache);

  const auto img_a = convert(img, cfg.space_a);
  const auto img_b = convert(img, cfg.space_b);
  const auto fa = backbone_forward(img_a, model.stream_a);
  const auto fb = backbone_forward(img_b, model.stream_b);
  const auto rep = fbc_forward(fa, fb, model.coder);
  const auto logits = model.head.logits(rep.z);
  const auto expected = softmax2(logits);

  EXPECT_NEAR(probs[0], expected[0], 1e-12);
  EXPECT_NEAR(probs[1], expected[1], 1e-12);
  EXPECT_EQ(cache.rep, rep.z);
}

TEST(Model, ProbabilitiesFormDistribution) {
  const auto model = Model<double>::init(tiny_config(), 23);
  for (int t = 0; t < 5; ++t) {
    const auto probs = model.forward(random_rgb(12, 100 + t), nullptr);
    EXPECT_NEAR(probs[0] + probs[1], 1.0, 1e-12);
    EXPECT_GE(probs[0], 0.0);
    EXPECT_GE(probs[1], 0.0);
  }
}

TEST(Model, RejectsNonRgbInput) {
  const auto model = Model<double>::init(tiny_config(), 24);
  auto img = random_rgb(12, 25);
  img.space = ColorSpace::ycbcr;
  EXPECT_THROW(model.forward(img, nullptr), InvalidColorSpace);
}

TEST(Model, AllZeroModelIsUniformWithSymmetricGradients) {
  auto model = Model<double>::init(tiny_config(), 26);
  for (auto& p : model.params())
    for (std::size_t i = 0; i < p.size; ++i) p.data[i] = 0.0;

  ModelCache<double> cache;
  const auto probs = model.forward(random_rgb(12, 27), &cache);
  EXPECT_DOUBLE_EQ(probs[0], 0.5);
  EXPECT_DOUBLE_EQ(probs[1], 0.5);

  const FocalParams fp{1.0, 1.0};
  const auto d0 = loss_backward(probs, 0, fp);
  const auto d1 = loss_backward(probs, 1, fp);
  EXPECT_NEAR(d0[0], d1[1], 1e-12);
  EXPECT_NEAR(d0[1], d1[0], 1e-12);

  const auto g0 = model.backward(d0, cache);
  const auto g1 = model.backward(d1, cache);
  const auto layout = model.layout();
  for (std::size_t i = 0; i < layout.size(); ++i) {
    if (layout[i].name != "head.bias") continue;
    EXPECT_NEAR(g0.tensors[i][0], g1.tensors[i][1], 1e-12);
    EXPECT_NEAR(g0.tensors[i][1], g1.tensors[i][0], 1e-12);
  }
}

TEST(Model, ConcatFusionIsGlobalAveragePoolConcat) {
  ModelConfig cfg = tiny_config();
  cfg.fusion = Fusion::concat;
  const auto model = Model<double>::init(cfg, 28);
  const auto img = random_rgb(12, 29);

  ModelCache<double> cache;
  model.forward(img, &cache);

  const auto fa = backbone_forward(convert(img, cfg.space_a), model.stream_a);
  const auto fb = backbone_forward(convert(img, cfg.space_b), model.stream_b);
  ASSERT_EQ(cache.rep.size(), static_cast<std::size_t>(fa.channels + fb.channels));
  for (int c = 0; c < fa.channels; ++c) {
    double acc = 0;
    for (int y = 0; y < fa.height; ++y)
      for (int x = 0; x < fa.width; ++x) acc += fa.at(c, y, x);
    EXPECT_NEAR(cache.rep[c], acc / (fa.height * fa.width), 1e-12);
  }
  for (int c = 0; c < fb.channels; ++c) {
    double acc = 0;
    for (int y = 0; y < fb.height; ++y)
      for (int x = 0; x < fb.width; ++x) acc += fb.at(c, y, x);
    EXPECT_NEAR(cache.rep[fa.channels + c], acc / (fb.height * fb.width), 1e-12);
  }
}

TEST(Model, SharedStreamsUseOneWeightSet) {
  ModelConfig cfg = tiny_config();
  cfg.shared_streams = true;
  cfg.space_b = ColorSpace::rgb;  // identical inputs + identical weights
  auto model = Model<double>::init(cfg, 30);

  ModelCache<double> cache;
  model.forward(random_rgb(12, 31), &cache);
  EXPECT_EQ(cache.feat_a.data, cache.feat_b.data);

  // Parameter list must not contain a stream_b entry.
  for (const auto& p : model.layout())
    EXPECT_EQ(p.name.rfind("stream_b", 0), std::string::npos);
}

TEST(Model, ParamRegistryCoversDistinctTensors) {
  auto model = Model<double>::init(tiny_config(), 32);
  const auto refs = model.params();
  std::set<std::string> names;
  std::size_t total = 0;
  for (const auto& p : refs) {
    EXPECT_TRUE(names.insert(p.name).second) << "duplicate " << p.name;
    std::size_t prod = 1;
    for (const int d : p.shape) prod *= static_cast<std::size_t>(d);
    EXPECT_EQ(prod, p.size);
    total += p.size;
  }
  // 2 streams x 2 blocks x (w+b) + fbc pair + head pair.
  EXPECT_EQ(refs.size(), 2u * 2 * 2 + 2 + 2);
  EXPECT_GT(total, 0u);
  // Bias tensors excluded from decay.
  for (const auto& p : refs)
    if (p.name.ends_with("bias"))
      EXPECT_FALSE(p.decay);
    else
      EXPECT_TRUE(p.decay);
}

TEST(Model, DifferentSeedsGiveDifferentWeights) {
  auto a = Model<double>::init(tiny_config(), 1);
  auto b = Model<double>::init(tiny_config(), 2);
  bool any_diff = false;
  const auto ra = a.params(), rb = b.params();
  for (std::size_t i = 0; i < ra.size(); ++i)
    for (std::size_t j = 0; j < ra[i].size; ++j)
      if (ra[i].data[j] != rb[i].data[j]) any_diff = true;
  EXPECT_TRUE(any_diff);
}

TEST(Model, NormalizeOptionBoundsRepresentation) {
  ModelConfig cfg = tiny_config();
  cfg.normalize = true;
  const auto model = Model<double>::init(cfg, 33);
  ModelCache<double> cache;
  model.forward(random_rgb(12, 34), &cache);
  double len2 = 0;
  for (const double v : cache.rep_used) len2 += v * v;
  EXPECT_LE(len2, 1.0 + 1e-9);
}

}  // namespace
}  // namespace mcfbc
