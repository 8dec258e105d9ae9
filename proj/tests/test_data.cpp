#include "mcfbc/data.hpp"

#include <gtest/gtest.h>

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <set>

namespace mcfbc {
namespace {

namespace fs = std::filesystem;

class DataTest : public ::testing::Test {
 protected:
  void SetUp() override {
    dir_ = fs::temp_directory_path() /
           ("mcfbc_data_" + std::to_string(::getpid()) + "_" +
            ::testing::UnitTest::GetInstance()->current_test_info()->name());
    fs::create_directories(dir_);
  }
  void TearDown() override { fs::remove_all(dir_); }

  void write_dummy_image(const std::string& rel) {
    fs::create_directories((dir_ / rel).parent_path());
    RasterRgb8 img(4, 4);
    for (std::size_t i = 0; i < img.pixels.size(); ++i)
      img.pixels[i] = static_cast<unsigned char>(i * 7 % 256);
    write_ppm(dir_ / rel, img);
  }

  fs::path dir_;
};

TEST_F(DataTest, ToyManifestLoads) {
  for (const char* p : {"bonafide/b0.ppm", "bonafide/b1.ppm", "attack/a0.ppm",
                        "attack/a1.ppm"})
    write_dummy_image(p);
  std::ofstream out(dir_ / "manifest.csv");
  out << "path,label,split,group\n"
      << "bonafide/b0.ppm,bonafide,train,g0\n"
      << "attack/a0.ppm,attack,train,g1\n"
      << "bonafide/b1.ppm,bonafide,valid,g2\n"
      << "attack/a1.ppm,attack,test,g3\n";
  out.close();
  const DatasetManifest m = load_manifest(dir_ / "manifest.csv");
  EXPECT_EQ(m.entries.size(), 4u);
  EXPECT_EQ(m.split_entries(Split::train).size(), 2u);
  EXPECT_EQ(m.split_entries(Split::valid).size(), 1u);
}

TEST_F(DataTest, GroupAcrossSplitsIsRejected) {
  for (const char* p : {"bonafide/b0.ppm", "attack/a0.ppm", "bonafide/b1.ppm"})
    write_dummy_image(p);
  std::ofstream out(dir_ / "manifest.csv");
  out << "path,label,split,group\n"
      << "bonafide/b0.ppm,bonafide,train,g0\n"
      << "attack/a0.ppm,attack,train,g1\n"
      << "bonafide/b1.ppm,bonafide,test,g0\n";  // g0 leaks into test
  out.close();
  EXPECT_THROW(load_manifest(dir_ / "manifest.csv"), ManifestError);
}

TEST_F(DataTest, UnknownLabelIsRejected) {
  write_dummy_image("x.ppm");
  std::ofstream out(dir_ / "manifest.csv");
  out << "path,label,split,group\nx.ppm,puppet,train,g0\n";
  out.close();
  EXPECT_THROW(load_manifest(dir_ / "manifest.csv"), ManifestError);
}

TEST_F(DataTest, MissingFileIsRejected) {
  std::ofstream out(dir_ / "manifest.csv");
  out << "path,label,split,group\n"
      << "ghost.ppm,bonafide,train,g0\n";
  out.close();
  EXPECT_THROW(load_manifest(dir_ / "manifest.csv"), ManifestError);
}

TEST_F(DataTest, MissingManifestIsRejected) {
  EXPECT_THROW(load_manifest(dir_ / "nope.csv"), ManifestError);
}

TEST_F(DataTest, SingleClassTrainSplitIsRejected) {
  for (const char* p : {"bonafide/b0.ppm", "bonafide/b1.ppm"}) write_dummy_image(p);
  std::ofstream out(dir_ / "manifest.csv");
  out << "path,label,split,group\n"
      << "bonafide/b0.ppm,bonafide,train,g0\n"
      << "bonafide/b1.ppm,bonafide,train,g1\n";
  out.close();
  EXPECT_THROW(load_manifest(dir_ / "manifest.csv"), ManifestError);
}

std::vector<ManifestEntry> entries_with_groups(int n_groups) {
  std::vector<ManifestEntry> entries;
  for (int g = 0; g < n_groups; ++g)
    entries.push_back({"f" + std::to_string(g) + ".png",
                       g % 2 ? PadLabel::attack : PadLabel::bonafide,
                       Split::train, "g" + std::to_string(g)});
  return entries;
}

std::map<Split, int> group_counts(const std::vector<ManifestEntry>& entries) {
  std::map<Split, std::set<std::string>> groups;
  for (const auto& e : entries) groups[e.split].insert(e.group);
  return {{Split::train, static_cast<int>(groups[Split::train].size())},
          {Split::valid, static_cast<int>(groups[Split::valid].size())},
          {Split::test, static_cast<int>(groups[Split::test].size())}};
}

TEST(MakeSplits, FiveGroupsSplitThreeOneOne) {
  const auto split = make_splits(entries_with_groups(5), SplitRatio{}, 1);
  auto counts = group_counts(split);
  EXPECT_EQ(counts[Split::train], 3);
  EXPECT_EQ(counts[Split::valid], 1);
  EXPECT_EQ(counts[Split::test], 1);
}

TEST(MakeSplits, LargeCountMatchesApportionmentOracle) {
  const int n = 745;
  const auto split = make_splits(entries_with_groups(n), SplitRatio{}, 9);
  auto counts = group_counts(split);
  // Independent recompute of the floor apportionment for 3:1:1.
  const int per_share = n / 5;
  EXPECT_EQ(counts[Split::valid], per_share);   // 149
  EXPECT_EQ(counts[Split::test], per_share);    // 149
  EXPECT_EQ(counts[Split::train], n - 2 * per_share);  // 447
}

TEST(MakeSplits, DeterministicPerSeedAndOrderIndependent) {
  auto entries = entries_with_groups(20);
  const auto a = make_splits(entries, SplitRatio{}, 5);
  const auto b = make_splits(entries, SplitRatio{}, 5);
  for (std::size_t i = 0; i < a.size(); ++i) EXPECT_EQ(a[i].split, b[i].split);

  // Same seed, shuffled row order: every group keeps its assignment.
  std::reverse(entries.begin(), entries.end());
  const auto c = make_splits(entries, SplitRatio{}, 5);
  std::map<std::string, Split> by_group;
  for (const auto& e : a) by_group[e.group] = e.split;
  for (const auto& e : c) EXPECT_EQ(e.split, by_group.at(e.group));

  const auto d = make_splits(entries, SplitRatio{}, 6);
  bool any_differs = false;
  for (const auto& e : d)
    if (e.split != by_group.at(e.group)) any_differs = true;
  EXPECT_TRUE(any_differs);
}

TEST(MakeSplits, TooFewGroupsThrow) {
  EXPECT_THROW(make_splits(entries_with_groups(4), SplitRatio{}, 1), ManifestError);
}

TEST(MakeSplits, GroupsStayIntact) {
  // All entries of one group land in the same split.
  std::vector<ManifestEntry> entries;
  for (int g = 0; g < 8; ++g)
    for (int i = 0; i < 3; ++i)
      entries.push_back({"f" + std::to_string(g) + "_" + std::to_string(i) + ".png",
                         g % 2 ? PadLabel::attack : PadLabel::bonafide,
                         Split::train, "g" + std::to_string(g)});
  const auto split = make_splits(entries, SplitRatio{}, 3);
  std::map<std::string, Split> seen;
  for (const auto& e : split) {
    auto [it, inserted] = seen.emplace(e.group, e.split);
    if (!inserted) EXPECT_EQ(it->second, e.split);
  }
}

TEST_F(DataTest, SyntheticGeneratorProducesFilesAndManifest) {
  SyntheticOptions opts;
  opts.seed = 3;
  opts.n_per_class = 10;
  opts.size = 16;
  opts.outdir = dir_ / "synth";
  const DatasetManifest m = generate_synthetic(opts);
  EXPECT_EQ(m.entries.size(), 20u);
  int files = 0;
  for (const auto& e : fs::recursive_directory_iterator(dir_ / "synth"))
    if (e.path().extension() == ".png") ++files;
  EXPECT_EQ(files, 20);
  EXPECT_TRUE(fs::exists(dir_ / "synth" / "manifest.csv"));
  EXPECT_TRUE(fs::exists(dir_ / "synth" / "params.json"));
  const DatasetManifest reloaded = load_manifest(dir_ / "synth" / "manifest.csv");
  EXPECT_EQ(reloaded.entries.size(), 20u);
}

TEST_F(DataTest, SyntheticChromaSeparationHolds) {
  SyntheticOptions opts;
  opts.seed = 4;
  opts.n_per_class = 16;
  opts.size = 16;
  opts.outdir = dir_ / "synth";
  const DatasetManifest m = generate_synthetic(opts);

  double cb[2] = {0, 0}, cr[2] = {0, 0};
  int counts[2] = {0, 0};
  for (const auto& e : m.entries) {
    const auto rgb = read_image<double>(m.root / e.path);
    const auto ycc = rgb_to_ycbcr(rgb);
    const std::size_t n = ycc.pixel_count();
    double mean_cb = 0, mean_cr = 0;
    for (std::size_t i = 0; i < n; ++i) {
      mean_cb += ycc.data[n + i];
      mean_cr += ycc.data[2 * n + i];
    }
    const int cls = e.label == PadLabel::bonafide ? 0 : 1;
    cb[cls] += mean_cb / n;
    cr[cls] += mean_cr / n;
    ++counts[cls];
  }
  for (int c = 0; c < 2; ++c) {
    cb[c] /= counts[c];
    cr[c] /= counts[c];
  }
  const double dist = std::hypot(cb[0] - cb[1], cr[0] - cr[1]);
  EXPECT_GE(dist, opts.chroma_delta);
}

TEST_F(DataTest, SyntheticGeneratorIsDeterministic) {
  SyntheticOptions opts;
  opts.seed = 5;
  opts.n_per_class = 6;
  opts.size = 16;
  opts.images_per_group = 1;
  opts.outdir = dir_ / "a";
  generate_synthetic(opts);
  opts.outdir = dir_ / "b";
  generate_synthetic(opts);

  for (const char* rel : {"bonafide/b0000.png", "attack/a0003.png"}) {
    const RasterRgb8 a = read_png(dir_ / "a" / rel);
    const RasterRgb8 b = read_png(dir_ / "b" / rel);
    EXPECT_EQ(a.pixels, b.pixels);
  }
  std::ifstream ma(dir_ / "a" / "manifest.csv"), mb(dir_ / "b" / "manifest.csv");
  const std::string sa((std::istreambuf_iterator<char>(ma)),
                       std::istreambuf_iterator<char>());
  const std::string sb((std::istreambuf_iterator<char>(mb)),
                       std::istreambuf_iterator<char>());
  EXPECT_EQ(sa, sb);
}

TEST_F(DataTest, GeneratedImagesReencodeLosslessly) {
  SyntheticOptions opts;
  opts.seed = 6;
  opts.n_per_class = 5;
  opts.size = 16;
  opts.images_per_group = 1;
  opts.outdir = dir_ / "synth";
  const DatasetManifest m = generate_synthetic(opts);
  for (const auto& e : m.entries) {
    const RasterRgb8 original = read_raster(m.root / e.path);
    write_png(dir_ / "copy.png", original);
    const RasterRgb8 back = read_png(dir_ / "copy.png");
    EXPECT_EQ(back.pixels, original.pixels);
  }
}

TEST_F(DataTest, SyntheticPpmFormatSupported) {
  SyntheticOptions opts;
  opts.seed = 7;
  opts.n_per_class = 5;
  opts.size = 16;
  opts.images_per_group = 1;
  opts.format = "ppm";
  opts.outdir = dir_ / "synth";
  const DatasetManifest m = generate_synthetic(opts);
  const auto samples = load_split<float>(m, Split::train);
  EXPECT_FALSE(samples.empty());
  EXPECT_EQ(samples[0].rgb.height, 16);
}

TEST_F(DataTest, LoadSplitDecodesImages) {
  SyntheticOptions opts;
  opts.seed = 8;
  opts.n_per_class = 5;
  opts.size = 16;
  opts.images_per_group = 1;
  opts.outdir = dir_ / "synth";
  const DatasetManifest m = generate_synthetic(opts);
  const auto train = load_split<float>(m, Split::train);
  const auto valid = load_split<float>(m, Split::valid);
  const auto test = load_split<float>(m, Split::test);
  EXPECT_EQ(train.size() + valid.size() + test.size(), 10u);
  for (const auto& s : train) {
    EXPECT_EQ(s.rgb.space, ColorSpace::rgb);
    EXPECT_EQ(s.rgb.height, 16);
    EXPECT_FALSE(s.group.empty());
  }
}

}  // namespace
}  // namespace mcfbc
