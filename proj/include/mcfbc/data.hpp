#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "mcfbc/colorspace.hpp"
#include "mcfbc/errors.hpp"
#include "mcfbc/image_io.hpp"
#include "mcfbc/metrics.hpp"
#include "mcfbc/rng.hpp"

namespace mcfbc {

enum class Split { train, valid, test };

inline std::string to_string(Split s) {
  switch (s) {
    case Split::train: return "train";
    case Split::valid: return "valid";
    case Split::test: return "test";
  }
  return "?";
}

inline Split split_from_string(const std::string& s) {
  if (s == "train") return Split::train;
  if (s == "valid") return Split::valid;
  if (s == "test") return Split::test;
  throw ManifestError("unknown split '" + s + "'");
}

struct ManifestEntry {
  std::string path;  // relative to the manifest root
  PadLabel label;
  Split split;
  std::string group;
};

struct DatasetManifest {
  std::filesystem::path root;
  std::vector<ManifestEntry> entries;

  /// Splits must be group-disjoint, all files present, and the train split
  /// must contain both classes.
  void validate() const {
    std::map<std::string, Split> group_split;
    bool train_bona = false, train_attack = false;
    for (const auto& e : entries) {
      if (e.group.empty()) throw ManifestError("empty group id for " + e.path);
      auto [it, inserted] = group_split.emplace(e.group, e.split);
      if (!inserted && it->second != e.split)
        throw ManifestError("group '" + e.group + "' appears in splits " +
                            to_string(it->second) + " and " + to_string(e.split));
      if (!std::filesystem::exists(root / e.path))
        throw ManifestError("missing file " + (root / e.path).string());
      if (e.split == Split::train) {
        if (e.label == PadLabel::bonafide) train_bona = true;
        else train_attack = true;
      }
    }
    if (!entries.empty() && !(train_bona && train_attack))
      throw ManifestError("train split must contain both classes");
  }

  std::vector<ManifestEntry> split_entries(Split s) const {
    std::vector<ManifestEntry> out;
    for (const auto& e : entries)
      if (e.split == s) out.push_back(e);
    return out;
  }
};

/// Manifest CSV: header `path,label,split,group`.
inline DatasetManifest load_manifest(const std::filesystem::path& csv_path) {
  std::ifstream in(csv_path);
  if (!in) throw ManifestError("cannot open manifest " + csv_path.string());
  std::string line;
  if (!std::getline(in, line) || line != "path,label,split,group")
    throw ManifestError(csv_path.string() +
                        ": expected header 'path,label,split,group'");
  DatasetManifest m;
  m.root = csv_path.parent_path();
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::stringstream ss(line);
    std::string path, label, split, group;
    if (!std::getline(ss, path, ',') || !std::getline(ss, label, ',') ||
        !std::getline(ss, split, ',') || !std::getline(ss, group))
      throw ManifestError(csv_path.string() + ": malformed row '" + line + "'");
    m.entries.push_back(
        {path, pad_label_from_string(label), split_from_string(split), group});
  }
  m.validate();
  return m;
}

inline void write_manifest(const std::filesystem::path& csv_path,
                           const DatasetManifest& m) {
  std::ofstream out(csv_path);
  if (!out) throw IoError("cannot write " + csv_path.string());
  out << "path,label,split,group\n";
  for (const auto& e : m.entries)
    out << e.path << "," << to_string(e.label) << "," << to_string(e.split) << ","
        << e.group << "\n";
  if (!out) throw IoError("failed to write " + csv_path.string());
}

struct SplitRatio {
  int train = 3;
  int valid = 1;
  int test = 1;
};

namespace detail {

inline std::uint64_t group_hash(const std::string& group, std::uint64_t seed) {
  // FNV-1a over the group id, finalized with the seed via splitmix.
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (const unsigned char c : group) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  std::uint64_t s = h ^ seed;
  return splitmix64(s);
}

}  // namespace detail

/// Group-level split assignment. Groups are ordered by a seeded hash of
/// their id (so the outcome is independent of manifest row order), then cut
/// proportionally: valid and test each get floor(n * share), train the
/// rest. With ratio 3:1:1 this gives 5 -> 3/1/1 and 745 -> 447/149/149.
/// Note the quota cut means adding a brand-new group can rebalance groups
/// adjacent to the cut boundaries.
inline std::vector<ManifestEntry> make_splits(std::vector<ManifestEntry> entries,
                                              const SplitRatio& ratio,
                                              std::uint64_t seed) {
  if (ratio.train < 1 || ratio.valid < 1 || ratio.test < 1)
    throw ConfigError("make_splits: ratio parts must be >= 1");
  std::set<std::string> group_set;
  for (const auto& e : entries) {
    if (e.group.empty()) throw ManifestError("make_splits: empty group id");
    group_set.insert(e.group);
  }
  const int n = static_cast<int>(group_set.size());
  const int total = ratio.train + ratio.valid + ratio.test;
  const int n_valid = n * ratio.valid / total;
  const int n_test = n * ratio.test / total;
  const int n_train = n - n_valid - n_test;
  if (n_valid < 1 || n_test < 1 || n_train < 1)
    throw ManifestError("make_splits: too few groups (" + std::to_string(n) +
                        ") for ratio " + std::to_string(ratio.train) + ":" +
                        std::to_string(ratio.valid) + ":" + std::to_string(ratio.test));

  std::vector<std::string> groups(group_set.begin(), group_set.end());
  std::sort(groups.begin(), groups.end(),
            [seed](const std::string& a, const std::string& b) {
              const auto ha = detail::group_hash(a, seed);
              const auto hb = detail::group_hash(b, seed);
              return ha != hb ? ha < hb : a < b;
            });

  std::map<std::string, Split> assignment;
  for (int i = 0; i < n; ++i) {
    Split s = Split::train;
    if (i >= n_train) s = i < n_train + n_valid ? Split::valid : Split::test;
    assignment[groups[i]] = s;
  }
  for (auto& e : entries) e.split = assignment.at(e.group);
  return entries;
}

/// Desk-scale synthetic stand-in for real-vs-artificial texture differences.
/// Both classes are built in YCbCr: per-group chroma means are drawn from a
/// class Gaussian (the attack class shifted by chroma_delta in both
/// channels), luma carries the texture. Attack textures are low-pass
/// filtered noise renormalized to the same contrast, so the class
/// separation lives partly in chrominance and partly in smoothness.
/// Groups model subjects with matched real/fake presentations: every group
/// contributes images of both classes, so group-disjoint splits always
/// keep both classes in every split.
struct SyntheticOptions {
  std::uint64_t seed = 1;
  int n_per_class = 200;
  int size = 32;
  std::filesystem::path outdir;
  double chroma_delta = 0.08;
  double chroma_sigma = 0.02;
  double chroma_spatial_sigma = 0.01;
  double texture_sigma = 0.12;
  // Per-image lighting nuisance: a constant luma shift. Chroma planes are
  // invariant to it, RGB channels are not.
  double luma_offset_sigma = 0.12;
  int attack_blur_passes = 2;
  int images_per_group = 2;
  SplitRatio ratio;
  std::string format = "png";  // png | ppm

  // Class chroma centers; bonafide sits at these, attack at +/- delta.
  double base_cb = 0.45;
  double base_cr = 0.58;

  void validate() const {
    if (size < 16) throw ConfigError("synthetic: size must be >= 16");
    if (n_per_class < 1) throw ConfigError("synthetic: n_per_class must be >= 1");
    if (images_per_group < 1)
      throw ConfigError("synthetic: images_per_group must be >= 1");
    if (format != "png" && format != "ppm")
      throw ConfigError("synthetic: format must be png or ppm");
  }
};

namespace detail {

/// 3x3 box blur with clamped borders, applied in place.
template <class T>
void box_blur(std::vector<T>& plane, int size) {
  std::vector<T> out(plane.size());
  for (int y = 0; y < size; ++y)
    for (int x = 0; x < size; ++x) {
      double acc = 0.0;
      for (int dy = -1; dy <= 1; ++dy)
        for (int dx = -1; dx <= 1; ++dx) {
          const int sy = std::clamp(y + dy, 0, size - 1);
          const int sx = std::clamp(x + dx, 0, size - 1);
          acc += static_cast<double>(plane[static_cast<std::size_t>(sy) * size + sx]);
        }
      out[static_cast<std::size_t>(y) * size + x] = static_cast<T>(acc / 9.0);
    }
  plane.swap(out);
}

}  // namespace detail

inline DatasetManifest generate_synthetic(const SyntheticOptions& opts) {
  opts.validate();
  namespace fs = std::filesystem;
  std::error_code ec;
  fs::create_directories(opts.outdir / "bonafide", ec);
  fs::create_directories(opts.outdir / "attack", ec);
  if (ec) throw IoError("cannot create " + opts.outdir.string());

  DatasetManifest manifest;
  manifest.root = opts.outdir;

  Rng rng(derive_seed(opts.seed, 0xda7a));
  const int size = opts.size;
  const std::size_t pixels = static_cast<std::size_t>(size) * size;
  const int n_groups =
      (opts.n_per_class + opts.images_per_group - 1) / opts.images_per_group;

  int produced[2] = {0, 0};
  for (int g = 0; g < n_groups; ++g) {
    const std::string group = "g" + std::to_string(g);
    // Matched pair per group: each subject family carries both classes.
    for (const PadLabel label : {PadLabel::bonafide, PadLabel::attack}) {
      const bool attack = label == PadLabel::attack;
      const double center_cb = opts.base_cb + (attack ? opts.chroma_delta : 0.0);
      const double center_cr = opts.base_cr - (attack ? opts.chroma_delta : 0.0);
      const double group_cb = rng.normal(center_cb, opts.chroma_sigma);
      const double group_cr = rng.normal(center_cr, opts.chroma_sigma);
      const std::string cls = to_string(label);
      int& count = produced[attack ? 1 : 0];

      for (int j = 0; j < opts.images_per_group && count < opts.n_per_class;
           ++j, ++count) {
        ImageTensor<double> img(size, size, ColorSpace::ycbcr);
        std::vector<double> luma(pixels);
        for (auto& v : luma) v = rng.normal(0.0, opts.texture_sigma);
        if (attack) {
          for (int pass = 0; pass < opts.attack_blur_passes; ++pass)
            detail::box_blur(luma, size);
          // Renormalize so smoothness, not contrast, separates the classes.
          double mean = 0.0;
          for (const double v : luma) mean += v;
          mean /= static_cast<double>(pixels);
          double var = 0.0;
          for (const double v : luma) var += (v - mean) * (v - mean);
          var /= static_cast<double>(pixels);
          const double scale =
              var > 0.0 ? opts.texture_sigma / std::sqrt(var) : 1.0;
          for (auto& v : luma) v = (v - mean) * scale;
        }
        for (std::size_t i = 0; i < pixels; ++i) {
          img.data[i] = clamp01(0.5 + luma[i]);
          img.data[pixels + i] =
              clamp01(group_cb + rng.normal(0.0, opts.chroma_spatial_sigma));
          img.data[2 * pixels + i] =
              clamp01(group_cr + rng.normal(0.0, opts.chroma_spatial_sigma));
        }
        const ImageTensor<double> rgb = ycbcr_to_rgb(img);

        char name[32];
        std::snprintf(name, sizeof(name), "%c%04d.%s", attack ? 'a' : 'b',
                      count, opts.format.c_str());
        const std::string rel = cls + "/" + name;
        write_image(opts.outdir / rel, rgb);
        manifest.entries.push_back({rel, label, Split::train, group});
      }
    }
  }

  manifest.entries = make_splits(std::move(manifest.entries), opts.ratio,
                                 derive_seed(opts.seed, 1));
  manifest.validate();
  write_manifest(opts.outdir / "manifest.csv", manifest);

  const nlohmann::json params = {
      {"seed", opts.seed},
      {"n_per_class", opts.n_per_class},
      {"size", opts.size},
      {"chroma_delta", opts.chroma_delta},
      {"chroma_sigma", opts.chroma_sigma},
      {"chroma_spatial_sigma", opts.chroma_spatial_sigma},
      {"texture_sigma", opts.texture_sigma},
      {"attack_blur_passes", opts.attack_blur_passes},
      {"images_per_group", opts.images_per_group},
      {"base_cb", opts.base_cb},
      {"base_cr", opts.base_cr},
      {"format", opts.format}};
  std::ofstream params_out(opts.outdir / "params.json");
  params_out << params.dump(2) << "\n";
  return manifest;
}

/// A decoded training sample. Images are stored as RGB; stream-space
/// conversion happens in the model.
template <class T>
struct Sample {
  std::string id;
  PadLabel label;
  std::string group;
  ImageTensor<T> rgb;
};

template <class T>
std::vector<Sample<T>> load_split(const DatasetManifest& manifest, Split split) {
  std::vector<Sample<T>> out;
  for (const auto& e : manifest.entries) {
    if (e.split != split) continue;
    Sample<T> s;
    s.id = e.path;
    s.label = e.label;
    s.group = e.group;
    s.rgb = read_image<T>(manifest.root / e.path, ColorSpace::rgb);
    out.push_back(std::move(s));
  }
  return out;
}

}  // namespace mcfbc
