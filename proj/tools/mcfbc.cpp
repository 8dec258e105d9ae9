#include <CLI11.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>

#include "mcfbc/data.hpp"
#include "mcfbc/image_io.hpp"
#include "mcfbc/metrics.hpp"
#include "mcfbc/model.hpp"
#include "mcfbc/oracles.hpp"
#include "mcfbc/train.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

// Exit codes: 0 ok, 1 unexpected, 2 config error, 3 data error, 4 numeric
// failure (including a failed gradient audit or oracle).
constexpr int kOk = 0;
constexpr int kUnexpected = 1;
constexpr int kConfigError = 2;
constexpr int kDataError = 3;
constexpr int kNumericError = 4;

mcfbc::TrainConfig load_config(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw mcfbc::ConfigError("cannot open config " + path.string());
  json j;
  try {
    in >> j;
  } catch (const json::exception& e) {
    throw mcfbc::ConfigError(path.string() + ": " + e.what());
  }
  return mcfbc::train_config_from_json(j);
}

mcfbc::ModelConfig gradcheck_model_config(const std::string& size) {
  mcfbc::ModelConfig cfg;
  if (size == "tiny") {
    cfg.backbone.blocks = 2;
    cfg.backbone.channels = {3, 4};
    cfg.backbone.input_size = 12;
    cfg.k = 6;
  } else if (size == "small") {
    cfg.backbone.blocks = 3;
    cfg.backbone.channels = {8, 16, 8};
    cfg.backbone.input_size = 24;  // 3x3 grid after three pools
    cfg.k = 16;
  } else {
    throw mcfbc::ConfigError("gradcheck: size must be tiny or small");
  }
  cfg.r = 1;
  cfg.lambda = 0.001;
  return cfg;
}

int cmd_train(const fs::path& config_path, const fs::path& data_path,
              const fs::path& out_dir, const std::string& resume,
              std::int64_t seed_override) {
  mcfbc::TrainConfig cfg = load_config(config_path);
  if (seed_override >= 0) cfg.seed = static_cast<std::uint64_t>(seed_override);
  const mcfbc::DatasetManifest manifest = mcfbc::load_manifest(data_path);

  fs::create_directories(out_dir);
  std::ofstream log_out(out_dir / "train_log.jsonl");
  if (!log_out)
    throw mcfbc::IoError("cannot write " + (out_dir / "train_log.jsonl").string());

  const auto on_epoch = [&log_out](const mcfbc::EpochLog& e) {
    const std::string line = mcfbc::epoch_log_to_json(e).dump();
    log_out << line << "\n";
    log_out.flush();
    std::cerr << line << "\n";
  };

  const fs::path resume_path = resume;
  auto result =
      mcfbc::train<float>(cfg, manifest, resume.empty() ? nullptr : &resume_path,
                          on_epoch);

  const fs::path ckpt_path = out_dir / "checkpoint.fbc1";
  mcfbc::make_checkpoint(result, cfg).save(ckpt_path);

  json summary = {{"checkpoint", ckpt_path.string()},
                  {"log", (out_dir / "train_log.jsonl").string()},
                  {"epochs_run", result.epochs_run},
                  {"early_stopped", result.early_stopped},
                  {"best_epoch", result.best_epoch}};
  if (std::isfinite(result.best_valid_acer))
    summary["best_valid_acer"] = result.best_valid_acer;
  std::cout << summary.dump(2) << "\n";
  return kOk;
}

int cmd_eval(const fs::path& ckpt_path, const fs::path& data_path,
             const std::string& split, const fs::path& out_dir,
             const std::string& threshold_policy, double threshold) {
  auto ckpt = mcfbc::Checkpoint<float>::load(ckpt_path);
  const auto model = mcfbc::model_from_checkpoint(ckpt);
  const mcfbc::DatasetManifest manifest = mcfbc::load_manifest(data_path);
  const auto samples =
      mcfbc::load_split<float>(manifest, mcfbc::split_from_string(split));
  if (samples.empty())
    throw mcfbc::ManifestError("eval: split '" + split + "' is empty");

  const mcfbc::ScoreSet scores = mcfbc::score_samples(model, samples);
  const auto provenance = threshold_policy == "eer"
                              ? mcfbc::ThresholdProvenance::eer_derived
                              : mcfbc::ThresholdProvenance::fixed;
  const mcfbc::MetricsReport report =
      mcfbc::make_report(scores, threshold, provenance);

  fs::create_directories(out_dir);
  mcfbc::write_scores_csv(out_dir / "scores.csv", scores);
  const json rj = mcfbc::report_to_json(report);
  std::ofstream rep_out(out_dir / "report.json");
  rep_out << rj.dump(2) << "\n";
  std::cout << rj.dump(2) << "\n";
  return kOk;
}

int cmd_gradcheck(std::uint64_t seed, const std::string& size, double h,
                  double tol, bool inject_fault) {
  const mcfbc::ModelConfig cfg = gradcheck_model_config(size);
  const auto model = mcfbc::Model<double>::init(cfg, seed);

  mcfbc::Sample<double> sample;
  sample.label = seed % 2 == 0 ? mcfbc::PadLabel::bonafide : mcfbc::PadLabel::attack;
  sample.rgb = mcfbc::ImageTensor<double>(cfg.backbone.input_size,
                                          cfg.backbone.input_size,
                                          mcfbc::ColorSpace::rgb);
  mcfbc::Rng rng(mcfbc::derive_seed(seed, 0xab));
  for (auto& v : sample.rgb.data) v = rng.uniform();

  const auto report = mcfbc::grad_check(model, sample, h, tol, mcfbc::FocalParams{},
                                        inject_fault ? 1.05 : 1.0);
  std::cout << mcfbc::grad_report_to_json(report).dump(2) << "\n";
  return report.passed ? kOk : kNumericError;
}

int cmd_oracle(bool as_json) {
  const auto cases = mcfbc::oracles::run_suite();
  bool all_pass = true;
  if (as_json) {
    json arr = json::array();
    for (const auto& c : cases) {
      arr.push_back({{"name", c.name},
                     {"passed", c.passed},
                     {"max_err", c.max_err},
                     {"tolerance", c.tolerance},
                     {"trials", c.trials}});
      all_pass = all_pass && c.passed;
    }
    std::cout << arr.dump(2) << "\n";
  } else {
    std::printf("%-20s %8s %12s %10s  %s\n", "oracle", "trials", "max_err",
                "tol", "status");
    for (const auto& c : cases) {
      std::printf("%-20s %8d %12.3e %10.0e  %s\n", c.name.c_str(), c.trials,
                  c.max_err, c.tolerance, c.passed ? "PASS" : "FAIL");
      all_pass = all_pass && c.passed;
    }
  }
  return all_pass ? kOk : kNumericError;
}

int cmd_color(const std::string& from, const std::string& to,
              const fs::path& input, const fs::path& output) {
  const mcfbc::ColorSpace src = mcfbc::color_space_from_string(from);
  const mcfbc::ColorSpace dst = mcfbc::color_space_from_string(to);
  const auto img = mcfbc::read_image<double>(input, src);
  const auto converted = mcfbc::convert(img, dst);
  mcfbc::write_image(output, converted);
  std::cout << json({{"input", input.string()},
                     {"output", output.string()},
                     {"from", from},
                     {"to", to}})
                   .dump()
            << "\n";
  return kOk;
}

int cmd_synth(std::uint64_t seed, int n_per_class, int size, const fs::path& outdir,
              double delta, const std::string& format, int images_per_group) {
  mcfbc::SyntheticOptions opts;
  opts.seed = seed;
  opts.n_per_class = n_per_class;
  opts.size = size;
  opts.outdir = outdir;
  opts.chroma_delta = delta;
  opts.format = format;
  opts.images_per_group = images_per_group;
  const auto manifest = mcfbc::generate_synthetic(opts);
  int train = 0, valid = 0, test = 0;
  for (const auto& e : manifest.entries) {
    if (e.split == mcfbc::Split::train) ++train;
    else if (e.split == mcfbc::Split::valid) ++valid;
    else ++test;
  }
  std::cout << json({{"manifest", (outdir / "manifest.csv").string()},
                     {"images", manifest.entries.size()},
                     {"train", train},
                     {"valid", valid},
                     {"test", test}})
                   .dump(2)
            << "\n";
  return kOk;
}

mcfbc::SplitRatio parse_ratio(const std::string& text) {
  mcfbc::SplitRatio ratio;
  int a = 0, b = 0, c = 0;
  char sep1 = 0, sep2 = 0;
  std::stringstream ss(text);
  if (!(ss >> a >> sep1 >> b >> sep2 >> c) || sep1 != ':' || sep2 != ':' ||
      a < 1 || b < 1 || c < 1 || !ss.eof())
    throw mcfbc::ConfigError("split: ratio must look like 3:1:1");
  ratio.train = a;
  ratio.valid = b;
  ratio.test = c;
  return ratio;
}

int cmd_split(const std::string& ratio_text, std::uint64_t seed,
              const fs::path& manifest_path, const std::string& out) {
  const mcfbc::SplitRatio ratio = parse_ratio(ratio_text);
  mcfbc::DatasetManifest manifest = mcfbc::load_manifest(manifest_path);
  manifest.entries = mcfbc::make_splits(std::move(manifest.entries), ratio, seed);
  manifest.validate();
  const fs::path target = out.empty() ? manifest_path : fs::path(out);
  mcfbc::write_manifest(target, manifest);
  int train = 0, valid = 0, test = 0;
  for (const auto& e : manifest.entries) {
    if (e.split == mcfbc::Split::train) ++train;
    else if (e.split == mcfbc::Split::valid) ++valid;
    else ++test;
  }
  std::cout << json({{"manifest", target.string()},
                     {"train", train},
                     {"valid", valid},
                     {"test", test}})
                   .dump()
            << "\n";
  return kOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"multi-color factorized bilinear coding for face "
               "presentation-attack detection"};
  app.require_subcommand(1);

  // train
  auto* train_cmd = app.add_subcommand("train", "train a model from a JSON config");
  std::string train_config, train_data, train_out, train_resume;
  std::int64_t train_seed = -1;
  train_cmd->add_option("--config", train_config, "JSON run config")->required();
  train_cmd->add_option("--data", train_data, "dataset manifest CSV")->required();
  train_cmd->add_option("--out", train_out, "output directory")->required();
  train_cmd->add_option("--resume", train_resume, "checkpoint to resume from");
  train_cmd->add_option("--seed", train_seed, "override the config seed");

  // eval
  auto* eval_cmd = app.add_subcommand("eval", "score a split and report metrics");
  std::string eval_ckpt, eval_data, eval_split = "test", eval_out;
  std::string eval_policy = "fixed";
  double eval_threshold = 0.5;
  eval_cmd->add_option("--ckpt", eval_ckpt, "checkpoint file")->required();
  eval_cmd->add_option("--data", eval_data, "dataset manifest CSV")->required();
  eval_cmd->add_option("--split", eval_split, "train|valid|test")->required();
  eval_cmd->add_option("--out", eval_out, "output directory")->required();
  eval_cmd->add_option("--threshold-policy", eval_policy, "fixed|eer");
  eval_cmd->add_option("--threshold", eval_threshold, "fixed decision threshold");

  // gradcheck
  auto* grad_cmd =
      app.add_subcommand("gradcheck", "finite-difference audit of the backward pass");
  std::uint64_t grad_seed = 1;
  std::string grad_size = "small";
  double grad_h = 1e-5, grad_tol = 1e-4;
  bool grad_fault = false;
  grad_cmd->add_option("--seed", grad_seed, "model/sample seed");
  grad_cmd->add_option("--size", grad_size, "tiny|small");
  grad_cmd->add_option("--step", grad_h, "finite-difference step");
  grad_cmd->add_option("--tol", grad_tol, "max relative error");
  grad_cmd->add_flag("--inject-fault", grad_fault,
                     "corrupt the analytic gradient to prove the audit fails");

  // oracle
  auto* oracle_cmd =
      app.add_subcommand("oracle", "run the built-in reference-oracle suite");
  bool oracle_json = false;
  oracle_cmd->add_flag("--json", oracle_json, "machine-readable output");

  // color
  auto* color_cmd = app.add_subcommand("color", "convert an image between spaces");
  std::string color_from, color_to, color_in, color_out;
  color_cmd->add_option("--from", color_from, "input space")->required();
  color_cmd->add_option("--to", color_to, "output space")->required();
  color_cmd->add_option("input", color_in, "input image (png/ppm)")->required();
  color_cmd->add_option("output", color_out, "output image (png/ppm)")->required();

  // synth
  auto* synth_cmd = app.add_subcommand("synth", "generate the synthetic dataset");
  std::uint64_t synth_seed = 1;
  int synth_n = 200, synth_size = 32, synth_group = 2;
  double synth_delta = 0.08;
  std::string synth_outdir, synth_format = "png";
  synth_cmd->add_option("--seed", synth_seed, "generator seed");
  synth_cmd->add_option("--n", synth_n, "images per class");
  synth_cmd->add_option("--size", synth_size, "image side length");
  synth_cmd->add_option("--delta", synth_delta, "chroma mean separation");
  synth_cmd->add_option("--format", synth_format, "png|ppm");
  synth_cmd->add_option("--images-per-group", synth_group, "images per texture family");
  synth_cmd->add_option("outdir", synth_outdir, "output directory")->required();

  // split
  auto* split_cmd = app.add_subcommand("split", "reassign manifest splits by group");
  std::string split_ratio = "3:1:1", split_manifest, split_out;
  std::uint64_t split_seed = 1;
  split_cmd->add_option("--ratio", split_ratio, "train:valid:test");
  split_cmd->add_option("--seed", split_seed, "assignment seed");
  split_cmd->add_option("--out", split_out, "output manifest (default: in place)");
  split_cmd->add_option("manifest", split_manifest, "manifest CSV")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kOk : kConfigError;
  }

  try {
    if (app.got_subcommand(train_cmd))
      return cmd_train(train_config, train_data, train_out, train_resume, train_seed);
    if (app.got_subcommand(eval_cmd))
      return cmd_eval(eval_ckpt, eval_data, eval_split, eval_out, eval_policy,
                      eval_threshold);
    if (app.got_subcommand(grad_cmd))
      return cmd_gradcheck(grad_seed, grad_size, grad_h, grad_tol, grad_fault);
    if (app.got_subcommand(oracle_cmd)) return cmd_oracle(oracle_json);
    if (app.got_subcommand(color_cmd))
      return cmd_color(color_from, color_to, color_in, color_out);
    if (app.got_subcommand(synth_cmd))
      return cmd_synth(synth_seed, synth_n, synth_size, synth_outdir, synth_delta,
                       synth_format, synth_group);
    if (app.got_subcommand(split_cmd))
      return cmd_split(split_ratio, split_seed, split_manifest, split_out);
  } catch (const mcfbc::ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kConfigError;
  } catch (const mcfbc::InvalidColorSpace& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kConfigError;
  } catch (const mcfbc::NumericError& e) {
    std::cerr << "numeric failure: " << e.what() << "\n";
    return kNumericError;
  } catch (const mcfbc::SingularSystem& e) {
    std::cerr << "numeric failure: " << e.what() << "\n";
    return kNumericError;
  } catch (const mcfbc::Error& e) {
    std::cerr << "data error: " << e.what() << "\n";
    return kDataError;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kUnexpected;
  }
  return kUnexpected;
}
