#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <numeric>
#include <optional>
#include <string>
#include <type_traits>
#include <vector>

#include <nlohmann/json.hpp>

#include "mcfbc/checkpoint.hpp"
#include "mcfbc/data.hpp"
#include "mcfbc/errors.hpp"
#include "mcfbc/metrics.hpp"
#include "mcfbc/model.hpp"
#include "mcfbc/parallel.hpp"

namespace mcfbc {

struct TrainConfig {
  double lr0 = 0.01;
  double decay_factor = 10.0;
  int decay_epochs = 40;
  double lr_floor = 1e-4;
  double weight_decay = 5e-4;
  double momentum = 0.9;
  int batch_size = 16;
  int epochs = 100;
  std::uint64_t seed = 1;
  FocalParams focal;
  std::string selection = "best";  // best | last
  int patience = 0;                // early stop on valid ACER; 0 = off
  ModelConfig model;

  void validate() const {
    if (!(lr0 >= lr_floor) || !(lr_floor > 0))
      throw ConfigError("train: need lr0 >= lr_floor > 0");
    if (decay_factor <= 1.0) throw ConfigError("train: decay_factor must be > 1");
    if (decay_epochs < 1) throw ConfigError("train: decay_epochs must be >= 1");
    if (batch_size < 1) throw ConfigError("train: batch_size must be >= 1");
    if (epochs < 1) throw ConfigError("train: epochs must be >= 1");
    if (weight_decay < 0) throw ConfigError("train: weight_decay must be >= 0");
    if (momentum < 0 || momentum >= 1)
      throw ConfigError("train: momentum must be in [0, 1)");
    if (selection != "best" && selection != "last")
      throw ConfigError("train: selection must be 'best' or 'last'");
    if (patience < 0) throw ConfigError("train: patience must be >= 0");
    focal.validate();
    model.validate();
  }
};

/// Step schedule: lr0 / decay_factor^floor(epoch / decay_epochs), clamped
/// at lr_floor.
inline double lr_schedule(const TrainConfig& cfg, int epoch) {
  if (epoch < 0) throw ConfigError("lr_schedule: epoch must be >= 0");
  const double lr = cfg.lr0 / std::pow(cfg.decay_factor,
                                       static_cast<double>(epoch / cfg.decay_epochs));
  return std::max(lr, cfg.lr_floor);
}

/// SGD with momentum; weight decay skips bias tensors:
///   v <- momentum*v + g + wd*w;  w <- w - lr*v
template <class T>
void sgd_step(std::vector<ParamRef<T>>& params,
              const typename Model<T>::Grads& grads,
              std::vector<std::vector<T>>& velocity, double lr, double momentum,
              double weight_decay) {
  if (velocity.empty()) {
    velocity.reserve(params.size());
    for (const auto& p : params) velocity.emplace_back(p.size, T(0));
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    ParamRef<T>& p = params[i];
    const std::vector<T>& g = grads.tensors[i];
    std::vector<T>& v = velocity[i];
    const T wd = p.decay ? static_cast<T>(weight_decay) : T(0);
    for (std::size_t j = 0; j < p.size; ++j) {
      const T grad = g[j];
      if (!std::isfinite(static_cast<double>(grad)))
        throw NumericError("non-finite gradient in " + p.name + "[" +
                           std::to_string(j) + "]");
      v[j] = static_cast<T>(momentum) * v[j] + grad + wd * p.data[j];
      p.data[j] -= static_cast<T>(lr) * v[j];
    }
  }
}

struct EpochLog {
  int epoch;
  double lr;
  double loss;
  double train_acc;
  std::optional<double> valid_acer;
  int pt_clamped;
};

inline nlohmann::json epoch_log_to_json(const EpochLog& e) {
  nlohmann::json j = {{"epoch", e.epoch},
                      {"lr", e.lr},
                      {"loss", e.loss},
                      {"train_acc", e.train_acc},
                      {"pt_clamped", e.pt_clamped}};
  if (e.valid_acer)
    j["valid_acer"] = *e.valid_acer;
  else
    j["valid_acer"] = nullptr;
  return j;
}

/// Scores a sample list (bona fide probability per sample). Forward passes
/// may run in parallel; results land in preassigned slots.
template <class T>
ScoreSet score_samples(const Model<T>& model, const std::vector<Sample<T>>& samples) {
  ScoreSet out(samples.size());
  parallel_for(static_cast<int>(samples.size()), [&](int i) {
    const auto probs = model.forward(samples[i].rgb, nullptr);
    out[i] = {samples[i].id, samples[i].label,
              static_cast<double>(Model<T>::score(probs))};
  });
  return out;
}

template <class T>
struct TrainResult {
  Model<T> model;                       // serving weights (selected)
  Model<T> last_model;                  // last-epoch weights, for resume
  std::optional<Model<T>> best_model;   // best-ACER weights when tracked
  std::vector<std::vector<T>> velocity;
  std::vector<EpochLog> log;
  int epochs_run = 0;
  int best_epoch = -1;
  double best_valid_acer = std::numeric_limits<double>::infinity();
  bool early_stopped = false;
};

// -- TrainConfig <-> JSON ----------------------------------------------------

namespace detail {

inline void require_keys(const nlohmann::json& j, const char* where,
                         std::initializer_list<const char*> allowed) {
  for (auto it = j.begin(); it != j.end(); ++it) {
    bool ok = false;
    for (const char* a : allowed)
      if (it.key() == a) {
        ok = true;
        break;
      }
    if (!ok)
      throw ConfigError(std::string(where) + ": unknown key '" + it.key() + "'");
  }
}

}  // namespace detail

inline nlohmann::json model_config_to_json(const ModelConfig& m) {
  return {{"color_spaces",
           nlohmann::json::array({to_string(m.space_a), to_string(m.space_b)})},
          {"fusion", to_string(m.fusion)},
          {"k", m.k},
          {"r", m.r},
          {"lambda", m.lambda},
          {"normalize", m.normalize},
          {"shared_streams", m.shared_streams},
          {"backbone",
           {{"blocks", m.backbone.blocks},
            {"channels", m.backbone.channels},
            {"input_size", m.backbone.input_size}}}};
}

inline ModelConfig model_config_from_json(const nlohmann::json& j) {
  detail::require_keys(j, "model",
                       {"color_spaces", "fusion", "k", "r", "lambda", "normalize",
                        "shared_streams", "backbone"});
  ModelConfig m;
  if (j.contains("color_spaces")) {
    const auto& cs = j.at("color_spaces");
    if (!cs.is_array() || cs.size() != 2)
      throw ConfigError("model.color_spaces must be a pair");
    m.space_a = color_space_from_string(cs[0].get<std::string>());
    m.space_b = color_space_from_string(cs[1].get<std::string>());
  }
  if (j.contains("fusion")) m.fusion = fusion_from_string(j.at("fusion"));
  m.k = j.value("k", m.k);
  m.r = j.value("r", m.r);
  m.lambda = j.value("lambda", m.lambda);
  m.normalize = j.value("normalize", m.normalize);
  m.shared_streams = j.value("shared_streams", m.shared_streams);
  if (j.contains("backbone")) {
    const auto& b = j.at("backbone");
    detail::require_keys(b, "model.backbone", {"blocks", "channels", "input_size"});
    m.backbone.blocks = b.value("blocks", m.backbone.blocks);
    m.backbone.channels = b.value("channels", m.backbone.channels);
    m.backbone.input_size = b.value("input_size", m.backbone.input_size);
  }
  return m;
}

inline nlohmann::json train_config_to_json(const TrainConfig& c) {
  return {{"lr0", c.lr0},
          {"decay_factor", c.decay_factor},
          {"decay_epochs", c.decay_epochs},
          {"lr_floor", c.lr_floor},
          {"weight_decay", c.weight_decay},
          {"momentum", c.momentum},
          {"batch_size", c.batch_size},
          {"epochs", c.epochs},
          {"seed", c.seed},
          {"focal", {{"alpha", c.focal.alpha}, {"gamma", c.focal.gamma}}},
          {"selection", c.selection},
          {"patience", c.patience},
          {"model", model_config_to_json(c.model)}};
}

inline TrainConfig train_config_from_json(const nlohmann::json& j) {
  detail::require_keys(j, "config",
                       {"lr0", "decay_factor", "decay_epochs", "lr_floor",
                        "weight_decay", "momentum", "batch_size", "epochs", "seed",
                        "focal", "selection", "patience", "model"});
  TrainConfig c;
  c.lr0 = j.value("lr0", c.lr0);
  c.decay_factor = j.value("decay_factor", c.decay_factor);
  c.decay_epochs = j.value("decay_epochs", c.decay_epochs);
  c.lr_floor = j.value("lr_floor", c.lr_floor);
  c.weight_decay = j.value("weight_decay", c.weight_decay);
  c.momentum = j.value("momentum", c.momentum);
  c.batch_size = j.value("batch_size", c.batch_size);
  c.epochs = j.value("epochs", c.epochs);
  c.seed = j.value("seed", c.seed);
  if (j.contains("focal")) {
    detail::require_keys(j.at("focal"), "focal", {"alpha", "gamma"});
    c.focal.alpha = j.at("focal").value("alpha", c.focal.alpha);
    c.focal.gamma = j.at("focal").value("gamma", c.focal.gamma);
  }
  c.selection = j.value("selection", c.selection);
  c.patience = j.value("patience", c.patience);
  if (j.contains("model")) c.model = model_config_from_json(j.at("model"));
  c.validate();
  return c;
}

// -- checkpoint bridge -------------------------------------------------------

/// Serving weights go under "model.", resume state under "state.".
template <class T>
Checkpoint<T> make_checkpoint(TrainResult<T>& result, const TrainConfig& cfg) {
  Checkpoint<T> ckpt;
  ckpt.epoch = result.epochs_run;
  ckpt.config = train_config_to_json(cfg);
  ckpt.rng = {{"scheme", "per-epoch-derived"}, {"seed", cfg.seed}};
  ckpt.extra = {{"best_epoch", result.best_epoch},
                {"best_valid_acer", result.best_valid_acer},
                {"early_stopped", result.early_stopped}};

  for (const auto& p : result.model.params())
    ckpt.add("model." + p.name, p.shape, p.data, p.size);
  auto last_refs = result.last_model.params();
  for (std::size_t i = 0; i < last_refs.size(); ++i) {
    const auto& p = last_refs[i];
    ckpt.add("state.last." + p.name, p.shape, p.data, p.size);
    if (i < result.velocity.size())
      ckpt.add("state.velocity." + p.name, p.shape, result.velocity[i].data(),
               result.velocity[i].size());
  }
  if (result.best_model)
    for (const auto& p : result.best_model->params())
      ckpt.add("state.best." + p.name, p.shape, p.data, p.size);
  return ckpt;
}

/// Rebuilds a model from the "<prefix><param>" tensors of a checkpoint.
template <class T>
Model<T> model_from_checkpoint(Checkpoint<T>& ckpt,
                               const std::string& prefix = "model.") {
  const TrainConfig cfg = train_config_from_json(ckpt.config);
  Model<T> m = Model<T>::init(cfg.model, cfg.seed);
  for (auto& p : m.params()) {
    const auto* t = ckpt.find(prefix + p.name);
    if (!t) throw IoError("checkpoint missing tensor " + prefix + p.name);
    if (t->data.size() != p.size)
      throw IoError("checkpoint tensor " + p.name + " has wrong size");
    std::copy(t->data.begin(), t->data.end(), p.data);
  }
  return m;
}

// -- training loop -----------------------------------------------------------

template <class T>
TrainResult<T> train(const TrainConfig& cfg, const DatasetManifest& manifest,
                     const std::filesystem::path* resume_from = nullptr,
                     const std::function<void(const EpochLog&)>& on_epoch = {}) {
  cfg.validate();
  std::vector<Sample<T>> train_set = load_split<T>(manifest, Split::train);
  std::vector<Sample<T>> valid_set = load_split<T>(manifest, Split::valid);
  if (train_set.empty()) throw ManifestError("train: empty training split");
  {
    bool bona = false, attack = false;
    for (const auto& s : train_set)
      (s.label == PadLabel::bonafide ? bona : attack) = true;
    if (!bona || !attack)
      throw ManifestError("train: training split must contain both classes");
  }
  const bool have_valid = [&valid_set] {
    bool bona = false, attack = false;
    for (const auto& s : valid_set)
      (s.label == PadLabel::bonafide ? bona : attack) = true;
    return bona && attack;
  }();

  TrainResult<T> result;
  int start_epoch = 0;

  if (resume_from) {
    Checkpoint<T> ckpt = Checkpoint<T>::load(*resume_from);
    if (ckpt.config.at("model") != model_config_to_json(cfg.model))
      throw ConfigError("resume: model config does not match checkpoint");
    result.model = model_from_checkpoint(ckpt, "state.last.");
    start_epoch = ckpt.epoch;
    result.best_epoch = ckpt.extra.value("best_epoch", -1);
    result.best_valid_acer = ckpt.extra.value(
        "best_valid_acer", std::numeric_limits<double>::infinity());
    for (const auto& p : result.model.params()) {
      const auto* t = ckpt.find("state.velocity." + p.name);
      if (!t) throw IoError("resume: checkpoint has no velocity for " + p.name);
      result.velocity.push_back(t->data);
    }
    if (ckpt.find("state.best.head.bias"))
      result.best_model = model_from_checkpoint(ckpt, "state.best.");
  } else {
    result.model = Model<T>::init(cfg.model, cfg.seed);
  }

  Model<T>& model = result.model;
  std::vector<std::vector<T>>& velocity = result.velocity;
  const int n = static_cast<int>(train_set.size());

  struct SampleOut {
    typename Model<T>::Grads grads;
    double loss = 0;
    bool correct = false;
    bool clamped = false;
  };

  for (int epoch = start_epoch; epoch < cfg.epochs; ++epoch) {
    const double lr = lr_schedule(cfg, epoch);
    std::vector<int> order(static_cast<std::size_t>(n));
    std::iota(order.begin(), order.end(), 0);
    Rng shuffle_rng(derive_seed(cfg.seed, 0x10000 + static_cast<std::uint64_t>(epoch)));
    shuffle_rng.shuffle(order);

    double loss_sum = 0.0;
    int correct = 0, clamped = 0;
    for (int start = 0; start < n; start += cfg.batch_size) {
      const int batch_n = std::min(cfg.batch_size, n - start);
      std::vector<SampleOut> slots(static_cast<std::size_t>(batch_n));
      parallel_for(batch_n, [&](int j) {
        const Sample<T>& s = train_set[order[start + j]];
        const int label =
            s.label == PadLabel::bonafide ? kBonafideClass : kAttackClass;
        ModelCache<T> cache;
        const auto probs = model.forward(s.rgb, &cache);
        const auto fl = focal_loss(probs, label, cfg.focal);
        const auto dlogits = loss_backward(probs, label, cfg.focal);
        SampleOut out;
        out.grads = model.backward(dlogits, cache);
        out.loss = static_cast<double>(fl.loss);
        out.clamped = fl.clamped;
        const int pred = probs[0] >= probs[1] ? 0 : 1;
        out.correct = pred == label;
        slots[static_cast<std::size_t>(j)] = std::move(out);
      });

      // Deterministic reduction in slot order, mean over the batch.
      typename Model<T>::Grads grads = model.zero_grads();
      const T inv_batch = T(1) / static_cast<T>(batch_n);
      for (const auto& slot : slots) {
        grads.accumulate(slot.grads, inv_batch);
        loss_sum += slot.loss;
        correct += slot.correct ? 1 : 0;
        clamped += slot.clamped ? 1 : 0;
      }
      auto refs = model.params();
      sgd_step(refs, grads, velocity, lr, cfg.momentum, cfg.weight_decay);
    }

    EpochLog entry;
    entry.epoch = epoch;
    entry.lr = lr;
    entry.loss = loss_sum / n;
    entry.train_acc = static_cast<double>(correct) / n;
    entry.pt_clamped = clamped;
    if (have_valid) {
      const ScoreSet scores = score_samples(model, valid_set);
      entry.valid_acer = apcer_bpcer_acer(scores, 0.5).acer;
      if (*entry.valid_acer < result.best_valid_acer) {
        result.best_valid_acer = *entry.valid_acer;
        result.best_epoch = epoch;
        result.best_model = model;
      }
    }
    result.log.push_back(entry);
    result.epochs_run = epoch + 1;
    if (on_epoch) on_epoch(entry);

    if (cfg.patience > 0 && have_valid && result.best_epoch >= 0 &&
        epoch - result.best_epoch >= cfg.patience) {
      result.early_stopped = true;
      break;
    }
  }

  result.last_model = result.model;
  if (cfg.selection == "best" && result.best_model)
    result.model = *result.best_model;
  return result;
}

// -- gradient audit ----------------------------------------------------------

struct GradCheckReport {
  double max_rel_err = 0.0;
  std::string worst_param;
  std::size_t worst_index = 0;
  int checked = 0;
  int skipped_kinks = 0;    // FD secant crossed a kink (activity changed)
  int near_kink_atoms = 0;  // atoms with ||c'| - lambda/2| < 10h at base
  double h = 0.0;
  double tol = 0.0;
  bool passed = false;
};

inline nlohmann::json grad_report_to_json(const GradCheckReport& r) {
  return {{"max_rel_err", r.max_rel_err}, {"worst_param", r.worst_param},
          {"worst_index", r.worst_index}, {"checked", r.checked},
          {"skipped_kinks", r.skipped_kinks},
          {"near_kink_atoms", r.near_kink_atoms}, {"h", r.h},
          {"tol", r.tol}, {"passed", r.passed}};
}

namespace detail {

inline void hash_bytes(std::uint64_t& h, const void* data, std::size_t size) {
  const unsigned char* bytes = static_cast<const unsigned char*>(data);
  for (std::size_t i = 0; i < size; ++i) {
    h ^= bytes[i];
    h *= 0x100000001b3ULL;
  }
}

/// Fingerprint of every non-smooth decision taken in one forward pass:
/// ReLU signs, pool argmaxes, soft-threshold activity, max-aggregation
/// argmaxes. Two evaluations with equal signatures lie on the same smooth
/// piece of the loss.
template <class T>
std::uint64_t activity_signature(const ModelCache<T>& c, const ModelConfig& cfg) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (const BackboneCache<T>* bb : {&c.bb_a, &c.bb_b})
    for (const auto& blk : bb->blocks) {
      unsigned char acc = 0;
      int bits = 0;
      for (const T v : blk.pre_act.data) {
        acc = static_cast<unsigned char>((acc << 1) | (v > T(0) ? 1 : 0));
        if (++bits == 8) {
          hash_bytes(h, &acc, 1);
          acc = 0;
          bits = 0;
        }
      }
      if (bits) hash_bytes(h, &acc, 1);
      hash_bytes(h, blk.pool_argmax.data(),
                 blk.pool_argmax.size() * sizeof(int));
    }
  if (cfg.fusion == Fusion::fbc) {
    if (cfg.lambda > 0) {
      const T half = static_cast<T>(cfg.lambda / 2);
      unsigned char acc = 0;
      int bits = 0;
      for (const T v : c.fbc.pre) {
        acc = static_cast<unsigned char>((acc << 1) | (std::abs(v) > half ? 1 : 0));
        if (++bits == 8) {
          hash_bytes(h, &acc, 1);
          acc = 0;
          bits = 0;
        }
      }
      if (bits) hash_bytes(h, &acc, 1);
    }
    hash_bytes(h, c.fbc.rep.argmax.data(), c.fbc.rep.argmax.size() * sizeof(int));
  }
  return h;
}

}  // namespace detail

/// Central finite differences on every parameter coordinate of the full
/// pipeline, 64-bit only. Coordinates whose +/-h evaluations land on a
/// different smooth piece than the base point (ReLU sign, pool or max
/// argmax, soft-threshold activity) are skipped and counted.
/// debug_grad_scale != 1 deliberately corrupts the analytic side so fault
/// injection can prove the audit has teeth.
template <class T>
GradCheckReport grad_check(const Model<T>& model, const Sample<T>& sample,
                           double h, double tol, const FocalParams& fp = {},
                           double debug_grad_scale = 1.0) {
  static_assert(std::is_same_v<T, double>,
                "finite differences are unreliable below 64-bit");
  const int label =
      sample.label == PadLabel::bonafide ? kBonafideClass : kAttackClass;

  ModelCache<T> base_cache;
  const auto base_probs = model.forward(sample.rgb, &base_cache);
  const auto dlogits = loss_backward(base_probs, label, fp);
  auto analytic = model.backward(dlogits, base_cache);
  if (debug_grad_scale != 1.0)
    for (auto& tensor : analytic.tensors)
      for (auto& v : tensor) v *= debug_grad_scale;
  const std::uint64_t base_sig =
      detail::activity_signature(base_cache, model.config);

  GradCheckReport report;
  report.h = h;
  report.tol = tol;
  if (model.config.fusion == Fusion::fbc && model.config.lambda > 0) {
    const T half = static_cast<T>(model.config.lambda / 2);
    for (const T v : base_cache.fbc.pre)
      if (std::abs(std::abs(v) - half) < 10 * h) ++report.near_kink_atoms;
  }

  const std::vector<ParamLayout> shapes = model.layout();
  std::vector<std::size_t> offsets(shapes.size() + 1, 0);
  for (std::size_t i = 0; i < shapes.size(); ++i)
    offsets[i + 1] = offsets[i] + shapes[i].size;
  const std::size_t total = offsets.back();

  struct CoordResult {
    double rel = -1.0;  // -1: skipped
  };
  std::vector<CoordResult> results(total);

  const int workers = std::min(thread_budget(), 8);
  parallel_for(workers, [&](int w) {
    Model<T> local = model;  // each worker perturbs its own copy
    auto refs = local.params();
    for (std::size_t coord = static_cast<std::size_t>(w); coord < total;
         coord += static_cast<std::size_t>(workers)) {
      std::size_t pi = 0;
      while (coord >= offsets[pi + 1]) ++pi;
      const std::size_t j = coord - offsets[pi];
      T* slot = refs[pi].data + j;
      const T saved = *slot;

      ModelCache<T> cache_p, cache_m;
      *slot = saved + static_cast<T>(h);
      const auto probs_p = local.forward(sample.rgb, &cache_p);
      const double loss_p =
          static_cast<double>(focal_loss(probs_p, label, fp).loss);
      const std::uint64_t sig_p =
          detail::activity_signature(cache_p, local.config);

      *slot = saved - static_cast<T>(h);
      const auto probs_m = local.forward(sample.rgb, &cache_m);
      const double loss_m =
          static_cast<double>(focal_loss(probs_m, label, fp).loss);
      const std::uint64_t sig_m =
          detail::activity_signature(cache_m, local.config);
      *slot = saved;

      if (sig_p != base_sig || sig_m != base_sig) continue;  // rel stays -1
      const double numeric = (loss_p - loss_m) / (2.0 * h);
      const double a = analytic.tensors[pi][j];
      const double denom = std::max({std::abs(a), std::abs(numeric), 1e-6});
      results[coord].rel = std::abs(a - numeric) / denom;
    }
  });

  for (std::size_t coord = 0; coord < total; ++coord) {
    if (results[coord].rel < 0) {
      ++report.skipped_kinks;
      continue;
    }
    ++report.checked;
    if (results[coord].rel > report.max_rel_err) {
      report.max_rel_err = results[coord].rel;
      std::size_t pi = 0;
      while (coord >= offsets[pi + 1]) ++pi;
      report.worst_param = shapes[pi].name;
      report.worst_index = coord - offsets[pi];
    }
  }
  report.passed = report.max_rel_err <= tol;
  return report;
}

}  // namespace mcfbc
