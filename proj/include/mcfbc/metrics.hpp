#pragma once

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "mcfbc/errors.hpp"

namespace mcfbc {

enum class PadLabel { bonafide, attack };

inline std::string to_string(PadLabel l) {
  return l == PadLabel::bonafide ? "bonafide" : "attack";
}

inline PadLabel pad_label_from_string(const std::string& s) {
  if (s == "bonafide") return PadLabel::bonafide;
  if (s == "attack") return PadLabel::attack;
  throw ManifestError("unknown label '" + s + "'");
}

/// One scored presentation: score is the bona fide probability in [0, 1].
struct ScoreEntry {
  std::string id;
  PadLabel label;
  double score;
};

using ScoreSet = std::vector<ScoreEntry>;

struct Confusion {
  int bona_accept = 0;   // bonafide classified bonafide
  int bona_reject = 0;   // bonafide classified attack
  int attack_accept = 0; // attack classified bonafide
  int attack_reject = 0; // attack classified attack
};

/// Decision rule: score >= threshold means bonafide; exact equality counts
/// as bonafide. Threshold is clamped to [0, 1].
inline Confusion classify(const ScoreSet& scores, double threshold) {
  threshold = std::clamp(threshold, 0.0, 1.0);
  Confusion c;
  for (const auto& e : scores) {
    const bool accepted = e.score >= threshold;
    if (e.label == PadLabel::bonafide)
      accepted ? ++c.bona_accept : ++c.bona_reject;
    else
      accepted ? ++c.attack_accept : ++c.attack_reject;
  }
  return c;
}

namespace detail {
inline void require_both_classes(const Confusion& c, const char* who) {
  if (c.bona_accept + c.bona_reject == 0)
    throw MissingClass(std::string(who) + ": no bonafide samples");
  if (c.attack_accept + c.attack_reject == 0)
    throw MissingClass(std::string(who) + ": no attack samples");
}
}  // namespace detail

struct ErrorRates {
  double apcer;  // attacks accepted / attacks
  double bpcer;  // bonafide rejected / bonafide
  double acer;   // (apcer + bpcer) / 2
};

inline ErrorRates apcer_bpcer_acer(const ScoreSet& scores, double threshold) {
  const Confusion c = classify(scores, threshold);
  detail::require_both_classes(c, "apcer_bpcer_acer");
  const double apcer =
      static_cast<double>(c.attack_accept) / (c.attack_accept + c.attack_reject);
  const double bpcer =
      static_cast<double>(c.bona_reject) / (c.bona_accept + c.bona_reject);
  return {apcer, bpcer, (apcer + bpcer) / 2.0};
}

struct EerResult {
  double eer;
  double threshold;
};

/// Sweeps every distinct score as a threshold. APCER is non-increasing and
/// BPCER non-decreasing in the threshold; the equal-error point is taken
/// exactly when they meet at a swept threshold and by linear interpolation
/// between the two bracketing operating points otherwise (midpoint
/// threshold reported in that case). The value depends only on score
/// order, so it is invariant under monotone transforms.
inline EerResult eer(const ScoreSet& scores) {
  detail::require_both_classes(classify(scores, 0.0), "eer");

  std::set<double> distinct;
  for (const auto& e : scores) distinct.insert(e.score);
  std::vector<double> thresholds(distinct.begin(), distinct.end());
  // Reject-everything endpoint, reachable only inside the sweep.
  thresholds.push_back(std::nextafter(thresholds.back(),
                                      std::numeric_limits<double>::infinity()));

  double prev_t = 0.0, prev_apcer = 1.0, prev_bpcer = 0.0;
  bool have_prev = false;
  for (const double t : thresholds) {
    const Confusion c = classify(scores, std::min(t, 1.0));
    // classify clamps; evaluate the synthetic endpoint directly instead.
    double apcer, bpcer;
    if (t > 1.0) {
      apcer = 0.0;
      bpcer = 1.0;
    } else {
      apcer = static_cast<double>(c.attack_accept) /
              (c.attack_accept + c.attack_reject);
      bpcer = static_cast<double>(c.bona_reject) / (c.bona_accept + c.bona_reject);
    }
    if (apcer == bpcer) return {apcer, std::clamp(t, 0.0, 1.0)};
    if (apcer < bpcer) {
      if (!have_prev) return {bpcer, std::clamp(t, 0.0, 1.0)};
      // Linear interpolation between the two bracketing operating points.
      const double da = prev_apcer - prev_bpcer;
      const double db = apcer - bpcer;
      const double s = da / (da - db);
      const double value = prev_apcer + s * (apcer - prev_apcer);
      const double mid = std::clamp((prev_t + t) / 2.0, 0.0, 1.0);
      return {value, mid};
    }
    prev_t = t;
    prev_apcer = apcer;
    prev_bpcer = bpcer;
    have_prev = true;
  }
  // APCER stayed above BPCER through the reject-all endpoint; cross there.
  const double da = prev_apcer - prev_bpcer;
  const double s = da / (da - (0.0 - 1.0));
  return {prev_apcer + s * (0.0 - prev_apcer), 1.0};
}

/// Mean of per-frame scores.
inline double aggregate_video(const std::vector<double>& frame_scores) {
  if (frame_scores.empty()) throw ShapeMismatch("aggregate_video: no frames");
  double acc = 0.0;
  for (const double s : frame_scores) acc += s;
  return acc / static_cast<double>(frame_scores.size());
}

enum class ScoreFusion { mean, max };

/// Score-level fusion of two runs over the same samples (matched by id).
inline ScoreSet fuse_scores(const ScoreSet& a, const ScoreSet& b, ScoreFusion mode) {
  if (a.size() != b.size()) throw ShapeMismatch("fuse_scores: size mismatch");
  ScoreSet out;
  out.reserve(a.size());
  for (std::size_t i = 0; i < a.size(); ++i) {
    if (a[i].id != b[i].id || a[i].label != b[i].label)
      throw ShapeMismatch("fuse_scores: sample mismatch at row " + std::to_string(i));
    const double s = mode == ScoreFusion::mean ? (a[i].score + b[i].score) / 2.0
                                               : std::max(a[i].score, b[i].score);
    out.push_back({a[i].id, a[i].label, s});
  }
  return out;
}

enum class ThresholdProvenance { fixed, eer_derived };

struct MetricsReport {
  double accuracy;
  double apcer;
  double bpcer;
  double acer;
  double eer;
  double threshold;
  ThresholdProvenance provenance;
};

/// Full report at a fixed threshold (default 0.5) or at the EER-derived one.
inline MetricsReport make_report(const ScoreSet& scores, double threshold = 0.5,
                                 ThresholdProvenance provenance =
                                     ThresholdProvenance::fixed) {
  const EerResult e = eer(scores);
  if (provenance == ThresholdProvenance::eer_derived) threshold = e.threshold;
  const ErrorRates rates = apcer_bpcer_acer(scores, threshold);
  const Confusion c = classify(scores, threshold);
  const int total = c.bona_accept + c.bona_reject + c.attack_accept + c.attack_reject;
  const double accuracy =
      static_cast<double>(c.bona_accept + c.attack_reject) / total;
  return {accuracy, rates.apcer, rates.bpcer, rates.acer, e.eer, threshold,
          provenance};
}

inline nlohmann::json report_to_json(const MetricsReport& r) {
  return {{"accuracy", r.accuracy},
          {"apcer", r.apcer},
          {"bpcer", r.bpcer},
          {"acer", r.acer},
          {"eer", r.eer},
          {"threshold", r.threshold},
          {"threshold_provenance",
           r.provenance == ThresholdProvenance::fixed ? "fixed" : "eer-derived"}};
}

/// Score CSV: header `id,label,score`, label in {bonafide, attack}.
inline void write_scores_csv(const std::filesystem::path& path, const ScoreSet& scores) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path.string());
  out << "id,label,score\n";
  out.precision(17);
  for (const auto& e : scores)
    out << e.id << "," << to_string(e.label) << "," << e.score << "\n";
  if (!out) throw IoError("failed to write " + path.string());
}

inline ScoreSet read_scores_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path.string());
  std::string line;
  if (!std::getline(in, line)) throw IoError(path.string() + ": empty score file");
  if (line != "id,label,score")
    throw IoError(path.string() + ": expected header 'id,label,score'");
  ScoreSet out;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::stringstream ss(line);
    std::string id, label, score;
    if (!std::getline(ss, id, ',') || !std::getline(ss, label, ',') ||
        !std::getline(ss, score))
      throw IoError(path.string() + ": malformed row '" + line + "'");
    double value;
    try {
      value = std::stod(score);
    } catch (const std::exception&) {
      throw IoError(path.string() + ": bad score '" + score + "'");
    }
    if (!std::isfinite(value) || value < 0.0 || value > 1.0)
      throw IoError(path.string() + ": score out of [0,1]: '" + score + "'");
    out.push_back({id, pad_label_from_string(label), value});
  }
  return out;
}

}  // namespace mcfbc
