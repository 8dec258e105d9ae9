#pragma once

#include <array>
#include <cmath>
#include <cstddef>
#include <vector>

#include "mcfbc/errors.hpp"
#include "mcfbc/linalg.hpp"
#include "mcfbc/rng.hpp"

namespace mcfbc {

/// Fully connected binary head: logits = W^T z + b.
template <class T>
struct ClassifierHead {
  Matrix<T> weights;        // dim x 2
  std::array<T, 2> bias{};

  ClassifierHead() = default;
  explicit ClassifierHead(int dim) : weights(dim, 2) {}

  void init(Rng& rng) {
    const double stddev = std::sqrt(2.0 / weights.rows);
    for (auto& w : weights.data) w = static_cast<T>(rng.normal(0.0, stddev));
    bias = {T(0), T(0)};
  }

  std::array<T, 2> logits(const std::vector<T>& z) const {
    if (static_cast<int>(z.size()) != weights.rows)
      throw ShapeMismatch("classifier head: input dim");
    std::array<T, 2> out{bias[0], bias[1]};
    for (int i = 0; i < weights.rows; ++i) {
      out[0] += weights(i, 0) * z[i];
      out[1] += weights(i, 1) * z[i];
    }
    return out;
  }
};

struct FocalParams {
  double alpha = 1.0;
  double gamma = 1.0;

  void validate() const {
    if (!(alpha > 0)) throw ConfigError("focal loss: alpha must be > 0");
    if (gamma < 0) throw ConfigError("focal loss: gamma must be >= 0");
  }
};

/// Numerically stable two-class softmax (max logit subtracted).
template <class T>
std::array<T, 2> softmax2(const std::array<T, 2>& logits) {
  const T m = std::max(logits[0], logits[1]);
  const T e0 = std::exp(logits[0] - m);
  const T e1 = std::exp(logits[1] - m);
  const T sum = e0 + e1;
  return {e0 / sum, e1 / sum};
}

template <class T>
std::array<T, 2> softmax_logits(const std::vector<T>& z, const ClassifierHead<T>& head) {
  return softmax2(head.logits(z));
}

inline constexpr double kProbFloor = 1e-12;

template <class T>
struct FocalLossResult {
  T loss;
  bool clamped;  // p_t hit the 1e-12 floor
};

/// FL = -alpha * (1 - p_t)^gamma * log(p_t). gamma = 0 reduces to plain
/// cross-entropy; alpha is applied symmetrically to both classes.
template <class T>
FocalLossResult<T> focal_loss(const std::array<T, 2>& probs, int label,
                              const FocalParams& fp) {
  if (label != 0 && label != 1) throw ShapeMismatch("focal_loss: label must be 0/1");
  T pt = probs[label];
  bool clamped = false;
  if (pt < static_cast<T>(kProbFloor)) {
    pt = static_cast<T>(kProbFloor);
    clamped = true;
  }
  const T u = T(1) - pt;
  T weight;
  if (fp.gamma == 0.0)
    weight = T(1);
  else if (fp.gamma == 1.0)
    weight = u;
  else
    weight = static_cast<T>(std::pow(static_cast<double>(u), fp.gamma));
  return {static_cast<T>(-fp.alpha * static_cast<double>(weight) *
                         std::log(static_cast<double>(pt))),
          clamped};
}

/// Analytic gradient of focal_loss(softmax(logits)) w.r.t. the logits.
template <class T>
std::array<T, 2> loss_backward(const std::array<T, 2>& probs, int label,
                               const FocalParams& fp) {
  if (label != 0 && label != 1) throw ShapeMismatch("loss_backward: label must be 0/1");
  const double pt = std::max(static_cast<double>(probs[label]), kProbFloor);
  const double u = 1.0 - pt;

  // dFL/dp_t, then chain through dp_t/ds_j = p_t (delta_jt - p_j).
  double dloss_dpt;
  if (fp.gamma == 0.0) {
    dloss_dpt = -fp.alpha / pt;
  } else if (u <= 0.0) {
    dloss_dpt = 0.0;  // loss is flat at p_t = 1 for gamma > 0
  } else {
    dloss_dpt = fp.alpha * (fp.gamma * std::pow(u, fp.gamma - 1.0) * std::log(pt) -
                            std::pow(u, fp.gamma) / pt);
  }

  std::array<T, 2> grad{};
  for (int j = 0; j < 2; ++j) {
    const double delta = j == label ? 1.0 : 0.0;
    grad[j] = static_cast<T>(dloss_dpt * pt * (delta - static_cast<double>(probs[j])));
  }
  return grad;
}

}  // namespace mcfbc
