#pragma once

// Reference implementations kept deliberately independent of the library's
// computation paths: brute-force minimizers and naive accumulations that
// the test suite (and `mcfbc oracle`) compare against the closed forms.

#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include "mcfbc/fbc.hpp"
#include "mcfbc/metrics.hpp"
#include "mcfbc/rng.hpp"

namespace mcfbc::oracles {

/// Minimizes a convex 1-D function by ternary search (accuracy limited to
/// about sqrt(machine eps) of the argument scale).
inline double ternary_min(const std::function<double(double)>& f, double lo,
                          double hi, int iters = 400) {
  for (int i = 0; i < iters; ++i) {
    const double m1 = lo + (hi - lo) / 3.0;
    const double m2 = hi - (hi - lo) / 3.0;
    if (f(m1) < f(m2))
      hi = m2;
    else
      lo = m1;
  }
  return (lo + hi) / 2.0;
}

/// Vertex of the parabola through three samples of f. Exact (to rounding)
/// whenever f is quadratic on the sampled interval.
inline double parabola_vertex(const std::function<double(double)>& f, double x1,
                              double x2, double x3) {
  const double f1 = f(x1), f2 = f(x2), f3 = f(x3);
  const double denom = (x1 - x2) * (x1 - x3) * (x2 - x3);
  const double a = (x3 * (f2 - f1) + x2 * (f1 - f3) + x1 * (f3 - f2)) / denom;
  const double b =
      (x3 * x3 * (f1 - f2) + x2 * x2 * (f3 - f1) + x1 * x1 * (f2 - f3)) / denom;
  return -b / (2.0 * a);
}

/// argmin_c (a - c)^2 + lambda*|c|, found numerically. Grid search locates
/// the winning region; since the objective is an exact parabola on each
/// side of zero, the minimizer is polished by reconstructing that parabola
/// from samples. Candidates are the two one-sided vertices and the kink at
/// zero; no proximal algebra is used.
inline double lasso_scalar_min(double a, double lambda) {
  auto objective = [a, lambda](double c) {
    return (a - c) * (a - c) + lambda * std::abs(c);
  };
  const double span = std::abs(a) + lambda + 1.0;

  double best_c = 0.0, best_f = objective(0.0);
  const int cells = 2000;
  for (int i = 0; i <= cells; ++i) {
    const double c = -span + 2.0 * span * i / cells;
    const double f = objective(c);
    if (f < best_f) {
      best_f = f;
      best_c = c;
    }
  }
  const double positive = parabola_vertex(objective, span / 4, span / 2, span);
  if (positive > 0.0 && objective(positive) <= best_f) {
    best_f = objective(positive);
    best_c = positive;
  }
  const double negative = parabola_vertex(objective, -span / 4, -span / 2, -span);
  if (negative < 0.0 && objective(negative) <= best_f) {
    best_f = objective(negative);
    best_c = negative;
  }
  if (objective(0.0) <= best_f) best_c = 0.0;
  return best_c;
}

/// argmin_c (target - c*scale)^2 by sampling, no algebra. The objective is
/// reconstructed in the scaled variable t = c*scale for conditioning, then
/// mapped back.
inline double least_squares_scalar(double target, double scale) {
  auto in_t = [target](double t) { return (target - t) * (target - t); };
  const double span = std::abs(target) + 1.0;
  const double t_star = parabola_vertex(in_t, -span, 0.0, span);
  return t_star / scale;
}

/// Elementwise double-loop accumulation of sum_v x_v y_v^T.
inline Matrix<double> bilinear_pool_naive(const LocationPairSet<double>& pairs) {
  Matrix<double> z(pairs.p, pairs.q);
  for (int i = 0; i < pairs.p; ++i)
    for (int j = 0; j < pairs.q; ++j) {
      double acc = 0.0;
      for (int v = 0; v < pairs.count; ++v)
        acc += pairs.xs[static_cast<std::size_t>(v) * pairs.p + i] *
               pairs.ys[static_cast<std::size_t>(v) * pairs.q + j];
      z(i, j) = acc;
    }
  return z;
}

/// Coordinatewise max by exhaustive scan, no index tracking shortcuts.
inline std::vector<double> max_scan_naive(const std::vector<std::vector<double>>& codes) {
  std::vector<double> out(codes.at(0).size());
  for (std::size_t l = 0; l < out.size(); ++l) {
    double best = codes[0][l];
    for (const auto& c : codes) best = std::max(best, c[l]);
    out[l] = best;
  }
  return out;
}

struct SuiteCase {
  std::string name;
  bool passed;
  double max_err;
  double tolerance;
  int trials;
};

/// The four-oracle suite: scalar LASSO brute force, the rank-1/k=1
/// transform bridge, bilinear-pool accumulation, and the EER sweep cases.
inline std::vector<SuiteCase> run_suite(std::uint64_t seed = 7) {
  std::vector<SuiteCase> cases;
  Rng rng(seed);

  {  // fbc_encode vs brute-force scalar LASSO
    double max_err = 0.0;
    const int trials = 1000;
    for (int t = 0; t < trials; ++t) {
      const double u = rng.uniform(-2.0, 2.0);
      const double v = rng.uniform(-2.0, 2.0);
      const double x = rng.uniform(-2.0, 2.0);
      const double y = rng.uniform(-2.0, 2.0);
      const double lambda = rng.uniform(0.0, 1.0);
      FbcParams<double> params(1, 1, 1, 1, lambda);
      params.u_tilde(0, 0) = u;
      params.v_tilde(0, 0) = v;
      const double impl = fbc_encode<double>({x}, {y}, params)[0];
      const double ref = lasso_scalar_min(u * x * v * y, lambda);
      max_err = std::max(max_err, std::abs(impl - ref));
    }
    cases.push_back({"scalar-lasso", max_err <= 1e-8, max_err, 1e-8, trials});
  }

  {  // derived-transform bridge: c = xy/(uv) at k = r = 1, lambda = 0
    double max_err = 0.0;
    const int trials = 100;
    for (int t = 0; t < trials; ++t) {
      auto nonzero = [&rng] {
        const double m = rng.uniform(0.1, 2.0);
        return rng.uniform() < 0.5 ? -m : m;
      };
      const double u = nonzero(), v = nonzero(), x = nonzero(), y = nonzero();
      RawDictionary<double> raw;
      raw.U.push_back(Matrix<double>(1, 1));
      raw.V.push_back(Matrix<double>(1, 1));
      raw.U[0](0, 0) = u;
      raw.V[0](0, 0) = v;
      auto [ut, vt] = derive_transforms(raw, 0.0);
      FbcParams<double> params(1, 1, 1, 1, 0.0);
      params.u_tilde = ut;
      params.v_tilde = vt;
      const double impl = fbc_encode<double>({x}, {y}, params)[0];
      const double closed = x * y / (u * v);
      const double searched = least_squares_scalar(x * y, u * v);
      max_err = std::max(max_err, std::abs(impl - closed));
      max_err = std::max(max_err, std::abs(impl - searched));
    }
    cases.push_back({"eq4-scalar-bridge", max_err <= 1e-10, max_err, 1e-10, trials});
  }

  {  // bilinear pooling vs naive accumulation
    double max_err = 0.0;
    const int trials = 100;
    for (int t = 0; t < trials; ++t) {
      LocationPairSet<double> pairs;
      pairs.p = 1 + static_cast<int>(rng.uniform_index(8));
      pairs.q = 1 + static_cast<int>(rng.uniform_index(8));
      pairs.count = 1 + static_cast<int>(rng.uniform_index(16));
      pairs.xs.resize(static_cast<std::size_t>(pairs.count) * pairs.p);
      pairs.ys.resize(static_cast<std::size_t>(pairs.count) * pairs.q);
      for (auto& e : pairs.xs) e = rng.uniform(-1.0, 1.0);
      for (auto& e : pairs.ys) e = rng.uniform(-1.0, 1.0);
      const Matrix<double> impl = bilinear_pool(pairs);
      const Matrix<double> ref = bilinear_pool_naive(pairs);
      for (std::size_t i = 0; i < impl.data.size(); ++i)
        max_err = std::max(max_err, std::abs(impl.data[i] - ref.data[i]));
    }
    cases.push_back({"bilinear-pool", max_err <= 1e-12, max_err, 1e-12, trials});
  }

  {  // EER sweep against hand-derived operating points
    double max_err = 0.0;
    const ScoreSet derived = {{"b1", PadLabel::bonafide, 0.9},
                              {"b2", PadLabel::bonafide, 0.8},
                              {"b3", PadLabel::bonafide, 0.3},
                              {"a1", PadLabel::attack, 0.7},
                              {"a2", PadLabel::attack, 0.2},
                              {"a3", PadLabel::attack, 0.1}};
    max_err = std::max(max_err, std::abs(eer(derived).eer - 1.0 / 3.0));

    const ScoreSet separated = {{"b", PadLabel::bonafide, 0.9},
                                {"b2", PadLabel::bonafide, 0.8},
                                {"a", PadLabel::attack, 0.2},
                                {"a2", PadLabel::attack, 0.1}};
    max_err = std::max(max_err, std::abs(eer(separated).eer - 0.0));

    const ScoreSet identical = {{"b", PadLabel::bonafide, 0.2},
                                {"b2", PadLabel::bonafide, 0.8},
                                {"a", PadLabel::attack, 0.2},
                                {"a2", PadLabel::attack, 0.8}};
    max_err = std::max(max_err, std::abs(eer(identical).eer - 0.5));
    cases.push_back({"eer-sweep", max_err <= 1e-9, max_err, 1e-9, 3});
  }

  return cases;
}

}  // namespace mcfbc::oracles
