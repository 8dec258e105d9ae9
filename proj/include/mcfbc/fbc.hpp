#pragma once

#include <cmath>
#include <cstddef>
#include <limits>
#include <utility>
#include <vector>

#include "mcfbc/errors.hpp"
#include "mcfbc/features.hpp"
#include "mcfbc/linalg.hpp"
#include "mcfbc/rng.hpp"

namespace mcfbc {

/// The fixed binary k x (r*k) block-sum operator. Row l has ones exactly
/// at columns (l-1)r+1 .. lr, so applying it sums each consecutive
/// r-block; it is never materialized as a dense matrix.
struct Projection {
  int k = 0;
  int r = 0;

  int in_dim() const { return k * r; }

  /// out[l] = sum of in[l*r .. l*r+r-1]
  template <class T>
  void apply(const T* in, T* out) const {
    for (int l = 0; l < k; ++l) {
      T acc = T(0);
      const T* block = in + static_cast<std::size_t>(l) * r;
      for (int j = 0; j < r; ++j) acc += block[j];
      out[l] = acc;
    }
  }

  /// Adjoint: replicates each of the k values across its r-block.
  template <class T>
  void apply_transpose(const T* in, T* out) const {
    for (int l = 0; l < k; ++l) {
      T* block = out + static_cast<std::size_t>(l) * r;
      for (int j = 0; j < r; ++j) block[j] = in[l];
    }
  }
};

inline Projection build_projection(int k, int r) {
  if (k < 1 || r < 1) throw ShapeMismatch("build_projection: k, r must be >= 1");
  return Projection{k, r};
}

/// sign(v) * max(|v| - t, 0), the proximal operator of t*|.|.
template <class T>
T soft_threshold(T v, T t) {
  if (v > t) return v - t;
  if (v < -t) return v + t;
  return T(0);
}

/// Learnable coding parameters. u_tilde is p x (r*k), v_tilde is q x (r*k).
template <class T>
struct FbcParams {
  int p = 0;
  int q = 0;
  int k = 0;
  int r = 1;
  T lambda = T(0.001);
  Matrix<T> u_tilde;
  Matrix<T> v_tilde;

  FbcParams() = default;
  FbcParams(int p_, int q_, int k_, int r_, T lambda_)
      : p(p_), q(q_), k(k_), r(r_), lambda(lambda_),
        u_tilde(p_, r_ * k_), v_tilde(q_, r_ * k_) {}

  Projection projection() const { return Projection{k, r}; }

  void init(Rng& rng) {
    const double std_u = std::sqrt(2.0 / p);
    const double std_v = std::sqrt(2.0 / q);
    for (auto& w : u_tilde.data) w = static_cast<T>(rng.normal(0.0, std_u));
    for (auto& w : v_tilde.data) w = static_cast<T>(rng.normal(0.0, std_v));
  }
};

/// Z = sum over locations of x_v y_v^T.
template <class T>
Matrix<T> bilinear_pool(const LocationPairSet<T>& pairs) {
  if (pairs.count < 1) throw ShapeMismatch("bilinear_pool: empty pair set");
  Matrix<T> z(pairs.p, pairs.q);
  for (int v = 0; v < pairs.count; ++v)
    outer_accumulate(z, pairs.x(v), pairs.y(v));
  return z;
}

namespace detail {

/// Scratch buffers reused across per-location encodes.
template <class T>
struct FbcWorkspace {
  std::vector<T> a;   // u_tilde^T x, length r*k
  std::vector<T> b;   // v_tilde^T y, length r*k
  std::vector<T> pre; // c' = P(a o b), length k

  void resize(int rk, int k) {
    a.resize(static_cast<std::size_t>(rk));
    b.resize(static_cast<std::size_t>(rk));
    pre.resize(static_cast<std::size_t>(k));
  }
};

template <class T>
void encode_pre(const T* x, const T* y, const FbcParams<T>& params,
                FbcWorkspace<T>& ws) {
  ws.resize(params.r * params.k, params.k);
  matvec_transposed(params.u_tilde, x, ws.a.data());
  matvec_transposed(params.v_tilde, y, ws.b.data());
  const int rk = params.r * params.k;
  for (int i = 0; i < rk; ++i) ws.a[i] *= ws.b[i];  // ws.a now holds a o b
  params.projection().apply(ws.a.data(), ws.pre.data());
}

}  // namespace detail

/// The closed-form code for one location pair:
///   c' = P(u_tilde^T x o v_tilde^T y),  c = sign(c') o max(|c'| - lambda/2, 0).
template <class T>
std::vector<T> fbc_encode(const T* x, const T* y, const FbcParams<T>& params) {
  detail::FbcWorkspace<T> ws;
  detail::encode_pre(x, y, params, ws);
  const T half = params.lambda / T(2);
  std::vector<T> code(static_cast<std::size_t>(params.k));
  for (int l = 0; l < params.k; ++l) code[l] = soft_threshold(ws.pre[l], half);
  return code;
}

template <class T>
std::vector<T> fbc_encode(const std::vector<T>& x, const std::vector<T>& y,
                          const FbcParams<T>& params) {
  if (static_cast<int>(x.size()) != params.p || static_cast<int>(y.size()) != params.q)
    throw ShapeMismatch("fbc_encode: input dims do not match params");
  return fbc_encode(x.data(), y.data(), params);
}

/// Raw rank-r dictionary: atom l is U[l] V[l]^T with U[l] p x r, V[l] q x r.
/// Only the diagnostic transform below consumes it.
template <class T>
struct RawDictionary {
  std::vector<Matrix<T>> U;
  std::vector<Matrix<T>> V;

  int atoms() const { return static_cast<int>(U.size()); }
};

/// Derives (u_tilde, v_tilde) from a raw dictionary so that the closed-form
/// encode approximates the ridge-regularized least-squares code.
///
/// Per atom l the derived columns are u~_i = Ginv(l,l) * u_i and v~_i = v_i
/// for i in block l, where G = P(U^T U P^T o V^T V P^T) + ridge*I. This is
/// the unique scaling expressible in the encode's computational form; it is
/// exact for k = 1 and for the scalar case, and drops inter-atom Gram
/// coupling otherwise.
template <class T>
std::pair<Matrix<T>, Matrix<T>> derive_transforms(const RawDictionary<T>& raw,
                                                  T ridge) {
  const int k = raw.atoms();
  if (k < 1 || static_cast<int>(raw.V.size()) != k)
    throw ShapeMismatch("derive_transforms: U/V atom counts differ");
  const int p = raw.U[0].rows;
  const int q = raw.V[0].rows;
  const int r = raw.U[0].cols;
  for (const auto& m : raw.U)
    if (m.rows != p || m.cols != r) throw ShapeMismatch("derive_transforms: U shapes");
  for (const auto& m : raw.V)
    if (m.rows != q || m.cols != r) throw ShapeMismatch("derive_transforms: V shapes");

  // Concatenated dictionaries, columns grouped by atom.
  Matrix<T> u_cat(p, r * k), v_cat(q, r * k);
  for (int l = 0; l < k; ++l)
    for (int j = 0; j < r; ++j) {
      for (int row = 0; row < p; ++row) u_cat(row, l * r + j) = raw.U[l](row, j);
      for (int row = 0; row < q; ++row) v_cat(row, l * r + j) = raw.V[l](row, j);
    }

  auto col_dot = [](const Matrix<T>& m, int a, int b) {
    T acc = T(0);
    for (int row = 0; row < m.rows; ++row) acc += m(row, a) * m(row, b);
    return acc;
  };

  // G(l,m) = sum_{i in block l} [sum_{j in block m} (U^T U)(i,j)]
  //                           * [sum_{j in block m} (V^T V)(i,j)]
  Matrix<T> gram(k, k);
  for (int l = 0; l < k; ++l)
    for (int m = 0; m < k; ++m) {
      T acc = T(0);
      for (int i = l * r; i < (l + 1) * r; ++i) {
        T su = T(0), sv = T(0);
        for (int j = m * r; j < (m + 1) * r; ++j) {
          su += col_dot(u_cat, i, j);
          sv += col_dot(v_cat, i, j);
        }
        acc += su * sv;
      }
      gram(l, m) = acc;
    }
  for (int l = 0; l < k; ++l) gram(l, l) += ridge;

  // Diagonal of the inverse, one solve per atom.
  std::vector<T> inv_diag(static_cast<std::size_t>(k));
  for (int l = 0; l < k; ++l) {
    std::vector<T> e(static_cast<std::size_t>(k), T(0));
    e[l] = T(1);
    const std::vector<T> col = solve_dense(gram, std::move(e));
    inv_diag[l] = col[l];
  }

  Matrix<T> u_tilde(p, r * k);
  for (int l = 0; l < k; ++l)
    for (int j = 0; j < r; ++j)
      for (int row = 0; row < p; ++row)
        u_tilde(row, l * r + j) = inv_diag[l] * u_cat(row, l * r + j);
  return {std::move(u_tilde), std::move(v_cat)};
}

/// Coordinatewise max over per-location codes, with the achieving location
/// recorded for backward routing (first index on ties).
template <class T>
struct GlobalRepresentation {
  std::vector<T> z;
  std::vector<int> argmax;
};

template <class T>
GlobalRepresentation<T> max_aggregate(const std::vector<std::vector<T>>& codes) {
  if (codes.empty()) throw ShapeMismatch("max_aggregate: no codes");
  const std::size_t k = codes[0].size();
  for (const auto& c : codes)
    if (c.size() != k) throw ShapeMismatch("max_aggregate: code lengths differ");

  GlobalRepresentation<T> out;
  out.z = codes[0];
  out.argmax.assign(k, 0);
  for (int v = 1; v < static_cast<int>(codes.size()); ++v)
    for (std::size_t l = 0; l < k; ++l)
      if (codes[v][l] > out.z[l]) {
        out.z[l] = codes[v][l];
        out.argmax[l] = v;
      }
  return out;
}

/// Everything backward needs from one forward pass of the coding layer.
template <class T>
struct FbcCache {
  LocationPairSet<T> pairs;
  std::vector<T> a;    // count x rk, u_tilde^T x_v
  std::vector<T> b;    // count x rk, v_tilde^T y_v
  std::vector<T> pre;  // count x k, c' per location
  GlobalRepresentation<T> rep;
};

template <class T>
GlobalRepresentation<T> fbc_forward(const FeatureMap<T>& fa, const FeatureMap<T>& fb,
                                    const FbcParams<T>& params,
                                    FbcCache<T>* cache = nullptr) {
  if (fa.channels != params.p || fb.channels != params.q)
    throw ShapeMismatch("fbc_forward: channel counts do not match params");
  LocationPairSet<T> pairs = pair_locations(fa, fb);
  const int n = pairs.count;
  const int rk = params.r * params.k;
  const T half = params.lambda / T(2);

  std::vector<T> a(static_cast<std::size_t>(n) * rk);
  std::vector<T> b(static_cast<std::size_t>(n) * rk);
  std::vector<T> pre(static_cast<std::size_t>(n) * params.k);

  GlobalRepresentation<T> rep;
  rep.z.assign(static_cast<std::size_t>(params.k),
               -std::numeric_limits<T>::infinity());
  rep.argmax.assign(static_cast<std::size_t>(params.k), 0);

  const Projection proj = params.projection();
  std::vector<T> prod(static_cast<std::size_t>(rk));
  for (int v = 0; v < n; ++v) {
    T* av = a.data() + static_cast<std::size_t>(v) * rk;
    T* bv = b.data() + static_cast<std::size_t>(v) * rk;
    T* pv = pre.data() + static_cast<std::size_t>(v) * params.k;
    matvec_transposed(params.u_tilde, pairs.x(v), av);
    matvec_transposed(params.v_tilde, pairs.y(v), bv);
    for (int i = 0; i < rk; ++i) prod[i] = av[i] * bv[i];
    proj.apply(prod.data(), pv);
    for (int l = 0; l < params.k; ++l) {
      const T code = soft_threshold(pv[l], half);
      if (code > rep.z[l]) {
        rep.z[l] = code;
        rep.argmax[l] = v;
      }
    }
  }

  if (cache) {
    cache->pairs = std::move(pairs);
    cache->a = std::move(a);
    cache->b = std::move(b);
    cache->pre = std::move(pre);
    cache->rep = rep;
  }
  return rep;
}

template <class T>
struct FbcGrads {
  Matrix<T> du_tilde;
  Matrix<T> dv_tilde;
  std::vector<T> dxs;  // count x p
  std::vector<T> dys;  // count x q
};

/// Reverse pass through soft-threshold, block-sum, Hadamard and the two
/// projections. Subgradient conventions: the soft-threshold derivative is
/// 0 at |c'| = lambda/2 exactly (identity when lambda = 0), and max routes
/// gradient only to the recorded first-argmax location.
template <class T>
FbcGrads<T> fbc_backward(const std::vector<T>& dz, const FbcCache<T>& cache,
                         const FbcParams<T>& params) {
  if (cache.pairs.count < 1) throw Error("fbc_backward: missing forward cache");
  if (static_cast<int>(dz.size()) != params.k)
    throw ShapeMismatch("fbc_backward: upstream gradient length");

  const int n = cache.pairs.count;
  const int rk = params.r * params.k;
  const T half = params.lambda / T(2);

  FbcGrads<T> g;
  g.du_tilde = Matrix<T>(params.p, rk);
  g.dv_tilde = Matrix<T>(params.q, rk);
  g.dxs.assign(static_cast<std::size_t>(n) * params.p, T(0));
  g.dys.assign(static_cast<std::size_t>(n) * params.q, T(0));

  std::vector<T> dpre(static_cast<std::size_t>(n) * params.k, T(0));
  for (int l = 0; l < params.k; ++l) {
    if (dz[l] == T(0)) continue;
    const int v = cache.rep.argmax[l];
    const T pre = cache.pre[static_cast<std::size_t>(v) * params.k + l];
    const bool active = params.lambda == T(0) || std::abs(pre) > half;
    if (active) dpre[static_cast<std::size_t>(v) * params.k + l] = dz[l];
  }

  std::vector<T> dh(static_cast<std::size_t>(rk));
  std::vector<T> da(static_cast<std::size_t>(rk));
  std::vector<T> db(static_cast<std::size_t>(rk));
  const Projection proj = params.projection();
  for (int v = 0; v < n; ++v) {
    const T* dpv = dpre.data() + static_cast<std::size_t>(v) * params.k;
    bool any = false;
    for (int l = 0; l < params.k; ++l)
      if (dpv[l] != T(0)) {
        any = true;
        break;
      }
    if (!any) continue;

    const T* av = cache.a.data() + static_cast<std::size_t>(v) * rk;
    const T* bv = cache.b.data() + static_cast<std::size_t>(v) * rk;
    proj.apply_transpose(dpv, dh.data());
    for (int i = 0; i < rk; ++i) {
      da[i] = dh[i] * bv[i];
      db[i] = dh[i] * av[i];
    }
    // dU += x da^T, dx = u_tilde da; same pattern for the y stream.
    outer_accumulate(g.du_tilde, cache.pairs.x(v), da.data());
    outer_accumulate(g.dv_tilde, cache.pairs.y(v), db.data());
    matvec(params.u_tilde, da.data(), g.dxs.data() + static_cast<std::size_t>(v) * params.p);
    matvec(params.v_tilde, db.data(), g.dys.data() + static_cast<std::size_t>(v) * params.q);
  }
  return g;
}

}  // namespace mcfbc
