#pragma once

// Cross-ratio of collinear quadruples and the self-supervised cross-ratio loss.

#include <array>
#include <span>
#include <vector>

#include "egonet/common.hpp"
#include "egonet/geometry.hpp"

namespace egonet {

/// ||v3-v1|| ||v4-v2|| / (||v3-v2|| ||v4-v1||) for points of any dimension.
template <typename Derived>
double cross_ratio(const Eigen::MatrixBase<Derived>& v1, const Eigen::MatrixBase<Derived>& v2,
                   const Eigen::MatrixBase<Derived>& v3, const Eigen::MatrixBase<Derived>& v4) {
  const double d32 = (v3 - v2).norm();
  const double d41 = (v4 - v1).norm();
  if (d32 == 0.0 || d41 == 0.0) throw DegenerateError("cross-ratio denominator pair is coincident");
  return (v3 - v1).norm() * (v4 - v2).norm() / (d32 * d41);
}

struct QuadrupleIndex {
  std::array<int, 4> v;
};

/// One quadruple per edge in TAU point order: (start corner, interp 1, interp 2, end corner).
inline std::vector<QuadrupleIndex> edge_quadruples(int q = 2) {
  if (q != 2) throw ConfigError("cross-ratio quadruples are defined for q = 2 only");
  std::vector<QuadrupleIndex> out;
  out.reserve(12);
  for (int e = 0; e < 12; ++e) {
    out.push_back({{tau_corner_index(kEdges[e].start), tau_interp_index(e, 0, q), tau_interp_index(e, 1, q),
                    tau_corner_index(kEdges[e].end)}});
  }
  return out;
}

struct CrossRatioTarget {
  double cr = 0.0;
  double cr_squared = 0.0;
};

/// Cross-ratio of the edge parameters (0, 1-beta_1, 1-beta_2, 1).
inline CrossRatioTarget target_cr(const InterpMatrix& interp) {
  if (interp.q() != 2) throw ConfigError("cross-ratio target needs exactly two interpolated points per edge");
  using V1 = Eigen::Matrix<double, 1, 1>;
  const double cr = cross_ratio(V1(0.0), V1(1.0 - interp.betas[0]), V1(1.0 - interp.betas[1]), V1(1.0));
  return {cr, cr * cr};
}

template <typename T>
T smooth_l1(T x) {
  const T a = std::abs(x);
  return a < T(1) ? T(0.5) * x * x : a - T(0.5);
}

template <typename T>
T smooth_l1_grad(T x) {
  if (x >= T(1)) return T(1);
  if (x <= T(-1)) return T(-1);
  return x;
}

/// Edges whose quadruple has a minimal pairwise distance at or below this (local units) are skipped.
inline constexpr double kForeshorteningGate = 0.15;

template <typename T>
struct CrLossResult {
  T loss = T(0);
  int active = 0;  ///< quadruples that passed the gate
};

namespace cr_detail {

template <typename T>
T sq_dist(const T* a, const T* b) {
  const T dx = a[0] - b[0];
  const T dy = a[1] - b[1];
  return dx * dx + dy * dy;
}

}  // namespace cr_detail

/// Cross-ratio loss on one instance. `xy` holds the points row-major (x0, y0, x1, y1, ...).
/// Loss is the mean over ungated quadruples of SmoothL1(cr^2 - squared-norm ratio);
/// gated quadruples contribute neither loss nor gradient. When `grad` is non-empty,
/// d(loss)/d(xy) scaled by `grad_scale` is accumulated into it.
template <typename T>
CrLossResult<T> cr_loss_raw(std::span<const T> xy, std::span<const QuadrupleIndex> quads, double target_cr_squared,
                            double gate, std::span<T> grad = {}, T grad_scale = T(1)) {
  using cr_detail::sq_dist;
  CrLossResult<T> res;
  const T gate_sq = static_cast<T>(gate * gate);
  struct Term {
    const QuadrupleIndex* q;
    T a, b, c, d, ratio, x;
  };
  std::vector<Term> terms;
  terms.reserve(quads.size());
  for (const auto& quad : quads) {
    const T* p[4];
    for (int i = 0; i < 4; ++i) p[i] = xy.data() + 2 * quad.v[i];
    T dmin = sq_dist(p[0], p[1]);
    for (int i = 0; i < 4; ++i)
      for (int j = i + 1; j < 4; ++j) dmin = std::min(dmin, sq_dist(p[i], p[j]));
    if (dmin <= gate_sq) continue;
    Term t{&quad, sq_dist(p[2], p[0]), sq_dist(p[3], p[1]), sq_dist(p[2], p[1]), sq_dist(p[3], p[0]), T(0), T(0)};
    t.ratio = t.a * t.b / (t.c * t.d);
    t.x = static_cast<T>(target_cr_squared) - t.ratio;
    res.loss += smooth_l1(t.x);
    terms.push_back(t);
  }
  res.active = static_cast<int>(terms.size());
  if (res.active == 0) return res;
  const T inv_n = T(1) / static_cast<T>(res.active);
  res.loss *= inv_n;
  if (grad.empty()) return res;

  for (const auto& t : terms) {
    // d ratio = ratio * (da/a + db/b - dc/c - dd/d); d loss/d ratio = -smooth_l1'(x).
    const T k = -smooth_l1_grad(t.x) * t.ratio * inv_n * grad_scale * T(2);
    const int* v = t.q->v.data();
    auto add = [&](int to, int from, T coeff) {
      for (int ax = 0; ax < 2; ++ax) {
        const T diff = xy[2 * v[to] + ax] - xy[2 * v[from] + ax];
        grad[2 * v[to] + ax] += coeff * diff;
        grad[2 * v[from] + ax] -= coeff * diff;
      }
    };
    add(2, 0, k / t.a);
    add(3, 1, k / t.b);
    add(2, 1, -k / t.c);
    add(3, 0, -k / t.d);
  }
  return res;
}

struct CrLoss {
  double loss = 0.0;
  Points2 gradient;
  int active = 0;
};

/// Cross-ratio loss on a LOCAL point set in TAU order.
inline CrLoss cr_loss(const PointSet2D& points, std::span<const QuadrupleIndex> quads, const CrossRatioTarget& target,
                      double gate = kForeshorteningGate) {
  if (points.frame != Frame::Local) throw UsageError("cross-ratio loss expects LOCAL points");
  for (const auto& q : quads)
    for (int i : q.v)
      if (i < 0 || i >= points.size()) throw UsageError("quadruple index out of range");
  CrLoss out;
  out.gradient = Points2::Zero(points.size(), 2);
  const std::span<const double> xy(points.points.data(), static_cast<std::size_t>(points.points.size()));
  const std::span<double> g(out.gradient.data(), static_cast<std::size_t>(out.gradient.size()));
  const auto r = cr_loss_raw<double>(xy, quads, target.cr_squared, gate, g);
  out.loss = r.loss;
  out.active = r.active;
  return out;
}

}  // namespace egonet
