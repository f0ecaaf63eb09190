#pragma once

// Interpolated-cuboid point sets, pinhole projection and the crop transform.
//
// Frames: camera x-right, y-down, z-forward. In the object frame the box
// length runs along x, height along y and width along z; yaw rotates about y.
//
// Canonical point order (TAU layout):
//   0                 centroid
//   1 .. 8            corners; corner c has signs (x: bit 2, y: bit 1, z: bit 0), set bit = '+'
//   9 + e*q + k       k-th interpolated point of edge e
// Edges are the corner pairs (a, b), a < b, differing in one bit, in
// lexicographic order. Interpolated point k is betas[k]*start + (1-betas[k])*end.
// PSI drops the centroid, so every PSI index is the TAU index minus one.

#include <algorithm>
#include <array>
#include <random>
#include <span>
#include <vector>

#include "egonet/common.hpp"
#include "egonet/kitti_io.hpp"

namespace egonet {

using Points3 = Eigen::Matrix<double, Eigen::Dynamic, 3, Eigen::RowMajor>;
using Points2 = Eigen::Matrix<double, Eigen::Dynamic, 2, Eigen::RowMajor>;

struct Dimensions {
  double height = 1.0;
  double width = 1.0;
  double length = 1.0;
};

struct Cuboid {
  Dimensions dims;
  Vec3 centroid = Vec3::Zero();
  double yaw = 0.0;

  void validate() const {
    if (!(dims.height > 0.0) || !(dims.width > 0.0) || !(dims.length > 0.0)) {
      throw DomainError("cuboid dimensions must be positive");
    }
  }

  /// KITTI stores the bottom-center; the centroid sits h/2 above it (y points down).
  static Cuboid from_kitti(const DetectionRecord& r) {
    Cuboid c{{r.height, r.width, r.length}, r.location, r.rotation_y};
    c.centroid.y() -= r.height / 2.0;
    return c;
  }
  Vec3 kitti_location() const { return centroid + Vec3(0.0, dims.height / 2.0, 0.0); }
};

/// Rotation by theta about the camera y-axis; maps (1,0,0) to (cos, 0, -sin).
inline Mat3 yaw_rotation(double theta) {
  const double c = std::cos(theta);
  const double s = std::sin(theta);
  Mat3 r;
  r << c, 0.0, s, 0.0, 1.0, 0.0, -s, 0.0, c;
  return r;
}

struct InterpMatrix {
  std::vector<double> betas;

  int q() const { return static_cast<int>(betas.size()); }
  /// Row k as (beta_k, 1 - beta_k).
  Eigen::MatrixX2d matrix() const {
    Eigen::MatrixX2d m(q(), 2);
    for (int k = 0; k < q(); ++k) m.row(k) << betas[k], 1.0 - betas[k];
    return m;
  }
};

inline InterpMatrix interpolation_matrix(int q, std::span<const double> betas) {
  if (q < 0 || static_cast<std::size_t>(q) != betas.size()) {
    throw UsageError("interpolation count does not match number of betas");
  }
  for (double b : betas) {
    if (!(b > 0.0 && b < 1.0)) throw DomainError("interpolation beta must lie in (0, 1)");
  }
  return InterpMatrix{{betas.begin(), betas.end()}};
}

/// The operating point: two points per edge at beta = 3/4 and 1/4.
inline InterpMatrix default_interpolation() {
  const std::array<double, 2> b{0.75, 0.25};
  return interpolation_matrix(2, b);
}

enum class Layout { Tau, Psi };
enum class Frame { Global, Local };

struct PointSet3D {
  Points3 points;
  Layout layout = Layout::Tau;

  Eigen::Index size() const { return points.rows(); }
};

struct PointSet2D {
  Points2 points;
  Frame frame = Frame::Global;

  Eigen::Index size() const { return points.rows(); }
};

inline constexpr int tau_count(int q) { return 9 + 12 * q; }
inline constexpr int psi_count(int q) { return 8 + 12 * q; }

struct Edge {
  int start;
  int end;
};

/// Corner indices (0..7, not offset by the centroid slot) of the 12 box edges.
inline constexpr std::array<Edge, 12> kEdges{{{0, 1}, {0, 2}, {0, 4}, {1, 3}, {1, 5}, {2, 3},
                                              {2, 6}, {3, 7}, {4, 5}, {4, 6}, {5, 7}, {6, 7}}};

inline Vec3 corner_sign(int c) {
  return {(c & 4) ? 1.0 : -1.0, (c & 2) ? 1.0 : -1.0, (c & 1) ? 1.0 : -1.0};
}

inline int tau_corner_index(int corner) { return 1 + corner; }
inline int tau_interp_index(int edge, int k, int q) { return 9 + edge * q + k; }

inline PointSet3D build_tau(const Cuboid& cuboid, const InterpMatrix& interp) {
  cuboid.validate();
  const int q = interp.q();
  const Mat3 rot = yaw_rotation(cuboid.yaw);
  const Vec3 half(cuboid.dims.length / 2.0, cuboid.dims.height / 2.0, cuboid.dims.width / 2.0);

  PointSet3D out{Points3(tau_count(q), 3), Layout::Tau};
  out.points.row(0) = cuboid.centroid.transpose();
  std::array<Vec3, 8> corners;
  for (int c = 0; c < 8; ++c) {
    corners[c] = rot * corner_sign(c).cwiseProduct(half) + cuboid.centroid;
    out.points.row(tau_corner_index(c)) = corners[c].transpose();
  }
  for (int e = 0; e < 12; ++e) {
    const Vec3& s = corners[kEdges[e].start];
    const Vec3& t = corners[kEdges[e].end];
    for (int k = 0; k < q; ++k) {
      const double b = interp.betas[k];
      out.points.row(tau_interp_index(e, k, q)) = (b * s + (1.0 - b) * t).transpose();
    }
  }
  return out;
}

/// TAU without the centroid row, expressed relative to the centroid.
inline PointSet3D build_psi(const Cuboid& cuboid, const InterpMatrix& interp) {
  const PointSet3D tau = build_tau(cuboid, interp);
  const Eigen::Index n = tau.size() - 1;
  PointSet3D out{Points3(n, 3), Layout::Psi};
  out.points = tau.points.bottomRows(n).rowwise() - cuboid.centroid.transpose();
  return out;
}

/// Full pinhole projection u = fx X/Z + cx, v = fy Y/Z + cy.
inline PointSet2D project(const PointSet3D& pts, const CameraIntrinsics& k) {
  PointSet2D out{Points2(pts.size(), 2), Frame::Global};
  for (Eigen::Index i = 0; i < pts.size(); ++i) {
    const double z = pts.points(i, 2);
    if (!(z > 0.0)) {
      throw DomainError("point " + std::to_string(i) + " is behind the camera (Z = " +
                        std::to_string(z) + ")");
    }
    out.points(i, 0) = k.fx * pts.points(i, 0) / z + k.cx;
    out.points(i, 1) = k.fy * pts.points(i, 1) / z + k.cy;
  }
  return out;
}

/// Tight axis-aligned box around a point set.
inline BoundingBox2D tight_bbox(const Points2& pts) {
  if (pts.rows() == 0) throw UsageError("bounding box of an empty point set");
  return {pts.col(0).minCoeff(), pts.col(1).minCoeff(), pts.col(0).maxCoeff(), pts.col(1).maxCoeff()};
}

inline BoundingBox2D clip_bbox(const BoundingBox2D& b, double image_w, double image_h) {
  return {std::clamp(b.left, 0.0, image_w), std::clamp(b.top, 0.0, image_h), std::clamp(b.right, 0.0, image_w),
          std::clamp(b.bottom, 0.0, image_h)};
}

/// Scale-and-translate map from global pixels onto a square patch.
/// patch_px = (global - translation) * scale; local = patch_px / patch_size.
struct AffineCrop {
  double scale = 1.0;
  Vec2 translation = Vec2::Zero();
  double patch_size = 256.0;

  /// Side of the cropped square in global pixels.
  double side() const { return patch_size / scale; }
};

/// Relative perturbation of the square crop; identity by default.
struct CropJitter {
  double scale = 1.0;        ///< multiplies the square side
  Vec2 shift = Vec2::Zero();  ///< center offset as a fraction of the side
};

/// Scale uniform in [0.9, 1.1], shift uniform within +-5% of the side.
template <typename Rng>
CropJitter random_crop_jitter(Rng& rng, double scale_range = 0.1, double shift_range = 0.05) {
  std::uniform_real_distribution<double> s(1.0 - scale_range, 1.0 + scale_range);
  std::uniform_real_distribution<double> t(-shift_range, shift_range);
  CropJitter j;
  j.scale = s(rng);
  j.shift = {t(rng), t(rng)};
  return j;
}

inline AffineCrop crop_transform(const BoundingBox2D& bbox, const CropJitter& jitter = {},
                                 double patch_size = 256.0) {
  const double w = bbox.width();
  const double h = bbox.height();
  if (!(w > 0.0) || !(h > 0.0)) throw DomainError("crop bounding box has zero area");
  if (!(jitter.scale > 0.0) || !(patch_size > 0.0)) throw DomainError("crop scale must be positive");
  const double side = std::max(w, h) * jitter.scale;
  const Vec2 center = Vec2((bbox.left + bbox.right) / 2.0, (bbox.top + bbox.bottom) / 2.0) + jitter.shift * side;
  AffineCrop crop;
  crop.patch_size = patch_size;
  crop.scale = patch_size / side;
  crop.translation = center - Vec2(side / 2.0, side / 2.0);
  return crop;
}

inline PointSet2D to_local(const PointSet2D& global, const AffineCrop& crop) {
  if (global.frame != Frame::Global) throw UsageError("to_local expects GLOBAL points");
  PointSet2D out{Points2(global.size(), 2), Frame::Local};
  out.points = ((global.points.rowwise() - crop.translation.transpose()) * (crop.scale / crop.patch_size));
  return out;
}

inline PointSet2D to_global(const PointSet2D& local, const AffineCrop& crop) {
  if (local.frame != Frame::Local) throw UsageError("to_global expects LOCAL points");
  PointSet2D out{Points2(local.size(), 2), Frame::Global};
  out.points = (local.points * (crop.patch_size / crop.scale)).rowwise() + crop.translation.transpose();
  return out;
}

/// Fraction of points inside [0, w) x [0, h). Callers discard an instance when
/// 1 - fraction > 0.30.
inline double visibility_fraction(const PointSet2D& pts, double image_w, double image_h) {
  if (pts.size() == 0) return 1.0;
  int inside = 0;
  for (Eigen::Index i = 0; i < pts.size(); ++i) {
    const double u = pts.points(i, 0);
    const double v = pts.points(i, 1);
    if (u >= 0.0 && u < image_w && v >= 0.0 && v < image_h) ++inside;
  }
  return static_cast<double>(inside) / static_cast<double>(pts.size());
}

/// The 30% rule: an instance is kept unless strictly more than 30% of its
/// points fall outside the image. Evaluated on counts so 3-of-10 stays kept.
inline bool passes_visibility(const PointSet2D& pts, double image_w, double image_h) {
  const double visible = visibility_fraction(pts, image_w, image_h);
  const auto n = static_cast<long long>(pts.size());
  const auto inside = std::llround(visible * static_cast<double>(n));
  return 10 * (n - inside) <= 3 * n;
}

}  // namespace egonet
