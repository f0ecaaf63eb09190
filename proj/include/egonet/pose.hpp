#pragma once

// Orientation recovery from a predicted interpolated cuboid.

#include <optional>

#include "egonet/common.hpp"
#include "egonet/geometry.hpp"

namespace egonet {

/// Proper rotation matrix. Construction checks orthonormality and det = +1.
class Rotation3 {
 public:
  explicit Rotation3(const Mat3& m, double tol = 1e-9) : m_(m) {
    if ((m.transpose() * m - Mat3::Identity()).cwiseAbs().maxCoeff() > tol || std::abs(m.determinant() - 1.0) > tol) {
      throw DomainError("matrix is not a proper rotation");
    }
  }
  static Rotation3 identity() { return Rotation3(Mat3::Identity()); }

  const Mat3& matrix() const { return m_; }
  Vec3 operator*(const Vec3& v) const { return m_ * v; }
  Rotation3 operator*(const Rotation3& o) const { return Rotation3(m_ * o.m_, 1e-8); }

 private:
  Mat3 m_;
};

inline Rotation3 yaw_rotation3(double theta) { return Rotation3(yaw_rotation(theta)); }

struct Alignment {
  Rotation3 rotation = Rotation3::identity();
  double scale = 1.0;
};

/// Least-squares alignment of centered `source` onto centered `target`:
/// minimizes sum ||s R source_i - target_i||^2 over proper rotations R (and s > 0
/// when `with_scale`). Both sets are centered internally.
inline Alignment kabsch_align_similarity(const Points3& source, const Points3& target, bool with_scale) {
  if (source.rows() != target.rows()) throw UsageError("alignment point sets differ in size");
  if (source.rows() < 3) throw DegenerateError("alignment needs at least three points");
  const Points3 a = source.rowwise() - source.colwise().mean();
  const Points3 b = target.rowwise() - target.colwise().mean();
  const Mat3 cov = a.transpose() * b;  // sum source_i target_i^T

  Eigen::JacobiSVD<Mat3> svd(cov, Eigen::ComputeFullU | Eigen::ComputeFullV);
  const Vec3 sv = svd.singularValues();
  if (!(sv(0) > 0.0) || sv(1) <= 1e-12 * sv(0)) {
    throw DegenerateError("alignment covariance is rank deficient (collinear points)");
  }
  const Mat3& u = svd.matrixU();
  const Mat3& v = svd.matrixV();
  Mat3 d = Mat3::Identity();
  if ((v * u.transpose()).determinant() < 0.0) d(2, 2) = -1.0;
  Alignment out{Rotation3(v * d * u.transpose()), 1.0};
  if (with_scale) {
    const double var = a.squaredNorm();
    out.scale = (sv(0) + sv(1) + d(2, 2) * sv(2)) / var;
  }
  return out;
}

inline Rotation3 kabsch_align(const PointSet3D& source, const PointSet3D& target) {
  if (source.layout != target.layout) throw UsageError("alignment point sets use different layouts");
  return kabsch_align_similarity(source.points, target.points, false).rotation;
}

/// PSI of a unit cuboid at yaw 0: the canonical pose predictions are aligned against.
inline PointSet3D template_psi(const InterpMatrix& interp) {
  return build_psi(Cuboid{{1.0, 1.0, 1.0}, Vec3::Zero(), 0.0}, interp);
}

/// Heading of the rotated object x-axis in the camera x-z plane, in (-pi, pi].
inline double extract_yaw(const Rotation3& r) {
  const Mat3& m = r.matrix();
  const double x = m(0, 0);
  const double z = m(2, 0);
  if (std::hypot(x, z) < 1e-9) throw DegenerateError("object x-axis is parallel to the camera y-axis");
  return wrap_angle(std::atan2(-z, x));
}

/// Yaw-pitch-roll readout for diagnostics: R = R_y(yaw) R_z(pitch) R_x(roll).
struct EulerYpr {
  double yaw;
  double pitch;
  double roll;
};

inline EulerYpr decompose_ypr(const Rotation3& r) {
  const Mat3& m = r.matrix();
  EulerYpr e{};
  e.yaw = extract_yaw(r);
  const Mat3 rest = yaw_rotation(e.yaw).transpose() * m;  // R_z(pitch) R_x(roll)
  e.pitch = std::atan2(rest(1, 0), rest(0, 0));
  e.roll = std::atan2(rest(2, 1), rest(2, 2));
  return e;
}

/// Egocentric yaw from the allocentric angle: theta = alpha + atan2(t_x, t_z).
inline double allo_to_ego(double alpha, const Vec3& location) {
  if (!(location.z() > 0.0)) throw DomainError("allocentric conversion needs positive depth");
  return wrap_angle(alpha + std::atan2(location.x(), location.z()));
}

inline double ego_to_allo(double theta, const Vec3& location) {
  if (!(location.z() > 0.0)) throw DomainError("allocentric conversion needs positive depth");
  return wrap_angle(theta - std::atan2(location.x(), location.z()));
}

/// |wrap(pred - gt)| in [0, pi].
inline double orientation_error(double theta_pred, double theta_gt) {
  return std::abs(wrap_angle(theta_pred - theta_gt));
}

/// Mean edge lengths of a PSI point set along the object length, height and width axes.
/// Readout only; not consumed by any metric.
inline Dimensions edge_length_readout(const PointSet3D& psi) {
  if (psi.layout != Layout::Psi || psi.size() < 8) throw UsageError("edge readout expects a PSI point set");
  double acc[3] = {0.0, 0.0, 0.0};
  for (const auto& e : kEdges) {
    const int axis_bit = e.start ^ e.end;  // 4: x/length, 2: y/height, 1: z/width
    const double len = (psi.points.row(e.start) - psi.points.row(e.end)).norm();
    acc[axis_bit == 4 ? 0 : axis_bit == 2 ? 1 : 2] += len / 4.0;
  }
  return {acc[1], acc[2], acc[0]};
}

}  // namespace egonet
