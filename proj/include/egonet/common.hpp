#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <numbers>
#include <stdexcept>
#include <string>

namespace egonet {

using Vec2 = Eigen::Vector2d;
using Vec3 = Eigen::Vector3d;
using Mat3 = Eigen::Matrix3d;

inline constexpr double kPi = std::numbers::pi;

// Error hierarchy. Everything thrown by the library derives from Error so the
// CLI can separate user-facing failures from internal ones.
struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// Input text does not have the expected record layout.
struct FormatError : Error {
  using Error::Error;
};

/// A field could not be converted; `column` is the zero-based field index.
struct ParseError : Error {
  ParseError(const std::string& what, int column) : Error(what), column(column) {}
  int column;
};

/// Argument outside the mathematical domain of the operation.
struct DomainError : Error {
  using Error::Error;
};

/// Caller combined arguments that cannot go together (shape or tag mismatch).
struct UsageError : Error {
  using Error::Error;
};

/// Degenerate geometric configuration (coincident, collinear, gimbal).
struct DegenerateError : Error {
  using Error::Error;
};

/// Invalid or inconsistent configuration.
struct ConfigError : Error {
  using Error::Error;
};

/// Wraps an angle to (-pi, pi]; -pi itself maps to pi.
inline double wrap_angle(double theta) {
  double w = std::remainder(theta, 2.0 * kPi);
  if (w <= -kPi) w += 2.0 * kPi;
  if (w > kPi) w -= 2.0 * kPi;
  return w;
}

}  // namespace egonet
