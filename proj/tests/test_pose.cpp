#include <gtest/gtest.h>

#include <random>

#include "egonet/pose.hpp"

using namespace egonet;

TEST(Kabsch, RecoversYawSweep) {
  const auto interp = default_interpolation();
  const auto tmpl = template_psi(interp);
  std::mt19937_64 rng(31);
  std::uniform_real_distribution<double> dim(1.0, 5.0);
  for (int i = 0; i < 360; ++i) {
    const double yaw = wrap_angle(-kPi + (i + 0.5) * 2.0 * kPi / 360.0);
    const auto psi = build_psi({{dim(rng), dim(rng), dim(rng)}, Vec3::Zero(), yaw}, interp);
    const double est = extract_yaw(kabsch_align(tmpl, psi));
    EXPECT_LT(orientation_error(est, yaw), 1e-9);
  }
}

TEST(Kabsch, RecoversRandomRotationExactly) {
  std::mt19937_64 rng(37);
  std::normal_distribution<double> n;
  Points3 src(20, 3);
  for (Eigen::Index i = 0; i < src.size(); ++i) src.data()[i] = n(rng);
  const Mat3 r = Eigen::Quaterniond(Eigen::Vector4d(n(rng), n(rng), n(rng), n(rng)).normalized()).toRotationMatrix();
  const Points3 dst = src * r.transpose();
  const auto a = kabsch_align_similarity(src, dst, false);
  EXPECT_LT((a.rotation.matrix() - r).norm(), 1e-10);
  EXPECT_GT(a.rotation.matrix().determinant(), 0.0);
}

TEST(Kabsch, ReflectionIsNotReturned) {
  Points3 src(4, 3);
  src << 1, 0, 0, 0, 1, 0, 0, 0, 1, -1, -1, -1;
  Points3 dst = src;
  dst.col(2) *= -1.0;
  const auto a = kabsch_align_similarity(src, dst, false);
  EXPECT_NEAR(a.rotation.matrix().determinant(), 1.0, 1e-12);
}

TEST(Kabsch, SimilarityScale) {
  const auto tmpl = template_psi(default_interpolation());
  const auto psi = build_psi({{2.0, 2.0, 2.0}, Vec3::Zero(), 0.7}, default_interpolation());
  const auto a = kabsch_align_similarity(tmpl.points, psi.points, true);
  EXPECT_NEAR(a.scale, 2.0, 1e-12);
}

TEST(Kabsch, CollinearInputIsDegenerate) {
  Points3 src(4, 3);
  src << 0, 0, 0, 1, 0, 0, 2, 0, 0, 3, 0, 0;
  EXPECT_THROW(kabsch_align_similarity(src, src, false), DegenerateError);
}

TEST(Kabsch, NoisyMedianBelowOneDegree) {
  const auto interp = default_interpolation();
  const auto tmpl = template_psi(interp);
  std::mt19937_64 rng(41);
  std::uniform_real_distribution<double> u(-kPi, kPi);
  std::normal_distribution<double> noise(0.0, 0.01);
  std::vector<double> err;
  for (int t = 0; t < 100; ++t) {
    const double yaw = u(rng);
    auto psi = build_psi({{1.0, 1.0, 1.0}, Vec3::Zero(), yaw}, interp);
    for (Eigen::Index i = 0; i < psi.points.size(); ++i) psi.points.data()[i] += noise(rng);
    err.push_back(orientation_error(extract_yaw(kabsch_align(tmpl, psi)), yaw));
  }
  std::nth_element(err.begin(), err.begin() + 50, err.end());
  EXPECT_LT(err[50] * 180.0 / kPi, 1.0);
}

TEST(Yaw, ExtractFromPureYaw) {
  for (double y : {-3.0, -1.0, 0.0, 0.5, 2.9, kPi}) EXPECT_NEAR(extract_yaw(yaw_rotation3(y)), wrap_angle(y), 1e-12);
}

TEST(Yaw, DecomposeRecoversPitchAndRoll) {
  const Mat3 r = yaw_rotation(0.4) * Eigen::AngleAxisd(0.1, Vec3::UnitZ()).toRotationMatrix() *
                 Eigen::AngleAxisd(-0.05, Vec3::UnitX()).toRotationMatrix();
  const auto e = decompose_ypr(Rotation3(r));
  EXPECT_NEAR(e.pitch, 0.1, 1e-12);
  EXPECT_NEAR(e.roll, -0.05, 1e-12);
}

TEST(Yaw, DegenerateHeading) {
  Mat3 m;
  m << 0, -1, 0, 1, 0, 0, 0, 0, 1;  // object x-axis along camera y
  EXPECT_THROW(extract_yaw(Rotation3(m)), DegenerateError);
}

TEST(Rotation, RejectsNonOrthonormal) {
  Mat3 m = Mat3::Identity();
  m(0, 0) = 1.1;
  EXPECT_THROW(Rotation3{m}, DomainError);
}

TEST(Allocentric, RoundTripAndExample) {
  const Vec3 t(5.0, 1.5, 5.0);
  EXPECT_NEAR(allo_to_ego(0.0, t), kPi / 4, 1e-15);
  std::mt19937_64 rng(43);
  std::uniform_real_distribution<double> u(-kPi, kPi), x(-20, 20), z(1, 60);
  for (int i = 0; i < 1000; ++i) {
    const Vec3 loc(x(rng), 1.0, z(rng));
    const double a = u(rng);
    EXPECT_LT(orientation_error(ego_to_allo(allo_to_ego(a, loc), loc), a), 1e-12);
  }
  EXPECT_THROW(allo_to_ego(0.0, Vec3(1, 1, 0)), DomainError);
}

TEST(OrientationError, WrapsAroundPi) {
  EXPECT_NEAR(orientation_error(kPi - 0.01, -kPi + 0.01), 0.02, 1e-12);
  EXPECT_NEAR(orientation_error(0.0, kPi), kPi, 1e-15);
}

TEST(EdgeReadout, RecoversDimensions) {
  const auto psi = build_psi({{1.5, 1.7, 4.2}, Vec3::Zero(), 1.1}, default_interpolation());
  const auto d = edge_length_readout(psi);
  EXPECT_NEAR(d.height, 1.5, 1e-12);
  EXPECT_NEAR(d.width, 1.7, 1e-12);
  EXPECT_NEAR(d.length, 4.2, 1e-12);
}
