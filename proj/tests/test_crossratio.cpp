#include <gtest/gtest.h>

#include <random>

#include "egonet/crossratio.hpp"
#include "oracles.hpp"

using namespace egonet;

namespace {

const CameraIntrinsics kK{721.5377, 721.5377, 609.5593, 172.854};

PointSet2D local_projection(std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  const Cuboid c{{1.3 + 0.6 * u(rng), 1.5 + 0.5 * u(rng), 3.2 + 1.6 * u(rng)},
                 Vec3(-6.0 + 12.0 * u(rng), 1.0 + 0.5 * u(rng), 8.0 + 30.0 * u(rng)), -kPi + 2 * kPi * u(rng)};
  const auto g = project(build_tau(c, default_interpolation()), kK);
  return to_local(g, crop_transform(tight_bbox(g.points)));
}

}  // namespace

TEST(CrossRatio, TargetValue) {
  const auto t = target_cr(default_interpolation());
  EXPECT_NEAR(t.cr, 1.125, 1e-15);
  EXPECT_NEAR(t.cr_squared, 1.265625, 1e-15);
  EXPECT_NEAR(t.cr, oracle::cross_ratio_1d(0.25, 0.75), 1e-15);
}

TEST(CrossRatio, EqualSpacingGivesFourThirds) {
  const Vec2 a(0, 0), b(1, 0), c(2, 0), d(3, 0);
  EXPECT_NEAR(cross_ratio(a, b, c, d), 4.0 / 3.0, 1e-15);
}

TEST(CrossRatio, CoincidentDenominatorThrows) {
  const Vec2 a(0, 0), b(1, 0), d(3, 0);
  EXPECT_THROW(cross_ratio(a, b, b, d), DegenerateError);
}

TEST(CrossRatio, InvariantUnderProjectionOnRandomCuboids) {
  std::mt19937_64 rng(17);
  const auto quads = edge_quadruples(2);
  for (int i = 0; i < 200; ++i) {
    const auto l = local_projection(rng);
    for (const auto& q : quads) {
      const double v1[2] = {l.points(q.v[0], 0), l.points(q.v[0], 1)};
      const double v2[2] = {l.points(q.v[1], 0), l.points(q.v[1], 1)};
      const double v3[2] = {l.points(q.v[2], 0), l.points(q.v[2], 1)};
      const double v4[2] = {l.points(q.v[3], 0), l.points(q.v[3], 1)};
      if (std::hypot(v4[0] - v1[0], v4[1] - v1[1]) < 1e-3) continue;
      EXPECT_NEAR(oracle::cross_ratio(v1, v2, v3, v4), 1.125, 1e-9);
    }
  }
}

TEST(CrossRatio, QuadruplesFollowEdges) {
  const auto quads = edge_quadruples(2);
  ASSERT_EQ(quads.size(), 12u);
  EXPECT_EQ(quads[0].v[0], 1);
  EXPECT_EQ(quads[0].v[1], 9);
  EXPECT_EQ(quads[0].v[2], 10);
  EXPECT_EQ(quads[0].v[3], 2);
  EXPECT_THROW(edge_quadruples(3), ConfigError);
}

TEST(CrLoss, ZeroOnGroundTruth) {
  std::mt19937_64 rng(19);
  const auto quads = edge_quadruples(2);
  const auto target = target_cr(default_interpolation());
  for (int i = 0; i < 100; ++i) {
    const auto l = local_projection(rng);
    const auto r = cr_loss(l, quads, target);
    EXPECT_LT(r.loss, 1e-20);
  }
}

TEST(CrLoss, GateDropsForeshortenedEdges) {
  std::mt19937_64 rng(1);
  const auto l = local_projection(rng);
  const auto quads = edge_quadruples(2);
  const auto target = target_cr(default_interpolation());
  const auto all = cr_loss(l, quads, target, 0.0);
  const auto none = cr_loss(l, quads, target, 10.0);
  EXPECT_EQ(all.active, 12);
  EXPECT_EQ(none.active, 0);
  EXPECT_EQ(none.loss, 0.0);
}

TEST(CrLoss, GradientMatchesFiniteDifferences) {
  std::mt19937_64 rng(23);
  std::normal_distribution<double> n(0.0, 0.02);
  const auto quads = edge_quadruples(2);
  const auto target = target_cr(default_interpolation());
  for (int trial = 0; trial < 20; ++trial) {
    auto l = local_projection(rng);
    for (Eigen::Index i = 0; i < l.points.size(); ++i) l.points.data()[i] += n(rng);
    const auto r = cr_loss(l, quads, target);
    auto f = [&](const std::vector<double>& x) {
      PointSet2D p{l.points, Frame::Local};
      std::copy(x.begin(), x.end(), p.points.data());
      return cr_loss(p, quads, target).loss;
    };
    std::vector<double> x(l.points.data(), l.points.data() + l.points.size());
    for (std::size_t i = 0; i < x.size(); ++i) {
      const double fd = oracle::central_diff(f, x, i, 1e-6);
      EXPECT_LT(oracle::rel_error(r.gradient.data()[i], fd, 1e-6), 1e-5) << "coordinate " << i;
    }
  }
}

TEST(SmoothL1, Branches) {
  EXPECT_DOUBLE_EQ(smooth_l1(0.5), 0.125);
  EXPECT_DOUBLE_EQ(smooth_l1(-2.0), 1.5);
  EXPECT_DOUBLE_EQ(smooth_l1_grad(0.5), 0.5);
  EXPECT_DOUBLE_EQ(smooth_l1_grad(-3.0), -1.0);
}

TEST(CrLoss, RejectsGlobalPoints) {
  std::mt19937_64 rng(2);
  auto l = local_projection(rng);
  l.frame = Frame::Global;
  EXPECT_THROW(cr_loss(l, edge_quadruples(2), target_cr(default_interpolation())), UsageError);
}
