#include <gtest/gtest.h>

#include <random>
#include <set>

#include "egonet/dataset.hpp"
#include "oracles.hpp"

using namespace egonet;

namespace {

std::vector<Sample> one_image(int labeled_count, std::int64_t image, std::int64_t first_id) {
  std::vector<Sample> out;
  for (int i = 0; i < labeled_count; ++i) {
    Sample s;
    s.id = first_id + i;
    s.image = image;
    out.push_back(s);
  }
  return out;
}

double mean_cr_deviation(double sigma, std::uint64_t seed) {
  auto rng = derived_rng(seed, 9, 0);
  const auto interp = default_interpolation();
  const auto quads = edge_quadruples(2);
  double acc = 0.0;
  int n = 0;
  for (int i = 0; i < 300; ++i) {
    const Sample s = draw_pair(rng, SampleSpec{}, interp);
    const Points2 noisy = add_noise(s.phi_g, sigma, rng);
    for (const auto& q : quads) {
      const double v1[2] = {noisy(q.v[0], 0), noisy(q.v[0], 1)}, v2[2] = {noisy(q.v[1], 0), noisy(q.v[1], 1)};
      const double v3[2] = {noisy(q.v[2], 0), noisy(q.v[2], 1)}, v4[2] = {noisy(q.v[3], 0), noisy(q.v[3], 1)};
      const double cr = oracle::cross_ratio(v1, v2, v3, v4);
      if (!std::isfinite(cr)) continue;
      acc += std::abs(cr - 1.125);
      ++n;
    }
  }
  return acc / n;
}

}  // namespace

TEST(SampleCuboid, DeterministicUnderSeed) {
  std::mt19937_64 a(5), b(5);
  for (int i = 0; i < 100; ++i) {
    const Cuboid x = sample_cuboid(a, SampleSpec{}), y = sample_cuboid(b, SampleSpec{});
    EXPECT_EQ(x.centroid, y.centroid);
    EXPECT_EQ(x.yaw, y.yaw);
    EXPECT_EQ(x.dims.length, y.dims.length);
  }
}

TEST(SampleCuboid, RespectsRanges) {
  const SampleSpec spec;
  std::mt19937_64 rng(6);
  for (int i = 0; i < 10000; ++i) {
    const Cuboid c = sample_cuboid(rng, spec);
    ASSERT_GE(c.dims.height, spec.height.lo);
    ASSERT_LE(c.dims.height, spec.height.hi);
    ASSERT_GE(c.dims.width, spec.width.lo);
    ASSERT_LE(c.dims.width, spec.width.hi);
    ASSERT_GE(c.dims.length, spec.length.lo);
    ASSERT_LE(c.dims.length, spec.length.hi);
    ASSERT_GE(c.centroid.z(), spec.depth.lo);
    ASSERT_LE(c.centroid.z(), spec.depth.hi);
    ASSERT_GT(c.yaw, -kPi);
    ASSERT_LE(c.yaw, kPi);
  }
}

TEST(SampleCuboid, YawIsUniform) {
  std::mt19937_64 rng(7);
  const int n = 36000;
  std::vector<int> bins(36, 0);
  for (int i = 0; i < n; ++i) {
    const double y = sample_cuboid(rng, SampleSpec{}).yaw;
    ++bins[std::min(35, static_cast<int>((y + kPi) / (2 * kPi) * 36))];
  }
  double chi2 = 0.0;
  for (int b : bins) chi2 += (b - 1000.0) * (b - 1000.0) / 1000.0;
  EXPECT_LT(chi2, 57.342);  // chi-square, 35 dof, p = 0.01
}

TEST(SampleSpec, InvalidRangeRejected) {
  SampleSpec s;
  s.depth = {10.0, 5.0};
  EXPECT_THROW(s.validate(), ConfigError);
  s = SampleSpec{};
  s.depth = {-1.0, 5.0};
  EXPECT_THROW(s.validate(), ConfigError);
}

TEST(MakePair, PassesValidationAndInvertsWithKnownDepth) {
  std::mt19937_64 rng(8);
  const auto interp = default_interpolation();
  for (int i = 0; i < 500; ++i) {
    const Sample s = draw_pair(rng, SampleSpec{}, interp);
    EXPECT_NO_THROW(validate_pair(s, interp));
    EXPECT_LT(s.psi.colwise().mean().norm(), 1e-12);
    // Back-project every keypoint with its true depth: the 3D points, re-centered, are PSI.
    const auto tau = build_tau(s.cuboid, interp);
    const auto& k = s.camera.k;
    Points3 back(33, 3);
    for (int j = 0; j < 33; ++j) {
      const double z = tau.points(j, 2);
      back.row(j) << (s.phi_g(j, 0) - k.cx) * z / k.fx, (s.phi_g(j, 1) - k.cy) * z / k.fy, z;
    }
    const Points3 psi = back.bottomRows(32).rowwise() - back.row(0);
    EXPECT_LT((psi - s.psi).cwiseAbs().maxCoeff(), 1e-9);
  }
}

TEST(MakePair, BehindCameraRejected) {
  const Cuboid c{{1.5, 1.6, 4.0}, Vec3(0, 1, -10), 0.0};
  EXPECT_FALSE(make_pair(c, kitti_camera(), default_interpolation()).has_value());
}

TEST(Augment, FactorOneIsIdentity) {
  std::mt19937_64 rng(9);
  std::vector<Sample> base;
  for (int i = 0; i < 20; ++i) base.push_back(draw_pair(rng, SampleSpec{}, default_interpolation()));
  const auto out = augment_rotations(base, 1, default_interpolation(), rng);
  ASSERT_EQ(out.size(), base.size());
  for (std::size_t i = 0; i < out.size(); ++i) {
    EXPECT_EQ(out[i].phi_g, base[i].phi_g);
    EXPECT_EQ(out[i].cuboid.yaw, base[i].cuboid.yaw);
  }
}

TEST(Augment, CopiesStayConsistent) {
  std::mt19937_64 rng(10);
  const auto interp = default_interpolation();
  std::vector<Sample> base;
  for (int i = 0; i < 30; ++i) base.push_back(draw_pair(rng, SampleSpec{}, interp));
  for (bool full : {false, true}) {
    const auto out = augment_rotations(base, 10, interp, rng, full);
    EXPECT_GE(out.size(), 290u);
    EXPECT_LE(out.size(), 300u);
    for (const auto& s : out) EXPECT_NO_THROW(validate_pair(s, interp));
  }
  EXPECT_THROW(augment_rotations(base, 0, interp, rng), ConfigError);
}

TEST(Noise, ZeroSigmaUnchangedAndStdMatches) {
  std::mt19937_64 rng(11);
  Points2 p = Points2::Zero(10000, 2);
  EXPECT_EQ(add_noise(p, 0.0, rng), p);
  const Points2 q = add_noise(p, 2.0, rng);
  for (int c = 0; c < 2; ++c) {
    const double mean = q.col(c).mean();
    const double sd = std::sqrt((q.col(c).array() - mean).square().sum() / (q.rows() - 1));
    EXPECT_NEAR(sd, 2.0, 0.04);
  }
  EXPECT_THROW(add_noise(p, -1.0, rng), DomainError);
}

TEST(Noise, BreaksCrossRatioMonotonically) {
  double prev = mean_cr_deviation(0.0, 1);
  EXPECT_LT(prev, 1e-9);
  for (double sigma : {0.5, 1.0, 2.0, 4.0}) {
    const double d = mean_cr_deviation(sigma, 1);
    EXPECT_GT(d, prev) << sigma;
    prev = d;
  }
}

TEST(Batches, PaddingRule) {
  std::mt19937_64 rng(12);
  auto twelve = one_image(12, 0, 0);
  auto b = compose_mixed_batches(twelve, 100, 1, 12, rng);
  ASSERT_EQ(b.size(), 1u);
  EXPECT_EQ(b[0].unlabeled.size(), 0u);
  auto five = one_image(5, 0, 0);
  b = compose_mixed_batches(five, 100, 1, 12, rng);
  EXPECT_EQ(b[0].labeled.size(), 5u);
  EXPECT_EQ(b[0].unlabeled.size(), 7u);
  b = compose_mixed_batches(five, 0, 1, 12, rng);
  EXPECT_EQ(b[0].unlabeled.size(), 0u);
}

TEST(Batches, EpochPartition) {
  std::vector<Sample> all;
  std::mt19937_64 gen(13);
  std::int64_t id = 0;
  for (int img = 0; img < 50; ++img) {
    const int n = std::uniform_int_distribution<int>(1, 12)(gen);
    auto part = one_image(n, img, id);
    id += n;
    all.insert(all.end(), part.begin(), part.end());
  }
  std::mt19937_64 rng(14);
  const auto batches = compose_mixed_batches(all, 30, 4, 12, rng);
  std::multiset<std::size_t> seen;
  for (const auto& b : batches) {
    seen.insert(b.labeled.begin(), b.labeled.end());
    for (auto u : b.unlabeled) EXPECT_LT(u, 30u);
  }
  ASSERT_EQ(seen.size(), all.size());
  std::size_t i = 0;
  for (auto v : seen) EXPECT_EQ(v, i++);
  std::mt19937_64 again(14);
  const auto repeat = compose_mixed_batches(all, 30, 4, 12, again);
  ASSERT_EQ(repeat.size(), batches.size());
  for (std::size_t k = 0; k < batches.size(); ++k) {
    EXPECT_EQ(repeat[k].labeled, batches[k].labeled);
    EXPECT_EQ(repeat[k].unlabeled, batches[k].unlabeled);
  }
  EXPECT_THROW(compose_mixed_batches(std::vector<Sample>{}, 0, 4, 12, rng), ConfigError);
}

TEST(Generate, DeterministicAndValidated) {
  GenConfig g;
  g.seed = 3;
  g.labeled_images = 20;
  g.augment = 3;
  g.unlabeled = 50;
  g.heldout_images = 5;
  const auto a = generate_dataset(g, default_interpolation());
  const auto b = generate_dataset(g, default_interpolation());
  ASSERT_EQ(a.labeled.size(), b.labeled.size());
  for (std::size_t i = 0; i < a.labeled.size(); ++i) EXPECT_EQ(a.labeled[i].phi_g, b.labeled[i].phi_g);
  EXPECT_EQ(a.unlabeled.size(), 50u);
  for (const auto& s : a.unlabeled) {
    EXPECT_FALSE(s.labeled);
    EXPECT_EQ(s.camera.width, apollo_like_camera().width);
  }
  g.base_pairs = 77;
  g.augment = 1;
  EXPECT_EQ(generate_dataset(g, default_interpolation()).labeled.size(), 77u);
}

TEST(Generate, FullScaleAugmentationCount) {
  GenConfig g;
  g.seed = 1;
  g.base_pairs = 13650;
  const auto interp = default_interpolation();
  const auto base = dataset_detail::generate_images(g.seed, 1, 0, g.max_instances, g.labeled_spec, interp, true, 13650);
  ASSERT_EQ(base.size(), 13650u);
  auto rng = derived_rng(g.seed, 2, 0);
  std::size_t count = 0;
  augment_rotations(base, 100, interp, rng, [&count](Sample&&) { ++count; });
  EXPECT_GE(count, 1360000u);
  EXPECT_LE(count, 1370000u);
}
