#include <gtest/gtest.h>

#include <random>

#include "egonet/metrics.hpp"
#include "oracles.hpp"

using namespace egonet;

namespace {

DetectionRecord box(double l, double t, double r, double b, double alpha = 0.0, std::optional<double> score = {}) {
  DetectionRecord d;
  d.bbox = {l, t, r, b};
  d.alpha = alpha;
  d.score = score;
  return d;
}

EvalOptions plain() {
  EvalOptions o;
  o.cutoffs = cutoffs_for(Difficulty::All);
  return o;
}

EvalFrame random_frame(std::mt19937_64& rng, int max_gt, int max_pred) {
  auto s = oracle::random_scenario(rng, max_gt, max_pred);
  return {std::move(s.gt), std::move(s.pred)};
}

std::vector<std::vector<DetectionRecord>> gts_of(const std::vector<EvalFrame>& fs) {
  std::vector<std::vector<DetectionRecord>> out;
  for (const auto& f : fs) out.push_back(f.gt);
  return out;
}
std::vector<std::vector<DetectionRecord>> preds_of(const std::vector<EvalFrame>& fs) {
  std::vector<std::vector<DetectionRecord>> out;
  for (const auto& f : fs) out.push_back(f.pred);
  return out;
}

}  // namespace

TEST(Iou, Basics) {
  EXPECT_DOUBLE_EQ(iou_2d(box(0, 0, 10, 10).bbox, box(0, 0, 10, 10).bbox), 1.0);
  EXPECT_DOUBLE_EQ(iou_2d(box(0, 0, 10, 10).bbox, box(5, 0, 15, 10).bbox), 50.0 / 150.0);
  EXPECT_DOUBLE_EQ(iou_2d(box(0, 0, 10, 10).bbox, box(10, 0, 20, 10).bbox), 0.0);
}

TEST(Match, ExactBoxMatched) {
  EvalFrame f{{box(0, 0, 50, 50)}, {box(0, 0, 50, 50, 0.0, 0.9)}};
  const auto a = match_detections(f, plain());
  EXPECT_EQ(a.pred_to_gt[0], 0);
  EXPECT_EQ(a.true_positives, 1);
  EXPECT_DOUBLE_EQ(a.similarity, 1.0);
}

TEST(Match, DuplicateLowerScoreIsFalsePositive) {
  EvalFrame f{{box(0, 0, 50, 50)}, {box(0, 0, 50, 50, 0.0, 0.3), box(1, 0, 50, 50, 0.0, 0.8)}};
  const auto a = match_detections(f, plain());
  EXPECT_EQ(a.pred_to_gt[1], 0);
  EXPECT_EQ(a.pred_to_gt[0], Assignment::kFalsePositive);
}

TEST(Match, AgreesWithExhaustiveSearch) {
  std::mt19937_64 rng(21);
  for (int trial = 0; trial < 3000; ++trial) {
    EvalFrame f = random_frame(rng, 3, 3);
    const auto a = match_detections(f, plain());
    std::vector<DetectionRecord> ranked;
    for (int d : metrics_detail::ranked_predictions(f, plain())) ranked.push_back(f.pred[static_cast<std::size_t>(d)]);
    const auto b = oracle::brute_frame(f.gt, ranked, 0.7);
    ASSERT_EQ(a.true_positives, b.tp) << trial;
    ASSERT_EQ(a.false_positives, b.fp) << trial;
    ASSERT_NEAR(a.similarity, b.sim, 1e-12) << trial;
  }
}

TEST(Match, IgnoredAndDontCare) {
  DetectionRecord van = box(0, 0, 50, 50);
  van.class_name = "Van";
  DetectionRecord dc = box(100, 0, 200, 100);
  dc.class_name = "DontCare";
  EvalFrame f{{van, dc}, {box(0, 0, 50, 50, 0, 0.9), box(120, 20, 160, 60, 0, 0.8), box(300, 0, 350, 50, 0, 0.7)}};
  const auto a = match_detections(f, plain());
  EXPECT_EQ(a.pred_to_gt[0], Assignment::kIgnored);
  EXPECT_EQ(a.pred_to_gt[1], Assignment::kIgnored);
  EXPECT_EQ(a.pred_to_gt[2], Assignment::kFalsePositive);
  EXPECT_EQ(a.true_positives, 0);
}

TEST(Curve, PerfectDetector) {
  std::vector<EvalFrame> fs{{{box(0, 0, 50, 50), box(100, 0, 150, 50)},
                             {box(0, 0, 50, 50, 0, 0.9), box(100, 0, 150, 50, 0, 0.8)}}};
  const auto c = precision_recall_curve(fs, plain());
  for (double p : c.precision) EXPECT_DOUBLE_EQ(p, 1.0);
  EXPECT_DOUBLE_EQ(c.ap, 1.0);
  EXPECT_DOUBLE_EQ(c.aos, 1.0);
}

TEST(Curve, HalfMissed) {
  std::vector<EvalFrame> fs{{{box(0, 0, 50, 50), box(100, 0, 150, 50), box(200, 0, 250, 50), box(300, 0, 350, 50)},
                             {box(0, 0, 50, 50, 0, 0.9), box(100, 0, 150, 50, 0, 0.8)}}};
  const auto c = precision_recall_curve(fs, plain());
  for (int i = 0; i < kRecallPoints; ++i) EXPECT_DOUBLE_EQ(c.precision[static_cast<std::size_t>(i)], i <= 20 ? 1.0 : 0.0) << i;
  EXPECT_DOUBLE_EQ(c.ap, 21.0 / 41.0);
}

TEST(Aos, AngleAlgebra) {
  std::vector<EvalFrame> fs{{{box(0, 0, 50, 50, 0.3), box(100, 0, 150, 50, -1.0)},
                             {box(0, 0, 50, 50, 0.3, 0.9), box(100, 0, 150, 50, -1.0, 0.8)}}};
  auto r = aos(fs, plain());
  EXPECT_DOUBLE_EQ(r.aos, r.ap);
  fs[0].pred[0].alpha += kPi;
  fs[0].pred[1].alpha -= kPi;
  r = aos(fs, plain());
  EXPECT_DOUBLE_EQ(r.ap, 1.0);
  EXPECT_NEAR(r.aos, 0.0, 1e-15);
}

TEST(Aos, MatchesBruteForceAndBoundedByAp) {
  std::mt19937_64 rng(22);
  for (int trial = 0; trial < 400; ++trial) {
    std::vector<EvalFrame> fs;
    const int frames = 1 + static_cast<int>(rng() % 3);
    for (int i = 0; i < frames; ++i) fs.push_back(random_frame(rng, 3, 4));
    const auto c = precision_recall_curve(fs, plain());
    const auto b = oracle::brute_ap_aos(gts_of(fs), preds_of(fs), 0.7);
    ASSERT_NEAR(c.ap, b.ap, 1e-12) << trial;
    ASSERT_NEAR(c.aos, b.aos, 1e-12) << trial;
    ASSERT_LE(c.aos, c.ap + 1e-12);
  }
}

TEST(Aos, InvariantUnderMonotoneRescale) {
  std::mt19937_64 rng(23);
  for (int trial = 0; trial < 200; ++trial) {
    std::vector<EvalFrame> fs{random_frame(rng, 3, 4), random_frame(rng, 3, 4)};
    const auto a = precision_recall_curve(fs, plain());
    for (auto& f : fs)
      for (auto& p : f.pred) p.score = std::exp(3.0 * *p.score) + 7.0;
    const auto b = precision_recall_curve(fs, plain());
    ASSERT_EQ(a.ap, b.ap);
    ASSERT_EQ(a.aos, b.aos);
  }
}

TEST(Aos, RemovingFalsePositiveNeverLowersAp) {
  std::mt19937_64 rng(24);
  for (int trial = 0; trial < 300; ++trial) {
    std::vector<EvalFrame> fs{random_frame(rng, 3, 4)};
    const auto a = match_detections(fs[0], plain());
    const double ap = precision_recall_curve(fs, plain()).ap;
    for (std::size_t i = 0; i < fs[0].pred.size(); ++i) {
      if (a.pred_to_gt[i] != Assignment::kFalsePositive) continue;
      auto g = fs;
      g[0].pred.erase(g[0].pred.begin() + static_cast<std::ptrdiff_t>(i));
      ASSERT_GE(precision_recall_curve(g, plain()).ap, ap - 1e-12) << trial;
    }
  }
}

TEST(Difficulty, CutoffsFilterGroundTruth) {
  DetectionRecord small = box(0, 0, 50, 20);  // 20 px tall
  std::vector<EvalFrame> fs{{{small}, {box(0, 0, 50, 20, 0, 0.9)}}};
  EvalOptions o;
  o.cutoffs = cutoffs_for(Difficulty::Moderate);
  const auto c = precision_recall_curve(fs, o);
  EXPECT_EQ(c.num_gt, 0);
  EXPECT_EQ(parse_difficulty("hard"), Difficulty::Hard);
  EXPECT_THROW(parse_difficulty("medium"), ConfigError);
}

TEST(Pck, Threshold) {
  Points2 gt = Points2::Zero(33, 2);
  EXPECT_DOUBLE_EQ(pck(gt, gt, 90.0, 0.1), 1.0);
  Points2 pred = gt;
  pred.col(0).setConstant(0.2 * 90.0 / 3.0);  // every error exactly 6 px
  EXPECT_DOUBLE_EQ(pck(pred, gt, 90.0, 0.1), 0.0);
  EXPECT_DOUBLE_EQ(pck(pred, gt, 90.0, 0.2), 0.0);  // strict less-than
  EXPECT_DOUBLE_EQ(pck(pred, gt, 90.0, 0.3), 1.0);
  EXPECT_THROW(pck(pred, gt, 0.0, 0.1), DomainError);
}

TEST(Pck, MonotoneInX) {
  std::mt19937_64 rng(25);
  std::normal_distribution<double> n(0.0, 5.0);
  Points2 gt = Points2::Zero(33, 2), pred(33, 2);
  for (Eigen::Index i = 0; i < pred.size(); ++i) pred.data()[i] = n(rng);
  double prev = 0.0;
  for (double x = 0.0; x <= 1.0; x += 0.01) {
    const double v = pck(pred, gt, 60.0, x);
    EXPECT_GE(v, prev);
    prev = v;
  }
}

TEST(Aoe, BinsAndPartition) {
  const auto one = aoe_bins({{15.0, 1, 0.2}});
  for (std::size_t b = 0; b < one.cells.size(); ++b)
    for (std::size_t o = 0; o < 4; ++o) EXPECT_EQ(one.cells[b][o].has_value(), b == 1 && o == 1);

  std::mt19937_64 rng(26);
  std::uniform_real_distribution<double> depth(0.0, 70.0), err(0.0, kPi);
  std::vector<MatchedPair> pairs;
  for (int i = 0; i < 500; ++i) pairs.push_back({depth(rng), static_cast<int>(rng() % 4), err(rng)});
  const auto t = aoe_bins(pairs);
  double total = 0.0, weighted = 0.0;
  int n = 0;
  for (const auto& p : pairs)
    if (p.depth < 60.0) {
      total += p.error;
      ++n;
    }
  int counted = 0;
  for (const auto& row : t.cells)
    for (const auto& c : row)
      if (c) {
        weighted += c->mean * c->count;
        counted += c->count;
      }
  EXPECT_EQ(counted, n);
  EXPECT_EQ(t.unbinned, 500 - n);
  EXPECT_NEAR(weighted / counted, total / n, 1e-12);

  const auto zero = aoe_bins({{5.0, 0, 0.0}, {25.0, 2, 0.0}});
  for (const auto& row : zero.cells)
    for (const auto& c : row)
      if (c) {
        EXPECT_EQ(c->mean, 0.0);
      }
}

TEST(Report, CsvLayout) {
  MetricsReport r;
  r.add("ap_2d", 0.5);
  r.add("aoe_unbinned", 3);
  EXPECT_EQ(r.csv(), "metric,value\nap_2d,0.500000\naoe_unbinned,3.000000\n");
  EXPECT_NE(r.table().find("ap_2d"), std::string::npos);
}
