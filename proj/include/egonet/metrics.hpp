#pragma once

// Joint detection / orientation evaluation: 2D matching, 41-point precision
// and orientation-similarity sweeps (AP, AOS), PCK and binned orientation error.
//
// Matching. Within a frame, detections are ranked by score (ties by index).
// A detection is accepted as a true positive when the set of already accepted
// detections plus itself can still be matched one-to-one to distinct ground
// truths with IoU >= threshold. This greedy-by-score rule yields the
// lexicographically best matched set; among assignments realizing that set,
// the one with maximal total IoU pairs detections with ground truths.

#include <algorithm>
#include <array>
#include <cstdio>
#include <limits>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "egonet/common.hpp"
#include "egonet/kitti_io.hpp"
#include "egonet/pose.hpp"

namespace egonet {

inline double iou_2d(const BoundingBox2D& a, const BoundingBox2D& b) {
  const double iw = std::min(a.right, b.right) - std::max(a.left, b.left);
  const double ih = std::min(a.bottom, b.bottom) - std::max(a.top, b.top);
  if (iw <= 0.0 || ih <= 0.0) return 0.0;
  const double inter = iw * ih;
  const double uni = a.width() * a.height() + b.width() * b.height() - inter;
  return uni > 0.0 ? inter / uni : 0.0;
}

/// Orientation similarity of one true positive.
inline double orientation_similarity(double delta) { return (1.0 + std::cos(delta)) / 2.0; }

struct DifficultyCutoffs {
  double min_height = 0.0;    ///< pixels
  int max_occlusion = 3;
  double max_truncation = 1.0;
};

enum class Difficulty { Easy, Moderate, Hard, All };

/// Object devkit defaults.
inline DifficultyCutoffs cutoffs_for(Difficulty d) {
  switch (d) {
    case Difficulty::Easy: return {40.0, 0, 0.15};
    case Difficulty::Moderate: return {25.0, 1, 0.30};
    case Difficulty::Hard: return {25.0, 2, 0.50};
    case Difficulty::All: break;
  }
  return {0.0, 3, 1.0};
}

inline std::string to_string(Difficulty d) {
  switch (d) {
    case Difficulty::Easy: return "easy";
    case Difficulty::Moderate: return "moderate";
    case Difficulty::Hard: return "hard";
    case Difficulty::All: break;
  }
  return "all";
}

inline Difficulty parse_difficulty(const std::string& s) {
  if (s == "easy") return Difficulty::Easy;
  if (s == "moderate") return Difficulty::Moderate;
  if (s == "hard") return Difficulty::Hard;
  if (s == "all") return Difficulty::All;
  throw ConfigError("unknown difficulty '" + s + "' (easy, moderate, hard, all)");
}

struct EvalOptions {
  double iou_threshold = 0.7;
  std::string class_name = "Car";
  std::string neighbor_class = "Van";  ///< ground truths of this class are ignored, not missed
  DifficultyCutoffs cutoffs = cutoffs_for(Difficulty::All);
};

struct EvalFrame {
  std::vector<DetectionRecord> gt;
  std::vector<DetectionRecord> pred;  ///< every prediction carries a score
};

/// Outcome for each prediction of a frame.
struct Assignment {
  static constexpr int kFalsePositive = -1;
  static constexpr int kIgnored = -2;   ///< matched a don't-care object, or too small to count
  static constexpr int kExcluded = -3;  ///< other class, or below the score cutoff
  std::vector<int> pred_to_gt;
  int true_positives = 0;
  int false_positives = 0;
  double similarity = 0.0;  ///< sum of orientation similarity over true positives, in rank order
};

namespace metrics_detail {

/// Kuhn augmenting path over allowed edges.
inline bool augment(int d, const std::vector<std::vector<int>>& adj, std::vector<int>& gt_owner, std::vector<char>& seen) {
  for (int g : adj[static_cast<std::size_t>(d)]) {
    if (seen[static_cast<std::size_t>(g)]) continue;
    seen[static_cast<std::size_t>(g)] = 1;
    if (gt_owner[static_cast<std::size_t>(g)] < 0 || augment(gt_owner[static_cast<std::size_t>(g)], adj, gt_owner, seen)) {
      gt_owner[static_cast<std::size_t>(g)] = d;
      return true;
    }
  }
  return false;
}

/// Greedy matroid selection: visits detections in `order`, keeps each one that
/// can join a complete matching of the kept set.
inline std::vector<int> lex_greedy(const std::vector<int>& order, const std::vector<std::vector<int>>& adj, int n_gt) {
  std::vector<int> kept;
  std::vector<int> owner(static_cast<std::size_t>(n_gt), -1);
  for (int d : order) {
    std::vector<int> trial = owner;
    std::vector<char> seen(static_cast<std::size_t>(n_gt), 0);
    if (augment(d, adj, trial, seen)) {
      owner = std::move(trial);
      kept.push_back(d);
    }
  }
  return kept;
}

/// Maximum-weight assignment of every row to a distinct column (rows <= cols);
/// weight[r][c] < 0 marks a forbidden pair. Returns the column of each row.
inline std::vector<int> max_weight_assignment(const std::vector<std::vector<double>>& weight, int cols) {
  const int n = static_cast<int>(weight.size());
  const int m = cols;
  if (n == 0) return {};
  const double big = 1e6;
  const double inf = std::numeric_limits<double>::infinity();
  auto cost = [&](int r, int c) { return weight[r][c] < 0.0 ? big : -weight[r][c]; };
  std::vector<double> u(n + 1, 0.0), v(m + 1, 0.0);
  std::vector<int> p(m + 1, 0), way(m + 1, 0);
  for (int i = 1; i <= n; ++i) {
    p[0] = i;
    int j0 = 0;
    std::vector<double> minv(m + 1, inf);
    std::vector<char> used(m + 1, 0);
    do {
      used[j0] = 1;
      const int i0 = p[j0];
      double delta = inf;
      int j1 = 0;
      for (int j = 1; j <= m; ++j) {
        if (used[j]) continue;
        const double cur = cost(i0 - 1, j - 1) - u[i0] - v[j];
        if (cur < minv[j]) {
          minv[j] = cur;
          way[j] = j0;
        }
        if (minv[j] < delta) {
          delta = minv[j];
          j1 = j;
        }
      }
      for (int j = 0; j <= m; ++j) {
        if (used[j]) {
          u[p[j]] += delta;
          v[j] -= delta;
        } else {
          minv[j] -= delta;
        }
      }
      j0 = j1;
    } while (p[j0] != 0);
    do {
      const int j1 = way[j0];
      p[j0] = p[j1];
      j0 = j1;
    } while (j0 != 0);
  }
  std::vector<int> out(static_cast<std::size_t>(n), -1);
  for (int j = 1; j <= m; ++j)
    if (p[j] != 0) out[static_cast<std::size_t>(p[j] - 1)] = j - 1;
  return out;
}

inline bool same_class(const std::string& a, const std::string& b) {
  if (a.size() != b.size()) return false;
  for (std::size_t i = 0; i < a.size(); ++i)
    if (std::tolower(static_cast<unsigned char>(a[i])) != std::tolower(static_cast<unsigned char>(b[i]))) return false;
  return true;
}

enum class GtRole { Valid, Ignored, DontCare, Other };

inline GtRole classify_gt(const DetectionRecord& g, const EvalOptions& opt) {
  if (same_class(g.class_name, "DontCare")) return GtRole::DontCare;
  if (same_class(g.class_name, opt.neighbor_class)) return GtRole::Ignored;
  if (!same_class(g.class_name, opt.class_name)) return GtRole::Other;
  const auto& c = opt.cutoffs;
  if (g.occlusion > c.max_occlusion || g.truncation > c.max_truncation || g.bbox.height() < c.min_height)
    return GtRole::Ignored;
  return GtRole::Valid;
}

/// Predictions of the target class ranked by score (descending), ties by index.
inline std::vector<int> ranked_predictions(const EvalFrame& f, const EvalOptions& opt) {
  std::vector<int> order;
  for (int i = 0; i < static_cast<int>(f.pred.size()); ++i)
    if (same_class(f.pred[static_cast<std::size_t>(i)].class_name, opt.class_name)) order.push_back(i);
  std::stable_sort(order.begin(), order.end(), [&](int a, int b) {
    return f.pred[static_cast<std::size_t>(a)].score.value_or(0.0) > f.pred[static_cast<std::size_t>(b)].score.value_or(0.0);
  });
  return order;
}

}  // namespace metrics_detail

/// Matches the first `count` ranked predictions of a frame (all when count < 0).
inline Assignment match_detections(const EvalFrame& f, const EvalOptions& opt, int count = -1) {
  using namespace metrics_detail;
  Assignment a;
  a.pred_to_gt.assign(f.pred.size(), Assignment::kExcluded);
  std::vector<int> order = ranked_predictions(f, opt);
  if (count >= 0 && count < static_cast<int>(order.size())) order.resize(static_cast<std::size_t>(count));

  std::vector<int> valid, ignored, dontcare;
  for (int g = 0; g < static_cast<int>(f.gt.size()); ++g) {
    switch (classify_gt(f.gt[static_cast<std::size_t>(g)], opt)) {
      case GtRole::Valid: valid.push_back(g); break;
      case GtRole::Ignored: ignored.push_back(g); break;
      case GtRole::DontCare: dontcare.push_back(g); break;
      case GtRole::Other: break;
    }
  }
  auto adjacency = [&](const std::vector<int>& gts) {
    std::vector<std::vector<int>> adj(f.pred.size());
    for (int d : order)
      for (int k = 0; k < static_cast<int>(gts.size()); ++k)
        if (iou_2d(f.pred[static_cast<std::size_t>(d)].bbox, f.gt[static_cast<std::size_t>(gts[static_cast<std::size_t>(k)])].bbox) >= opt.iou_threshold)
          adj[static_cast<std::size_t>(d)].push_back(k);
    return adj;
  };

  // True positives against valid ground truth.
  const auto adj_valid = adjacency(valid);
  const std::vector<int> kept = lex_greedy(order, adj_valid, static_cast<int>(valid.size()));
  std::vector<std::vector<double>> w(kept.size(), std::vector<double>(valid.size(), -1.0));
  for (std::size_t r = 0; r < kept.size(); ++r)
    for (int k : adj_valid[static_cast<std::size_t>(kept[r])])
      w[r][static_cast<std::size_t>(k)] =
          iou_2d(f.pred[static_cast<std::size_t>(kept[r])].bbox, f.gt[static_cast<std::size_t>(valid[static_cast<std::size_t>(k)])].bbox);
  const auto cols = max_weight_assignment(w, static_cast<int>(valid.size()));
  for (std::size_t r = 0; r < kept.size(); ++r) a.pred_to_gt[static_cast<std::size_t>(kept[r])] = valid[static_cast<std::size_t>(cols[r])];

  // Remaining detections: absorbed by ignored objects or don't-care regions, else false positives.
  std::vector<int> rest;
  for (int d : order)
    if (a.pred_to_gt[static_cast<std::size_t>(d)] == Assignment::kExcluded) rest.push_back(d);
  const auto adj_ign = adjacency(ignored);
  for (int d : lex_greedy(rest, adj_ign, static_cast<int>(ignored.size()))) a.pred_to_gt[static_cast<std::size_t>(d)] = Assignment::kIgnored;
  for (int d : rest) {
    auto& slot = a.pred_to_gt[static_cast<std::size_t>(d)];
    if (slot != Assignment::kExcluded) continue;
    const auto& box = f.pred[static_cast<std::size_t>(d)].bbox;
    bool absorbed = box.height() < opt.cutoffs.min_height;
    for (int g : dontcare) {
      const auto& dc = f.gt[static_cast<std::size_t>(g)].bbox;
      const double iw = std::min(box.right, dc.right) - std::max(box.left, dc.left);
      const double ih = std::min(box.bottom, dc.bottom) - std::max(box.top, dc.top);
      const double area = box.width() * box.height();
      if (iw > 0.0 && ih > 0.0 && area > 0.0 && iw * ih / area >= opt.iou_threshold) absorbed = true;
    }
    slot = absorbed ? Assignment::kIgnored : Assignment::kFalsePositive;
  }

  for (int d : order) {
    const int g = a.pred_to_gt[static_cast<std::size_t>(d)];
    if (g >= 0) {
      ++a.true_positives;
      a.similarity += orientation_similarity(f.pred[static_cast<std::size_t>(d)].alpha - f.gt[static_cast<std::size_t>(g)].alpha);
    } else if (g == Assignment::kFalsePositive) {
      ++a.false_positives;
    }
  }
  return a;
}

inline constexpr int kRecallPoints = 41;

struct SweepPoint {
  double threshold = 0.0;
  int tp = 0;
  int fp = 0;
  double similarity = 0.0;
};

struct PrCurve {
  int num_gt = 0;
  std::vector<SweepPoint> sweep;  ///< one entry per distinct score, descending
  std::array<double, kRecallPoints> precision{};  ///< right envelope at r = i/40
  std::array<double, kRecallPoints> os{};         ///< right envelope of orientation similarity
  double ap = 0.0;
  double aos = 0.0;
};

/// Sweeps every distinct score as a cutoff, then interpolates precision and
/// orientation similarity at the 41 recall levels {0, 0.025, ..., 1}.
inline PrCurve precision_recall_curve(const std::vector<EvalFrame>& frames, const EvalOptions& opt = {}) {
  using namespace metrics_detail;
  PrCurve c;
  std::vector<double> scores;
  std::vector<std::vector<int>> ranked(frames.size());
  for (std::size_t f = 0; f < frames.size(); ++f) {
    for (const auto& g : frames[f].gt)
      if (classify_gt(g, opt) == GtRole::Valid) ++c.num_gt;
    ranked[f] = ranked_predictions(frames[f], opt);
    for (int d : ranked[f]) scores.push_back(frames[f].pred[static_cast<std::size_t>(d)].score.value_or(0.0));
  }
  std::sort(scores.begin(), scores.end(), std::greater<>());
  scores.erase(std::unique(scores.begin(), scores.end()), scores.end());

  // Per-frame results for each prefix length, computed once.
  std::vector<std::vector<Assignment>> prefix(frames.size());
  for (std::size_t f = 0; f < frames.size(); ++f)
    for (int k = 0; k <= static_cast<int>(ranked[f].size()); ++k) prefix[f].push_back(match_detections(frames[f], opt, k));

  for (double t : scores) {
    SweepPoint p;
    p.threshold = t;
    for (std::size_t f = 0; f < frames.size(); ++f) {
      int k = 0;
      while (k < static_cast<int>(ranked[f].size()) &&
             frames[f].pred[static_cast<std::size_t>(ranked[f][static_cast<std::size_t>(k)])].score.value_or(0.0) >= t)
        ++k;
      const Assignment& a = prefix[f][static_cast<std::size_t>(k)];
      p.tp += a.true_positives;
      p.fp += a.false_positives;
      p.similarity += a.similarity;
    }
    c.sweep.push_back(p);
  }

  if (c.num_gt == 0) return c;
  for (int i = 0; i < kRecallPoints; ++i) {
    const double r = static_cast<double>(i) / 40.0;
    double best_p = 0.0, best_os = 0.0;
    for (const auto& p : c.sweep) {
      if (p.tp + p.fp == 0) continue;
      const double recall = static_cast<double>(p.tp) / static_cast<double>(c.num_gt);
      if (recall < r) continue;
      best_p = std::max(best_p, static_cast<double>(p.tp) / static_cast<double>(p.tp + p.fp));
      best_os = std::max(best_os, p.similarity / static_cast<double>(p.tp + p.fp));
    }
    c.precision[static_cast<std::size_t>(i)] = best_p;
    c.os[static_cast<std::size_t>(i)] = best_os;
  }
  double sp = 0.0, so = 0.0;
  for (int i = 0; i < kRecallPoints; ++i) {
    sp += c.precision[static_cast<std::size_t>(i)];
    so += c.os[static_cast<std::size_t>(i)];
  }
  c.ap = sp / kRecallPoints;
  c.aos = so / kRecallPoints;
  return c;
}

struct AosResult {
  double ap = 0.0;
  double aos = 0.0;
  std::map<std::string, std::pair<double, double>> by_difficulty;  ///< name -> (AP, AOS)
};

/// AP and AOS for the given options, plus the easy/moderate/hard breakdown.
inline AosResult aos(const std::vector<EvalFrame>& frames, const EvalOptions& opt = {}) {
  AosResult r;
  const auto c = precision_recall_curve(frames, opt);
  r.ap = c.ap;
  r.aos = c.aos;
  for (Difficulty d : {Difficulty::Easy, Difficulty::Moderate, Difficulty::Hard}) {
    EvalOptions o = opt;
    o.cutoffs = cutoffs_for(d);
    const auto cd = precision_recall_curve(frames, o);
    r.by_difficulty[to_string(d)] = {cd.ap, cd.aos};
  }
  return r;
}

/// Fraction of keypoints whose pixel error is strictly below X * (bbox_height / 3).
inline double pck(const Points2& pred, const Points2& gt, double bbox_height, double x) {
  if (pred.rows() != gt.rows()) throw UsageError("PCK point counts differ");
  if (!(bbox_height > 0.0)) throw DomainError("PCK needs a positive box height");
  if (pred.rows() == 0) return 1.0;
  const double thr = x * bbox_height / 3.0;
  int ok = 0;
  for (Eigen::Index i = 0; i < pred.rows(); ++i)
    if ((pred.row(i) - gt.row(i)).norm() < thr) ++ok;
  return static_cast<double>(ok) / static_cast<double>(pred.rows());
}

// ---------------------------------------------------------------------------
// Average orientation error by depth range and occlusion level.

struct MatchedPair {
  double depth = 0.0;  ///< ground-truth z, meters
  int occlusion = 0;
  double error = 0.0;  ///< egocentric yaw error, radians
};

struct AoeCell {
  double mean = 0.0;
  int count = 0;
};

struct AoeTable {
  std::vector<double> edges;                              ///< depth bin edges, bins [e_i, e_{i+1})
  std::vector<std::array<std::optional<AoeCell>, 4>> cells;  ///< [bin][occlusion]; empty bins absent
  int unbinned = 0;                                       ///< pairs outside the edges or levels
};

inline std::vector<double> default_depth_edges() { return {0, 10, 20, 30, 40, 50, 60}; }

inline AoeTable aoe_bins(const std::vector<MatchedPair>& pairs, std::vector<double> edges = default_depth_edges()) {
  if (edges.size() < 2 || !std::is_sorted(edges.begin(), edges.end())) throw ConfigError("depth edges must be increasing");
  AoeTable t;
  t.edges = std::move(edges);
  const std::size_t bins = t.edges.size() - 1;
  std::vector<std::array<double, 4>> sum(bins, {0, 0, 0, 0});
  std::vector<std::array<int, 4>> cnt(bins, {0, 0, 0, 0});
  for (const auto& p : pairs) {
    const auto it = std::upper_bound(t.edges.begin(), t.edges.end(), p.depth);
    if (it == t.edges.begin() || it == t.edges.end() || p.occlusion < 0 || p.occlusion > 3) {
      ++t.unbinned;
      continue;
    }
    const auto b = static_cast<std::size_t>(it - t.edges.begin() - 1);
    sum[b][static_cast<std::size_t>(p.occlusion)] += p.error;
    ++cnt[b][static_cast<std::size_t>(p.occlusion)];
  }
  t.cells.resize(bins);
  for (std::size_t b = 0; b < bins; ++b)
    for (std::size_t o = 0; o < 4; ++o)
      if (cnt[b][o] > 0) t.cells[b][o] = AoeCell{sum[b][o] / cnt[b][o], cnt[b][o]};
  return t;
}

// ---------------------------------------------------------------------------
// Report: ordered (name, value) rows emitted as CSV or as an aligned table.

struct MetricsReport {
  std::vector<std::pair<std::string, double>> rows;

  void add(std::string name, double value) { rows.emplace_back(std::move(name), value); }

  std::string csv() const {
    std::string out = "metric,value\n";
    char buf[64];
    for (const auto& [k, v] : rows) {
      std::snprintf(buf, sizeof(buf), "%.6f", v);
      out += k + "," + buf + "\n";
    }
    return out;
  }

  std::string table() const {
    std::size_t w = 6;
    for (const auto& r : rows) w = std::max(w, r.first.size());
    std::string out;
    char buf[64];
    for (const auto& [k, v] : rows) {
      std::snprintf(buf, sizeof(buf), "%12.4f", v);
      out += k + std::string(w - k.size() + 2, ' ') + buf + "\n";
    }
    return out;
  }
};

/// Appends AP/AOS rows for the selected regime and each difficulty.
inline void add_detection_rows(MetricsReport& rep, const AosResult& r) {
  rep.add("ap_2d", r.ap);
  rep.add("aos", r.aos);
  for (const char* d : {"easy", "moderate", "hard"}) {
    const auto it = r.by_difficulty.find(d);
    if (it == r.by_difficulty.end()) continue;
    rep.add(std::string("ap_2d_") + d, it->second.first);
    rep.add(std::string("aos_") + d, it->second.second);
  }
}

/// Appends one mean-error row (degrees) and one count row per non-empty AOE cell.
inline void add_aoe_rows(MetricsReport& rep, const AoeTable& t) {
  char name[96];
  for (std::size_t b = 0; b < t.cells.size(); ++b)
    for (std::size_t o = 0; o < 4; ++o) {
      if (!t.cells[b][o]) continue;
      std::snprintf(name, sizeof(name), "aoe_deg_depth_%g_%g_occ%zu", t.edges[b], t.edges[b + 1], o);
      rep.add(name, t.cells[b][o]->mean * 180.0 / kPi);
      std::snprintf(name, sizeof(name), "aoe_count_depth_%g_%g_occ%zu", t.edges[b], t.edges[b + 1], o);
      rep.add(name, t.cells[b][o]->count);
    }
  rep.add("aoe_unbinned", t.unbinned);
}

}  // namespace egonet
