#pragma once

// Gaussian keypoint heatmaps: rendering targets, L2 loss and argmax decoding.
// Grid coordinates are local coordinates times the grid size, with cell (row,
// col) centered at integer position (col, row).

#include <limits>
#include <span>
#include <vector>

#include "egonet/common.hpp"
#include "egonet/geometry.hpp"

namespace egonet {

class HeatmapStack {
 public:
  HeatmapStack() = default;
  HeatmapStack(int channels, int grid) : channels_(channels), grid_(grid), data_(static_cast<std::size_t>(channels) * grid * grid, 0.0) {}

  int channels() const { return channels_; }
  int grid() const { return grid_; }

  double& at(int c, int row, int col) { return data_[index(c, row, col)]; }
  double at(int c, int row, int col) const { return data_[index(c, row, col)]; }

  std::span<double> channel(int c) {
    return {data_.data() + static_cast<std::size_t>(c) * grid_ * grid_, static_cast<std::size_t>(grid_) * grid_};
  }
  std::span<const double> channel(int c) const {
    return {data_.data() + static_cast<std::size_t>(c) * grid_ * grid_, static_cast<std::size_t>(grid_) * grid_};
  }
  const std::vector<double>& values() const { return data_; }
  std::vector<double>& values() { return data_; }

 private:
  std::size_t index(int c, int row, int col) const {
    return (static_cast<std::size_t>(c) * grid_ + row) * grid_ + col;
  }
  int channels_ = 0;
  int grid_ = 0;
  std::vector<double> data_;
};

/// One Gaussian dot per point; points outside [0,1]^2 leave their channel at zero.
inline HeatmapStack render(const PointSet2D& points, int grid = 64, double sigma = 1.0) {
  if (points.frame != Frame::Local) throw UsageError("heatmaps are rendered from LOCAL points");
  HeatmapStack out(static_cast<int>(points.size()), grid);
  const double inv = 1.0 / (2.0 * sigma * sigma);
  for (int c = 0; c < out.channels(); ++c) {
    const double lx = points.points(c, 0);
    const double ly = points.points(c, 1);
    if (!(lx >= 0.0 && lx <= 1.0 && ly >= 0.0 && ly <= 1.0)) continue;
    const double gx = lx * grid;
    const double gy = ly * grid;
    for (int row = 0; row < grid; ++row) {
      const double dy = row - gy;
      for (int col = 0; col < grid; ++col) {
        const double dx = col - gx;
        out.at(c, row, col) = std::exp(-(dx * dx + dy * dy) * inv);
      }
    }
  }
  return out;
}

inline double mse_loss(const HeatmapStack& pred, const HeatmapStack& gt) {
  if (pred.channels() != gt.channels() || pred.grid() != gt.grid()) throw UsageError("heatmap shapes differ");
  if (pred.values().empty()) return 0.0;
  double acc = 0.0;
  for (std::size_t i = 0; i < pred.values().size(); ++i) {
    const double d = pred.values()[i] - gt.values()[i];
    acc += d * d;
  }
  return acc / static_cast<double>(pred.values().size());
}

struct DecodedKeypoints {
  PointSet2D points;          ///< LOCAL; missing entries hold NaN
  std::vector<bool> missing;  ///< channel had no positive response
};

/// Argmax per channel plus a quarter-cell shift toward the larger neighbor.
/// Exact ties go to the lowest row-major index.
inline DecodedKeypoints decode(const HeatmapStack& stack) {
  const int g = stack.grid();
  DecodedKeypoints out{PointSet2D{Points2(stack.channels(), 2), Frame::Local},
                       std::vector<bool>(static_cast<std::size_t>(stack.channels()), false)};
  for (int c = 0; c < stack.channels(); ++c) {
    const auto ch = stack.channel(c);
    std::size_t best = 0;
    for (std::size_t i = 1; i < ch.size(); ++i)
      if (ch[i] > ch[best]) best = i;
    if (!(ch[best] > 0.0)) {
      out.missing[c] = true;
      out.points.points.row(c).setConstant(std::numeric_limits<double>::quiet_NaN());
      continue;
    }
    const int row = static_cast<int>(best) / g;
    const int col = static_cast<int>(best) % g;
    double x = col;
    double y = row;
    if (col > 0 && col < g - 1) {
      const double diff = stack.at(c, row, col + 1) - stack.at(c, row, col - 1);
      x += diff > 0.0 ? 0.25 : diff < 0.0 ? -0.25 : 0.0;
    }
    if (row > 0 && row < g - 1) {
      const double diff = stack.at(c, row + 1, col) - stack.at(c, row - 1, col);
      y += diff > 0.0 ? 0.25 : diff < 0.0 ? -0.25 : 0.0;
    }
    out.points.points(c, 0) = x / g;
    out.points.points(c, 1) = y / g;
  }
  return out;
}

}  // namespace egonet
