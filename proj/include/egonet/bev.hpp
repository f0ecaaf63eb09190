#pragma once

// Bird's-eye-view figure: one arrow per object at its (x, z) ground position,
// pointing along the heading (cos yaw, -sin yaw). Ground truth and predictions
// are drawn in different colors.

#include <cstdio>
#include <string>
#include <vector>

#include "egonet/common.hpp"
#include "egonet/kitti_io.hpp"

namespace egonet {

struct BevArrow {
  std::string frame;
  bool predicted = false;
  double x = 0.0;
  double z = 0.0;
  double dx = 0.0;  ///< unit heading, x component
  double dz = 0.0;  ///< unit heading, z component
};

inline BevArrow bev_arrow(const std::string& frame, const DetectionRecord& r, bool predicted) {
  return {frame, predicted, r.location.x(), r.location.z(), std::cos(r.rotation_y), -std::sin(r.rotation_y)};
}

struct BevStyle {
  double pixels_per_meter = 8.0;
  double max_depth = 70.0;
  double half_width = 40.0;
  double arrow_length = 3.0;
};

namespace bev_detail {

inline std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.3f", v);
  std::string s(buf);
  if (s == "-0.000") s = "0.000";
  return s;
}

}  // namespace bev_detail

inline std::string bev_csv(const std::vector<BevArrow>& arrows) {
  using bev_detail::fmt;
  std::string out = "frame,kind,x,z,dx,dz\n";
  for (const auto& a : arrows)
    out += a.frame + "," + (a.predicted ? "pred" : "gt") + "," + fmt(a.x) + "," + fmt(a.z) + "," + fmt(a.dx) + "," +
           fmt(a.dz) + "\n";
  return out;
}

inline std::string bev_svg(const std::vector<BevArrow>& arrows, const BevStyle& st = {}) {
  using bev_detail::fmt;
  const double w = 2.0 * st.half_width * st.pixels_per_meter;
  const double h = st.max_depth * st.pixels_per_meter;
  auto px = [&](double x) { return (x + st.half_width) * st.pixels_per_meter; };
  auto py = [&](double z) { return (st.max_depth - z) * st.pixels_per_meter; };
  std::string out;
  out += "<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n";
  out += "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" + fmt(w) + "\" height=\"" + fmt(h) + "\" viewBox=\"0 0 " +
         fmt(w) + " " + fmt(h) + "\">\n";
  out += "<defs><marker id=\"head\" viewBox=\"0 0 10 10\" refX=\"8\" refY=\"5\" markerWidth=\"5\" markerHeight=\"5\" "
         "orient=\"auto-start-reverse\"><path d=\"M 0 0 L 10 5 L 0 10 z\" fill=\"context-stroke\"/></marker></defs>\n";
  out += "<rect x=\"0\" y=\"0\" width=\"" + fmt(w) + "\" height=\"" + fmt(h) + "\" fill=\"white\"/>\n";
  out += "<circle cx=\"" + fmt(px(0.0)) + "\" cy=\"" + fmt(py(0.0)) + "\" r=\"4\" fill=\"black\"/>\n";
  for (const auto& a : arrows) {
    const double x0 = px(a.x), y0 = py(a.z);
    const double x1 = px(a.x + st.arrow_length * a.dx), y1 = py(a.z + st.arrow_length * a.dz);
    out += "<line class=\"" + std::string(a.predicted ? "pred" : "gt") + "\" x1=\"" + fmt(x0) + "\" y1=\"" + fmt(y0) +
           "\" x2=\"" + fmt(x1) + "\" y2=\"" + fmt(y1) + "\" stroke=\"" + (a.predicted ? "#d62728" : "#2ca02c") +
           "\" stroke-width=\"2\" marker-end=\"url(#head)\"/>\n";
  }
  out += "</svg>\n";
  return out;
}

}  // namespace egonet
