#pragma once

// KITTI object-label and calibration files.
//
// Label line layout (object devkit order):
//   type truncated occluded alpha  left top right bottom  h w l  x y z  rotation_y [score]
// `location` (x, y, z) is the bottom-center of the box in the camera frame.

#include <array>
#include <cctype>
#include <charconv>
#include <optional>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "egonet/common.hpp"

namespace egonet {

struct CameraIntrinsics {
  double fx = 0.0;
  double fy = 0.0;
  double cx = 0.0;
  double cy = 0.0;

  void validate() const {
    if (!(fx > 0.0) || !(fy > 0.0)) throw DomainError("camera focal lengths must be positive");
  }
  bool operator==(const CameraIntrinsics&) const = default;
};

struct BoundingBox2D {
  double left = 0.0;
  double top = 0.0;
  double right = 0.0;
  double bottom = 0.0;

  double width() const { return right - left; }
  double height() const { return bottom - top; }
  bool operator==(const BoundingBox2D&) const = default;
};

struct DetectionRecord {
  std::string class_name = "Car";
  double truncation = 0.0;
  int occlusion = 0;
  double alpha = 0.0;
  BoundingBox2D bbox;
  double height = 0.0;
  double width = 0.0;
  double length = 0.0;
  Vec3 location = Vec3::Zero();
  double rotation_y = 0.0;
  std::optional<double> score;

  bool operator==(const DetectionRecord& o) const {
    return class_name == o.class_name && truncation == o.truncation && occlusion == o.occlusion &&
           alpha == o.alpha && bbox == o.bbox && height == o.height && width == o.width &&
           length == o.length && location == o.location && rotation_y == o.rotation_y &&
           score == o.score;
  }
};

namespace kitti_detail {

inline std::vector<std::string_view> split_ws(std::string_view line) {
  std::vector<std::string_view> out;
  std::size_t i = 0;
  while (i < line.size()) {
    while (i < line.size() && std::isspace(static_cast<unsigned char>(line[i]))) ++i;
    std::size_t j = i;
    while (j < line.size() && !std::isspace(static_cast<unsigned char>(line[j]))) ++j;
    if (j > i) out.push_back(line.substr(i, j - i));
    i = j;
  }
  return out;
}

template <typename T>
T parse_number(std::string_view token, int column, std::string_view line) {
  T value{};
  auto [ptr, ec] = std::from_chars(token.data(), token.data() + token.size(), value);
  if (ec != std::errc() || ptr != token.data() + token.size()) {
    throw ParseError("non-numeric field at column " + std::to_string(column) + " ('" +
                         std::string(token) + "') in line: " + std::string(line),
                     column);
  }
  return value;
}

inline void append_fixed(std::string& out, double v) {
  std::array<char, 64> buf{};
  auto [ptr, ec] = std::to_chars(buf.data(), buf.data() + buf.size(), v, std::chars_format::fixed, 6);
  if (ec != std::errc()) throw FormatError("value not representable in fixed notation");
  out.append(buf.data(), ptr);
}

}  // namespace kitti_detail

inline DetectionRecord parse_label_line(std::string_view line) {
  using kitti_detail::parse_number;
  const auto f = kitti_detail::split_ws(line);
  if (f.size() != 15 && f.size() != 16) {
    throw FormatError("expected 15 or 16 fields, got " + std::to_string(f.size()) +
                      " in line: " + std::string(line));
  }
  DetectionRecord r;
  r.class_name = std::string(f[0]);
  r.truncation = parse_number<double>(f[1], 1, line);
  r.occlusion = parse_number<int>(f[2], 2, line);
  r.alpha = parse_number<double>(f[3], 3, line);
  r.bbox = {parse_number<double>(f[4], 4, line), parse_number<double>(f[5], 5, line),
            parse_number<double>(f[6], 6, line), parse_number<double>(f[7], 7, line)};
  r.height = parse_number<double>(f[8], 8, line);
  r.width = parse_number<double>(f[9], 9, line);
  r.length = parse_number<double>(f[10], 10, line);
  r.location = {parse_number<double>(f[11], 11, line), parse_number<double>(f[12], 12, line),
                parse_number<double>(f[13], 13, line)};
  r.rotation_y = parse_number<double>(f[14], 14, line);
  if (f.size() == 16) r.score = parse_number<double>(f[15], 15, line);
  return r;
}

/// Parses a whole label file; blank lines are skipped. Errors are prefixed with the 1-based line number.
inline std::vector<DetectionRecord> parse_label_file(std::string_view text) {
  std::vector<DetectionRecord> out;
  std::size_t start = 0;
  int line_no = 0;
  while (start <= text.size()) {
    std::size_t end = text.find('\n', start);
    if (end == std::string_view::npos) end = text.size();
    std::string_view line = text.substr(start, end - start);
    ++line_no;
    if (!kitti_detail::split_ws(line).empty()) {
      try {
        out.push_back(parse_label_line(line));
      } catch (const ParseError& e) {
        throw ParseError("line " + std::to_string(line_no) + ": " + e.what(), e.column);
      } catch (const FormatError& e) {
        throw FormatError("line " + std::to_string(line_no) + ": " + e.what());
      }
    }
    if (end == text.size()) break;
    start = end + 1;
  }
  return out;
}

inline std::string write_label_line(const DetectionRecord& r) {
  using kitti_detail::append_fixed;
  std::string s = r.class_name;
  auto field = [&s](double v) {
    s.push_back(' ');
    append_fixed(s, v);
  };
  field(r.truncation);
  s.push_back(' ');
  s += std::to_string(r.occlusion);
  field(r.alpha);
  field(r.bbox.left);
  field(r.bbox.top);
  field(r.bbox.right);
  field(r.bbox.bottom);
  field(r.height);
  field(r.width);
  field(r.length);
  field(r.location.x());
  field(r.location.y());
  field(r.location.z());
  field(r.rotation_y);
  if (r.score) field(*r.score);
  return s;
}

/// One line per record, each terminated by '\n'. Empty input gives empty text.
inline std::string write_result_file(const std::vector<DetectionRecord>& records) {
  std::string out;
  for (const auto& r : records) {
    out += write_label_line(r);
    out.push_back('\n');
  }
  return out;
}

/// Extracts fx, fy, cx, cy from the `P2:` row (left color camera) of a KITTI calib file.
inline CameraIntrinsics parse_calibration(std::string_view text) {
  std::istringstream in{std::string(text)};
  std::string line;
  while (std::getline(in, line)) {
    const auto f = kitti_detail::split_ws(line);
    if (f.empty() || f[0] != "P2:") continue;
    if (f.size() != 13) {
      throw FormatError("P2 row must hold 12 numbers, got " + std::to_string(f.size() - 1));
    }
    std::array<double, 12> p{};
    for (int i = 0; i < 12; ++i) p[i] = kitti_detail::parse_number<double>(f[i + 1], i + 1, line);
    CameraIntrinsics k{p[0], p[5], p[2], p[6]};
    k.validate();
    return k;
  }
  throw FormatError("calibration text has no P2 row");
}

}  // namespace egonet
