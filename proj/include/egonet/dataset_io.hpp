#pragma once

// Dataset files: gzip-compressed JSON-lines shards plus a manifest.json with the
// generator settings and per-split counts. Numbers are written in shortest
// round-trip form, so reading a shard back reproduces every sample exactly.

#include <zlib.h>

#include <filesystem>
#include <fstream>
#include <memory>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "egonet/common.hpp"
#include "egonet/dataset.hpp"

namespace egonet {

using Json = nlohmann::json;

namespace dataset_io_detail {

inline Json flat(const double* p, Eigen::Index n) { return Json(std::vector<double>(p, p + n)); }

inline void read_flat(const Json& j, double* out, Eigen::Index n, const char* what) {
  if (!j.is_array() || static_cast<Eigen::Index>(j.size()) != n)
    throw FormatError(std::string("field '") + what + "' must hold " + std::to_string(n) + " numbers");
  for (Eigen::Index i = 0; i < n; ++i) out[i] = j[static_cast<std::size_t>(i)].get<double>();
}

struct GzFile {
  gzFile f = nullptr;
  GzFile(const std::string& path, const char* mode) : f(gzopen(path.c_str(), mode)) {
    if (!f) throw Error("cannot open '" + path + "'");
  }
  ~GzFile() {
    if (f) gzclose(f);
  }
  GzFile(const GzFile&) = delete;
  GzFile& operator=(const GzFile&) = delete;
};

}  // namespace dataset_io_detail

inline Json range_to_json(const Range& r) { return Json::array({r.lo, r.hi}); }

inline Json camera_to_json(const CameraModel& c) {
  return {{"K", {c.k.fx, c.k.fy, c.k.cx, c.k.cy}}, {"image_size", {c.width, c.height}}};
}

inline Json spec_to_json(const SampleSpec& s) {
  return {{"height", range_to_json(s.height)},      {"width", range_to_json(s.width)},
          {"length", range_to_json(s.length)},      {"depth", range_to_json(s.depth)},
          {"bottom_y", range_to_json(s.bottom_y)},  {"camera", camera_to_json(s.camera)},
          {"focal_jitter", s.focal_jitter}};
}

inline Json sample_to_json(const Sample& s) {
  using dataset_io_detail::flat;
  const AffineCrop crop = s.crop();
  const Points2 local = to_local(s.global(), crop).points;
  Json j;
  j["id"] = s.id;
  j["image"] = s.image;
  j["labeled"] = s.labeled;
  j["K"] = {s.camera.k.fx, s.camera.k.fy, s.camera.k.cx, s.camera.k.cy};
  j["image_size"] = {s.camera.width, s.camera.height};
  j["visibility"] = s.visibility;
  j["phi_g"] = flat(s.phi_g.data(), s.phi_g.size());
  j["phi_l"] = flat(local.data(), local.size());
  j["crop"] = {crop.scale, crop.translation.x(), crop.translation.y(), crop.patch_size};
  if (s.labeled) {
    j["psi"] = flat(s.psi.data(), s.psi.size());
    const auto& c = s.cuboid;
    j["cuboid"] = {{"h", c.dims.height}, {"w", c.dims.width}, {"l", c.dims.length},
                   {"x", c.centroid.x()}, {"y", c.centroid.y()}, {"z", c.centroid.z()}, {"yaw", c.yaw}};
  }
  return j;
}

inline Sample sample_from_json(const Json& j) {
  using dataset_io_detail::read_flat;
  try {
    Sample s;
    s.id = j.at("id").get<std::int64_t>();
    s.image = j.at("image").get<std::int64_t>();
    s.labeled = j.at("labeled").get<bool>();
    double k[4];
    read_flat(j.at("K"), k, 4, "K");
    s.camera.k = {k[0], k[1], k[2], k[3]};
    s.camera.k.validate();
    s.camera.width = j.at("image_size").at(0).get<int>();
    s.camera.height = j.at("image_size").at(1).get<int>();
    s.visibility = j.at("visibility").get<double>();
    s.phi_g.resize(tau_count(2), 2);
    read_flat(j.at("phi_g"), s.phi_g.data(), s.phi_g.size(), "phi_g");
    if (s.labeled) {
      s.psi.resize(psi_count(2), 3);
      read_flat(j.at("psi"), s.psi.data(), s.psi.size(), "psi");
      const Json& c = j.at("cuboid");
      s.cuboid.dims = {c.at("h").get<double>(), c.at("w").get<double>(), c.at("l").get<double>()};
      s.cuboid.centroid = Vec3(c.at("x").get<double>(), c.at("y").get<double>(), c.at("z").get<double>());
      s.cuboid.yaw = c.at("yaw").get<double>();
    } else {
      s.psi.resize(0, 3);
    }
    return s;
  } catch (const Json::exception& e) {
    throw FormatError(std::string("malformed sample record: ") + e.what());
  }
}

/// Streams samples of one split into numbered shards `<split>-00000.jsonl.gz`, ...
class ShardWriter {
 public:
  ShardWriter(std::filesystem::path dir, std::string split, std::size_t per_shard = 20000)
      : dir_(std::move(dir)), split_(std::move(split)), per_shard_(per_shard) {
    if (per_shard_ == 0) throw ConfigError("shard size must be positive");
  }

  void write(const Sample& s) {
    if (!file_ || in_shard_ == per_shard_) open_next();
    const std::string line = sample_to_json(s).dump() + "\n";
    if (gzwrite(file_->f, line.data(), static_cast<unsigned>(line.size())) != static_cast<int>(line.size()))
      throw Error("write failed in split '" + split_ + "'");
    ++in_shard_;
    ++count_;
  }

  /// Flushes and closes the last shard; returns the shard file names.
  std::vector<std::string> finish() {
    file_.reset();
    return shards_;
  }
  std::size_t count() const { return count_; }

 private:
  void open_next() {
    char name[64];
    std::snprintf(name, sizeof(name), "%s-%05zu.jsonl.gz", split_.c_str(), shards_.size());
    shards_.emplace_back(name);
    file_.reset();
    file_ = std::make_unique<dataset_io_detail::GzFile>((dir_ / name).string(), "wb6");
    in_shard_ = 0;
  }

  std::filesystem::path dir_;
  std::string split_;
  std::size_t per_shard_;
  std::unique_ptr<dataset_io_detail::GzFile> file_;
  std::vector<std::string> shards_;
  std::size_t in_shard_ = 0;
  std::size_t count_ = 0;
};

inline std::vector<Sample> read_shard(const std::filesystem::path& path) {
  dataset_io_detail::GzFile in(path.string(), "rb");
  std::vector<Sample> out;
  std::string line;
  char buf[1 << 16];
  std::size_t lineno = 0;
  auto flush = [&] {
    ++lineno;
    if (line.empty()) return;
    try {
      out.push_back(sample_from_json(Json::parse(line)));
    } catch (const Json::parse_error& e) {
      throw FormatError(path.string() + ":" + std::to_string(lineno) + ": " + e.what());
    } catch (const FormatError& e) {
      throw FormatError(path.string() + ":" + std::to_string(lineno) + ": " + e.what());
    }
    line.clear();
  };
  while (gzgets(in.f, buf, sizeof(buf)) != nullptr) {
    std::string_view chunk(buf);
    if (!chunk.empty() && chunk.back() == '\n') {
      line.append(chunk.substr(0, chunk.size() - 1));
      flush();
    } else {
      line.append(chunk);
    }
  }
  int err = 0;
  gzerror(in.f, &err);
  if (err != Z_OK && err != Z_STREAM_END) throw FormatError(path.string() + ": corrupt gzip stream");
  if (!line.empty()) flush();
  return out;
}

struct DatasetManifest {
  Json json;
  std::vector<std::string> shards(const std::string& split) const {
    std::vector<std::string> out;
    if (json.contains("splits") && json["splits"].contains(split))
      for (const auto& s : json["splits"][split]["shards"]) out.push_back(s.get<std::string>());
    return out;
  }
  std::size_t count(const std::string& split) const {
    if (json.contains("splits") && json["splits"].contains(split)) return json["splits"][split]["count"].get<std::size_t>();
    return 0;
  }
};

inline Json gen_config_to_json(const GenConfig& g) {
  return {{"seed", g.seed},
          {"labeled_images", g.labeled_images},
          {"base_pairs", g.base_pairs},
          {"max_instances", g.max_instances},
          {"augment", g.augment},
          {"unlabeled", g.unlabeled},
          {"heldout_images", g.heldout_images},
          {"full_rotation", g.full_rotation},
          {"labeled_spec", spec_to_json(g.labeled_spec)},
          {"unlabeled_spec", spec_to_json(g.unlabeled_spec)}};
}

/// Writes all three splits and manifest.json into `dir` (which must exist).
inline DatasetManifest write_dataset(const std::filesystem::path& dir, const Dataset& ds, const GenConfig& cfg,
                                     std::size_t per_shard = 20000) {
  Json splits = Json::object();
  for (const auto& [name, part] : {std::pair<std::string, const std::vector<Sample>*>{"labeled", &ds.labeled},
                                   {"unlabeled", &ds.unlabeled},
                                   {"heldout", &ds.heldout}}) {
    ShardWriter w(dir, name, per_shard);
    for (const auto& s : *part) w.write(s);
    const auto shards = w.finish();
    splits[name] = {{"count", part->size()}, {"shards", shards}};
  }
  DatasetManifest m;
  m.json = {{"format", "egonet-dataset"}, {"version", 1}, {"seed", cfg.seed}, {"spec", gen_config_to_json(cfg)},
            {"splits", splits}};
  std::ofstream out(dir / "manifest.json", std::ios::binary);
  out << m.json.dump(2) << "\n";
  if (!out) throw Error("cannot write manifest in '" + dir.string() + "'");
  return m;
}

inline DatasetManifest read_manifest(const std::filesystem::path& dir) {
  std::ifstream in(dir / "manifest.json", std::ios::binary);
  if (!in) throw UsageError("no manifest.json in '" + dir.string() + "'");
  DatasetManifest m;
  try {
    m.json = Json::parse(in);
  } catch (const Json::parse_error& e) {
    throw FormatError("manifest.json: " + std::string(e.what()));
  }
  if (m.json.value("format", "") != "egonet-dataset") throw FormatError("manifest.json is not a dataset manifest");
  return m;
}

/// Loads one split, checking the record count against the manifest.
inline std::vector<Sample> read_split(const std::filesystem::path& dir, const std::string& split) {
  const DatasetManifest m = read_manifest(dir);
  std::vector<Sample> out;
  for (const auto& shard : m.shards(split)) {
    auto part = read_shard(dir / shard);
    out.insert(out.end(), std::make_move_iterator(part.begin()), std::make_move_iterator(part.end()));
  }
  if (out.size() != m.count(split))
    throw FormatError("split '" + split + "' holds " + std::to_string(out.size()) + " records, manifest says " +
                      std::to_string(m.count(split)));
  return out;
}

}  // namespace egonet
