#pragma once

// Run configuration for the command-line tool, read from TOML. Every key must be
// known; the effective configuration can be written back as TOML.

#include <cstdint>
#include <set>
#include <sstream>
#include <string>

#include <toml.hpp>

#include "egonet/common.hpp"
#include "egonet/dataset.hpp"
#include "egonet/metrics.hpp"
#include "egonet/training.hpp"

namespace egonet {

struct GenSection {
  GenConfig gen;
  std::size_t shard_size = 20000;
};

struct TrainSection {
  TrainConfig train;
  std::string data;    ///< dataset directory
  std::string resume;  ///< checkpoint to continue from, empty for a fresh run
};

struct EvalSection {
  std::string data;
  std::string model;
  std::string split = "heldout";
  double noise_px = 0.0;
  bool oracle_psi = false;  ///< bypass the networks and align the ground-truth PSI
  double iou_threshold = 0.7;
  std::string difficulty = "all";
};

struct MetricsSection {
  std::string gt;    ///< directory of KITTI label files
  std::string pred;  ///< directory of result files with scores
  double iou_threshold = 0.7;
  std::string difficulty = "all";
  std::string class_name = "Car";
};

struct BevSection {
  std::string gt;
  std::string pred;
  double pixels_per_meter = 8.0;
  double max_depth = 70.0;
  double half_width = 40.0;
  double arrow_length = 3.0;  ///< meters
};

struct RunConfig {
  std::uint64_t seed = 0;
  GenSection gen;
  TrainSection train;
  EvalSection eval;
  MetricsSection metrics;
  BevSection bev;
};

namespace config_detail {

/// Reads keys from one table and remembers which were consumed.
class Reader {
 public:
  Reader(const toml::table* t, std::string path) : t_(t), path_(std::move(path)) {}

  template <typename T>
  void get(const std::string& key, T& out) {
    if (!t_) return;
    const toml::node* n = t_->get(key);
    if (!n) return;
    seen_.insert(key);
    if constexpr (std::is_same_v<T, bool>) {
      if (auto v = n->value_exact<bool>()) { out = *v; return; }
    } else if constexpr (std::is_same_v<T, std::string>) {
      if (auto v = n->value_exact<std::string>()) { out = *v; return; }
    } else if constexpr (std::is_integral_v<T>) {
      if (auto v = n->value_exact<std::int64_t>()) {
        if (*v < 0 && std::is_unsigned_v<T>) throw ConfigError(where(key) + " must be non-negative");
        out = static_cast<T>(*v);
        return;
      }
    } else if constexpr (std::is_floating_point_v<T>) {
      if (auto v = n->value<double>()) { out = static_cast<T>(*v); return; }
    }
    throw ConfigError(where(key) + " has the wrong type");
  }

  void get_range(const std::string& key, Range& out) {
    double v[2] = {out.lo, out.hi};
    get_array(key, v, 2);
    out = {v[0], v[1]};
  }

  void get_array(const std::string& key, double* out, std::size_t n) {
    if (!t_) return;
    const toml::node* node = t_->get(key);
    if (!node) return;
    seen_.insert(key);
    const toml::array* a = node->as_array();
    if (!a || a->size() != n) throw ConfigError(where(key) + " must be an array of " + std::to_string(n) + " numbers");
    for (std::size_t i = 0; i < n; ++i) {
      auto v = (*a)[i].value<double>();
      if (!v) throw ConfigError(where(key) + " must contain numbers");
      out[i] = *v;
    }
  }

  Reader sub(const std::string& key) {
    if (!t_) return {nullptr, path_ + key + "."};
    const toml::node* n = t_->get(key);
    if (!n) return {nullptr, path_ + key + "."};
    seen_.insert(key);
    if (!n->is_table()) throw ConfigError(where(key) + " must be a table");
    return {n->as_table(), path_ + key + "."};
  }

  /// Rejects keys that were never read.
  void finish() const {
    if (!t_) return;
    for (const auto& [k, v] : *t_) {
      const std::string key(k.str());
      if (!seen_.count(key)) throw ConfigError("unknown configuration key '" + path_ + key + "'");
    }
  }

 private:
  std::string where(const std::string& key) const { return "'" + path_ + key + "'"; }
  const toml::table* t_;
  std::string path_;
  std::set<std::string> seen_;
};

inline void read_spec(Reader r, SampleSpec& s) {
  std::string preset;
  r.get("camera", preset);
  if (preset == "kitti") s.camera = kitti_camera();
  else if (preset == "apollo") s.camera = apollo_like_camera();
  else if (!preset.empty()) throw ConfigError("unknown camera preset '" + preset + "' (kitti, apollo)");
  double k[4] = {s.camera.k.fx, s.camera.k.fy, s.camera.k.cx, s.camera.k.cy};
  r.get_array("K", k, 4);
  s.camera.k = {k[0], k[1], k[2], k[3]};
  double size[2] = {static_cast<double>(s.camera.width), static_cast<double>(s.camera.height)};
  r.get_array("image_size", size, 2);
  s.camera.width = static_cast<int>(size[0]);
  s.camera.height = static_cast<int>(size[1]);
  r.get_range("height", s.height);
  r.get_range("width", s.width);
  r.get_range("length", s.length);
  r.get_range("depth", s.depth);
  r.get_range("bottom_y", s.bottom_y);
  r.get("focal_jitter", s.focal_jitter);
  r.finish();
}

inline toml::array arr(std::initializer_list<double> v) {
  toml::array a;
  for (double x : v) a.push_back(x);
  return a;
}

inline toml::table spec_table(const SampleSpec& s) {
  return toml::table{{"K", arr({s.camera.k.fx, s.camera.k.fy, s.camera.k.cx, s.camera.k.cy})},
                     {"image_size", arr({static_cast<double>(s.camera.width), static_cast<double>(s.camera.height)})},
                     {"height", arr({s.height.lo, s.height.hi})},
                     {"width", arr({s.width.lo, s.width.hi})},
                     {"length", arr({s.length.lo, s.length.hi})},
                     {"depth", arr({s.depth.lo, s.depth.hi})},
                     {"bottom_y", arr({s.bottom_y.lo, s.bottom_y.hi})},
                     {"focal_jitter", s.focal_jitter}};
}

}  // namespace config_detail

/// Parses TOML text; `origin` names the source in error messages.
inline RunConfig parse_config(std::string_view text, const std::string& origin = "config") {
  using config_detail::Reader;
  toml::table root;
  try {
    root = toml::parse(text, origin);
  } catch (const toml::parse_error& e) {
    std::ostringstream msg;
    msg << origin << ":" << e.source().begin.line << ":" << e.source().begin.column << ": " << e.description();
    throw ConfigError(msg.str());
  }
  RunConfig c;
  Reader r(&root, "");
  r.get("seed", c.seed);

  {
    Reader g = r.sub("gen");
    auto& gc = c.gen.gen;
    g.get("labeled_images", gc.labeled_images);
    g.get("base_pairs", gc.base_pairs);
    g.get("max_instances", gc.max_instances);
    g.get("augment", gc.augment);
    g.get("unlabeled", gc.unlabeled);
    g.get("heldout_images", gc.heldout_images);
    g.get("full_rotation", gc.full_rotation);
    g.get("shard_size", c.gen.shard_size);
    config_detail::read_spec(g.sub("labeled_spec"), gc.labeled_spec);
    config_detail::read_spec(g.sub("unlabeled_spec"), gc.unlabeled_spec);
    g.finish();
  }
  {
    Reader t = r.sub("train");
    auto& tc = c.train.train;
    t.get("data", c.train.data);
    t.get("resume", c.train.resume);
    t.get("epochs", tc.epochs);
    t.get("lr", tc.lr);
    t.get("lr_decay_every", tc.lr_decay_every);
    t.get("lr_decay", tc.lr_decay);
    t.get("images_per_batch", tc.images_per_batch);
    t.get("pad_to", tc.pad_to);
    t.get("use_cr", tc.use_cr);
    t.get("cr_enable_epoch", tc.cr_enable_epoch);
    t.get("cr_gate", tc.cr_gate);
    t.get("use_refiner", tc.use_refiner);
    t.get("use_unlabeled", tc.use_unlabeled);
    t.get("train_noise_px", tc.train_noise_px);
    t.get("crop_jitter", tc.crop_jitter);
    t.get("hidden", tc.lifter.hidden);
    t.get("blocks", tc.lifter.blocks);
    t.get("dropout", tc.lifter.dropout);
    t.get("refiner_hidden", tc.refiner.hidden);
    t.get("w_2d", tc.weights.l2d);
    t.get("w_3d", tc.weights.l3d);
    t.get("w_cr", tc.weights.cr);
    t.get("w_heatmap", tc.weights.heatmap);
    t.finish();
  }
  {
    Reader e = r.sub("eval");
    e.get("data", c.eval.data);
    e.get("model", c.eval.model);
    e.get("split", c.eval.split);
    e.get("noise_px", c.eval.noise_px);
    e.get("oracle_psi", c.eval.oracle_psi);
    e.get("iou_threshold", c.eval.iou_threshold);
    e.get("difficulty", c.eval.difficulty);
    e.finish();
  }
  {
    Reader m = r.sub("metrics");
    m.get("gt", c.metrics.gt);
    m.get("pred", c.metrics.pred);
    m.get("iou_threshold", c.metrics.iou_threshold);
    m.get("difficulty", c.metrics.difficulty);
    m.get("class", c.metrics.class_name);
    m.finish();
  }
  {
    Reader b = r.sub("bev");
    b.get("gt", c.bev.gt);
    b.get("pred", c.bev.pred);
    b.get("pixels_per_meter", c.bev.pixels_per_meter);
    b.get("max_depth", c.bev.max_depth);
    b.get("half_width", c.bev.half_width);
    b.get("arrow_length", c.bev.arrow_length);
    b.finish();
  }
  r.finish();
  c.gen.gen.seed = c.seed;
  c.train.train.seed = c.seed;
  return c;
}

/// Effective configuration as TOML; parsing the result gives back the same values.
inline std::string config_to_toml(const RunConfig& c) {
  using config_detail::spec_table;
  const auto& gc = c.gen.gen;
  const auto& tc = c.train.train;
  toml::table root{
      {"seed", static_cast<std::int64_t>(c.seed)},
      {"gen", toml::table{{"labeled_images", gc.labeled_images},
                          {"base_pairs", gc.base_pairs},
                          {"max_instances", gc.max_instances},
                          {"augment", gc.augment},
                          {"unlabeled", gc.unlabeled},
                          {"heldout_images", gc.heldout_images},
                          {"full_rotation", gc.full_rotation},
                          {"shard_size", static_cast<std::int64_t>(c.gen.shard_size)},
                          {"labeled_spec", spec_table(gc.labeled_spec)},
                          {"unlabeled_spec", spec_table(gc.unlabeled_spec)}}},
      {"train", toml::table{{"data", c.train.data},
                            {"resume", c.train.resume},
                            {"epochs", tc.epochs},
                            {"lr", tc.lr},
                            {"lr_decay_every", tc.lr_decay_every},
                            {"lr_decay", tc.lr_decay},
                            {"images_per_batch", tc.images_per_batch},
                            {"pad_to", tc.pad_to},
                            {"use_cr", tc.use_cr},
                            {"cr_enable_epoch", tc.cr_enable_epoch},
                            {"cr_gate", tc.cr_gate},
                            {"use_refiner", tc.use_refiner},
                            {"use_unlabeled", tc.use_unlabeled},
                            {"train_noise_px", tc.train_noise_px},
                            {"crop_jitter", tc.crop_jitter},
                            {"hidden", tc.lifter.hidden},
                            {"blocks", tc.lifter.blocks},
                            {"dropout", tc.lifter.dropout},
                            {"refiner_hidden", tc.refiner.hidden},
                            {"w_2d", tc.weights.l2d},
                            {"w_3d", tc.weights.l3d},
                            {"w_cr", tc.weights.cr},
                            {"w_heatmap", tc.weights.heatmap}}},
      {"eval", toml::table{{"data", c.eval.data},
                           {"model", c.eval.model},
                           {"split", c.eval.split},
                           {"noise_px", c.eval.noise_px},
                           {"oracle_psi", c.eval.oracle_psi},
                           {"iou_threshold", c.eval.iou_threshold},
                           {"difficulty", c.eval.difficulty}}},
      {"metrics", toml::table{{"gt", c.metrics.gt},
                              {"pred", c.metrics.pred},
                              {"iou_threshold", c.metrics.iou_threshold},
                              {"difficulty", c.metrics.difficulty},
                              {"class", c.metrics.class_name}}},
      {"bev", toml::table{{"gt", c.bev.gt},
                          {"pred", c.bev.pred},
                          {"pixels_per_meter", c.bev.pixels_per_meter},
                          {"max_depth", c.bev.max_depth},
                          {"half_width", c.bev.half_width},
                          {"arrow_length", c.bev.arrow_length}}},
  };
  std::ostringstream out;
  out << root << "\n";
  return out.str();
}

}  // namespace egonet
