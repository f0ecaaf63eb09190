// egonet: dataset generation, training, evaluation, metrics and BEV figures.
//
//   egonet gen     --out DIR [--config FILE] [--seed N] [--pairs N] [--augment N] ...
//   egonet train   --out DIR --data DIR [--resume CKPT] [--epochs N] ...
//   egonet eval    --out DIR --data DIR --model CKPT [--noise PX] [--oracle-psi]
//   egonet metrics --out DIR --gt DIR --pred DIR [--difficulty easy|moderate|hard|all]
//   egonet bev     --out DIR --gt DIR --pred DIR
//
// Exit codes: 0 success, 1 user error (bad flags, config or input files), 2 internal error.
// EGONET_LOG=quiet|info|debug sets stderr verbosity.

#include <CLI11.hpp>

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

#include "egonet/egonet.hpp"

namespace fs = std::filesystem;
using namespace egonet;

namespace {

enum class LogLevel { Quiet, Info, Debug };

LogLevel log_level() {
  const char* v = std::getenv("EGONET_LOG");
  if (!v) return LogLevel::Info;
  const std::string s(v);
  if (s == "quiet" || s == "0") return LogLevel::Quiet;
  if (s == "debug" || s == "2") return LogLevel::Debug;
  return LogLevel::Info;
}

void log(LogLevel level, const std::string& msg) {
  static const LogLevel current = log_level();
  if (static_cast<int>(level) <= static_cast<int>(current)) std::cerr << "[egonet] " << msg << "\n";
}

std::string read_text(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  if (!in) throw UsageError("cannot read '" + p.string() + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_text(const fs::path& p, const std::string& text) {
  std::ofstream out(p, std::ios::binary);
  out << text;
  if (!out) throw Error("cannot write '" + p.string() + "'");
}

std::string frame_name(std::int64_t image) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%06lld.txt", static_cast<long long>(image));
  return buf;
}

/// Output is staged in `<out>.tmp` and moved into place only on success.
class Staging {
 public:
  Staging(const fs::path& out, bool force) : out_(out), tmp_(out.string() + ".tmp") {
    if (out_.empty()) throw UsageError("--out is required");
    if (fs::exists(out_) && !force) throw UsageError("'" + out_.string() + "' exists; pass --force to replace it");
    fs::remove_all(tmp_);
    fs::create_directories(tmp_);
    force_ = force;
  }
  ~Staging() {
    if (!committed_) {
      std::error_code ec;
      fs::remove_all(tmp_, ec);
    }
  }
  const fs::path& dir() const { return tmp_; }
  void commit() {
    if (force_) fs::remove_all(out_);
    fs::rename(tmp_, out_);
    committed_ = true;
  }

 private:
  fs::path out_, tmp_;
  bool force_ = false;
  bool committed_ = false;
};

struct Common {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::string out;
  bool force = false;
};

void add_common(CLI::App* cmd, Common& c) {
  cmd->add_option("--config", c.config, "TOML configuration file");
  cmd->add_option("--seed", c.seed, "root seed (overrides the config)");
  cmd->add_option("--out", c.out, "output directory")->required();
  cmd->add_flag("--force", c.force, "replace an existing output directory");
}

RunConfig load_config(const Common& c) {
  RunConfig rc = c.config.empty() ? RunConfig{} : parse_config(read_text(c.config), c.config);
  if (c.seed) rc.seed = *c.seed;
  rc.gen.gen.seed = rc.seed;
  rc.train.train.seed = rc.seed;
  return rc;
}

// ---------------------------------------------------------------------------

struct GenFlags {
  std::optional<int> pairs, images, augment, unlabeled, heldout, max_instances;
  std::optional<std::size_t> shard_size;
  bool full_rotation = false;
};

int cmd_gen(const Common& common, const GenFlags& f) {
  RunConfig rc = load_config(common);
  auto& g = rc.gen.gen;
  if (f.pairs) g.base_pairs = *f.pairs;
  if (f.images) g.labeled_images = *f.images;
  if (f.augment) g.augment = *f.augment;
  if (f.unlabeled) g.unlabeled = *f.unlabeled;
  if (f.heldout) g.heldout_images = *f.heldout;
  if (f.max_instances) g.max_instances = *f.max_instances;
  if (f.shard_size) rc.gen.shard_size = *f.shard_size;
  if (f.full_rotation) g.full_rotation = true;
  g.validate();
  if (rc.gen.shard_size == 0) throw ConfigError("shard_size must be positive");

  Staging st(common.out, common.force);
  log(LogLevel::Info, "generating dataset (seed " + std::to_string(rc.seed) + ")");
  const Dataset ds = generate_dataset(g, default_interpolation());
  write_dataset(st.dir(), ds, g, rc.gen.shard_size);
  write_text(st.dir() / "config.toml", config_to_toml(rc));
  st.commit();
  log(LogLevel::Info, "labeled " + std::to_string(ds.labeled.size()) + ", unlabeled " +
                          std::to_string(ds.unlabeled.size()) + ", heldout " + std::to_string(ds.heldout.size()));
  return 0;
}

// ---------------------------------------------------------------------------

struct TrainFlags {
  std::string data, resume;
  std::optional<int> epochs, hidden, decay_every;
  std::optional<double> lr, noise;
  bool no_cr = false;
};

std::string loss_row(const EpochStats& s) {
  char buf[256];
  std::snprintf(buf, sizeof(buf), "%d,%.9e,%.9e,%.9e,%.9e\n", s.epoch, s.l2d, s.l3d, s.lcr, s.total);
  return buf;
}

int cmd_train(const Common& common, const TrainFlags& f) {
  RunConfig rc = load_config(common);
  auto& tc = rc.train.train;
  if (!f.data.empty()) rc.train.data = f.data;
  if (!f.resume.empty()) rc.train.resume = f.resume;
  if (f.epochs) tc.epochs = *f.epochs;
  if (f.hidden) tc.lifter.hidden = *f.hidden;
  if (f.decay_every) tc.lr_decay_every = *f.decay_every;
  if (f.lr) tc.lr = *f.lr;
  if (f.noise) tc.train_noise_px = *f.noise;
  if (f.no_cr) tc.use_cr = false;
  tc.validate();
  if (rc.train.data.empty()) throw UsageError("train needs --data (or train.data in the config)");

  const auto labeled = read_split(rc.train.data, "labeled");
  const auto unlabeled = read_split(rc.train.data, "unlabeled");
  if (labeled.empty()) throw UsageError("dataset has no labeled pairs");

  PoseNet<float> net(tc.lifter, tc.refiner, tc.use_refiner);
  if (!rc.train.resume.empty()) {
    const auto tensors = read_checkpoint(rc.train.resume);
    const ModelShape shape = read_model_shape(tensors);
    if (shape.lifter.hidden != tc.lifter.hidden || shape.lifter.blocks != tc.lifter.blocks ||
        shape.refiner.hidden != tc.refiner.hidden)
      throw ConfigError("checkpoint network shape differs from the configuration");
    load_model(tensors, net);
    if (net.epochs_done >= tc.epochs)
      throw ConfigError("checkpoint already covers " + std::to_string(net.epochs_done) + " epochs");
    log(LogLevel::Info, "resuming after epoch " + std::to_string(net.epochs_done));
  } else {
    auto rng = derived_rng(tc.seed, 50, 0);
    net.init(rng);
  }

  Staging st(common.out, common.force);
  std::string csv = "epoch,L_2d,L_3d,L_cr,L_total\n";
  train(net, labeled, unlabeled, tc, [&](const EpochStats& s) {
    csv += loss_row(s);
    std::ostringstream msg;
    msg << "epoch " << s.epoch << " lr " << s.lr << " L_3d " << s.l3d << " L_2d " << s.l2d << " L_cr " << s.lcr;
    log(LogLevel::Info, msg.str());
  });
  save_model((st.dir() / "model.ckpt").string(), net);
  write_text(st.dir() / "losses.csv", csv);
  write_text(st.dir() / "config.toml", config_to_toml(rc));
  st.commit();
  return 0;
}

// ---------------------------------------------------------------------------

DetectionRecord ground_truth_record(const Sample& s) {
  DetectionRecord r;
  r.class_name = "Car";
  r.truncation = std::clamp(1.0 - s.visibility, 0.0, 1.0);
  r.occlusion = 0;
  r.bbox = clip_bbox(tight_bbox(s.phi_g), s.camera.width, s.camera.height);
  r.height = s.cuboid.dims.height;
  r.width = s.cuboid.dims.width;
  r.length = s.cuboid.dims.length;
  r.location = s.cuboid.kitti_location();
  r.rotation_y = s.cuboid.yaw;
  r.alpha = ego_to_allo(r.rotation_y, r.location);
  return r;
}

struct EvalFlags {
  std::string data, model, split, difficulty;
  std::optional<double> noise;
  bool oracle_psi = false;
};

int cmd_eval(const Common& common, const EvalFlags& f) {
  RunConfig rc = load_config(common);
  auto& ec = rc.eval;
  if (!f.data.empty()) ec.data = f.data;
  if (!f.model.empty()) ec.model = f.model;
  if (!f.split.empty()) ec.split = f.split;
  if (!f.difficulty.empty()) ec.difficulty = f.difficulty;
  if (f.noise) ec.noise_px = *f.noise;
  if (f.oracle_psi) ec.oracle_psi = true;
  if (ec.data.empty()) throw UsageError("eval needs --data");
  if (ec.model.empty() && !ec.oracle_psi) throw UsageError("eval needs --model (or --oracle-psi)");
  if (!(ec.noise_px >= 0.0)) throw ConfigError("noise must be non-negative");
  if (!(ec.iou_threshold > 0.0 && ec.iou_threshold <= 1.0)) throw ConfigError("IoU threshold must lie in (0, 1]");
  const Difficulty difficulty = parse_difficulty(ec.difficulty);

  const auto samples = read_split(ec.data, ec.split);
  for (const auto& s : samples)
    if (!s.labeled) throw UsageError("split '" + ec.split + "' has unlabeled records; evaluation needs ground truth");

  std::vector<Points2> detected, refined;
  std::vector<double> yaws;
  if (ec.oracle_psi) {
    const PointSet3D tmpl = template_psi(default_interpolation());
    for (const auto& s : samples) {
      auto rng = derived_rng(rc.seed, 200, static_cast<std::uint64_t>(s.id));
      detected.push_back(add_noise(s.phi_g, ec.noise_px, rng));
      refined.push_back(detected.back());
      yaws.push_back(extract_yaw(kabsch_align(tmpl, PointSet3D{s.psi, Layout::Psi})));
    }
  } else {
    const auto tensors = read_checkpoint(ec.model);
    const ModelShape shape = read_model_shape(tensors);
    PoseNet<float> net(shape.lifter, shape.refiner, shape.use_refiner);
    load_model(tensors, net);
    const EvalResult res = evaluate(net, samples, ec.noise_px, rc.seed);
    detected = res.detected;
    for (const auto& p : res.predictions) {
      refined.push_back(p.refined_global);
      yaws.push_back(p.yaw);
    }
  }

  Staging st(common.out, common.force);
  fs::create_directories(st.dir() / "labels");
  fs::create_directories(st.dir() / "predictions");
  std::map<std::int64_t, EvalFrame> frames;
  std::vector<MatchedPair> pairs;
  std::vector<double> errors;
  double pck_sum[3] = {0, 0, 0};
  std::string err_csv = "id,image,depth,yaw_gt,yaw_pred,error_deg\n";
  for (std::size_t i = 0; i < samples.size(); ++i) {
    const Sample& s = samples[i];
    DetectionRecord gt = ground_truth_record(s);
    DetectionRecord pr = gt;
    pr.truncation = -1.0;
    pr.occlusion = -1;
    pr.bbox = clip_bbox(tight_bbox(detected[i]), s.camera.width, s.camera.height);
    pr.rotation_y = wrap_angle(yaws[i]);
    pr.alpha = ego_to_allo(pr.rotation_y, pr.location);
    pr.score = 1.0;
    auto& fr = frames[s.image];
    fr.gt.push_back(gt);
    fr.pred.push_back(pr);

    const double e = orientation_error(pr.rotation_y, gt.rotation_y);
    errors.push_back(e);
    pairs.push_back({gt.location.z(), gt.occlusion, e});
    const double h = tight_bbox(s.phi_g).height();
    const double xs[3] = {0.1, 0.2, 0.3};
    for (int k = 0; k < 3; ++k) pck_sum[k] += pck(refined[i], s.phi_g, h, xs[k]);
    char row[256];
    std::snprintf(row, sizeof(row), "%lld,%lld,%.6f,%.6f,%.6f,%.6f\n", static_cast<long long>(s.id),
                  static_cast<long long>(s.image), gt.location.z(), gt.rotation_y, pr.rotation_y, e * 180.0 / kPi);
    err_csv += row;
  }
  std::vector<EvalFrame> frame_list;
  for (const auto& [image, fr] : frames) {
    write_text(st.dir() / "labels" / frame_name(image), write_result_file(fr.gt));
    write_text(st.dir() / "predictions" / frame_name(image), write_result_file(fr.pred));
    frame_list.push_back(fr);
  }

  MetricsReport rep;
  rep.add("count", static_cast<double>(samples.size()));
  std::vector<double> sorted = errors;
  std::sort(sorted.begin(), sorted.end());
  double median = 0.0, mean = 0.0;
  if (!sorted.empty()) {
    const std::size_t n = sorted.size();
    median = n % 2 ? sorted[n / 2] : 0.5 * (sorted[n / 2 - 1] + sorted[n / 2]);
    for (double e : sorted) mean += e;
    mean /= static_cast<double>(n);
  }
  rep.add("median_yaw_error_deg", median * 180.0 / kPi);
  rep.add("mean_yaw_error_deg", mean * 180.0 / kPi);
  EvalOptions opt;
  opt.iou_threshold = ec.iou_threshold;
  opt.cutoffs = cutoffs_for(difficulty);
  if (!frame_list.empty()) add_detection_rows(rep, aos(frame_list, opt));
  if (!samples.empty()) {
    rep.add("pck_0.1", pck_sum[0] / static_cast<double>(samples.size()));
    rep.add("pck_0.2", pck_sum[1] / static_cast<double>(samples.size()));
    rep.add("pck_0.3", pck_sum[2] / static_cast<double>(samples.size()));
  }
  add_aoe_rows(rep, aoe_bins(pairs));

  write_text(st.dir() / "metrics.csv", rep.csv());
  write_text(st.dir() / "metrics.txt", rep.table());
  write_text(st.dir() / "errors.csv", err_csv);
  write_text(st.dir() / "config.toml", config_to_toml(rc));
  st.commit();
  std::cout << rep.table();
  return 0;
}

// ---------------------------------------------------------------------------

std::map<std::string, std::vector<DetectionRecord>> read_label_dir(const fs::path& dir) {
  if (!fs::is_directory(dir)) throw UsageError("'" + dir.string() + "' is not a directory");
  std::map<std::string, std::vector<DetectionRecord>> out;
  for (const auto& e : fs::directory_iterator(dir)) {
    if (!e.is_regular_file() || e.path().extension() != ".txt") continue;
    try {
      out[e.path().filename().string()] = parse_label_file(read_text(e.path()));
    } catch (const ParseError& err) {
      throw ParseError(e.path().string() + ": " + err.what(), err.column);
    }
  }
  return out;
}

struct MetricsFlags {
  std::string gt, pred, difficulty, class_name;
  std::optional<double> iou;
};

int cmd_metrics(const Common& common, const MetricsFlags& f) {
  RunConfig rc = load_config(common);
  auto& mc = rc.metrics;
  if (!f.gt.empty()) mc.gt = f.gt;
  if (!f.pred.empty()) mc.pred = f.pred;
  if (!f.difficulty.empty()) mc.difficulty = f.difficulty;
  if (!f.class_name.empty()) mc.class_name = f.class_name;
  if (f.iou) mc.iou_threshold = *f.iou;
  if (mc.gt.empty() || mc.pred.empty()) throw UsageError("metrics needs --gt and --pred");
  if (!(mc.iou_threshold > 0.0 && mc.iou_threshold <= 1.0)) throw ConfigError("IoU threshold must lie in (0, 1]");
  EvalOptions opt;
  opt.iou_threshold = mc.iou_threshold;
  opt.class_name = mc.class_name;
  opt.cutoffs = cutoffs_for(parse_difficulty(mc.difficulty));

  const auto gt = read_label_dir(mc.gt);
  const auto pred = read_label_dir(mc.pred);
  std::vector<EvalFrame> frames;
  for (const auto& [name, g] : gt) {
    EvalFrame fr;
    fr.gt = g;
    if (auto it = pred.find(name); it != pred.end()) fr.pred = it->second;
    for (const auto& p : fr.pred)
      if (!p.score) throw UsageError("prediction in '" + name + "' lacks a score");
    frames.push_back(std::move(fr));
  }

  std::vector<MatchedPair> pairs;
  for (const auto& fr : frames) {
    const Assignment a = match_detections(fr, opt);
    for (std::size_t d = 0; d < fr.pred.size(); ++d) {
      const int g = a.pred_to_gt[d];
      if (g < 0) continue;
      const auto& gr = fr.gt[static_cast<std::size_t>(g)];
      pairs.push_back({gr.location.z(), gr.occlusion, orientation_error(fr.pred[d].rotation_y, gr.rotation_y)});
    }
  }
  MetricsReport rep;
  rep.add("frames", static_cast<double>(frames.size()));
  rep.add("matched", static_cast<double>(pairs.size()));
  add_detection_rows(rep, aos(frames, opt));
  add_aoe_rows(rep, aoe_bins(pairs));

  Staging st(common.out, common.force);
  write_text(st.dir() / "metrics.csv", rep.csv());
  write_text(st.dir() / "metrics.txt", rep.table());
  write_text(st.dir() / "config.toml", config_to_toml(rc));
  st.commit();
  std::cout << rep.table();
  return 0;
}

// ---------------------------------------------------------------------------

struct BevFlags {
  std::string gt, pred;
};

int cmd_bev(const Common& common, const BevFlags& f) {
  RunConfig rc = load_config(common);
  auto& bc = rc.bev;
  if (!f.gt.empty()) bc.gt = f.gt;
  if (!f.pred.empty()) bc.pred = f.pred;
  if (!(bc.pixels_per_meter > 0.0 && bc.max_depth > 0.0 && bc.half_width > 0.0))
    throw ConfigError("BEV extent and scale must be positive");
  std::vector<BevArrow> arrows;
  auto collect = [&arrows](const std::string& dir, bool predicted) {
    if (dir.empty()) return;
    for (const auto& [name, recs] : read_label_dir(dir))
      for (const auto& r : recs)
        if (!metrics_detail::same_class(r.class_name, "DontCare"))
          arrows.push_back(bev_arrow(fs::path(name).stem().string(), r, predicted));
  };
  collect(bc.gt, false);
  collect(bc.pred, true);
  std::stable_sort(arrows.begin(), arrows.end(), [](const BevArrow& a, const BevArrow& b) { return a.frame < b.frame; });
  const BevStyle style{bc.pixels_per_meter, bc.max_depth, bc.half_width, bc.arrow_length};

  Staging st(common.out, common.force);
  write_text(st.dir() / "bev.svg", bev_svg(arrows, style));
  write_text(st.dir() / "arrows.csv", bev_csv(arrows));
  write_text(st.dir() / "config.toml", config_to_toml(rc));
  st.commit();
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Egocentric vehicle orientation from projected cuboid keypoints"};
  app.require_subcommand(1);

  Common c_gen, c_train, c_eval, c_metrics, c_bev;
  GenFlags gf;
  TrainFlags tf;
  EvalFlags ef;
  MetricsFlags mf;
  BevFlags bf;

  auto* gen = app.add_subcommand("gen", "generate a synthetic dataset");
  add_common(gen, c_gen);
  gen->add_option("--pairs", gf.pairs, "labeled base pairs before augmentation");
  gen->add_option("--images", gf.images, "labeled images (ignored when --pairs is set)");
  gen->add_option("--augment", gf.augment, "rotation augmentation factor");
  gen->add_option("--unlabeled", gf.unlabeled, "unlabeled instances");
  gen->add_option("--heldout", gf.heldout, "held-out images");
  gen->add_option("--max-instances", gf.max_instances, "instances per image, upper bound");
  gen->add_option("--shard-size", gf.shard_size, "records per shard");
  gen->add_flag("--full-rotation", gf.full_rotation, "add small pitch/roll perturbations to augmented copies");

  auto* tr = app.add_subcommand("train", "train the refiner and lifter");
  add_common(tr, c_train);
  tr->add_option("--data", tf.data, "dataset directory");
  tr->add_option("--resume", tf.resume, "checkpoint to continue from");
  tr->add_option("--epochs", tf.epochs, "final epoch number");
  tr->add_option("--hidden", tf.hidden, "lifter width");
  tr->add_option("--decay-every", tf.decay_every, "epochs between learning-rate decays");
  tr->add_option("--lr", tf.lr, "initial learning rate");
  tr->add_option("--noise", tf.noise, "max training keypoint noise, pixels");
  tr->add_flag("--no-cr", tf.no_cr, "disable the cross-ratio loss");

  auto* ev = app.add_subcommand("eval", "evaluate a trained model on a dataset split");
  add_common(ev, c_eval);
  ev->add_option("--data", ef.data, "dataset directory");
  ev->add_option("--model", ef.model, "checkpoint");
  ev->add_option("--split", ef.split, "split to evaluate (heldout, labeled)");
  ev->add_option("--noise", ef.noise, "keypoint noise sigma, pixels");
  ev->add_option("--difficulty", ef.difficulty, "easy, moderate, hard or all");
  ev->add_flag("--oracle-psi", ef.oracle_psi, "align the ground-truth PSI instead of running the networks");

  auto* me = app.add_subcommand("metrics", "AP, AOS and AOE from KITTI label directories");
  add_common(me, c_metrics);
  me->add_option("--gt", mf.gt, "ground-truth label directory");
  me->add_option("--pred", mf.pred, "prediction directory");
  me->add_option("--difficulty", mf.difficulty, "easy, moderate, hard or all");
  me->add_option("--class", mf.class_name, "object class");
  me->add_option("--iou", mf.iou, "IoU threshold");

  auto* bev = app.add_subcommand("bev", "bird's-eye-view figure of ground truth and predictions");
  add_common(bev, c_bev);
  bev->add_option("--gt", bf.gt, "ground-truth label directory");
  bev->add_option("--pred", bf.pred, "prediction directory");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 1;
  }

  try {
    if (*gen) return cmd_gen(c_gen, gf);
    if (*tr) return cmd_train(c_train, tf);
    if (*ev) return cmd_eval(c_eval, ef);
    if (*me) return cmd_metrics(c_metrics, mf);
    if (*bev) return cmd_bev(c_bev, bf);
  } catch (const ConfigError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const UsageError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const ParseError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const FormatError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "internal error: " << e.what() << "\n";
    return 2;
  }
  return 2;
}
