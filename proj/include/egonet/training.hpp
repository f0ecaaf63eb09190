#pragma once

// Mixed training of the keypoint refiner and the lifter, evaluation of the
// full 2D -> 3D -> yaw pipeline, and model checkpoints.
//
// Per batch (labeled set N1, unlabeled set N2):
//   L_2d  = mean over N1 of L1(refined local keypoints, ground truth)
//   L_3d  = mean over N1 of L2(lifted PSI, ground truth)
//   L_cr  = sum over N1 + N2 of the cross-ratio loss / (N1 + N2)
//   total = w_2d L_2d + w_3d L_3d + w_cr L_cr
// The heatmap term has no predictor attached here and never contributes.

#include <functional>
#include <memory>
#include <random>
#include <string>
#include <vector>

#include "egonet/crossratio.hpp"
#include "egonet/dataset.hpp"
#include "egonet/geometry.hpp"
#include "egonet/lifter.hpp"
#include "egonet/pose.hpp"

namespace egonet {

struct LossWeights {
  double heatmap = 1.0;
  double l2d = 0.1;
  double cr = 0.005;
  double l3d = 1.0;
};

struct TrainConfig {
  std::uint64_t seed = 0;
  int epochs = 300;
  double lr = 1e-3;
  int lr_decay_every = 50;
  double lr_decay = 0.5;
  int images_per_batch = 24;
  int pad_to = 12;
  LossWeights weights;
  bool use_cr = true;
  int cr_enable_epoch = 1;  ///< cross-ratio loss is off through this epoch
  double cr_gate = kForeshorteningGate;
  bool use_refiner = true;
  bool use_unlabeled = true;
  double train_noise_px = 0.0;  ///< per-instance sigma drawn uniformly from [0, train_noise_px]
  bool crop_jitter = true;
  LifterShape lifter;
  RefinerShape refiner;

  void validate() const {
    if (epochs < 1) throw ConfigError("epochs must be at least 1");
    if (!(lr > 0.0)) throw ConfigError("learning rate must be positive");
    if (lr_decay_every < 1 || !(lr_decay > 0.0)) throw ConfigError("invalid learning-rate schedule");
    if (images_per_batch < 1 || pad_to < 0) throw ConfigError("invalid batch composition");
    if (weights.heatmap < 0 || weights.l2d < 0 || weights.cr < 0 || weights.l3d < 0)
      throw ConfigError("loss weights must be non-negative");
    if (!(train_noise_px >= 0.0)) throw ConfigError("noise must be non-negative");
    if (!(lifter.dropout >= 0.0 && lifter.dropout < 1.0)) throw ConfigError("dropout must lie in [0, 1)");
    if (lifter.input != 66 || lifter.output != 96 || refiner.io != 66)
      throw ConfigError("network input/output widths are fixed at 66 and 96");
    if (lifter.hidden < 1 || lifter.blocks < 0 || refiner.hidden < 1) throw ConfigError("invalid layer widths");
  }

  double lr_at(int epoch) const { return lr * std::pow(lr_decay, (epoch - 1) / lr_decay_every); }
  bool cr_active(int epoch) const { return use_cr && use_refiner && epoch > cr_enable_epoch; }
};

/// Refiner + lifter with their optimizer state.
template <typename T>
struct PoseNet {
  PoseNet(const LifterShape& ls, const RefinerShape& rs, bool with_refiner)
      : refiner(std::make_unique<Refiner<T>>(rs)), lifter(std::make_unique<Lifter<T>>(ls)), use_refiner(with_refiner) {
    adam_refiner.resize_for(refiner->params());
    adam_lifter.resize_for(lifter->params());
  }
  template <typename Rng>
  void init(Rng& rng) {
    lifter->init(rng);
    refiner->init(rng);
  }

  std::unique_ptr<Refiner<T>> refiner;
  std::unique_ptr<Lifter<T>> lifter;
  bool use_refiner = true;
  AdamState<T> adam_refiner;
  AdamState<T> adam_lifter;
  int epochs_done = 0;
};

struct EpochStats {
  int epoch = 0;
  double l2d = 0.0;
  double l3d = 0.0;
  double lcr = 0.0;
  double total = 0.0;
  double lr = 0.0;
  double cr_weight = 0.0;  ///< effective weight of L_cr during this epoch
};

// ---------------------------------------------------------------------------
// Instance preparation

struct PreparedInstance {
  std::array<float, 66> input{};   ///< detected local keypoints
  std::array<float, 66> target{};  ///< ground-truth local keypoints
  AffineCrop crop;
  CameraIntrinsics k;
};

/// Training view of a sample: crop from the clean projections (optionally jittered),
/// input keypoints perturbed with pixel noise.
template <typename Rng>
PreparedInstance prepare_training_instance(const Sample& s, double max_noise_px, bool jitter, Rng& rng) {
  PreparedInstance p;
  const CropJitter j = jitter ? random_crop_jitter(rng) : CropJitter{};
  p.crop = crop_transform(tight_bbox(s.phi_g), j);
  p.k = s.camera.k;
  const double sigma = max_noise_px > 0.0 ? Range{0.0, max_noise_px}.sample(rng) : 0.0;
  const Points2 noisy = add_noise(s.phi_g, sigma, rng);
  const Points2 in = to_local({noisy, Frame::Global}, p.crop).points;
  const Points2 tg = to_local(s.global(), p.crop).points;
  for (int i = 0; i < 66; ++i) {
    p.input[i] = static_cast<float>(in.data()[i]);
    p.target[i] = static_cast<float>(tg.data()[i]);
  }
  return p;
}

/// Inference view: the crop is taken around the detected keypoints themselves.
inline PreparedInstance prepare_inference_instance(const Points2& detected_global, const CameraIntrinsics& k) {
  PreparedInstance p;
  p.crop = crop_transform(tight_bbox(detected_global));
  p.k = k;
  const Points2 in = to_local({detected_global, Frame::Global}, p.crop).points;
  for (int i = 0; i < 66; ++i) p.input[i] = static_cast<float>(in.data()[i]);
  return p;
}

// ---------------------------------------------------------------------------
// One optimization step

struct BatchLosses {
  double l2d = 0.0;
  double l3d = 0.0;
  double lcr = 0.0;
  double total = 0.0;
};

/// Forward, backward and Adam update on one batch. `labeled` carries ground truth
/// (PSI rows flattened in `psi`), `unlabeled` only inputs. Returns the loss values.
template <typename T, typename Rng>
BatchLosses train_step(PoseNet<T>& net, const std::vector<const PreparedInstance*>& labeled,
                       const std::vector<const Points3*>& psi, const std::vector<const PreparedInstance*>& unlabeled,
                       const TrainConfig& cfg, bool cr_active, double lr, Rng& rng) {
  const Eigen::Index n1 = static_cast<Eigen::Index>(labeled.size());
  const Eigen::Index n2 = cr_active ? static_cast<Eigen::Index>(unlabeled.size()) : 0;
  const Eigen::Index n = n1 + n2;
  BatchLosses out;
  if (n1 == 0) return out;

  Mat<T> x(66, n);
  for (Eigen::Index j = 0; j < n; ++j) {
    const auto& inst = j < n1 ? *labeled[static_cast<std::size_t>(j)] : *unlabeled[static_cast<std::size_t>(j - n1)];
    for (int i = 0; i < 66; ++i) x(i, j) = static_cast<T>(inst.input[static_cast<std::size_t>(i)]);
  }
  const Mat<T>* refined = &x;
  if (net.use_refiner) refined = &net.refiner->forward(x);
  const Mat<T>& p = *refined;
  Mat<T> dp = Mat<T>::Zero(66, n);

  // 2D loss on labeled keypoints.
  if (net.use_refiner) {
    double acc = 0.0;
    const T g = static_cast<T>(cfg.weights.l2d / (66.0 * static_cast<double>(n1)));
    for (Eigen::Index j = 0; j < n1; ++j) {
      const auto& tgt = labeled[static_cast<std::size_t>(j)]->target;
      for (int i = 0; i < 66; ++i) {
        const T d = p(i, j) - static_cast<T>(tgt[static_cast<std::size_t>(i)]);
        acc += std::abs(static_cast<double>(d));
        dp(i, j) += d > T(0) ? g : d < T(0) ? -g : T(0);
      }
    }
    out.l2d = acc / (66.0 * static_cast<double>(n1));
  }

  // Lifting.
  Mat<T> enc(66, n1);
  for (Eigen::Index j = 0; j < n1; ++j) {
    const auto& inst = *labeled[static_cast<std::size_t>(j)];
    encode_lifter_input<T>(p.col(j).data(), inst.crop, inst.k, enc.col(j).data());
  }
  const Mat<T>& y = net.lifter->forward(enc, Mode::Train, &rng);
  Mat<T> dy(y.rows(), n1);
  {
    double acc = 0.0;
    const T g = static_cast<T>(cfg.weights.l3d * 2.0 / (96.0 * static_cast<double>(n1)));
    for (Eigen::Index j = 0; j < n1; ++j) {
      const Points3& gt = *psi[static_cast<std::size_t>(j)];
      for (Eigen::Index r = 0; r < gt.rows(); ++r)
        for (int c = 0; c < 3; ++c) {
          const T d = y(3 * r + c, j) - static_cast<T>(gt(r, c));
          acc += static_cast<double>(d) * static_cast<double>(d);
          dy(3 * r + c, j) = g * d;
        }
    }
    out.l3d = acc / (96.0 * static_cast<double>(n1));
  }
  // The refined keypoints are a fixed input to the lifter: L_3d does not reach the refiner.
  net.lifter->params().zero_grad();
  net.lifter->backward(dy, nullptr);

  if (net.use_refiner) {
    if (cr_active) {
      static const auto quads = edge_quadruples(2);
      const double target = target_cr(default_interpolation()).cr_squared;
      double acc = 0.0;
      const T scale = static_cast<T>(cfg.weights.cr / static_cast<double>(n));
      for (Eigen::Index j = 0; j < n; ++j) {
        const std::span<const T> xy(p.col(j).data(), 66);
        const std::span<T> g(dp.col(j).data(), 66);
        acc += static_cast<double>(cr_loss_raw<T>(xy, quads, target, cfg.cr_gate, g, scale).loss);
      }
      out.lcr = acc / static_cast<double>(n);
    }
    net.refiner->params().zero_grad();
    net.refiner->backward(dp);
    adam_step(net.refiner->params(), net.adam_refiner, AdamConfig{lr});
  }
  adam_step(net.lifter->params(), net.adam_lifter, AdamConfig{lr});
  out.total = cfg.weights.l2d * out.l2d + cfg.weights.l3d * out.l3d + (cr_active ? cfg.weights.cr * out.lcr : 0.0);
  return out;
}

// ---------------------------------------------------------------------------
// Training loop

using EpochCallback = std::function<void(const EpochStats&)>;

/// Trains from epoch net.epochs_done + 1 through cfg.epochs. Every epoch draws from
/// its own stream derived from (seed, epoch), so a resumed run repeats the
/// continuous one exactly.
template <typename T>
std::vector<EpochStats> train(PoseNet<T>& net, const std::vector<Sample>& labeled, const std::vector<Sample>& unlabeled,
                              const TrainConfig& cfg, const EpochCallback& on_epoch = {}) {
  cfg.validate();
  if (labeled.empty()) throw ConfigError("training needs labeled pairs (3D loss unavailable)");
  net.use_refiner = cfg.use_refiner;
  std::vector<EpochStats> history;
  const bool with_unlabeled = cfg.use_unlabeled && cfg.use_cr && !unlabeled.empty();

  for (int epoch = net.epochs_done + 1; epoch <= cfg.epochs; ++epoch) {
    auto rng = derived_rng(cfg.seed, 100, static_cast<std::uint64_t>(epoch));
    const bool cr_on = cfg.cr_active(epoch);
    const double lr = cfg.lr_at(epoch);
    const auto batches =
        compose_mixed_batches(labeled, with_unlabeled ? unlabeled.size() : 0, cfg.images_per_batch, cfg.pad_to, rng);

    EpochStats st;
    st.epoch = epoch;
    st.lr = lr;
    st.cr_weight = cr_on ? cfg.weights.cr : 0.0;
    std::vector<PreparedInstance> lab, unl;
    std::vector<const PreparedInstance*> lab_ptr, unl_ptr;
    std::vector<const Points3*> psi_ptr;
    std::size_t counted = 0;
    for (const auto& b : batches) {
      lab.clear();
      unl.clear();
      for (auto i : b.labeled) lab.push_back(prepare_training_instance(labeled[i], cfg.train_noise_px, cfg.crop_jitter, rng));
      if (cr_on)
        for (auto i : b.unlabeled)
          unl.push_back(prepare_training_instance(unlabeled[i], cfg.train_noise_px, cfg.crop_jitter, rng));
      lab_ptr.clear();
      unl_ptr.clear();
      psi_ptr.clear();
      for (std::size_t i = 0; i < lab.size(); ++i) {
        lab_ptr.push_back(&lab[i]);
        psi_ptr.push_back(&labeled[b.labeled[i]].psi);
      }
      for (const auto& u : unl) unl_ptr.push_back(&u);
      if (lab_ptr.size() < 2) continue;  // batch statistics need two instances
      const BatchLosses l = train_step(net, lab_ptr, psi_ptr, unl_ptr, cfg, cr_on, lr, rng);
      st.l2d += l.l2d;
      st.l3d += l.l3d;
      st.lcr += l.lcr;
      st.total += l.total;
      ++counted;
    }
    if (counted > 0) {
      const double inv = 1.0 / static_cast<double>(counted);
      st.l2d *= inv;
      st.l3d *= inv;
      st.lcr *= inv;
      st.total *= inv;
    }
    net.epochs_done = epoch;
    history.push_back(st);
    if (on_epoch) on_epoch(st);
  }
  return history;
}

// ---------------------------------------------------------------------------
// Inference

struct Prediction {
  Points2 refined_global;  ///< refined keypoints, global pixels
  Points3 psi;             ///< lifted PSI
  double yaw = 0.0;
};

/// Runs refiner, lifter and template alignment on detected global keypoints (eval mode).
template <typename T>
std::vector<Prediction> predict(PoseNet<T>& net, const std::vector<Points2>& detected,
                                const std::vector<CameraIntrinsics>& cams, int batch = 512) {
  if (detected.size() != cams.size()) throw UsageError("one camera per instance required");
  const PointSet3D tmpl = template_psi(default_interpolation());
  std::vector<Prediction> out(detected.size());
  for (std::size_t start = 0; start < detected.size(); start += static_cast<std::size_t>(batch)) {
    const std::size_t stop = std::min(detected.size(), start + static_cast<std::size_t>(batch));
    const auto n = static_cast<Eigen::Index>(stop - start);
    std::vector<PreparedInstance> inst;
    Mat<T> x(66, n);
    for (std::size_t i = start; i < stop; ++i) {
      inst.push_back(prepare_inference_instance(detected[i], cams[i]));
      for (int r = 0; r < 66; ++r) x(r, static_cast<Eigen::Index>(i - start)) = static_cast<T>(inst.back().input[r]);
    }
    Mat<T> p = net.use_refiner ? net.refiner->forward(x) : x;
    Mat<T> enc(66, n);
    for (Eigen::Index j = 0; j < n; ++j)
      encode_lifter_input<T>(p.col(j).data(), inst[static_cast<std::size_t>(j)].crop, inst[static_cast<std::size_t>(j)].k,
                             enc.col(j).data());
    const Mat<T>& y = net.lifter->template forward<std::mt19937_64>(enc, Mode::Eval, nullptr);
    for (Eigen::Index j = 0; j < n; ++j) {
      auto& pr = out[start + static_cast<std::size_t>(j)];
      Points2 local(33, 2);
      for (int r = 0; r < 66; ++r) local.data()[r] = static_cast<double>(p(r, j));
      pr.refined_global = to_global({local, Frame::Local}, inst[static_cast<std::size_t>(j)].crop).points;
      pr.psi = unflatten3(y.col(j));
      try {
        pr.yaw = extract_yaw(kabsch_align(tmpl, PointSet3D{pr.psi, Layout::Psi}));
      } catch (const DegenerateError&) {
        pr.yaw = 0.0;
      }
    }
  }
  return out;
}

struct EvalResult {
  std::vector<double> yaw_errors;  ///< radians, one per sample
  std::vector<Prediction> predictions;
  std::vector<Points2> detected;
  double median_error_deg() const {
    if (yaw_errors.empty()) return 0.0;
    std::vector<double> e = yaw_errors;
    std::nth_element(e.begin(), e.begin() + static_cast<std::ptrdiff_t>(e.size() / 2), e.end());
    double med = e[e.size() / 2];
    if (e.size() % 2 == 0) {
      const double lo = *std::max_element(e.begin(), e.begin() + static_cast<std::ptrdiff_t>(e.size() / 2));
      med = 0.5 * (med + lo);
    }
    return med * 180.0 / kPi;
  }
};

/// Perturbs the held-out projections with `noise_px` Gaussian noise (stream derived
/// from `seed`) and measures the egocentric yaw error of the pipeline.
template <typename T>
EvalResult evaluate(PoseNet<T>& net, const std::vector<Sample>& samples, double noise_px, std::uint64_t seed) {
  EvalResult res;
  std::vector<CameraIntrinsics> cams;
  for (const auto& s : samples) {
    auto rng = derived_rng(seed, 200, static_cast<std::uint64_t>(s.id));
    res.detected.push_back(add_noise(s.phi_g, noise_px, rng));
    cams.push_back(s.camera.k);
  }
  res.predictions = predict(net, res.detected, cams);
  for (std::size_t i = 0; i < samples.size(); ++i)
    res.yaw_errors.push_back(orientation_error(res.predictions[i].yaw, samples[i].cuboid.yaw));
  return res;
}

// ---------------------------------------------------------------------------
// Checkpoints

template <typename T>
void save_model(const std::string& path, const PoseNet<T>& net) {
  std::vector<Tensor> tensors;
  auto dump = [&tensors](const ParamStore<T>& store, const AdamState<T>& adam) {
    for (std::size_t i = 0; i < store.all().size(); ++i) {
      const auto& p = store.all()[i];
      tensors.push_back(to_tensor(p.name, p.value));
      tensors.push_back(to_tensor("adam.m." + p.name, adam.m[i]));
      tensors.push_back(to_tensor("adam.v." + p.name, adam.v[i]));
    }
  };
  dump(net.refiner->params(), net.adam_refiner);
  dump(net.lifter->params(), net.adam_lifter);
  Mat<double> meta(1, 3);
  meta << static_cast<double>(net.epochs_done), static_cast<double>(net.adam_refiner.step),
      static_cast<double>(net.adam_lifter.step);
  tensors.push_back(to_tensor("meta.progress", meta));
  Mat<double> shape(1, 6);
  const auto& ls = net.lifter->shape();
  shape << ls.hidden, ls.blocks, ls.dropout, net.refiner->params()[0].value.rows(), net.use_refiner ? 1.0 : 0.0, 0.0;
  tensors.push_back(to_tensor("meta.shape", shape));
  write_checkpoint(path, tensors);
}

/// Shapes stored in a checkpoint, so a model can be constructed before loading.
struct ModelShape {
  LifterShape lifter;
  RefinerShape refiner;
  bool use_refiner = true;
};

inline ModelShape read_model_shape(const std::map<std::string, Tensor>& tensors) {
  const auto it = tensors.find("meta.shape");
  if (it == tensors.end()) throw FormatError("checkpoint lacks meta.shape");
  const auto& v = it->second.values;
  if (v.size() < 5) throw FormatError("checkpoint meta.shape is malformed");
  ModelShape s;
  s.lifter.hidden = static_cast<int>(v[0]);
  s.lifter.blocks = static_cast<int>(v[1]);
  s.lifter.dropout = v[2];
  s.refiner.hidden = static_cast<int>(v[3]);
  s.use_refiner = v[4] != 0.0;
  return s;
}

template <typename T>
void load_model(const std::map<std::string, Tensor>& tensors, PoseNet<T>& net) {
  auto fetch = [&tensors](const std::string& name) -> const Tensor& {
    const auto it = tensors.find(name);
    if (it == tensors.end()) throw FormatError("checkpoint lacks tensor '" + name + "'");
    return it->second;
  };
  auto load = [&](ParamStore<T>& store, AdamState<T>& adam) {
    for (std::size_t i = 0; i < store.all().size(); ++i) {
      auto& p = store.all()[i];
      from_tensor(fetch(p.name), p.value);
      from_tensor(fetch("adam.m." + p.name), adam.m[i]);
      from_tensor(fetch("adam.v." + p.name), adam.v[i]);
    }
  };
  load(net.refiner->params(), net.adam_refiner);
  load(net.lifter->params(), net.adam_lifter);
  const auto& meta = fetch("meta.progress").values;
  net.epochs_done = static_cast<int>(meta.at(0));
  net.adam_refiner.step = static_cast<std::int64_t>(meta.at(1));
  net.adam_lifter.step = static_cast<std::int64_t>(meta.at(2));
  net.use_refiner = read_model_shape(tensors).use_refiner;
}

}  // namespace egonet
