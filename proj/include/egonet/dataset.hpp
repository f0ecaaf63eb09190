#pragma once

// Synthetic 2D-3D pairs standing in for annotated vehicle crops.
//
// The dimension and placement priors below are generator configuration
// (plausible passenger-car statistics), not values fitted to any dataset.

#include <algorithm>
#include <cstdint>
#include <functional>
#include <numeric>
#include <optional>
#include <random>
#include <vector>

#include "egonet/common.hpp"
#include "egonet/crossratio.hpp"
#include "egonet/geometry.hpp"
#include "egonet/kitti_io.hpp"

namespace egonet {

struct Range {
  double lo = 0.0;
  double hi = 0.0;

  bool valid() const { return std::isfinite(lo) && std::isfinite(hi) && lo <= hi; }
  template <typename Rng>
  double sample(Rng& rng) const {
    if (lo == hi) return lo;
    return std::uniform_real_distribution<double>(lo, hi)(rng);
  }
};

struct CameraModel {
  CameraIntrinsics k;
  int width = 0;
  int height = 0;
};

/// Left color camera of the KITTI object benchmark (1242 x 375).
inline CameraModel kitti_camera() { return {{721.5377, 721.5377, 609.5593, 172.854}, 1242, 375}; }

/// A wide-sensor camera with different intrinsics, used for unlabeled instances.
inline CameraModel apollo_like_camera() { return {{2304.5479, 2305.8757, 1686.2379, 1354.9849}, 3384, 2710}; }

struct SampleSpec {
  Range height{1.3, 1.9};
  Range width{1.5, 2.0};
  Range length{3.2, 4.8};
  Range depth{4.0, 60.0};
  Range bottom_y{1.5, 1.8};  ///< camera-frame y of the box bottom (camera mounting height)
  CameraModel camera = kitti_camera();
  double focal_jitter = 0.0;  ///< > 0 samples fx = fy scaled uniformly within +-focal_jitter

  void validate() const {
    for (const Range* r : {&height, &width, &length, &depth, &bottom_y}) {
      if (!r->valid()) throw ConfigError("sample range is empty or not finite");
    }
    if (!(height.lo > 0.0) || !(width.lo > 0.0) || !(length.lo > 0.0)) throw ConfigError("dimension ranges must be positive");
    if (!(depth.lo > 0.0)) throw ConfigError("depth range must be positive");
    if (camera.width <= 0 || camera.height <= 0) throw ConfigError("image size must be positive");
    camera.k.validate();
    if (!(focal_jitter >= 0.0 && focal_jitter < 1.0)) throw ConfigError("focal jitter must lie in [0, 1)");
  }
};

template <typename Rng>
Cuboid sample_cuboid(Rng& rng, const SampleSpec& spec, const CameraModel& cam) {
  Cuboid c;
  c.dims = {spec.height.sample(rng), spec.width.sample(rng), spec.length.sample(rng)};
  const double z = spec.depth.sample(rng);
  const double u = Range{0.0, static_cast<double>(cam.width)}.sample(rng);
  const double y_bottom = spec.bottom_y.sample(rng);
  c.centroid = Vec3((u - cam.k.cx) * z / cam.k.fx, y_bottom - c.dims.height / 2.0, z);
  c.yaw = wrap_angle(Range{-kPi, kPi}.sample(rng));
  return c;
}

template <typename Rng>
Cuboid sample_cuboid(Rng& rng, const SampleSpec& spec) {
  return sample_cuboid(rng, spec, spec.camera);
}

template <typename Rng>
CameraModel sample_camera(Rng& rng, const SampleSpec& spec) {
  CameraModel cam = spec.camera;
  if (spec.focal_jitter > 0.0) {
    const double f = Range{1.0 - spec.focal_jitter, 1.0 + spec.focal_jitter}.sample(rng);
    cam.k.fx *= f;
    cam.k.fy *= f;
  }
  return cam;
}

/// One generated instance. `psi` and `cuboid` are ground truth and only
/// meaningful for labeled samples.
struct Sample {
  std::int64_t id = 0;
  std::int64_t image = 0;
  bool labeled = true;
  Cuboid cuboid;
  CameraModel camera;
  Points2 phi_g;  ///< projected TAU points, global pixels
  Points3 psi;    ///< centroid-relative PSI points, meters
  double visibility = 1.0;

  PointSet2D global() const { return {phi_g, Frame::Global}; }
  /// Square crop around the tight box of the clean projections, no jitter.
  AffineCrop crop(double patch_size = 256.0) const { return crop_transform(tight_bbox(phi_g), {}, patch_size); }
  PointSet2D local() const { return to_local(global(), crop()); }
};

/// Projects the interpolated cuboid; nullopt when a point is behind the camera
/// or more than 30% of the points leave the image.
inline std::optional<Sample> make_pair(const Cuboid& cuboid, const CameraModel& cam, const InterpMatrix& interp) {
  PointSet2D g;
  try {
    g = project(build_tau(cuboid, interp), cam.k);
  } catch (const DomainError&) {
    return std::nullopt;
  }
  if (!passes_visibility(g, cam.width, cam.height)) return std::nullopt;
  Sample s;
  s.cuboid = cuboid;
  s.camera = cam;
  s.phi_g = std::move(g.points);
  s.psi = build_psi(cuboid, interp).points;
  s.visibility = visibility_fraction(s.global(), cam.width, cam.height);
  return s;
}

/// Fail-fast consistency check of a generated pair: PSI corners centered at the
/// origin, PSI matching the cuboid, and every ungated edge of the projection
/// holding the interpolation cross-ratio. Throws Error on violation.
inline void validate_pair(const Sample& s, const InterpMatrix& interp, double tol = 1e-6) {
  if (s.phi_g.rows() != tau_count(interp.q())) throw Error("sample " + std::to_string(s.id) + ": wrong keypoint count");
  if (!s.phi_g.allFinite()) throw Error("sample " + std::to_string(s.id) + ": non-finite keypoints");
  if (!s.labeled) return;
  if (s.psi.rows() != psi_count(interp.q())) throw Error("sample " + std::to_string(s.id) + ": wrong PSI size");
  if (s.psi.topRows(8).colwise().mean().norm() > tol) throw Error("sample " + std::to_string(s.id) + ": PSI not centered");
  if (interp.q() != 2) return;
  const auto target = target_cr(interp);
  const PointSet2D local = s.local();
  for (const auto& q : edge_quadruples(2)) {
    double dmin = std::numeric_limits<double>::infinity();
    for (int i = 0; i < 4; ++i)
      for (int j = i + 1; j < 4; ++j)
        dmin = std::min(dmin, (local.points.row(q.v[i]) - local.points.row(q.v[j])).norm());
    if (dmin <= kForeshorteningGate) continue;
    const Vec2 v1 = s.phi_g.row(q.v[0]).transpose(), v2 = s.phi_g.row(q.v[1]).transpose();
    const Vec2 v3 = s.phi_g.row(q.v[2]).transpose(), v4 = s.phi_g.row(q.v[3]).transpose();
    if (std::abs(cross_ratio(v1, v2, v3, v4) - target.cr) > tol) {
      throw Error("sample " + std::to_string(s.id) + ": cross-ratio invariant violated");
    }
  }
}

/// Draws labeled pairs until one passes make_pair. Gives up after `max_tries`.
template <typename Rng>
Sample draw_pair(Rng& rng, const SampleSpec& spec, const InterpMatrix& interp, int max_tries = 1000) {
  for (int t = 0; t < max_tries; ++t) {
    const CameraModel cam = sample_camera(rng, spec);
    if (auto s = make_pair(sample_cuboid(rng, spec, cam), cam, interp)) return *s;
  }
  throw ConfigError("sample spec produced no visible instance in " + std::to_string(max_tries) + " draws");
}

/// Re-renders every base sample under `factor` yaws: copy 0 is the sample itself,
/// copies 1.. draw a fresh uniform yaw (redrawn up to 32 times until the 30% rule
/// passes, dropped otherwise). `full_rotation` additionally tilts the box by a
/// small random pitch and roll; PSI then follows the tilted box. Copy c of a
/// sample from image i goes to image i * factor + c so per-image grouping survives.
template <typename Rng>
void augment_rotations(const std::vector<Sample>& base, int factor, const InterpMatrix& interp, Rng& rng,
                       const std::function<void(Sample&&)>& sink, bool full_rotation = false) {
  if (factor < 1) throw ConfigError("augmentation factor must be at least 1");
  std::uniform_real_distribution<double> yaw(-kPi, kPi);
  std::uniform_real_distribution<double> tilt(-0.1, 0.1);
  for (const auto& s : base) {
    Sample first = s;
    first.image = s.image * factor;
    sink(std::move(first));
    for (int c = 1; c < factor; ++c) {
      for (int attempt = 0; attempt < 32; ++attempt) {
        Cuboid cub = s.cuboid;
        cub.yaw = wrap_angle(yaw(rng));
        std::optional<Sample> pair;
        if (full_rotation) {
          const double pitch = tilt(rng), roll = tilt(rng);
          const Mat3 extra = Eigen::AngleAxisd(pitch, Vec3::UnitZ()).toRotationMatrix() *
                             Eigen::AngleAxisd(roll, Vec3::UnitX()).toRotationMatrix();
          const PointSet3D tau0 = build_tau(cub, interp);
          const Mat3 r = yaw_rotation(cub.yaw) * extra * yaw_rotation(cub.yaw).transpose();
          PointSet3D tau{(((tau0.points.rowwise() - cub.centroid.transpose()) * r.transpose()).rowwise() +
                          cub.centroid.transpose()),
                         Layout::Tau};
          try {
            PointSet2D g = project(tau, s.camera.k);
            if (passes_visibility(g, s.camera.width, s.camera.height)) {
              Sample out = s;
              out.cuboid = cub;
              out.phi_g = g.points;
              out.psi = (tau.points.bottomRows(tau.size() - 1).rowwise() - cub.centroid.transpose());
              out.visibility = visibility_fraction(g, s.camera.width, s.camera.height);
              pair = std::move(out);
            }
          } catch (const DomainError&) {
          }
        } else {
          pair = make_pair(cub, s.camera, interp);
        }
        if (pair) {
          pair->id = s.id;
          pair->image = s.image * factor + c;
          pair->labeled = s.labeled;
          sink(std::move(*pair));
          break;
        }
      }
    }
  }
}

template <typename Rng>
std::vector<Sample> augment_rotations(const std::vector<Sample>& base, int factor, const InterpMatrix& interp, Rng& rng,
                                      bool full_rotation = false) {
  std::vector<Sample> out;
  out.reserve(base.size() * static_cast<std::size_t>(factor));
  augment_rotations(base, factor, interp, rng, [&out](Sample&& s) { out.push_back(std::move(s)); }, full_rotation);
  for (std::size_t i = 0; i < out.size(); ++i) out[i].id = static_cast<std::int64_t>(i);
  return out;
}

/// i.i.d. Gaussian pixel noise on every coordinate.
template <typename Rng>
Points2 add_noise(const Points2& phi, double sigma_px, Rng& rng) {
  if (!(sigma_px >= 0.0)) throw DomainError("noise sigma must be non-negative");
  if (sigma_px == 0.0) return phi;
  std::normal_distribution<double> n(0.0, sigma_px);
  Points2 out = phi;
  for (Eigen::Index i = 0; i < out.size(); ++i) out.data()[i] += n(rng);
  return out;
}

// ---------------------------------------------------------------------------
// Generation of a full synthetic dataset.

struct GenConfig {
  std::uint64_t seed = 0;
  int labeled_images = 100;
  int base_pairs = 0;      ///< > 0: keep drawing labeled images until this many base pairs exist (last image truncated)
  int max_instances = 12;  ///< labeled instances per image uniform in [1, max_instances]
  int augment = 1;
  int unlabeled = 0;
  int heldout_images = 0;
  bool full_rotation = false;
  SampleSpec labeled_spec;
  SampleSpec unlabeled_spec = [] {
    SampleSpec s;
    s.camera = apollo_like_camera();
    s.depth = {6.0, 60.0};
    return s;
  }();

  void validate() const {
    labeled_spec.validate();
    unlabeled_spec.validate();
    if (labeled_images < 1 && base_pairs < 1) throw ConfigError("need at least one labeled image");
    if (base_pairs < 0) throw ConfigError("base_pairs must be non-negative");
    if (max_instances < 1) throw ConfigError("max_instances must be at least 1");
    if (augment < 1) throw ConfigError("augment must be at least 1");
    if (unlabeled < 0 || heldout_images < 0) throw ConfigError("counts must be non-negative");
  }
};

struct Dataset {
  std::vector<Sample> labeled;
  std::vector<Sample> unlabeled;
  std::vector<Sample> heldout;
};

/// Independent random stream for (seed, stream, index); generation order does not
/// affect the values drawn for any one image.
inline std::mt19937_64 derived_rng(std::uint64_t seed, std::uint64_t stream, std::uint64_t index) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(stream), static_cast<std::uint32_t>(index),
                    static_cast<std::uint32_t>(index >> 32)};
  return std::mt19937_64(seq);
}

namespace dataset_detail {

inline std::vector<Sample> generate_images(std::uint64_t seed, std::uint64_t stream, int images, int max_instances,
                                           const SampleSpec& spec, const InterpMatrix& interp, bool labeled,
                                           std::size_t pairs = 0) {
  std::vector<Sample> out;
  for (int img = 0; pairs > 0 ? out.size() < pairs : img < images; ++img) {
    auto rng = derived_rng(seed, stream, static_cast<std::uint64_t>(img));
    int n = std::uniform_int_distribution<int>(1, max_instances)(rng);
    if (pairs > 0) n = std::min<int>(n, static_cast<int>(pairs - out.size()));
    const CameraModel cam = sample_camera(rng, spec);
    for (int i = 0; i < n; ++i) {
      std::optional<Sample> s;
      for (int t = 0; t < 1000 && !s; ++t) s = make_pair(sample_cuboid(rng, spec, cam), cam, interp);
      if (!s) throw ConfigError("sample spec produced no visible instance in 1000 draws");
      s->image = img;
      s->labeled = labeled;
      out.push_back(std::move(*s));
    }
  }
  return out;
}

}  // namespace dataset_detail

/// Labeled pairs (augmented), unlabeled instances under a different camera and
/// held-out labeled images. Every labeled pair is validated before returning.
inline Dataset generate_dataset(const GenConfig& cfg, const InterpMatrix& interp) {
  cfg.validate();
  Dataset ds;
  const auto base = dataset_detail::generate_images(cfg.seed, 1, cfg.labeled_images, cfg.max_instances,
                                                    cfg.labeled_spec, interp, true,
                                                    static_cast<std::size_t>(cfg.base_pairs));
  auto aug_rng = derived_rng(cfg.seed, 2, 0);
  ds.labeled = augment_rotations(base, cfg.augment, interp, aug_rng, cfg.full_rotation);

  auto un_rng = derived_rng(cfg.seed, 3, 0);
  for (int i = 0; i < cfg.unlabeled; ++i) {
    Sample s = draw_pair(un_rng, cfg.unlabeled_spec, interp);
    s.labeled = false;
    s.image = i;
    s.psi.resize(0, 3);
    ds.unlabeled.push_back(std::move(s));
  }
  ds.heldout = dataset_detail::generate_images(cfg.seed, 4, cfg.heldout_images, cfg.max_instances, cfg.labeled_spec,
                                              interp, true);
  std::int64_t id = 0;
  for (auto* part : {&ds.labeled, &ds.unlabeled, &ds.heldout})
    for (auto& s : *part) s.id = id++;
  for (const auto& s : ds.labeled) validate_pair(s, interp);
  for (const auto& s : ds.heldout) validate_pair(s, interp);
  return ds;
}

// ---------------------------------------------------------------------------
// Mixed batches: labeled instances grouped by image, each image padded with
// unlabeled instances up to `pad_to`.

struct MixedBatch {
  std::vector<std::size_t> labeled;    ///< indices into the labeled set
  std::vector<std::size_t> unlabeled;  ///< indices into the unlabeled pool

  std::size_t size() const { return labeled.size() + unlabeled.size(); }
};

/// Image order is shuffled with `rng`; every labeled sample appears exactly once.
/// The unlabeled pool is consumed in a shuffled order and reshuffled when exhausted,
/// so long epochs sample it with replacement. With an empty pool or pad_to = 0 no
/// padding is added.
template <typename Rng>
std::vector<MixedBatch> compose_mixed_batches(const std::vector<Sample>& labeled, std::size_t unlabeled_count,
                                              int images_per_batch, int pad_to, Rng& rng) {
  if (labeled.empty()) throw ConfigError("labeled set is empty");
  if (images_per_batch < 1) throw ConfigError("images per batch must be at least 1");
  std::vector<std::vector<std::size_t>> images;
  {
    std::vector<std::pair<std::int64_t, std::size_t>> keyed(labeled.size());
    for (std::size_t i = 0; i < labeled.size(); ++i) keyed[i] = {labeled[i].image, i};
    std::stable_sort(keyed.begin(), keyed.end(),
                     [](const auto& a, const auto& b) { return a.first < b.first; });
    for (std::size_t i = 0; i < keyed.size(); ++i) {
      if (i == 0 || keyed[i].first != keyed[i - 1].first) images.emplace_back();
      images.back().push_back(keyed[i].second);
    }
  }
  std::shuffle(images.begin(), images.end(), rng);

  std::vector<std::size_t> pool(unlabeled_count);
  std::iota(pool.begin(), pool.end(), std::size_t{0});
  std::shuffle(pool.begin(), pool.end(), rng);
  std::size_t next = 0;

  std::vector<MixedBatch> batches;
  for (std::size_t i = 0; i < images.size(); ++i) {
    if (i % static_cast<std::size_t>(images_per_batch) == 0) batches.emplace_back();
    auto& b = batches.back();
    const auto& img = images[i];
    b.labeled.insert(b.labeled.end(), img.begin(), img.end());
    if (pool.empty()) continue;
    for (int k = static_cast<int>(img.size()); k < pad_to; ++k) {
      if (next == pool.size()) {
        std::shuffle(pool.begin(), pool.end(), rng);
        next = 0;
      }
      b.unlabeled.push_back(pool[next++]);
    }
  }
  return batches;
}

}  // namespace egonet
