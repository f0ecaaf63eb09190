#pragma once

// Lifting network: 66 screen-coordinate values to 96 values (32 PSI points),
// with hand-written backpropagation, Adam and a tensor checkpoint format.
//
// Activations are stored features x batch (one column per instance).
//
//   input   FC(66 -> 1024) BN ReLU Dropout
//   block   x + [FC BN ReLU Dropout FC BN ReLU Dropout](x)     (twice)
//   output  FC(1024 -> 96)
//
// Hidden FC layers carry no bias since batch normalization follows them.

#include <cstdint>
#include <fstream>
#include <map>
#include <random>
#include <string>
#include <vector>

#include "egonet/common.hpp"
#include "egonet/geometry.hpp"
#include "egonet/kitti_io.hpp"

namespace egonet {

template <typename T>
using Mat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic>;
template <typename T>
using ColVec = Eigen::Matrix<T, Eigen::Dynamic, 1>;

enum class Mode { Train, Eval };

// ---------------------------------------------------------------------------
// Parameters

template <typename T>
struct Param {
  std::string name;
  Mat<T> value;
  Mat<T> grad;
  bool trainable = true;  ///< false for batch-norm running statistics
};

template <typename T>
class ParamStore {
 public:
  int add(std::string name, Eigen::Index rows, Eigen::Index cols, bool trainable = true) {
    Param<T> p{std::move(name), Mat<T>::Zero(rows, cols), Mat<T>::Zero(rows, cols), trainable};
    params_.push_back(std::move(p));
    return static_cast<int>(params_.size()) - 1;
  }
  Param<T>& operator[](int i) { return params_[static_cast<std::size_t>(i)]; }
  const Param<T>& operator[](int i) const { return params_[static_cast<std::size_t>(i)]; }
  std::vector<Param<T>>& all() { return params_; }
  const std::vector<Param<T>>& all() const { return params_; }

  void zero_grad() {
    for (auto& p : params_) p.grad.setZero();
  }
  Param<T>* find(const std::string& name) {
    for (auto& p : params_)
      if (p.name == name) return &p;
    return nullptr;
  }
  std::size_t trainable_count() const {
    std::size_t n = 0;
    for (const auto& p : params_)
      if (p.trainable) n += static_cast<std::size_t>(p.value.size());
    return n;
  }

 private:
  std::vector<Param<T>> params_;
};

// ---------------------------------------------------------------------------
// Layers. Each layer keeps the cache of its most recent forward pass.

template <typename T>
class Linear {
 public:
  Linear() = default;
  Linear(ParamStore<T>& store, const std::string& name, int in, int out, bool bias)
      : w_(store.add(name + ".weight", out, in)), b_(bias ? store.add(name + ".bias", out, 1) : -1) {}

  template <typename Rng>
  void init(ParamStore<T>& store, Rng& rng, double bound) {
    std::uniform_real_distribution<double> u(-bound, bound);
    auto& w = store[w_].value;
    for (Eigen::Index j = 0; j < w.cols(); ++j)
      for (Eigen::Index i = 0; i < w.rows(); ++i) w(i, j) = static_cast<T>(u(rng));
    if (b_ >= 0) store[b_].value.setZero();
  }
  int fan_in(const ParamStore<T>& store) const { return static_cast<int>(store[w_].value.cols()); }
  int weight_index() const { return w_; }
  int bias_index() const { return b_; }

  void forward(ParamStore<T>& store, const Mat<T>& x, Mat<T>& y) {
    x_ = &x;
    y.noalias() = store[w_].value * x;
    if (b_ >= 0) y.colwise() += ColVec<T>(store[b_].value.col(0));
  }
  void backward(ParamStore<T>& store, const Mat<T>& dy, Mat<T>* dx) {
    store[w_].grad.noalias() += dy * x_->transpose();
    if (b_ >= 0) store[b_].grad.col(0) += dy.rowwise().sum();
    if (dx) dx->noalias() = store[w_].value.transpose() * dy;
  }

 private:
  int w_ = -1;
  int b_ = -1;
  const Mat<T>* x_ = nullptr;
};

template <typename T>
class BatchNorm {
 public:
  static constexpr double kEps = 1e-5;
  static constexpr double kMomentum = 0.1;

  BatchNorm() = default;
  BatchNorm(ParamStore<T>& store, const std::string& name, int features)
      : gamma_(store.add(name + ".gamma", features, 1)),
        beta_(store.add(name + ".beta", features, 1)),
        mean_(store.add(name + ".running_mean", features, 1, false)),
        var_(store.add(name + ".running_var", features, 1, false)) {}

  void init(ParamStore<T>& store) {
    store[gamma_].value.setOnes();
    store[beta_].value.setZero();
    store[mean_].value.setZero();
    store[var_].value.setOnes();
  }

  void forward(ParamStore<T>& store, const Mat<T>& x, Mat<T>& y, Mode mode) {
    const auto n = x.cols();
    const ColVec<T> gamma = store[gamma_].value.col(0);
    const ColVec<T> beta = store[beta_].value.col(0);
    if (mode == Mode::Eval) {
      inv_std_ = (store[var_].value.col(0).array() + T(kEps)).rsqrt().matrix();
      xhat_ = (x.colwise() - ColVec<T>(store[mean_].value.col(0))).array().colwise() * inv_std_.array();
    } else {
      const ColVec<T> mu = x.rowwise().mean();
      xhat_ = x.colwise() - mu;
      const ColVec<T> var = xhat_.array().square().rowwise().mean().matrix();
      inv_std_ = (var.array() + T(kEps)).rsqrt().matrix();
      xhat_.array().colwise() *= inv_std_.array();
      const T m = T(kMomentum);
      const T unbias = n > 1 ? T(n) / T(n - 1) : T(1);
      store[mean_].value.col(0) = (T(1) - m) * store[mean_].value.col(0) + m * mu;
      store[var_].value.col(0) = (T(1) - m) * store[var_].value.col(0) + m * unbias * var;
    }
    y = (xhat_.array().colwise() * gamma.array()).colwise() + beta.array();
    mode_ = mode;
  }

  /// dx may alias dy.
  void backward(ParamStore<T>& store, const Mat<T>& dy, Mat<T>& dx) {
    const ColVec<T> gamma = store[gamma_].value.col(0);
    const ColVec<T> sum_dy = dy.rowwise().sum();
    const ColVec<T> sum_dy_xhat = (dy.array() * xhat_.array()).rowwise().sum().matrix();
    store[gamma_].grad.col(0) += sum_dy_xhat;
    store[beta_].grad.col(0) += sum_dy;
    const ColVec<T> scale = (gamma.array() * inv_std_.array()).matrix();
    if (mode_ == Mode::Eval) {
      dx = dy.array().colwise() * scale.array();
      return;
    }
    const T inv_n = T(1) / static_cast<T>(dy.cols());
    // dx = scale * (dy - mean(dy) - xhat * mean(dy * xhat))
    dx = ((dy.array().colwise() - (sum_dy * inv_n).array()) -
          xhat_.array().colwise() * (sum_dy_xhat * inv_n).array())
             .colwise() *
         scale.array();
  }

 private:
  int gamma_ = -1, beta_ = -1, mean_ = -1, var_ = -1;
  Mat<T> xhat_;
  ColVec<T> inv_std_;
  Mode mode_ = Mode::Train;
};

/// FC -> BN -> ReLU -> Dropout.
template <typename T>
class DenseUnit {
 public:
  DenseUnit() = default;
  DenseUnit(ParamStore<T>& store, const std::string& name, int in, int out)
      : fc_(store, name + ".fc", in, out, false), bn_(store, name + ".bn", out) {}

  template <typename Rng>
  void init(ParamStore<T>& store, Rng& rng) {
    fc_.init(store, rng, std::sqrt(6.0 / fc_.fan_in(store)));
    bn_.init(store);
  }

  /// `rng` null or `dropout` zero disables dropout.
  template <typename Rng>
  const Mat<T>& forward(ParamStore<T>& store, const Mat<T>& x, Mode mode, double dropout, Rng* rng) {
    fc_.forward(store, x, z_);
    bn_.forward(store, z_, out_, mode);
    relu_mask_ = (out_.array() > T(0)).template cast<T>();
    out_.array() *= relu_mask_.array();
    use_dropout_ = mode == Mode::Train && rng != nullptr && dropout > 0.0;
    if (use_dropout_) {
      const T keep_scale = static_cast<T>(1.0 / (1.0 - dropout));
      const auto threshold = static_cast<std::uint64_t>(dropout * 18446744073709551616.0);
      drop_mask_.resize(out_.rows(), out_.cols());
      T* m = drop_mask_.data();
      for (Eigen::Index i = 0; i < drop_mask_.size(); ++i) m[i] = (*rng)() >= threshold ? keep_scale : T(0);
      out_.array() *= drop_mask_.array();
    }
    return out_;
  }

  void backward(ParamStore<T>& store, const Mat<T>& dy, Mat<T>* dx) {
    grad_ = dy;
    if (use_dropout_) grad_.array() *= drop_mask_.array();
    grad_.array() *= relu_mask_.array();
    bn_.backward(store, grad_, grad_);
    fc_.backward(store, grad_, dx);
  }

  const Mat<T>& output() const { return out_; }

 private:
  Linear<T> fc_;
  BatchNorm<T> bn_;
  Mat<T> z_, out_, relu_mask_, drop_mask_, grad_;
  bool use_dropout_ = false;
};

// ---------------------------------------------------------------------------
// Lifter

struct LifterShape {
  int input = 66;
  int hidden = 1024;
  int blocks = 2;
  int output = 96;
  double dropout = 0.5;
};

template <typename T>
class Lifter {
 public:
  explicit Lifter(const LifterShape& shape = {}) : shape_(shape) {
    input_ = DenseUnit<T>(store_, "lifter.input", shape.input, shape.hidden);
    for (int b = 0; b < shape.blocks; ++b) {
      const std::string name = "lifter.block" + std::to_string(b + 1);
      blocks_.push_back({DenseUnit<T>(store_, name + ".unit1", shape.hidden, shape.hidden),
                         DenseUnit<T>(store_, name + ".unit2", shape.hidden, shape.hidden)});
    }
    output_ = Linear<T>(store_, "lifter.output", shape.hidden, shape.output, true);
  }
  Lifter(const Lifter&) = delete;  // layers cache pointers into their own activations
  Lifter& operator=(const Lifter&) = delete;

  template <typename Rng>
  void init(Rng& rng) {
    input_.init(store_, rng);
    for (auto& b : blocks_) {
      b.first.init(store_, rng);
      b.second.init(store_, rng);
    }
    output_.init(store_, rng, 1.0 / std::sqrt(static_cast<double>(shape_.hidden)));
  }

  const LifterShape& shape() const { return shape_; }
  ParamStore<T>& params() { return store_; }
  const ParamStore<T>& params() const { return store_; }

  /// x: input x batch. Dropout draws from `rng` in train mode; pass nullptr to disable it.
  template <typename Rng = std::mt19937_64>
  const Mat<T>& forward(const Mat<T>& x, Mode mode, Rng* rng = nullptr) {
    if (x.rows() != shape_.input) throw UsageError("lifter input width mismatch");
    if (!x.allFinite()) throw DomainError("lifter input is not finite");
    hidden_.resize(blocks_.size() + 1);
    hidden_[0] = input_.forward(store_, x, mode, shape_.dropout, rng);
    for (std::size_t b = 0; b < blocks_.size(); ++b) {
      const Mat<T>& t = blocks_[b].first.forward(store_, hidden_[b], mode, shape_.dropout, rng);
      const Mat<T>& u = blocks_[b].second.forward(store_, t, mode, shape_.dropout, rng);
      hidden_[b + 1] = hidden_[b] + u;
    }
    output_.forward(store_, hidden_.back(), y_);
    return y_;
  }

  /// Accumulates parameter gradients for d(loss)/d(output) = dy; optionally returns d(loss)/d(input).
  void backward(const Mat<T>& dy, Mat<T>* dx = nullptr) {
    Mat<T> dh;
    output_.backward(store_, dy, &dh);
    Mat<T> dt;
    for (std::size_t b = blocks_.size(); b-- > 0;) {
      blocks_[b].second.backward(store_, dh, &dt);
      Mat<T> du;
      blocks_[b].first.backward(store_, dt, &du);
      dh += du;
    }
    input_.backward(store_, dh, dx);
  }

 private:
  LifterShape shape_;
  ParamStore<T> store_;
  DenseUnit<T> input_;
  std::vector<std::pair<DenseUnit<T>, DenseUnit<T>>> blocks_;
  Linear<T> output_;
  std::vector<Mat<T>> hidden_;
  Mat<T> y_;
};

// ---------------------------------------------------------------------------
// Keypoint refiner: the trainable 2D stage in front of the lifter. It maps
// detected local keypoints to refined local keypoints, x + FC(ReLU(FC(x))),
// and is the only place the 2D and cross-ratio losses act on.

struct RefinerShape {
  int io = 66;
  int hidden = 256;
};

template <typename T>
class Refiner {
 public:
  explicit Refiner(const RefinerShape& shape = {}) : shape_(shape) {
    fc1_ = Linear<T>(store_, "refiner.fc1", shape.io, shape.hidden, true);
    fc2_ = Linear<T>(store_, "refiner.fc2", shape.hidden, shape.io, true);
  }
  Refiner(const Refiner&) = delete;
  Refiner& operator=(const Refiner&) = delete;

  /// The second layer starts at zero so an untrained refiner is the identity.
  template <typename Rng>
  void init(Rng& rng) {
    fc1_.init(store_, rng, std::sqrt(6.0 / shape_.io));
    store_[fc2_.weight_index()].value.setZero();
    store_[fc2_.bias_index()].value.setZero();
  }

  ParamStore<T>& params() { return store_; }
  const ParamStore<T>& params() const { return store_; }

  const Mat<T>& forward(const Mat<T>& x) {
    if (x.rows() != shape_.io) throw UsageError("refiner input width mismatch");
    fc1_.forward(store_, x, h_);
    mask_ = (h_.array() > T(0)).template cast<T>();
    h_.array() *= mask_.array();
    fc2_.forward(store_, h_, y_);
    y_ += x;
    return y_;
  }

  void backward(const Mat<T>& dy, Mat<T>* dx = nullptr) {
    Mat<T> dh;
    fc2_.backward(store_, dy, &dh);
    dh.array() *= mask_.array();
    Mat<T> dx1;
    fc1_.backward(store_, dh, dx ? &dx1 : nullptr);
    if (dx) *dx = dx1 + dy;
  }

 private:
  RefinerShape shape_;
  ParamStore<T> store_;
  Linear<T> fc1_, fc2_;
  Mat<T> h_, mask_, y_;
};

// ---------------------------------------------------------------------------
// Lifter input encoding.
//
// From 33 LOCAL keypoints (TAU order) of one instance:
//   [0..1]  camera-normalized ray of the centroid keypoint ((u-cx)/fx, (v-cy)/fy)
//   [2..65] offsets of points 1..32 from the centroid keypoint, in units of the
//           crop side, y scaled by fx/fy
// The map is affine in the local coordinates.

template <typename T>
void encode_lifter_input(const T* local, const AffineCrop& crop, const CameraIntrinsics& k, T* out, int points = 33) {
  const double side = crop.side();
  const double u0 = static_cast<double>(local[0]) * side + crop.translation.x();
  const double v0 = static_cast<double>(local[1]) * side + crop.translation.y();
  out[0] = static_cast<T>((u0 - k.cx) / k.fx);
  out[1] = static_cast<T>((v0 - k.cy) / k.fy);
  const T aspect = static_cast<T>(k.fx / k.fy);
  for (int i = 1; i < points; ++i) {
    out[2 * i] = local[2 * i] - local[0];
    out[2 * i + 1] = (local[2 * i + 1] - local[1]) * aspect;
  }
}

/// Transposed Jacobian of encode_lifter_input: d(loss)/d(local) from d(loss)/d(encoded).
template <typename T>
void encode_lifter_input_backward(const T* d_out, const AffineCrop& crop, const CameraIntrinsics& k, T* d_local,
                                  int points = 33) {
  const double side = crop.side();
  const T aspect = static_cast<T>(k.fx / k.fy);
  T sx = static_cast<T>(side / k.fx) * d_out[0];
  T sy = static_cast<T>(side / k.fy) * d_out[1];
  for (int i = 1; i < points; ++i) {
    d_local[2 * i] = d_out[2 * i];
    d_local[2 * i + 1] = d_out[2 * i + 1] * aspect;
    sx -= d_out[2 * i];
    sy -= d_out[2 * i + 1] * aspect;
  }
  d_local[0] = sx;
  d_local[1] = sy;
}

// ---------------------------------------------------------------------------
// Losses on point sets.

/// Mean absolute error over all coordinates.
inline double loss_2d(const PointSet2D& pred, const PointSet2D& gt) {
  if (pred.size() != gt.size()) throw UsageError("2D point counts differ");
  if (pred.size() == 0) return 0.0;
  return (pred.points - gt.points).cwiseAbs().mean();
}

/// Mean squared error over all coordinates.
inline double loss_3d(const PointSet3D& pred, const PointSet3D& gt) {
  if (pred.size() != gt.size()) throw UsageError("3D point counts differ");
  if (pred.size() == 0) return 0.0;
  return (pred.points - gt.points).squaredNorm() / static_cast<double>(pred.points.size());
}

/// Flattens 32 x 3 row-major PSI points into one 96-vector, and back.
inline Eigen::VectorXd flatten(const Points3& p) {
  Eigen::VectorXd v(p.size());
  for (Eigen::Index i = 0; i < p.rows(); ++i) v.segment<3>(3 * i) = p.row(i).transpose();
  return v;
}
template <typename Derived>
Points3 unflatten3(const Eigen::MatrixBase<Derived>& v) {
  Points3 p(v.size() / 3, 3);
  for (Eigen::Index i = 0; i < p.rows(); ++i) p.row(i) << double(v(3 * i)), double(v(3 * i + 1)), double(v(3 * i + 2));
  return p;
}

// ---------------------------------------------------------------------------
// Adam

struct AdamConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

template <typename T>
struct AdamState {
  std::vector<Mat<T>> m;
  std::vector<Mat<T>> v;
  std::int64_t step = 0;

  void resize_for(const ParamStore<T>& store) {
    m.clear();
    v.clear();
    for (const auto& p : store.all()) {
      m.push_back(Mat<T>::Zero(p.value.rows(), p.value.cols()));
      v.push_back(Mat<T>::Zero(p.value.rows(), p.value.cols()));
    }
  }
};

/// One bias-corrected Adam update of every trainable parameter from its accumulated gradient.
template <typename T>
void adam_step(ParamStore<T>& store, AdamState<T>& state, const AdamConfig& cfg) {
  if (state.m.size() != store.all().size()) throw UsageError("Adam state does not match parameters");
  ++state.step;
  const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(state.step));
  const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(state.step));
  const T b1 = static_cast<T>(cfg.beta1);
  const T b2 = static_cast<T>(cfg.beta2);
  const T step_size = static_cast<T>(cfg.lr / bc1);
  const T inv_sqrt_bc2 = static_cast<T>(1.0 / std::sqrt(bc2));
  const T eps = static_cast<T>(cfg.eps);
  for (std::size_t i = 0; i < store.all().size(); ++i) {
    auto& p = store.all()[i];
    if (!p.trainable) continue;
    auto& m = state.m[i];
    auto& v = state.v[i];
    m = b1 * m + (T(1) - b1) * p.grad;
    v = b2 * v + (T(1) - b2) * p.grad.cwiseProduct(p.grad);
    p.value.array() -= step_size * m.array() / (v.array().sqrt() * inv_sqrt_bc2 + eps);
  }
}

// ---------------------------------------------------------------------------
// Checkpoint: named 2D tensors, row-major values, little-endian.
//
//   "EGONETCK"  u32 version  u32 count
//   per tensor: u32 name_len, name, u8 dtype (0 f32, 1 f64), u32 rows, u32 cols, values

inline constexpr std::uint32_t kCheckpointVersion = 1;

struct Tensor {
  std::string name;
  Eigen::Index rows = 0;
  Eigen::Index cols = 0;
  std::vector<double> values;  ///< row-major
  bool is_double = false;
};

namespace ckpt_detail {

template <typename V>
void put(std::ostream& out, V v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof(V));
}
template <typename V>
V get(std::istream& in) {
  V v{};
  in.read(reinterpret_cast<char*>(&v), sizeof(V));
  if (!in) throw FormatError("checkpoint is truncated");
  return v;
}

}  // namespace ckpt_detail

template <typename T>
Tensor to_tensor(const std::string& name, const Mat<T>& m) {
  Tensor t{name, m.rows(), m.cols(), {}, std::is_same_v<T, double>};
  t.values.reserve(static_cast<std::size_t>(m.size()));
  for (Eigen::Index i = 0; i < m.rows(); ++i)
    for (Eigen::Index j = 0; j < m.cols(); ++j) t.values.push_back(static_cast<double>(m(i, j)));
  return t;
}

template <typename T>
void from_tensor(const Tensor& t, Mat<T>& m) {
  if (t.rows != m.rows() || t.cols != m.cols()) {
    throw FormatError("checkpoint tensor '" + t.name + "' has shape " + std::to_string(t.rows) + "x" +
                      std::to_string(t.cols) + ", expected " + std::to_string(m.rows()) + "x" +
                      std::to_string(m.cols()));
  }
  for (Eigen::Index i = 0; i < m.rows(); ++i)
    for (Eigen::Index j = 0; j < m.cols(); ++j) m(i, j) = static_cast<T>(t.values[static_cast<std::size_t>(i * m.cols() + j)]);
}

inline void write_checkpoint(const std::string& path, const std::vector<Tensor>& tensors) {
  using ckpt_detail::put;
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error("cannot open checkpoint for writing: " + path);
  out.write("EGONETCK", 8);
  put<std::uint32_t>(out, kCheckpointVersion);
  put<std::uint32_t>(out, static_cast<std::uint32_t>(tensors.size()));
  for (const auto& t : tensors) {
    put<std::uint32_t>(out, static_cast<std::uint32_t>(t.name.size()));
    out.write(t.name.data(), static_cast<std::streamsize>(t.name.size()));
    put<std::uint8_t>(out, t.is_double ? 1 : 0);
    put<std::uint32_t>(out, static_cast<std::uint32_t>(t.rows));
    put<std::uint32_t>(out, static_cast<std::uint32_t>(t.cols));
    for (double v : t.values) {
      if (t.is_double) put<double>(out, v);
      else put<float>(out, static_cast<float>(v));
    }
  }
  if (!out) throw Error("failed writing checkpoint: " + path);
}

inline std::map<std::string, Tensor> read_checkpoint(const std::string& path) {
  using ckpt_detail::get;
  std::ifstream in(path, std::ios::binary);
  if (!in) throw UsageError("cannot open checkpoint: " + path);
  char magic[8];
  in.read(magic, 8);
  if (!in || std::string(magic, 8) != "EGONETCK") throw FormatError("not a checkpoint file: " + path);
  const auto version = get<std::uint32_t>(in);
  if (version != kCheckpointVersion) throw FormatError("unsupported checkpoint version " + std::to_string(version));
  const auto count = get<std::uint32_t>(in);
  std::map<std::string, Tensor> out;
  for (std::uint32_t i = 0; i < count; ++i) {
    Tensor t;
    const auto len = get<std::uint32_t>(in);
    t.name.resize(len);
    in.read(t.name.data(), len);
    t.is_double = get<std::uint8_t>(in) == 1;
    t.rows = get<std::uint32_t>(in);
    t.cols = get<std::uint32_t>(in);
    t.values.resize(static_cast<std::size_t>(t.rows * t.cols));
    for (auto& v : t.values) v = t.is_double ? get<double>(in) : static_cast<double>(get<float>(in));
    out.emplace(t.name, std::move(t));
  }
  return out;
}

}  // namespace egonet
