#pragma once

// Deep-prior generator f_theta: a small fully connected network lifts the
// latent z_t to an s x s map, a convolutional decoder upsamples it to n x n and
// a final convolution emits real and imaginary channels. Training fits
// ||FC f_theta(z_t) - k_t||^2 over shuffled frame batches with hand-written
// reverse-mode gradients.

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <functional>
#include <numeric>
#include <random>
#include <string>
#include <vector>

#include "dcedip/cs_recon.hpp"
#include "dcedip/kspace.hpp"
#include "dcedip/latent.hpp"
#include "dcedip/types.hpp"

namespace dcedip {

enum class Upsampling { bilinear, nearest };
enum class Normalization { instance, none };
enum class Optimizer { gd, adam };
enum class LrSchedule { constant, cosine };

struct NetSpec {
  int m = 32;
  int fc_hidden = 128;
  int base = 4;
  int channels = 32;
  std::vector<int> stage_blocks{2, 3, 3, 3, 2};  // stage 0 at base size, each later stage upsamples x2 first
  Upsampling upsample = Upsampling::bilinear;
  Normalization norm = Normalization::instance;
  double leaky_slope = 0.1;
  std::uint64_t init_seed = 1;

  int stages() const { return static_cast<int>(stage_blocks.size()); }
  int output_size() const { return base << (stages() - 1); }
  int blocks() const { return std::accumulate(stage_blocks.begin(), stage_blocks.end(), 0); }

  static NetSpec desk(int n = 64) {
    NetSpec s;
    int stages = 1;
    while ((s.base << (stages - 1)) < n) ++stages;
    s.stage_blocks.assign(stages, 3);
    s.stage_blocks.front() = 2;
    s.stage_blocks.back() = 2;
    return s;
  }

  static NetSpec paper_scale() {
    NetSpec s;
    s.fc_hidden = 512;
    s.base = 7;
    s.channels = 128;
    s.stage_blocks = {2, 3, 3, 3, 3, 2};
    return s;
  }
};

inline void validate(const NetSpec& s) {
  require(s.m >= 1 && s.fc_hidden >= 1 && s.base >= 1 && s.channels >= 1, "NetSpec: sizes must be positive");
  require(!s.stage_blocks.empty(), "NetSpec: need at least one stage");
  for (int b : s.stage_blocks) require(b >= 1, "NetSpec: every stage needs a conv block");
  require(s.leaky_slope >= 0.0 && s.leaky_slope < 1.0, "NetSpec: leaky slope must be in [0, 1)");
}

/// Closed-form parameter count.
inline std::size_t parameter_count(const NetSpec& s) {
  const std::size_t m = s.m, h = s.fc_hidden, s2 = static_cast<std::size_t>(s.base) * s.base, c = s.channels;
  const std::size_t nb = s.blocks();
  const std::size_t norm = s.norm == Normalization::instance ? 2 * c : 0;
  std::size_t count = m * h + h + h * s2 + s2;
  count += (9 * c + c + norm) + (nb - 1) * (9 * c * c + c + norm);
  count += 2 * 9 * c + 2;
  return count;
}

template <class S>
struct ModelParams {
  NetSpec spec;
  std::vector<S> values;
  int epoch = 0;
  std::vector<double> loss_history;
  double data_scale = 1.0;  // generator output is in units of k-space / data_scale
};

namespace detail {

template <class S>
using Mat = Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <class S>
using Vec = Eigen::Matrix<S, Eigen::Dynamic, 1>;

/// 1D interpolation matrix (2h x h) for x2 upsampling (half-pixel centers, edge clamped).
template <class S>
Mat<S> upsample_matrix(int h, Upsampling mode) {
  Mat<S> u = Mat<S>::Zero(2 * h, h);
  for (int i = 0; i < 2 * h; ++i) {
    if (mode == Upsampling::nearest) {
      u(i, i / 2) = 1;
      continue;
    }
    const double src = std::max(0.0, (i + 0.5) / 2.0 - 0.5);
    const int i0 = std::min(static_cast<int>(src), h - 1);
    const int i1 = std::min(i0 + 1, h - 1);
    const double f = src - i0;
    u(i, i0) += static_cast<S>(1.0 - f);
    u(i, i1) += static_cast<S>(f);
  }
  return u;
}

/// Rows c*9 + ky*3 + kx hold the zero-padded input plane shifted by (ky-1, kx-1).
template <class S>
void im2col(const Mat<S>& x, int h, int w, Mat<S>& col) {
  const int c_in = static_cast<int>(x.rows());
  col.setZero(9 * c_in, h * w);
  for (int c = 0; c < c_in; ++c)
    for (int ky = 0; ky < 3; ++ky)
      for (int kx = 0; kx < 3; ++kx) {
        S* dst = col.row(c * 9 + ky * 3 + kx).data();
        const S* src = x.row(c).data();
        for (int y = 0; y < h; ++y) {
          const int sy = y + ky - 1;
          if (sy < 0 || sy >= h) continue;
          const int x0 = std::max(0, 1 - kx), x1 = std::min(w, w + 1 - kx);
          for (int xx = x0; xx < x1; ++xx) dst[y * w + xx] = src[sy * w + xx + kx - 1];
        }
      }
}

template <class S>
void col2im(const Mat<S>& col, int c_in, int h, int w, Mat<S>& x) {
  x.setZero(c_in, h * w);
  for (int c = 0; c < c_in; ++c)
    for (int ky = 0; ky < 3; ++ky)
      for (int kx = 0; kx < 3; ++kx) {
        const S* src = col.row(c * 9 + ky * 3 + kx).data();
        S* dst = x.row(c).data();
        for (int y = 0; y < h; ++y) {
          const int sy = y + ky - 1;
          if (sy < 0 || sy >= h) continue;
          const int x0 = std::max(0, 1 - kx), x1 = std::min(w, w + 1 - kx);
          for (int xx = x0; xx < x1; ++xx) dst[sy * w + xx + kx - 1] += src[y * w + xx];
        }
      }
}

}  // namespace detail

/// Network evaluation and reverse-mode gradients for a fixed NetSpec. Parameters live in one flat
/// vector; offsets are fixed by the layout below.
template <class S>
class Generator {
 public:
  using Mat = detail::Mat<S>;
  using Vec = detail::Vec<S>;

  explicit Generator(NetSpec spec) : spec_(std::move(spec)) {
    validate(spec_);
    std::size_t off = 0;
    auto take = [&](std::size_t n) {
      const std::size_t o = off;
      off += n;
      return o;
    };
    const std::size_t m = spec_.m, h = spec_.fc_hidden, s2 = static_cast<std::size_t>(spec_.base) * spec_.base;
    const std::size_t c = spec_.channels;
    fc1_w_ = take(h * m);
    fc1_b_ = take(h);
    fc2_w_ = take(s2 * h);
    fc2_b_ = take(s2);
    int size = spec_.base;
    for (int st = 0; st < spec_.stages(); ++st) {
      if (st > 0) {
        ups_.push_back(detail::upsample_matrix<S>(size, spec_.upsample));
        size *= 2;
      }
      for (int b = 0; b < spec_.stage_blocks[st]; ++b) {
        Block blk;
        blk.c_in = blocks_.empty() ? 1 : spec_.channels;
        blk.size = size;
        blk.upsample_before = (st > 0 && b == 0) ? st - 1 : -1;
        blk.w = take(c * blk.c_in * 9);
        blk.b = take(c);
        if (spec_.norm == Normalization::instance) {
          blk.gamma = take(c);
          blk.beta = take(c);
        }
        blocks_.push_back(blk);
      }
    }
    head_w_ = take(2 * c * 9);
    head_b_ = take(2);
    count_ = off;
    if (count_ != dcedip::parameter_count(spec_)) throw std::logic_error("Generator: layout disagrees with parameter_count");
  }

  const NetSpec& spec() const { return spec_; }
  std::size_t parameter_count() const { return count_; }
  int output_size() const { return spec_.output_size(); }

  /// Fan-in scaled Gaussian weights, zero biases, unit normalization gains.
  ModelParams<S> init() const {
    ModelParams<S> p;
    p.spec = spec_;
    p.values.assign(count_, S(0));
    std::mt19937_64 rng(spec_.init_seed);
    std::normal_distribution<double> nd;
    const double gain = 2.0 / (1.0 + spec_.leaky_slope * spec_.leaky_slope);
    auto fill = [&](std::size_t off, std::size_t n, double fan_in, double g) {
      const double sd = std::sqrt(g / fan_in);
      for (std::size_t i = 0; i < n; ++i) p.values[off + i] = static_cast<S>(sd * nd(rng));
    };
    const std::size_t h = spec_.fc_hidden, s2 = static_cast<std::size_t>(spec_.base) * spec_.base;
    fill(fc1_w_, h * spec_.m, spec_.m, gain);
    fill(fc2_w_, s2 * h, static_cast<double>(h), gain);
    for (const auto& b : blocks_) {
      fill(b.w, static_cast<std::size_t>(spec_.channels) * b.c_in * 9, 9.0 * b.c_in, gain);
      if (spec_.norm == Normalization::instance)
        std::fill_n(p.values.begin() + static_cast<std::ptrdiff_t>(b.gamma), spec_.channels, S(1));
    }
    fill(head_w_, 2 * static_cast<std::size_t>(spec_.channels) * 9, 9.0 * spec_.channels, 1.0);
    return p;
  }

  struct BlockCache {
    Mat col;     // im2col of the block input
    Mat xhat;    // normalized conv output (or raw conv output without normalization)
    Vec inv_sd;  // per-channel 1/sd
    Mat pre;     // input to the leaky rectifier
  };
  struct Cache {
    Vec z, u1;
    std::vector<BlockCache> blocks;
    Mat head_col;
  };

  /// Forward pass; returns the 2 x n^2 output (rows: real, imaginary).
  Mat forward(const std::vector<S>& theta, const Eigen::VectorXd& z, Cache* cache = nullptr) const {
    require(z.size() == spec_.m, "Generator: latent vector has wrong dimension");
    require(theta.size() == count_, "Generator: parameter vector has wrong size");
    const S* th = theta.data();
    const int h = spec_.fc_hidden, s2 = spec_.base * spec_.base, c = spec_.channels;
    Vec zv = z.cast<S>();
    Vec u1 = Eigen::Map<const Mat>(th + fc1_w_, h, spec_.m) * zv + Eigen::Map<const Vec>(th + fc1_b_, h);
    Vec a1 = leaky(u1);
    Mat x = (Eigen::Map<const Mat>(th + fc2_w_, s2, h) * a1 + Eigen::Map<const Vec>(th + fc2_b_, s2)).transpose();
    if (cache) {
      cache->z = std::move(zv);
      cache->u1 = u1;
      cache->blocks.resize(blocks_.size());
    }
    Mat col, y;
    for (std::size_t bi = 0; bi < blocks_.size(); ++bi) {
      const Block& b = blocks_[bi];
      if (b.upsample_before >= 0) x = upsample(x, b.size / 2, ups_[b.upsample_before]);
      detail::im2col(x, b.size, b.size, col);
      y.noalias() = Eigen::Map<const Mat>(th + b.w, c, b.c_in * 9) * col;
      y.colwise() += Eigen::Map<const Vec>(th + b.b, c);
      Vec inv_sd;
      if (spec_.norm == Normalization::instance) {
        inv_sd.resize(c);
        const S n = static_cast<S>(y.cols());
        for (int ch = 0; ch < c; ++ch) {
          auto row = y.row(ch);
          const S mean = row.sum() / n;
          row.array() -= mean;
          const S var = row.squaredNorm() / n;
          inv_sd(ch) = S(1) / std::sqrt(var + S(kNormEps));
          row *= inv_sd(ch);
        }
      }
      Mat pre = y;
      if (spec_.norm == Normalization::instance) {
        pre.array().colwise() *= Eigen::Map<const Vec>(th + b.gamma, c).array();
        pre.colwise() += Eigen::Map<const Vec>(th + b.beta, c);
      }
      x = leaky(pre);
      if (cache) {
        auto& bc = cache->blocks[bi];
        bc.col = std::move(col);
        bc.xhat = y;
        bc.inv_sd = std::move(inv_sd);
        bc.pre = std::move(pre);
        col = Mat();
      }
    }
    const int n = output_size();
    detail::im2col(x, n, n, col);
    Mat out = Eigen::Map<const Mat>(th + head_w_, 2, c * 9) * col;
    out.colwise() += Eigen::Map<const Vec>(th + head_b_, 2);
    if (cache) cache->head_col = std::move(col);
    return out;
  }

  /// Accumulates d(loss)/d(theta) into grad given d(loss)/d(output) for a cached forward pass.
  void backward(const std::vector<S>& theta, const Cache& cache, const Mat& d_out, std::vector<S>& grad) const {
    require(grad.size() == count_, "Generator: gradient vector has wrong size");
    const S* th = theta.data();
    S* gr = grad.data();
    const int h = spec_.fc_hidden, s2 = spec_.base * spec_.base, c = spec_.channels;
    const int n = output_size();

    Eigen::Map<Mat>(gr + head_w_, 2, c * 9).noalias() += d_out * cache.head_col.transpose();
    Eigen::Map<Vec>(gr + head_b_, 2) += d_out.rowwise().sum();
    Mat dcol = Eigen::Map<const Mat>(th + head_w_, 2, c * 9).transpose() * d_out;
    Mat dx;
    detail::col2im(dcol, c, n, n, dx);

    for (std::size_t bi = blocks_.size(); bi-- > 0;) {
      const Block& b = blocks_[bi];
      const BlockCache& bc = cache.blocks[bi];
      Mat dy = dx;
      const S slope = static_cast<S>(spec_.leaky_slope);
      dy = (bc.pre.array() > S(0)).select(dy, slope * dy);
      if (spec_.norm == Normalization::instance) {
        Eigen::Map<Vec>(gr + b.gamma, c) += (dy.cwiseProduct(bc.xhat)).rowwise().sum();
        Eigen::Map<Vec>(gr + b.beta, c) += dy.rowwise().sum();
        dy.array().colwise() *= Eigen::Map<const Vec>(th + b.gamma, c).array();
        const S cnt = static_cast<S>(dy.cols());
        for (int ch = 0; ch < c; ++ch) {
          auto row = dy.row(ch);
          const S mean_d = row.sum() / cnt;
          const S mean_dx = row.dot(bc.xhat.row(ch)) / cnt;
          row = (row.array() - mean_d - bc.xhat.row(ch).array() * mean_dx) * bc.inv_sd(ch);
        }
      }
      Eigen::Map<Mat>(gr + b.w, c, b.c_in * 9).noalias() += dy * bc.col.transpose();
      Eigen::Map<Vec>(gr + b.b, c) += dy.rowwise().sum();
      dcol.noalias() = Eigen::Map<const Mat>(th + b.w, c, b.c_in * 9).transpose() * dy;
      detail::col2im(dcol, b.c_in, b.size, b.size, dx);
      if (b.upsample_before >= 0) dx = upsample_adjoint(dx, b.size / 2, ups_[b.upsample_before]);
    }

    // dx is now d(loss)/d(fc2 output) as a 1 x s^2 map.
    const Vec du2 = dx.transpose();
    const Vec a1 = leaky(cache.u1);
    Eigen::Map<Mat>(gr + fc2_w_, s2, h).noalias() += du2 * a1.transpose();
    Eigen::Map<Vec>(gr + fc2_b_, s2) += du2;
    Vec da1 = Eigen::Map<const Mat>(th + fc2_w_, s2, h).transpose() * du2;
    const S slope = static_cast<S>(spec_.leaky_slope);
    Vec du1 = (cache.u1.array() > S(0)).select(da1, slope * da1);
    Eigen::Map<Mat>(gr + fc1_w_, h, spec_.m).noalias() += du1 * cache.z.transpose();
    Eigen::Map<Vec>(gr + fc1_b_, h) += du1;
  }

  /// Complex n x n image a + i b.
  Image generate(const std::vector<S>& theta, const Eigen::VectorXd& z) const {
    return to_image(forward(theta, z));
  }

  Image to_image(const Mat& out) const {
    const int n = output_size();
    Image img(n, n);
    for (int i = 0; i < n * n; ++i)
      img(i) = cplx(static_cast<double>(out(0, i)), static_cast<double>(out(1, i)));
    return img;
  }

 private:
  static constexpr double kNormEps = 1e-5;

  struct Block {
    int c_in = 1;
    int size = 0;
    int upsample_before = -1;
    std::size_t w = 0, b = 0, gamma = 0, beta = 0;
  };

  template <class M>
  M leaky(const M& x) const {
    const S slope = static_cast<S>(spec_.leaky_slope);
    return (x.array() > S(0)).select(x, slope * x);
  }

  static Mat upsample(const Mat& x, int h, const Mat& u) {
    Mat out(x.rows(), 4 * h * h);
    for (Eigen::Index c = 0; c < x.rows(); ++c) {
      Eigen::Map<const Mat> plane(x.row(c).data(), h, h);
      Eigen::Map<Mat>(out.row(c).data(), 2 * h, 2 * h).noalias() = u * plane * u.transpose();
    }
    return out;
  }

  static Mat upsample_adjoint(const Mat& d, int h, const Mat& u) {
    Mat out(d.rows(), h * h);
    for (Eigen::Index c = 0; c < d.rows(); ++c) {
      Eigen::Map<const Mat> plane(d.row(c).data(), 2 * h, 2 * h);
      Eigen::Map<Mat>(out.row(c).data(), h, h).noalias() = u.transpose() * plane * u;
    }
    return out;
  }

  NetSpec spec_;
  std::size_t fc1_w_ = 0, fc1_b_ = 0, fc2_w_ = 0, fc2_b_ = 0, head_w_ = 0, head_b_ = 0;
  std::vector<Block> blocks_;
  std::vector<Mat> ups_;
  std::size_t count_ = 0;
};

/// Data-fidelity loss (1/|B|) sum_{t in B} ||FC f(z_t) - k_t||^2 on normalized k-space.
template <class S>
class DipObjective {
 public:
  DipObjective(const Generator<S>& gen, const std::vector<EncodingOp>& ops, std::vector<FrameSamples> data,
               const LatentSeq& z, bool weighted = false)
      : gen_(gen), ops_(ops), data_(std::move(data)), z_(z) {
    require(ops_.size() == data_.size(), "DipObjective: operator and data frame counts differ");
    require(z_.frames() == static_cast<int>(data_.size()), "DipObjective: latent length must equal frame count");
    require(z_.m() == gen_.spec().m, "DipObjective: latent dimension differs from network input");
    for (const auto& op : ops_) require(op.n() == gen_.output_size(), "DipObjective: network output size != grid size");
    if (weighted)
      for (const auto& op : ops_) {
        Eigen::ArrayXd w = Eigen::Map<const Eigen::ArrayXd>(op.weights().data(), static_cast<Eigen::Index>(op.samples()));
        sqrt_w_.push_back(w.sqrt());
      }
  }

  int frames() const { return static_cast<int>(data_.size()); }

  double frame_loss(const std::vector<S>& theta, int t) const {
    return weigh(t, ops_[t].forward(gen_.generate(theta, z_.z.row(t).transpose())) - data_[t]).abs2().sum();
  }

  /// Mean loss over the batch; when grad is given, adds the batch-mean gradient into it.
  /// per_frame, if given, receives each frame's loss in batch order.
  double batch(const std::vector<S>& theta, const std::vector<int>& frames, std::vector<S>* grad,
               std::vector<double>* per_frame = nullptr) const {
    require(!frames.empty(), "DipObjective: empty batch");
    const double scale = 1.0 / static_cast<double>(frames.size());
    double total = 0.0;
    typename Generator<S>::Cache cache;
    for (int t : frames) {
      const auto out = gen_.forward(theta, z_.z.row(t).transpose(), grad ? &cache : nullptr);
      const FrameSamples r = weigh(t, ops_[t].forward(gen_.to_image(out)) - data_[t]);
      const double l = r.abs2().sum();
      if (per_frame) per_frame->push_back(l);
      total += l;
      if (!grad) continue;
      const Image g = ops_[t].adjoint(weigh(t, r));
      typename Generator<S>::Mat d_out(2, g.size());
      for (Eigen::Index i = 0; i < g.size(); ++i) {
        d_out(0, i) = static_cast<S>(2.0 * scale * g(i).real());
        d_out(1, i) = static_cast<S>(2.0 * scale * g(i).imag());
      }
      gen_.backward(theta, cache, d_out, *grad);
    }
    return total * scale;
  }

 private:
  FrameSamples weigh(int t, FrameSamples y) const {
    if (!sqrt_w_.empty()) y.rowwise() *= sqrt_w_[t].transpose().cast<cplx>();
    return y;
  }

  const Generator<S>& gen_;
  const std::vector<EncodingOp>& ops_;
  std::vector<FrameSamples> data_;
  const LatentSeq& z_;
  std::vector<Eigen::ArrayXd> sqrt_w_;
};

struct TrainConfig {
  int batch = 8;
  double lr = 1e-4;
  LrSchedule schedule = LrSchedule::constant;
  double lr_min_ratio = 0.01;  // cosine schedule ends at lr * lr_min_ratio after max_epochs
  int max_epochs = 2000;
  int min_epochs = 50;
  double stop_tol = 1e-3;  // relative change of the epoch-mean loss
  Optimizer optimizer = Optimizer::gd;
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double adam_eps = 1e-8;
  std::uint64_t shuffle_seed = 3;
  bool density_weighted = false;
  int checkpoint_every = 0;  // epochs; 0 disables periodic checkpoints
  std::string checkpoint_dir;
  std::function<void(int epoch, double loss)> on_epoch;
};

inline void validate(const TrainConfig& c, int frames) {
  require(c.batch >= 1 && c.batch <= frames, "TrainConfig: batch size must be in [1, T]");
  require(c.lr > 0.0, "TrainConfig: learning rate must be positive");
  require(c.lr_min_ratio > 0.0 && c.lr_min_ratio <= 1.0, "TrainConfig: lr_min_ratio must be in (0, 1]");
  require(c.max_epochs >= 1 && c.min_epochs >= 0, "TrainConfig: epoch limits must be nonnegative");
  require(c.stop_tol >= 0.0, "TrainConfig: stop tolerance must be nonnegative");
}

/// Step size for a 1-based epoch.
inline double learning_rate(const TrainConfig& c, int epoch) {
  if (c.schedule == LrSchedule::constant || c.max_epochs <= 1) return c.lr;
  const double u = static_cast<double>(epoch - 1) / (c.max_epochs - 1);
  const double lo = c.lr * c.lr_min_ratio;
  return lo + 0.5 * (c.lr - lo) * (1.0 + std::cos(kPi * u));
}

template <class S>
struct TrainResult {
  ModelParams<S> params;
  std::vector<double> loss;  // epoch-mean loss
  bool converged = false;    // stopping rule fired before max_epochs
};

namespace detail {

template <class T>
void write_pod(std::ostream& os, const T& v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof(T));
}
template <class T>
T read_pod(std::istream& is) {
  T v{};
  is.read(reinterpret_cast<char*>(&v), sizeof(T));
  if (!is) throw DataError("checkpoint: truncated file");
  return v;
}

}  // namespace detail

inline constexpr char kCheckpointMagic[8] = {'D', 'C', 'E', 'D', 'I', 'P', 'C', 'K'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

template <class S>
void save_checkpoint(const std::string& path, const ModelParams<S>& p) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw DataError("checkpoint: cannot open " + path);
  os.write(kCheckpointMagic, 8);
  detail::write_pod(os, kCheckpointVersion);
  detail::write_pod(os, static_cast<std::uint32_t>(sizeof(S)));
  const NetSpec& s = p.spec;
  for (int v : {s.m, s.fc_hidden, s.base, s.channels, s.stages(), static_cast<int>(s.upsample), static_cast<int>(s.norm)})
    detail::write_pod(os, static_cast<std::int32_t>(v));
  for (int b : s.stage_blocks) detail::write_pod(os, static_cast<std::int32_t>(b));
  detail::write_pod(os, s.leaky_slope);
  detail::write_pod(os, s.init_seed);
  detail::write_pod(os, static_cast<std::int32_t>(p.epoch));
  detail::write_pod(os, p.data_scale);
  detail::write_pod(os, static_cast<std::uint64_t>(p.values.size()));
  os.write(reinterpret_cast<const char*>(p.values.data()), static_cast<std::streamsize>(sizeof(S) * p.values.size()));
  detail::write_pod(os, static_cast<std::uint64_t>(p.loss_history.size()));
  os.write(reinterpret_cast<const char*>(p.loss_history.data()),
           static_cast<std::streamsize>(sizeof(double) * p.loss_history.size()));
  if (!os) throw DataError("checkpoint: write failed for " + path);
}

template <class S>
ModelParams<S> load_checkpoint(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw DataError("checkpoint: cannot open " + path);
  char magic[8];
  is.read(magic, 8);
  if (!is || std::memcmp(magic, kCheckpointMagic, 8) != 0) throw DataError("checkpoint: bad magic in " + path);
  if (detail::read_pod<std::uint32_t>(is) != kCheckpointVersion) throw DataError("checkpoint: unsupported version");
  if (detail::read_pod<std::uint32_t>(is) != sizeof(S)) throw DataError("checkpoint: scalar type mismatch");
  ModelParams<S> p;
  NetSpec& s = p.spec;
  s.m = detail::read_pod<std::int32_t>(is);
  s.fc_hidden = detail::read_pod<std::int32_t>(is);
  s.base = detail::read_pod<std::int32_t>(is);
  s.channels = detail::read_pod<std::int32_t>(is);
  const int stages = detail::read_pod<std::int32_t>(is);
  s.upsample = static_cast<Upsampling>(detail::read_pod<std::int32_t>(is));
  s.norm = static_cast<Normalization>(detail::read_pod<std::int32_t>(is));
  if (stages < 1 || stages > 16) throw DataError("checkpoint: implausible stage count");
  s.stage_blocks.resize(stages);
  for (int& b : s.stage_blocks) b = detail::read_pod<std::int32_t>(is);
  s.leaky_slope = detail::read_pod<double>(is);
  s.init_seed = detail::read_pod<std::uint64_t>(is);
  p.epoch = detail::read_pod<std::int32_t>(is);
  p.data_scale = detail::read_pod<double>(is);
  const auto nv = detail::read_pod<std::uint64_t>(is);
  if (nv != parameter_count(s)) throw DataError("checkpoint: parameter count does not match its network");
  p.values.resize(nv);
  is.read(reinterpret_cast<char*>(p.values.data()), static_cast<std::streamsize>(sizeof(S) * nv));
  const auto nl = detail::read_pod<std::uint64_t>(is);
  if (nl > (1u << 24)) throw DataError("checkpoint: implausible loss history length");
  p.loss_history.resize(nl);
  is.read(reinterpret_cast<char*>(p.loss_history.data()), static_cast<std::streamsize>(sizeof(double) * nl));
  if (!is) throw DataError("checkpoint: truncated file");
  return p;
}

inline void write_loss_csv(const std::string& path, const std::vector<double>& loss) {
  std::ofstream os(path);
  if (!os) throw DataError("cannot open " + path);
  os << "epoch,loss\n";
  os.precision(17);
  for (std::size_t e = 0; e < loss.size(); ++e) os << e + 1 << ',' << loss[e] << '\n';
}

/// Per-scan training. k-space is divided by the reference intensity of its i-NUFFT so the
/// network works near unit scale; ModelParams::data_scale records the factor.
template <class S>
TrainResult<S> train(const KSpaceFrames& k, const std::vector<EncodingOp>& ops, const LatentSeq& z,
                     const NetSpec& spec, const TrainConfig& cfg) {
  const int T = k.frame_count();
  require(z.frames() == T, "train: latent sequence length must equal frame count");
  require(static_cast<int>(ops.size()) == T, "train: operator count differs from frames");
  require(spec.output_size() == k.n, "train: network output size must equal grid size");
  validate(cfg, T);

  const Generator<S> gen(spec);
  TrainResult<S> res;
  res.params = gen.init();
  const double scale = reference_intensity(inufft_sequence(k, ops));
  res.params.data_scale = scale;
  std::vector<FrameSamples> data;
  data.reserve(T);
  for (const auto& f : k.frames) data.push_back(f / scale);
  const DipObjective<S> obj(gen, ops, std::move(data), z, cfg.density_weighted);

  auto& theta = res.params.values;
  const std::size_t np = theta.size();
  std::vector<S> grad(np), m1, m2;
  if (cfg.optimizer == Optimizer::adam) {
    m1.assign(np, S(0));
    m2.assign(np, S(0));
  }
  long step = 0;
  std::mt19937_64 rng(cfg.shuffle_seed);
  std::vector<int> order(T);
  std::iota(order.begin(), order.end(), 0);
  if (!cfg.checkpoint_dir.empty()) std::filesystem::create_directories(cfg.checkpoint_dir);
  auto checkpoint = [&](const std::string& name) {
    if (cfg.checkpoint_dir.empty()) return;
    res.params.loss_history = res.loss;
    save_checkpoint((std::filesystem::path(cfg.checkpoint_dir) / name).string(), res.params);
  };

  for (int epoch = 1; epoch <= cfg.max_epochs; ++epoch) {
    const double lr = learning_rate(cfg, epoch);
    std::shuffle(order.begin(), order.end(), rng);
    double epoch_loss = 0.0;
    for (int start = 0; start < T; start += cfg.batch) {
      const std::vector<int> batch(order.begin() + start, order.begin() + std::min(T, start + cfg.batch));
      std::fill(grad.begin(), grad.end(), S(0));
      const double l = obj.batch(theta, batch, &grad);
      epoch_loss += l * static_cast<double>(batch.size());
      if (!std::isfinite(l)) {
        checkpoint("diverged.ckpt");
        throw NumericalError("train: non-finite loss at epoch " + std::to_string(epoch));
      }
      if (cfg.optimizer == Optimizer::gd) {
        // Descent step along the negative gradient of the batch loss.
        for (std::size_t i = 0; i < np; ++i) theta[i] -= static_cast<S>(lr) * grad[i];
      } else {
        ++step;
        const double b1 = cfg.adam_beta1, b2 = cfg.adam_beta2;
        const double c1 = 1.0 - std::pow(b1, static_cast<double>(step));
        const double c2 = 1.0 - std::pow(b2, static_cast<double>(step));
        const S a = static_cast<S>(lr * std::sqrt(c2) / c1);
        const S e = static_cast<S>(cfg.adam_eps * std::sqrt(c2));
        for (std::size_t i = 0; i < np; ++i) {
          m1[i] = static_cast<S>(b1) * m1[i] + static_cast<S>(1.0 - b1) * grad[i];
          m2[i] = static_cast<S>(b2) * m2[i] + static_cast<S>(1.0 - b2) * grad[i] * grad[i];
          theta[i] -= a * m1[i] / (std::sqrt(m2[i]) + e);
        }
      }
    }
    epoch_loss /= T;
    res.loss.push_back(epoch_loss);
    res.params.epoch = epoch;
    if (cfg.on_epoch) cfg.on_epoch(epoch, epoch_loss);
    if (cfg.checkpoint_every > 0 && epoch % cfg.checkpoint_every == 0)
      checkpoint("epoch_" + std::to_string(epoch) + ".ckpt");
    if (epoch >= 2 && epoch >= cfg.min_epochs) {
      const double prev = res.loss[res.loss.size() - 2];
      const double rel = prev > 0.0 ? std::abs(epoch_loss - prev) / prev : 0.0;
      if (rel < cfg.stop_tol) {
        res.converged = true;
        break;
      }
    }
  }
  res.params.loss_history = res.loss;
  checkpoint("final.ckpt");
  return res;
}

/// Evaluate the trained generator at every z_t, in the units of the original k-space.
template <class S>
ImageSeq reconstruct_dip(const ModelParams<S>& params, const LatentSeq& z) {
  const Generator<S> gen(params.spec);
  require(z.m() == params.spec.m, "reconstruct_dip: latent dimension differs from network input");
  ImageSeq out;
  out.reserve(z.frames());
  for (int t = 0; t < z.frames(); ++t) out.push_back(params.data_scale * gen.generate(params.values, z.z.row(t).transpose()));
  return out;
}

}  // namespace dcedip
