#pragma once

// Golden-angle radial sampling, coil sensitivities and the multi-coil
// encoding operator FC with its adjoint and density-compensated inverse.

#include <algorithm>
#include <cstdint>
#include <memory>
#include <numeric>
#include <random>
#include <vector>

#include "dcedip/nufft.hpp"
#include "dcedip/phantom.hpp"
#include "dcedip/types.hpp"

namespace dcedip {

/// pi * (sqrt(5) - 1) / 2, about 111.246 degrees.
inline const double kGoldenAngle = kPi * (std::sqrt(5.0) - 1.0) / 2.0;

struct Trajectory {
  int n = 0;        // image grid size
  int readout = 0;  // samples per spoke
  double golden_angle = kGoldenAngle;
  std::vector<int> spoke_index;  // global acquisition order
  std::vector<double> angle;     // per spoke, radians in [0, pi)
  std::vector<double> kx, ky;    // per sample, spoke-major, grid units

  int spokes() const { return static_cast<int>(angle.size()); }
  std::size_t samples() const { return kx.size(); }
  double radius(std::size_t s) const { return std::hypot(kx[s], ky[s]); }
};

/// Spokes first_spoke .. first_spoke+n_spokes-1; readout samples span [-n/2, n/2) with the
/// center at index n_readout/2.
inline Trajectory make_trajectory(int n_spokes, int n_readout, int n, double golden_angle = kGoldenAngle,
                                  int first_spoke = 0) {
  require(n_spokes >= 1, "make_trajectory: need at least one spoke");
  require(n_readout >= 2 && n_readout % 2 == 0, "make_trajectory: readout length must be even and >= 2");
  require(n >= 2, "make_trajectory: grid size must be >= 2");
  Trajectory tr;
  tr.n = n;
  tr.readout = n_readout;
  tr.golden_angle = golden_angle;
  const double step = static_cast<double>(n) / n_readout;
  tr.kx.reserve(static_cast<std::size_t>(n_spokes) * n_readout);
  tr.ky.reserve(static_cast<std::size_t>(n_spokes) * n_readout);
  for (int i = 0; i < n_spokes; ++i) {
    const int g = first_spoke + i;
    const double a = std::fmod(g * golden_angle, kPi);
    tr.spoke_index.push_back(g);
    tr.angle.push_back(a);
    const double c = std::cos(a), s = std::sin(a);
    for (int j = 0; j < n_readout; ++j) {
      const double r = (j - n_readout / 2) * step;
      tr.kx.push_back(r * c);
      tr.ky.push_back(r * s);
    }
  }
  return tr;
}

struct CoilSet {
  int n = 0;
  std::vector<Image> maps;

  int count() const { return static_cast<int>(maps.size()); }
};

/// Smooth Gaussian-lobe sensitivities centered near the field-of-view border, normalized so
/// that sum_i |C_i|^2 = 1 everywhere.
inline CoilSet make_coils(int n, int coils, std::uint64_t seed) {
  require(n >= 2 && coils >= 1, "make_coils: invalid size");
  CoilSet cs;
  cs.n = n;
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> jitter(-0.25, 0.25);
  std::uniform_real_distribution<double> phase(-kPi, kPi);
  const double ring = 0.55 * n, width = 0.45 * n;
  for (int c = 0; c < coils; ++c) {
    const double a = 2.0 * kPi * (c + jitter(rng)) / coils;
    const double cx = ring * std::cos(a), cy = ring * std::sin(a);
    const double p0 = phase(rng), px = phase(rng) / n, py = phase(rng) / n;
    Image m(n, n);
    for (int y = 0; y < n; ++y)
      for (int x = 0; x < n; ++x) {
        const double dx = x - n / 2 - cx, dy = y - n / 2 - cy;
        const double mag = std::exp(-(dx * dx + dy * dy) / (2.0 * width * width));
        m(y, x) = std::polar(mag, p0 + px * (x - n / 2) + py * (y - n / 2));
      }
    cs.maps.push_back(std::move(m));
  }
  RealImage sos = RealImage::Zero(n, n);
  for (const auto& m : cs.maps) sos += m.abs2();
  sos = sos.sqrt();
  for (auto& m : cs.maps) m /= sos.cast<cplx>();
  return cs;
}

/// Multi-coil samples of one frame: rows = coils, columns = spoke-major samples.
using FrameSamples = Eigen::Array<cplx, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

/// Density-compensation weights: sample area in k-space. Ramp |k| times each spoke's share of
/// the angular range; the k = 0 weight is calibrated so the impulse response integrates to one.
inline std::vector<double> density_weights(const Trajectory& tr) {
  const int sp = tr.spokes();
  const double step = static_cast<double>(tr.n) / tr.readout;

  std::vector<int> order(sp);
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](int a, int b) { return tr.angle[a] < tr.angle[b]; });
  std::vector<double> share(sp, kPi);
  if (sp > 1) {
    for (int i = 0; i < sp; ++i) {
      const double prev = i == 0 ? tr.angle[order[sp - 1]] - kPi : tr.angle[order[i - 1]];
      const double next = i == sp - 1 ? tr.angle[order[0]] + kPi : tr.angle[order[i + 1]];
      share[order[i]] = 0.5 * (next - prev);
    }
  }

  std::vector<double> w(tr.samples());
  std::vector<std::size_t> dc;
  for (int i = 0; i < sp; ++i)
    for (int j = 0; j < tr.readout; ++j) {
      const std::size_t s = static_cast<std::size_t>(i) * tr.readout + j;
      const double r = std::abs(j - tr.readout / 2) * step;
      if (j == tr.readout / 2) {
        dc.push_back(s);
        w[s] = 0.0;
      } else {
        w[s] = r * step * share[i];
      }
    }

  // Sum over the image of the point-spread function for an impulse at the center.
  const int n = tr.n;
  auto dirichlet = [n](double k) {
    cplx acc{};
    for (int p = -n / 2; p < n / 2; ++p) acc += std::polar(1.0, 2.0 * kPi * k * p / n);
    return acc;
  };
  double ac_sum = 0.0;
  for (std::size_t s = 0; s < w.size(); ++s)
    if (w[s] != 0.0) ac_sum += w[s] * (dirichlet(tr.kx[s]) * dirichlet(tr.ky[s])).real();
  ac_sum /= static_cast<double>(n) * n;
  double w0 = (1.0 - ac_sum) / static_cast<double>(dc.size());
  if (!(w0 > 0.0)) w0 = kPi * step * step / 4.0 / static_cast<double>(dc.size());
  for (auto s : dc) w[s] = w0;
  return w;
}

/// FC for one frame: per-coil NUFFT of C_i * x on the frame's spokes.
class EncodingOp {
 public:
  EncodingOp(std::shared_ptr<const CoilSet> coils, Trajectory traj, NufftOptions opts = {})
      : coils_(std::move(coils)),
        traj_(std::move(traj)),
        nufft_(traj_.n, traj_.kx, traj_.ky, opts),
        weights_(density_weights(traj_)) {
    require(coils_ && coils_->n == traj_.n, "EncodingOp: coil and trajectory grid sizes differ");
  }

  int n() const { return traj_.n; }
  int coils() const { return coils_->count(); }
  std::size_t samples() const { return traj_.samples(); }
  const Trajectory& trajectory() const { return traj_; }
  const CoilSet& coil_set() const { return *coils_; }
  const std::vector<double>& weights() const { return weights_; }

  FrameSamples forward(const Image& x) const {
    require(x.rows() == n() && x.cols() == n(), "forward: image must be n x n");
    FrameSamples out(coils(), samples());
    Image tmp(n(), n());
    for (int c = 0; c < coils(); ++c) {
      tmp = coils_->maps[c] * x;
      nufft_.forward(tmp, std::span<cplx>(out.row(c).data(), samples()));
    }
    return out;
  }

  Image adjoint(const FrameSamples& y) const {
    require(y.rows() == coils() && static_cast<std::size_t>(y.cols()) == samples(), "adjoint: shape mismatch");
    Image acc = Image::Zero(n(), n());
    Image tmp;
    for (int c = 0; c < coils(); ++c) {
      nufft_.adjoint(std::span<const cplx>(y.row(c).data(), samples()), tmp);
      acc += coils_->maps[c].conjugate() * tmp;
    }
    return acc;
  }

  /// Density-compensated adjoint, the direct (FC)^-1 estimate.
  Image inufft(const FrameSamples& y) const {
    FrameSamples wy = y;
    for (int c = 0; c < coils(); ++c)
      for (std::size_t s = 0; s < samples(); ++s) wy(c, s) *= weights_[s];
    return adjoint(wy);
  }

 private:
  std::shared_ptr<const CoilSet> coils_;
  Trajectory traj_;
  Nufft nufft_;
  std::vector<double> weights_;
};

inline FrameSamples forward(const Image& x, const CoilSet& coils, const Trajectory& traj) {
  return EncodingOp(std::make_shared<CoilSet>(coils), traj).forward(x);
}

inline Image adjoint(const FrameSamples& y, const CoilSet& coils, const Trajectory& traj) {
  return EncodingOp(std::make_shared<CoilSet>(coils), traj).adjoint(y);
}

inline Image inufft(const FrameSamples& y, const CoilSet& coils, const Trajectory& traj) {
  return EncodingOp(std::make_shared<CoilSet>(coils), traj).inufft(y);
}

/// Exact nonuniform DFT of the coil images; reference for the gridded forward.
inline FrameSamples forward_direct(const Image& x, const CoilSet& coils, const Trajectory& traj) {
  FrameSamples out(coils.count(), traj.samples());
  for (int c = 0; c < coils.count(); ++c) {
    Image cx = coils.maps[c] * x;
    nudft_forward(cx, traj.kx, traj.ky, std::span<cplx>(out.row(c).data(), traj.samples()));
  }
  return out;
}

struct AcquisitionParams {
  int coils = 4;
  int spokes_per_frame = 13;
  int readout_oversampling = 2;
  double golden_angle = kGoldenAngle;
  double noise_sigma = 0.05;
  std::uint64_t coil_seed = 7;
  std::uint64_t noise_seed = 11;
};

struct KSpaceFrames {
  int n = 0;
  int coils = 0;
  int spokes_per_frame = 0;
  int readout = 0;
  double golden_angle = kGoldenAngle;
  double noise_sigma = 0.0;
  std::uint64_t seed = 0;
  std::vector<FrameSamples> frames;

  int frame_count() const { return static_cast<int>(frames.size()); }
  /// Frame t uses global spokes [t*sp, (t+1)*sp).
  Trajectory frame_trajectory(int t) const {
    return make_trajectory(spokes_per_frame, readout, n, golden_angle, t * spokes_per_frame);
  }
};

/// One EncodingOp per frame, sharing the coil set.
inline std::vector<EncodingOp> frame_operators(const KSpaceFrames& k, std::shared_ptr<const CoilSet> coils,
                                               NufftOptions opts = {}) {
  require(coils && coils->count() == k.coils && coils->n == k.n, "frame_operators: coil set does not match data");
  std::vector<EncodingOp> ops;
  ops.reserve(k.frames.size());
  for (int t = 0; t < k.frame_count(); ++t) ops.emplace_back(coils, k.frame_trajectory(t), opts);
  return ops;
}

inline ImageSeq inufft_sequence(const KSpaceFrames& k, const std::vector<EncodingOp>& ops) {
  ImageSeq out;
  out.reserve(k.frames.size());
  for (int t = 0; t < k.frame_count(); ++t) out.push_back(ops[t].inufft(k.frames[t]));
  return out;
}

/// Frame t samples forward(images[t]) on its spoke slice plus complex Gaussian noise with
/// standard deviation noise_sigma * mean |noiseless sample|.
inline KSpaceFrames simulate_acquisition(const ImageSeq& images, std::shared_ptr<const CoilSet> coils,
                                         int spokes_per_frame, int readout, double noise_sigma,
                                         std::uint64_t seed, double golden_angle = kGoldenAngle) {
  require(!images.empty(), "simulate_acquisition: empty image sequence");
  require(noise_sigma >= 0.0, "simulate_acquisition: noise sigma must be nonnegative");
  KSpaceFrames k;
  k.n = static_cast<int>(images.front().rows());
  k.coils = coils->count();
  k.spokes_per_frame = spokes_per_frame;
  k.readout = readout;
  k.golden_angle = golden_angle;
  k.noise_sigma = noise_sigma;
  k.seed = seed;
  double mag_sum = 0.0;
  std::size_t count = 0;
  for (std::size_t t = 0; t < images.size(); ++t) {
    EncodingOp op(coils, k.frame_trajectory(static_cast<int>(t)));
    k.frames.push_back(op.forward(images[t]));
    mag_sum += k.frames.back().abs().sum();
    count += static_cast<std::size_t>(k.frames.back().size());
  }
  if (noise_sigma > 0.0) {
    const double sd = noise_sigma * mag_sum / static_cast<double>(count) / std::sqrt(2.0);
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> nd(0.0, 1.0);
    for (auto& f : k.frames)
      for (Eigen::Index i = 0; i < f.size(); ++i) {
        const double re = nd(rng);
        const double im = nd(rng);
        f(i) += cplx(sd * re, sd * im);
      }
  }
  return k;
}

inline KSpaceFrames simulate_acquisition(const GroundTruthSeq& gt, std::shared_ptr<const CoilSet> coils,
                                         const AcquisitionParams& p) {
  return simulate_acquisition(gt.images, std::move(coils), p.spokes_per_frame, p.readout_oversampling * gt.spec.n,
                              p.noise_sigma, p.noise_seed, p.golden_angle);
}

}  // namespace dcedip
