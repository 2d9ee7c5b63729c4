#pragma once

// 2D type-2 / type-1 nonuniform FFT pair on an oversampled grid with a
// Kaiser-Bessel interpolation kernel. The forward map is
//   y(k) = (1/n) * sum_p u(p) exp(-2 pi i k.p / n),  p in [-n/2, n/2)^2,
// with k in grid units (cycles per field of view). The adjoint is the exact
// adjoint of the discrete gridding implementation, not of the ideal sum.

#include <fftw3.h>

#include <cmath>
#include <memory>
#include <span>
#include <vector>

#include "dcedip/types.hpp"

namespace dcedip {

struct NufftOptions {
  double oversampling = 2.0;
  int width = 4;
};

namespace detail {

struct FftwFree {
  void operator()(void* p) const { fftw_free(p); }
};
using FftwBuffer = std::unique_ptr<fftw_complex[], FftwFree>;

inline FftwBuffer fftw_buffer(std::size_t n) {
  auto* p = static_cast<fftw_complex*>(fftw_malloc(sizeof(fftw_complex) * n));
  if (p == nullptr) throw std::bad_alloc();
  return FftwBuffer(p);
}

struct PlanDeleter {
  void operator()(fftw_plan_s* p) const { fftw_destroy_plan(p); }
};
using PlanHandle = std::unique_ptr<fftw_plan_s, PlanDeleter>;

/// Square in-place 2D FFT with both directions planned once (FFTW_ESTIMATE keeps runs reproducible).
class Fft2 {
 public:
  explicit Fft2(int size) : size_(size) {
    auto scratch = fftw_buffer(static_cast<std::size_t>(size) * size);
    fwd_.reset(fftw_plan_dft_2d(size, size, scratch.get(), scratch.get(), FFTW_FORWARD, FFTW_ESTIMATE));
    bwd_.reset(fftw_plan_dft_2d(size, size, scratch.get(), scratch.get(), FFTW_BACKWARD, FFTW_ESTIMATE));
    if (!fwd_ || !bwd_) throw std::runtime_error("FFTW planning failed");
  }
  int size() const { return size_; }
  FftwBuffer buffer() const { return fftw_buffer(static_cast<std::size_t>(size_) * size_); }
  void forward(fftw_complex* data) const { fftw_execute_dft(fwd_.get(), data, data); }
  void backward(fftw_complex* data) const { fftw_execute_dft(bwd_.get(), data, data); }

 private:
  int size_;
  PlanHandle fwd_;
  PlanHandle bwd_;
};

inline int wrap(int i, int n) {
  const int r = i % n;
  return r < 0 ? r + n : r;
}

}  // namespace detail

/// Kaiser-Bessel kernel of full width W (grid points); shape parameter per Beatty et al.
class KaiserBessel {
 public:
  KaiserBessel(int width, double oversampling) : width_(width) {
    const double w = width, s = oversampling;
    beta_ = kPi * std::sqrt(w * w / (s * s) * (s - 0.5) * (s - 0.5) - 0.8);
  }
  double width() const { return width_; }
  double beta() const { return beta_; }

  double operator()(double x) const {
    const double u = 2.0 * x / width_;
    if (std::abs(u) > 1.0) return 0.0;
    return std::cyl_bessel_i(0.0, beta_ * std::sqrt(1.0 - u * u));
  }

  /// Continuous Fourier transform of the kernel at frequency nu (cycles per grid point).
  double transform(double nu) const {
    const double a = kPi * width_ * nu;
    const double d = beta_ * beta_ - a * a;
    if (d > 1e-12) {
      const double r = std::sqrt(d);
      return width_ * std::sinh(r) / r;
    }
    if (d < -1e-12) {
      const double r = std::sqrt(-d);
      return width_ * std::sin(r) / r;
    }
    return width_;
  }

 private:
  double width_;
  double beta_;
};

class Nufft {
 public:
  Nufft(int n, std::span<const double> kx, std::span<const double> ky, NufftOptions opts = {})
      : n_(n),
        grid_(2 * static_cast<int>(std::lround(opts.oversampling * n / 2.0))),
        kernel_(opts.width, opts.oversampling),
        fft_(std::make_shared<detail::Fft2>(grid_)) {
    require(n >= 2 && n % 2 == 0, "Nufft: grid size must be even");
    require(kx.size() == ky.size(), "Nufft: coordinate arrays differ in length");
    const double scale = static_cast<double>(grid_) / n;
    deapod_.resize(n);
    for (int i = 0; i < n; ++i) deapod_[i] = kernel_.transform((i - n / 2) / static_cast<double>(grid_));
    taps_.resize(kx.size());
    for (std::size_t s = 0; s < kx.size(); ++s) {
      if (!(std::abs(kx[s]) <= n / 2.0 && std::abs(ky[s]) <= n / 2.0))
        throw std::out_of_range("Nufft: sample coordinate outside [-n/2, n/2]");
      taps_[s].x = axis_taps(kx[s] * scale);
      taps_[s].y = axis_taps(ky[s] * scale);
    }
  }

  int n() const { return n_; }
  int grid() const { return grid_; }
  std::size_t samples() const { return taps_.size(); }

  /// out[s] = (1/n) sum_p u(p) exp(-2 pi i k_s.p / n), approximately.
  void forward(const Image& u, std::span<cplx> out) const {
    require(u.rows() == n_ && u.cols() == n_, "Nufft::forward: image size mismatch");
    require(out.size() == taps_.size(), "Nufft::forward: output size mismatch");
    auto buf = fft_->buffer();
    auto* g = reinterpret_cast<cplx*>(buf.get());
    std::fill(g, g + static_cast<std::size_t>(grid_) * grid_, cplx{});
    for (int y = 0; y < n_; ++y) {
      const int gy = detail::wrap(y - n_ / 2, grid_);
      for (int x = 0; x < n_; ++x) {
        const int gx = detail::wrap(x - n_ / 2, grid_);
        g[static_cast<std::size_t>(gy) * grid_ + gx] = u(y, x) / (deapod_[y] * deapod_[x]);
      }
    }
    fft_->forward(buf.get());
    const double norm = 1.0 / n_;
    for (std::size_t s = 0; s < taps_.size(); ++s) {
      const auto& t = taps_[s];
      cplx acc{};
      for (int j = 0; j < t.y.count; ++j) {
        const cplx* row = g + static_cast<std::size_t>(t.y.index[j]) * grid_;
        cplx racc{};
        for (int i = 0; i < t.x.count; ++i) racc += t.x.weight[i] * row[t.x.index[i]];
        acc += t.y.weight[j] * racc;
      }
      out[s] = norm * acc;
    }
  }

  /// Exact adjoint of forward.
  void adjoint(std::span<const cplx> y, Image& out) const {
    require(y.size() == taps_.size(), "Nufft::adjoint: input size mismatch");
    auto buf = fft_->buffer();
    auto* g = reinterpret_cast<cplx*>(buf.get());
    std::fill(g, g + static_cast<std::size_t>(grid_) * grid_, cplx{});
    for (std::size_t s = 0; s < taps_.size(); ++s) {
      const auto& t = taps_[s];
      for (int j = 0; j < t.y.count; ++j) {
        cplx* row = g + static_cast<std::size_t>(t.y.index[j]) * grid_;
        const cplx v = t.y.weight[j] * y[s];
        for (int i = 0; i < t.x.count; ++i) row[t.x.index[i]] += t.x.weight[i] * v;
      }
    }
    fft_->backward(buf.get());
    out.resize(n_, n_);
    const double norm = 1.0 / n_;
    for (int yy = 0; yy < n_; ++yy) {
      const int gy = detail::wrap(yy - n_ / 2, grid_);
      for (int x = 0; x < n_; ++x) {
        const int gx = detail::wrap(x - n_ / 2, grid_);
        out(yy, x) = norm * g[static_cast<std::size_t>(gy) * grid_ + gx] / (deapod_[yy] * deapod_[x]);
      }
    }
  }

 private:
  struct AxisTaps {
    int count = 0;
    int index[6] = {};
    double weight[6] = {};
  };
  struct SampleTaps {
    AxisTaps x, y;
  };

  AxisTaps axis_taps(double s) const {
    AxisTaps t;
    const double half = kernel_.width() / 2.0;
    for (int m = static_cast<int>(std::ceil(s - half)); m <= static_cast<int>(std::floor(s + half)); ++m) {
      t.index[t.count] = detail::wrap(m, grid_);
      t.weight[t.count] = kernel_(s - m);
      ++t.count;
    }
    return t;
  }

  int n_;
  int grid_;
  KaiserBessel kernel_;
  std::shared_ptr<const detail::Fft2> fft_;
  std::vector<double> deapod_;
  std::vector<SampleTaps> taps_;
};

/// Exact nonuniform DFT with the same normalization as Nufft::forward. O(n^2 * samples).
inline void nudft_forward(const Image& u, std::span<const double> kx, std::span<const double> ky,
                          std::span<cplx> out) {
  const int n = static_cast<int>(u.rows());
  for (std::size_t s = 0; s < kx.size(); ++s) {
    cplx acc{};
    for (int y = 0; y < n; ++y)
      for (int x = 0; x < n; ++x) {
        const double ph = -2.0 * kPi * (kx[s] * (x - n / 2) + ky[s] * (y - n / 2)) / n;
        acc += u(y, x) * cplx(std::cos(ph), std::sin(ph));
      }
    out[s] = acc / static_cast<double>(n);
  }
}

}  // namespace dcedip
