#pragma once

// Temporal total-variation regularized least squares
//   sum_t ||FC x_t - k_t||^2 + lambda * sum_t sum_p |x_{t+1}(p) - x_t(p)|
// solved by nonlinear conjugate gradient with backtracking line search.

#include <algorithm>
#include <cmath>
#include <vector>

#include "dcedip/kspace.hpp"
#include "dcedip/types.hpp"

namespace dcedip {

enum class CGUpdate { fletcher_reeves, polak_ribiere_plus };

struct CSConfig {
  double lambda = 0.0125;
  int n_iters = 24;
  double eps_factor = 1e-7;  // smoothing eps = eps_factor * mean |inufft| (normalized units)
  int max_backtracks = 40;
  double shrink = 0.5;
  double armijo = 1e-4;
  CGUpdate update = CGUpdate::polak_ribiere_plus;
  bool density_weighted = true;  // data term sum_t ||W^1/2 (FC x_t - k_t)||^2 with the gridding weights W
};

struct CSResult {
  ImageSeq images;
  std::vector<double> objective;  // initial value followed by one entry per iteration
  int iterations = 0;
  bool stopped_early = false;  // line search failed even after a steepest-descent restart
  int restarts = 0;
  double scale = 1.0;  // data were divided by this before solving
  double eps = 0.0;
};

/// Sum over frames and voxels of |x_{t+1} - x_t|.
inline double temporal_tv(const ImageSeq& x) {
  double s = 0.0;
  for (std::size_t t = 0; t + 1 < x.size(); ++t) s += (x[t + 1] - x[t]).abs().sum();
  return s;
}

/// Smoothed variant sum sqrt(|d|^2 + eps^2); approaches temporal_tv from above as eps -> 0.
inline double temporal_tv_smooth(const ImageSeq& x, double eps) {
  double s = 0.0;
  for (std::size_t t = 0; t + 1 < x.size(); ++t) s += ((x[t + 1] - x[t]).abs2() + eps * eps).sqrt().sum();
  return s;
}

/// Gradient (in the Re<g, dx> sense) of temporal_tv_smooth.
inline ImageSeq temporal_tv_gradient(const ImageSeq& x, double eps) {
  ImageSeq g;
  g.reserve(x.size());
  for (const auto& f : x) g.push_back(Image::Zero(f.rows(), f.cols()));
  for (std::size_t t = 0; t + 1 < x.size(); ++t) {
    const Image d = x[t + 1] - x[t];
    const Image q = d / (d.abs2() + eps * eps).sqrt().cast<cplx>();
    g[t + 1] += q;
    g[t] -= q;
  }
  return g;
}

/// Robust intensity reference: 99th percentile of |x| over all frames and voxels.
inline double reference_intensity(const ImageSeq& x) {
  std::vector<double> mags;
  for (const auto& f : x)
    for (Eigen::Index i = 0; i < f.size(); ++i) mags.push_back(std::abs(f(i)));
  if (mags.empty()) return 1.0;
  const std::size_t k = static_cast<std::size_t>(0.99 * static_cast<double>(mags.size() - 1));
  std::nth_element(mags.begin(), mags.begin() + static_cast<std::ptrdiff_t>(k), mags.end());
  return mags[k] > 0.0 ? mags[k] : 1.0;
}

inline double mean_magnitude(const ImageSeq& x) {
  double s = 0.0;
  std::size_t count = 0;
  for (const auto& f : x) {
    s += f.abs().sum();
    count += static_cast<std::size_t>(f.size());
  }
  return count ? s / static_cast<double>(count) : 0.0;
}

/// Objective and gradient of the regularized least-squares problem for fixed data.
class CSProblem {
 public:
  CSProblem(const std::vector<EncodingOp>& ops, const std::vector<FrameSamples>& data, double lambda, double eps,
            bool weighted = false)
      : ops_(ops), data_(data), lambda_(lambda), eps_(eps) {
    require(ops.size() == data.size() && !ops.empty(), "CSProblem: operator and data frame counts differ");
    require(lambda >= 0.0 && eps > 0.0, "CSProblem: need lambda >= 0 and eps > 0");
    if (weighted)
      for (const auto& op : ops) {
        Eigen::ArrayXd w = Eigen::Map<const Eigen::ArrayXd>(op.weights().data(), static_cast<Eigen::Index>(op.samples()));
        sqrt_w_.push_back(w.sqrt());
      }
  }

  double lambda() const { return lambda_; }
  double eps() const { return eps_; }
  std::size_t frames() const { return ops_.size(); }

  std::vector<FrameSamples> residual(const ImageSeq& x) const {
    std::vector<FrameSamples> r;
    r.reserve(frames());
    for (std::size_t t = 0; t < frames(); ++t) r.push_back(weigh(t, ops_[t].forward(x[t]) - data_[t]));
    return r;
  }

  static double data_term(const std::vector<FrameSamples>& r) {
    double s = 0.0;
    for (const auto& f : r) s += f.abs2().sum();
    return s;
  }

  double objective(const ImageSeq& x) const {
    check(x);
    return data_term(residual(x)) + lambda_ * temporal_tv_smooth(x, eps_);
  }

  ImageSeq gradient(const ImageSeq& x, const std::vector<FrameSamples>& r) const {
    ImageSeq g = lambda_ > 0.0 ? temporal_tv_gradient(x, eps_) : ImageSeq{};
    if (g.empty())
      for (const auto& f : x) g.push_back(Image::Zero(f.rows(), f.cols()));
    else
      for (auto& f : g) f *= lambda_;
    for (std::size_t t = 0; t < frames(); ++t) g[t] += 2.0 * ops_[t].adjoint(weigh(t, r[t]));
    return g;
  }

  ImageSeq gradient(const ImageSeq& x) const {
    check(x);
    return gradient(x, residual(x));
  }

  std::vector<FrameSamples> apply(const ImageSeq& d) const {
    std::vector<FrameSamples> out;
    out.reserve(frames());
    for (std::size_t t = 0; t < frames(); ++t) out.push_back(weigh(t, ops_[t].forward(d[t])));
    return out;
  }

 private:
  void check(const ImageSeq& x) const {
    require(x.size() == frames(), "CSProblem: image sequence length does not match data");
  }

  FrameSamples weigh(std::size_t t, FrameSamples y) const {
    if (!sqrt_w_.empty()) y.rowwise() *= sqrt_w_[t].transpose().cast<cplx>();
    return y;
  }

  const std::vector<EncodingOp>& ops_;
  const std::vector<FrameSamples>& data_;
  double lambda_;
  double eps_;
  std::vector<Eigen::ArrayXd> sqrt_w_;
};

/// Objective of an image sequence against k-space data (no normalization applied).
inline double cs_objective(const ImageSeq& x, const KSpaceFrames& k, const std::vector<EncodingOp>& ops, double lambda,
                           double eps, bool weighted = false) {
  return CSProblem(ops, k.frames, lambda, eps, weighted).objective(x);
}

inline ImageSeq cs_gradient(const ImageSeq& x, const KSpaceFrames& k, const std::vector<EncodingOp>& ops,
                            double lambda, double eps, bool weighted = false) {
  return CSProblem(ops, k.frames, lambda, eps, weighted).gradient(x);
}

namespace detail {

inline void axpy(ImageSeq& y, double a, const ImageSeq& x) {
  for (std::size_t t = 0; t < y.size(); ++t) y[t] += a * x[t];
}

}  // namespace detail

/// Nonlinear CG from the i-NUFFT start with Armijo backtracking and steepest-descent restarts
/// whenever the search direction stops being a descent direction. The data term
/// is quadratic, so its value along a search line is evaluated from one forward per iteration.
inline CSResult cs_solve(const CSProblem& prob, ImageSeq x, const CSConfig& cfg) {
  CSResult res;
  auto r = prob.residual(x);
  double tv = temporal_tv_smooth(x, prob.eps());
  double f = CSProblem::data_term(r) + prob.lambda() * tv;
  res.objective.push_back(f);
  ImageSeq g = prob.gradient(x, r);
  ImageSeq d = g;
  for (auto& v : d) v = -v;
  double gg = real_dot(g, g);

  for (int it = 0; it < cfg.n_iters; ++it) {
    if (gg == 0.0) break;
    bool accepted = false;
    for (int attempt = 0; attempt < 2 && !accepted; ++attempt) {
      double slope = real_dot(g, d);
      if (attempt == 1 || slope >= 0.0) {
        d = g;
        for (auto& v : d) v = -v;
        slope = -gg;
        ++res.restarts;
      }
      const auto ad = prob.apply(d);
      double rad = 0.0, adad = 0.0;
      for (std::size_t t = 0; t < r.size(); ++t) {
        rad += (r[t].conjugate() * ad[t]).real().sum();
        adad += ad[t].abs2().sum();
      }
      const double data0 = f - prob.lambda() * tv;
      auto along = [&](double step, double& tv_out) {
        ImageSeq trial = x;
        detail::axpy(trial, step, d);
        tv_out = temporal_tv_smooth(trial, prob.eps());
        const double v = data0 + 2.0 * step * rad + step * step * adad + prob.lambda() * tv_out;
        if (!std::isfinite(v)) throw NumericalError("cs_solve: non-finite objective");
        return v;
      };
      // Start from the exact minimizer of the data term along d.
      double step = adad > 0.0 ? -slope / (2.0 * adad) : 1.0;
      double tv_best = 0.0, f_best = 0.0;
      for (int bt = 0; bt <= cfg.max_backtracks; ++bt, step *= cfg.shrink) {
        f_best = along(step, tv_best);
        if (f_best <= f + cfg.armijo * step * slope) {
          accepted = true;
          break;
        }
      }
      if (accepted) {
        detail::axpy(x, step, d);
        for (std::size_t t = 0; t < r.size(); ++t) r[t] += step * ad[t];
        tv = tv_best;
        f = f_best;
      }
    }
    if (!accepted) {
      res.stopped_early = true;
      break;
    }
    res.objective.push_back(f);
    res.iterations = it + 1;
    ImageSeq g_new = prob.gradient(x, r);
    const double gg_new = real_dot(g_new, g_new);
    double beta = 0.0;
    if (gg > 0.0)
      beta = cfg.update == CGUpdate::fletcher_reeves ? gg_new / gg
                                                     : std::max(0.0, (gg_new - real_dot(g_new, g)) / gg);
    for (std::size_t t = 0; t < d.size(); ++t) d[t] = beta * d[t] - g_new[t];
    g = std::move(g_new);
    gg = gg_new;
  }
  res.images = std::move(x);
  return res;
}

/// lambda = 0 returns the per-frame i-NUFFT directly. Otherwise the data are normalized to unit
/// reference intensity, solved, and the result is scaled back.
inline CSResult reconstruct_cs(const KSpaceFrames& k, const std::vector<EncodingOp>& ops, const CSConfig& cfg) {
  require(cfg.lambda >= 0.0, "reconstruct_cs: lambda must be nonnegative");
  require(cfg.n_iters >= 1, "reconstruct_cs: need at least one iteration");
  require(static_cast<int>(ops.size()) == k.frame_count(), "reconstruct_cs: operator count differs from frames");
  ImageSeq init = inufft_sequence(k, ops);
  if (cfg.lambda == 0.0) {
    CSResult res;
    res.images = std::move(init);
    return res;
  }
  const double scale = reference_intensity(init);
  std::vector<FrameSamples> data;
  data.reserve(k.frames.size());
  for (const auto& f : k.frames) data.push_back(f / scale);
  for (auto& f : init) f /= scale;
  const double eps = cfg.eps_factor * std::max(mean_magnitude(init), 1e-300);
  CSProblem prob(ops, data, cfg.lambda, eps, cfg.density_weighted);
  CSResult res = cs_solve(prob, std::move(init), cfg);
  for (auto& f : res.images) f *= scale;
  res.scale = scale;
  res.eps = eps;
  return res;
}

}  // namespace dcedip
