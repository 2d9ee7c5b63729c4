#pragma once

// ROI concentration curves and bounded Levenberg-Marquardt fitting of the
// separable two-compartment renal model.

#include <Eigen/Dense>
#include <array>
#include <cmath>
#include <limits>
#include <map>
#include <string>
#include <vector>

#include "dcedip/phantom.hpp"
#include "dcedip/tk_model.hpp"
#include "dcedip/types.hpp"

namespace dcedip {

struct ConversionParams {
  ScanParams scan;
  double aorta_t1 = 1.6;
  double kidney_t1 = 1.2;
  int pre_frames = 1;  // frames averaged for the baseline signal
};

/// Mean |x_t| over voxels where mask is true.
inline std::vector<double> roi_signal(const ImageSeq& x, const Eigen::Array<bool, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>& mask) {
  require(!x.empty(), "roi_signal: empty sequence");
  const Eigen::Index count = mask.count();
  require(count > 0, "roi_signal: empty mask");
  std::vector<double> out;
  out.reserve(x.size());
  for (const auto& f : x) {
    require(f.rows() == mask.rows() && f.cols() == mask.cols(), "roi_signal: mask size differs from image");
    out.push_back(mask.select(f.abs(), 0.0).sum() / static_cast<double>(count));
  }
  return out;
}

struct CurveConversion {
  ConcentrationCurve curve;
  int clamped = 0;  // frames whose signal fell below baseline
};

/// Signal curve to concentration using the mean of the first pre_frames samples as baseline.
inline CurveConversion signal_curve_to_concentration(const std::vector<double>& signal, double t1, double dt,
                                                     const ConversionParams& p) {
  require(p.pre_frames >= 1 && p.pre_frames <= static_cast<int>(signal.size()),
          "signal_curve_to_concentration: baseline frame count out of range");
  double base = 0.0;
  for (int t = 0; t < p.pre_frames; ++t) base += signal[t];
  base /= p.pre_frames;
  CurveConversion out;
  out.curve.dt = dt;
  out.curve.values.reserve(signal.size());
  for (double s : signal) {
    const auto c = signal_to_concentration(s, base, t1, p.scan);
    out.curve.values.push_back(c.concentration);
    out.clamped += c.clamped ? 1 : 0;
  }
  return out;
}

using Mask = Eigen::Array<bool, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

struct RoiCurves {
  ConcentrationCurve aif;
  std::map<std::string, ConcentrationCurve> kidneys;  // keyed by kidney label
  std::map<std::string, int> kidney_voxels;
};

/// Aorta = union of artery regions; each kidney = union of tissue regions sharing a kidney label.
inline RoiCurves roi_curves(const ImageSeq& x, const LabelImage& labels, const PhantomSpec& spec,
                            const ConversionParams& p) {
  Mask artery = Mask::Constant(labels.rows(), labels.cols(), false);
  std::map<std::string, Mask> kid;
  for (std::size_t r = 0; r < spec.regions.size(); ++r) {
    const Mask m = labels == static_cast<int>(r) + 1;
    const auto& reg = spec.regions[r];
    if (reg.role == RegionRole::artery) {
      artery = artery || m;
    } else if (!reg.kidney.empty()) {
      auto it = kid.try_emplace(reg.kidney, Mask::Constant(labels.rows(), labels.cols(), false)).first;
      it->second = it->second || m;
    }
  }
  RoiCurves out;
  out.aif = signal_curve_to_concentration(roi_signal(x, artery), p.aorta_t1, spec.dt, p).curve;
  for (const auto& [name, m] : kid) {
    out.kidneys[name] = signal_curve_to_concentration(roi_signal(x, m), p.kidney_t1, spec.dt, p).curve;
    out.kidney_voxels[name] = static_cast<int>(m.count());
  }
  return out;
}

inline ConcentrationCurve model_forward(const ConcentrationCurve& aif, const TKParams& tk) {
  return tissue_concentration(aif, tk);
}

struct TKBounds {
  TKParams lower{0.0, 1.0, 0.0, 10.0};
  TKParams upper{0.2, 60.0, 0.2, 600.0};
};

struct FitOptions {
  TKBounds bounds;
  int starts = 5;
  int max_iters = 300;
  double grad_tol = 1e-8;
  double step_tol = 1e-10;
  double voxel_volume_ml = 1.25 * 1.25 * 3.0 * 1e-3;  // 1.25 x 1.25 mm in plane, 3 mm slice
};

struct FitResult {
  TKParams params;
  double residual = 0.0;  // ||c - model||_2
  bool converged = false;
  int iterations = 0;
  int best_start = 0;
  double gfr = 0.0;  // mL/min for the given parenchyma volume
};

namespace detail {

using Vec4 = Eigen::Vector4d;

inline Vec4 to_vec(const TKParams& p) { return {p.fp, p.tp, p.ft, p.tt}; }
inline TKParams from_vec(const Vec4& v) { return {v(0), v(1), v(2), v(3)}; }

inline Vec4 clamp(const Vec4& v, const TKBounds& b) {
  return v.cwiseMax(to_vec(b.lower)).cwiseMin(to_vec(b.upper));
}

inline Eigen::VectorXd tk_residual(const ConcentrationCurve& aif, const std::vector<double>& c, const Vec4& v) {
  const auto m = model_forward(aif, from_vec(v)).values;
  Eigen::VectorXd r(static_cast<Eigen::Index>(c.size()));
  for (std::size_t i = 0; i < c.size(); ++i) r(static_cast<Eigen::Index>(i)) = m[i] - c[i];
  return r;
}

/// Central differences, one-sided at an active bound.
inline Eigen::MatrixXd tk_jacobian(const ConcentrationCurve& aif, const std::vector<double>& c, const Vec4& v,
                                   const TKBounds& b) {
  const Vec4 lo = to_vec(b.lower), hi = to_vec(b.upper);
  Eigen::MatrixXd J(static_cast<Eigen::Index>(c.size()), 4);
  for (int j = 0; j < 4; ++j) {
    const double h = 1e-6 * std::max(std::abs(v(j)), 1e-3 * (hi(j) - lo(j)));
    Vec4 a = v, z = v;
    a(j) = std::min(v(j) + h, hi(j));
    z(j) = std::max(v(j) - h, lo(j));
    J.col(j) = (tk_residual(aif, c, a) - tk_residual(aif, c, z)) / (a(j) - z(j));
  }
  return J;
}

struct LmOutcome {
  Vec4 x;
  double cost = 0.0;
  bool converged = false;
  int iterations = 0;
};

/// Levenberg-Marquardt with Marquardt diagonal scaling; iterates are projected onto the box.
inline LmOutcome lm_bounded(const ConcentrationCurve& aif, const std::vector<double>& c, Vec4 x, const FitOptions& o) {
  const Vec4 lo = to_vec(o.bounds.lower), hi = to_vec(o.bounds.upper);
  x = clamp(x, o.bounds);
  Eigen::VectorXd r = tk_residual(aif, c, x);
  double cost = r.squaredNorm();
  double mu = 1e-3;
  LmOutcome out;
  for (int it = 0; it < o.max_iters; ++it) {
    out.iterations = it + 1;
    const Eigen::MatrixXd J = tk_jacobian(aif, c, x, o.bounds);
    const Eigen::Matrix4d A = J.transpose() * J;
    const Vec4 g = J.transpose() * r;
    // Projected gradient: components pushing against an active bound do not count.
    Vec4 pg = g;
    for (int j = 0; j < 4; ++j)
      if ((x(j) <= lo(j) && g(j) > 0.0) || (x(j) >= hi(j) && g(j) < 0.0)) pg(j) = 0.0;
    if (pg.norm() < o.grad_tol) {
      out.converged = true;
      break;
    }
    bool improved = false;
    double step_norm = 0.0;
    for (int tries = 0; tries < 30; ++tries) {
      Eigen::Matrix4d M = A;
      for (int j = 0; j < 4; ++j) M(j, j) += mu * std::max(A(j, j), 1e-30);
      const Vec4 cand = clamp(x - M.ldlt().solve(g), o.bounds);
      const Eigen::VectorXd rc = tk_residual(aif, c, cand);
      const double cc = rc.squaredNorm();
      if (std::isfinite(cc) && cc < cost) {
        step_norm = ((cand - x).array() / (x.array().abs() + 1e-12)).matrix().norm();
        x = cand;
        r = rc;
        cost = cc;
        mu = std::max(mu / 3.0, 1e-12);
        improved = true;
        break;
      }
      mu *= 4.0;
    }
    if (!improved || step_norm < o.step_tol) {
      out.converged = true;
      break;
    }
  }
  out.x = x;
  out.cost = cost;
  return out;
}

}  // namespace detail

/// Multi-start bounded fit: the given init plus starts-1 log-spaced rescalings of it.
inline FitResult fit(const ConcentrationCurve& aif, const ConcentrationCurve& c_kidney, const TKParams& init,
                     const FitOptions& opt = {}, int parenchyma_voxels = 0) {
  require(aif.size() == c_kidney.size() && aif.size() >= 4, "fit: curves must share length (>= 4 samples)");
  require(std::abs(aif.dt - c_kidney.dt) <= 1e-12 * aif.dt, "fit: curves must share dt");
  require(opt.starts >= 1, "fit: need at least one start");
  bool any = false;
  for (double a : aif.values) any = any || a != 0.0;
  require(any, "fit: arterial input function is identically zero");

  static constexpr std::array<double, 4> kFactors = {0.25, 4.0, 0.5, 2.0};
  FitResult best;
  double best_cost = std::numeric_limits<double>::infinity();
  for (int s = 0; s < opt.starts; ++s) {
    detail::Vec4 x0 = detail::to_vec(init);
    if (s > 0) x0 *= kFactors[(s - 1) % kFactors.size()] * (1.0 + (s - 1) / static_cast<int>(kFactors.size()));
    // Flows at zero get a small positive start so the search can leave the bound.
    for (int j : {0, 2})
      if (x0(j) <= 0.0) x0(j) = 1e-3 * (s + 1);
    const auto lm = detail::lm_bounded(aif, c_kidney.values, x0, opt);
    if (lm.cost < best_cost) {  // strict: ties keep the earlier start
      best_cost = lm.cost;
      best.params = detail::from_vec(lm.x);
      best.converged = lm.converged;
      best.iterations = lm.iterations;
      best.best_start = s;
    }
  }
  best.residual = std::sqrt(best_cost);
  best.gfr = best.params.ft * parenchyma_voxels * opt.voxel_volume_ml * 60.0;
  return best;
}

}  // namespace dcedip
