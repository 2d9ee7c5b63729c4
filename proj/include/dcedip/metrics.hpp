#pragma once

// Evaluation battery: per-voxel temporal TV statistics by region, line
// profiles, voxel-by-time cut matrices and F_T agreement statistics.

#include <cmath>
#include <string>
#include <vector>

#include "dcedip/types.hpp"

namespace dcedip {

/// Per-voxel sum over t of |x_{t+1}(p) - x_t(p)|.
inline RealImage voxel_temporal_tv(const ImageSeq& x) {
  require(!x.empty(), "voxel_temporal_tv: empty sequence");
  RealImage tv = RealImage::Zero(x.front().rows(), x.front().cols());
  for (std::size_t t = 0; t + 1 < x.size(); ++t) tv += (x[t + 1] - x[t]).abs();
  return tv;
}

struct RegionStats {
  double mean = 0.0;
  double sd = 0.0;
  int voxels = 0;
};

struct TVReport {
  std::string method;
  RegionStats contrast;    // voxels with a nonzero label
  RegionStats background;  // label 0
  double normalization = 1.0;  // factor applied to the images before computing TV
};

inline RegionStats region_stats(const RealImage& v, const LabelImage& labels, bool contrast) {
  require(v.rows() == labels.rows() && v.cols() == labels.cols(), "region_stats: label image size differs");
  RegionStats s;
  double sum = 0.0, sq = 0.0;
  for (Eigen::Index i = 0; i < v.size(); ++i) {
    if ((labels(i) != 0) != contrast) continue;
    sum += v(i);
    sq += v(i) * v(i);
    ++s.voxels;
  }
  require(s.voxels > 0, "region_stats: region has no voxels");
  s.mean = sum / s.voxels;
  s.sd = std::sqrt(std::max(0.0, sq / s.voxels - s.mean * s.mean));
  return s;
}

/// Scale that matches the mean magnitude of x's first frame to the reference's first frame.
inline double baseline_normalization(const ImageSeq& x, const ImageSeq& reference) {
  require(!x.empty() && !reference.empty(), "baseline_normalization: empty sequence");
  const double a = x.front().abs().mean(), b = reference.front().abs().mean();
  return a > 0.0 ? b / a : 1.0;
}

/// TV statistics after baseline normalization against `reference` (pass x itself for none).
inline TVReport tv_report(const ImageSeq& x, const LabelImage& labels, const ImageSeq& reference,
                          const std::string& method = "") {
  TVReport r;
  r.method = method;
  r.normalization = baseline_normalization(x, reference);
  const RealImage tv = r.normalization * voxel_temporal_tv(x);
  r.contrast = region_stats(tv, labels, true);
  r.background = region_stats(tv, labels, false);
  return r;
}

/// |x_t| at the nearest voxel of each of max(|dx|, |dy|) + 1 evenly spaced points from (x0, y0) to (x1, y1).
inline std::vector<double> line_profile(const ImageSeq& x, int t, int x0, int y0, int x1, int y1) {
  require(t >= 0 && t < static_cast<int>(x.size()), "line_profile: frame index out of range");
  const Image& f = x[t];
  auto inside = [&](int c, int r) { return c >= 0 && r >= 0 && c < f.cols() && r < f.rows(); };
  require(inside(x0, y0) && inside(x1, y1), "line_profile: endpoint outside the image");
  const int steps = std::max(std::abs(x1 - x0), std::abs(y1 - y0));
  std::vector<double> out;
  out.reserve(steps + 1);
  for (int i = 0; i <= steps; ++i) {
    const double u = steps ? static_cast<double>(i) / steps : 0.0;
    const int c = static_cast<int>(std::lround(x0 + u * (x1 - x0)));
    const int r = static_cast<int>(std::lround(y0 + u * (y1 - y0)));
    out.push_back(std::abs(f(r, c)));
  }
  return out;
}

/// Rows of image column `column` against time: out(row, t) = |x_t(row, column)|.
inline RealImage cut_matrix(const ImageSeq& x, int column) {
  require(!x.empty(), "cut_matrix: empty sequence");
  require(column >= 0 && column < x.front().cols(), "cut_matrix: column out of range");
  RealImage m(x.front().rows(), static_cast<Eigen::Index>(x.size()));
  for (std::size_t t = 0; t < x.size(); ++t) m.col(static_cast<Eigen::Index>(t)) = x[t].col(column).abs();
  return m;
}

struct AgreementReport {
  double r2 = 0.0;
  double slope = 0.0;  // regression of b on a
  double intercept = 0.0;
  double mean_diff = 0.0;  // mean of a - b
  double sd_diff = 0.0;
  double lower = 0.0;  // mean_diff -/+ 1.96 sd
  double upper = 0.0;
  double inside_fraction = 0.0;
  int count = 0;
};

/// Linear regression and Bland-Altman statistics; differences are a - b, SD uses n - 1.
inline AgreementReport agreement(const std::vector<double>& a, const std::vector<double>& b) {
  require(a.size() == b.size() && a.size() >= 3, "agreement: need >= 3 paired values");
  const double n = static_cast<double>(a.size());
  double ma = 0.0, mb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    ma += a[i] / n;
    mb += b[i] / n;
  }
  double saa = 0.0, sbb = 0.0, sab = 0.0, md = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    saa += (a[i] - ma) * (a[i] - ma);
    sbb += (b[i] - mb) * (b[i] - mb);
    sab += (a[i] - ma) * (b[i] - mb);
    md += (a[i] - b[i]) / n;
  }
  AgreementReport r;
  r.count = static_cast<int>(a.size());
  if (saa > 0.0 && sbb > 0.0)
    r.r2 = std::min(1.0, sab * sab / (saa * sbb));
  else
    r.r2 = (saa == 0.0 && sbb == 0.0) ? 1.0 : 0.0;
  r.slope = saa > 0.0 ? sab / saa : 0.0;
  r.intercept = mb - r.slope * ma;
  double sd = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) sd += (a[i] - b[i] - md) * (a[i] - b[i] - md);
  r.mean_diff = md;
  r.sd_diff = std::sqrt(sd / (n - 1.0));
  r.lower = md - 1.96 * r.sd_diff;
  r.upper = md + 1.96 * r.sd_diff;
  int inside = 0;
  const double tol = 1e-12 * (1.0 + std::abs(md) + r.sd_diff);
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double d = a[i] - b[i];
    inside += (d >= r.lower - tol && d <= r.upper + tol) ? 1 : 0;
  }
  r.inside_fraction = inside / n;
  return r;
}

}  // namespace dcedip
