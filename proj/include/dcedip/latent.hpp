#pragma once

// Piecewise-linear latent input sequence for the generator. Frames are grouped
// into contrast phases by thresholding the leading principal projection of the
// i-NUFFT magnitudes; each phase becomes one straight segment in R^m.

#include <Eigen/Dense>
#include <algorithm>
#include <array>
#include <cstdint>
#include <random>
#include <vector>

#include "dcedip/kspace.hpp"
#include "dcedip/types.hpp"

namespace dcedip {

struct FeatureMap {
  Eigen::MatrixXd projections;  // S x T, row s = w_s^T Xbar (centered)
  Eigen::VectorXd singular_values;
  int components() const { return static_cast<int>(projections.rows()); }
  int frames() const { return static_cast<int>(projections.cols()); }
};

/// 1-based frame indices t_1 = 1 < t_2 < ... < t_{P+1} = T; phase i spans [t_i, t_{i+1}].
struct PhaseClustering {
  std::vector<int> boundaries;
  int phases() const { return static_cast<int>(boundaries.size()) - 1; }
};

struct LatentSeq {
  Eigen::MatrixXd z;           // T x m, row t-1 is z_t
  Eigen::VectorXd origin;      // z_1
  Eigen::MatrixXd directions;  // P x m unit vectors
  std::vector<int> boundaries;
  double length = 1.0;
  std::uint64_t seed = 0;
  int m() const { return static_cast<int>(z.cols()); }
  int frames() const { return static_cast<int>(z.rows()); }
};

inline const std::array<double, 4> kPhaseThresholds = {0.2, 0.4, 0.6, 0.8};

/// Top-S principal projections of the voxel-by-time magnitude matrix after removing each voxel's temporal mean.
inline FeatureMap feature_map(const ImageSeq& x, int components = 5) {
  require(!x.empty(), "feature_map: empty sequence");
  const int frames = static_cast<int>(x.size());
  require(components >= 1 && frames >= components, "feature_map: need T >= S >= 1");
  const Eigen::Index voxels = x.front().size();
  Eigen::MatrixXd xbar(voxels, frames);
  for (int t = 0; t < frames; ++t) {
    require(x[t].size() == voxels, "feature_map: frame sizes differ");
    xbar.col(t) = Eigen::Map<const Eigen::Matrix<cplx, Eigen::Dynamic, 1>>(x[t].data(), voxels).cwiseAbs();
  }
  xbar.colwise() -= xbar.rowwise().mean();
  Eigen::BDCSVD<Eigen::MatrixXd> svd(xbar, Eigen::ComputeThinV);
  FeatureMap fm;
  fm.singular_values = svd.singularValues().head(components);
  fm.projections.resize(components, frames);
  for (int s = 0; s < components; ++s)
    fm.projections.row(s) = fm.singular_values(s) * svd.matrixV().col(s).transpose();
  return fm;
}

namespace detail {

inline std::vector<double> moving_average3(const Eigen::RowVectorXd& v) {
  const Eigen::Index n = v.size();
  std::vector<double> out(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    const Eigen::Index a = std::max<Eigen::Index>(0, i - 1), b = std::min<Eigen::Index>(n - 1, i + 1);
    out[i] = v.segment(a, b - a + 1).mean();
  }
  return out;
}

}  // namespace detail

/// Phase boundaries from the first crossings of the fixed thresholds by the normalized
/// leading projection. pre_frames is the number of pre-injection frames used for sign fixing;
/// 0 means use the first tenth of the series.
inline PhaseClustering cluster_phases(const FeatureMap& fm, int phases = 5, int pre_frames = 0) {
  const int T = fm.frames();
  require(phases == static_cast<int>(kPhaseThresholds.size()) + 1, "cluster_phases: threshold set defines 5 phases");
  require(fm.components() >= 1, "cluster_phases: empty feature map");
  require(T >= 2 * phases, "cluster_phases: need T >= 2P frames");
  if (pre_frames <= 0) pre_frames = std::max(1, T / 10);
  pre_frames = std::min(pre_frames, T - 1);

  std::vector<double> v = detail::moving_average3(fm.projections.row(0));
  double pre = 0.0, post = 0.0;
  for (int t = 0; t < T; ++t) (t < pre_frames ? pre : post) += v[t];
  if (post / (T - pre_frames) < pre / pre_frames)
    for (double& a : v) a = -a;
  const auto [lo, hi] = std::minmax_element(v.begin(), v.end());
  const double lo_v = *lo, span = *hi - *lo;
  for (double& a : v) a = span > 0.0 ? (a - lo_v) / span : 0.0;

  std::vector<int> b(phases + 1);
  b[0] = 1;
  b[phases] = T;
  for (int i = 1; i < phases; ++i) {
    int cross = 0;
    for (int t = 0; t < T; ++t)
      if (v[t] >= kPhaseThresholds[i - 1]) {
        cross = t + 1;
        break;
      }
    if (cross > b[i - 1] && cross < T) {
      b[i] = cross;
      continue;
    }
    // Missing or repeated crossing: split what is left evenly.
    const int start = b[i - 1], remaining = phases - i + 1;
    for (int j = i; j < phases; ++j)
      b[j] = start + static_cast<int>(std::lround(static_cast<double>(T - start) * (j - i + 1) / remaining));
    break;
  }

  const int gap = (T - 1 >= 2 * phases) ? 2 : 1;
  for (int i = 1; i < phases; ++i) b[i] = std::max(b[i], b[i - 1] + gap);
  for (int i = phases - 1; i >= 1; --i) b[i] = std::min(b[i], b[i + 1] - gap);
  return {b};
}

/// Segments are chained end to start. Directions are drawn from N(mu_alpha, I) and
/// scaled to unit length, so every segment has Euclidean length `length`.
inline LatentSeq design_latent(const PhaseClustering& clust, int m, double length, std::uint64_t seed,
                               const Eigen::VectorXd& mu_z = {}, const Eigen::VectorXd& mu_alpha = {}) {
  require(m >= 1, "design_latent: latent dimension must be positive");
  require(length > 0.0, "design_latent: segment length must be positive");
  const auto& b = clust.boundaries;
  require(b.size() >= 2 && b.front() == 1, "design_latent: boundaries must start at 1");
  for (std::size_t i = 1; i < b.size(); ++i) require(b[i] > b[i - 1], "design_latent: boundaries must increase");
  const Eigen::VectorXd mz = mu_z.size() ? mu_z : Eigen::VectorXd::Zero(m);
  const Eigen::VectorXd ma = mu_alpha.size() ? mu_alpha : Eigen::VectorXd::Zero(m);
  require(mz.size() == m && ma.size() == m, "design_latent: mean vectors must have length m");

  std::mt19937_64 rng(seed);
  std::normal_distribution<double> nd;
  auto draw = [&](const Eigen::VectorXd& mu) {
    Eigen::VectorXd v(m);
    for (int i = 0; i < m; ++i) v(i) = mu(i) + nd(rng);
    return v;
  };

  LatentSeq out;
  const int T = b.back();
  const int P = clust.phases();
  out.z.resize(T, m);
  out.directions.resize(P, m);
  out.boundaries = b;
  out.length = length;
  out.seed = seed;
  out.origin = draw(mz);
  Eigen::VectorXd tmp = out.origin;
  out.z.row(0) = tmp.transpose();
  for (int i = 0; i < P; ++i) {
    Eigen::VectorXd alpha = draw(ma);
    while (alpha.norm() == 0.0) alpha = draw(ma);
    alpha.normalize();
    out.directions.row(i) = alpha.transpose();
    const int steps = b[i + 1] - b[i];
    for (int idx = 1; idx <= steps; ++idx)
      out.z.row(b[i] + idx - 1) = (tmp + alpha * (length * idx / steps)).transpose();
    tmp = out.z.row(b[i + 1] - 1).transpose();
  }
  return out;
}

struct LatentOptions {
  int m = 32;
  double length = 1.0;
  int components = 5;
  int phases = 5;
  std::uint64_t seed = 2024;
};

inline LatentSeq build_latent_pipeline(const KSpaceFrames& k, const std::vector<EncodingOp>& ops,
                                       const LatentOptions& opt, int pre_frames = 0) {
  const auto fm = feature_map(inufft_sequence(k, ops), opt.components);
  return design_latent(cluster_phases(fm, opt.phases, pre_frames), opt.m, opt.length, opt.seed);
}

}  // namespace dcedip
