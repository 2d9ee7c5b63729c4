#include <gtest/gtest.h>

#include <algorithm>
#include <random>

#include "dcedip/tkfit.hpp"

using namespace dcedip;

namespace {

const TKParams kInit{0.03, 5.0, 0.005, 100.0};

ConcentrationCurve default_aif() { return make_aif(default_phantom_spec()); }

double rel(double a, double b) { return std::abs(a - b) / std::abs(b); }

}  // namespace

TEST(RoiCurves, GroundTruthRecoversRegionCurves) {
  auto spec = default_phantom_spec();
  spec.regions.resize(2);  // aorta + cortex: the kidney ROI is a single compartment
  const auto gt = render_phantom(spec);
  ConversionParams p;
  p.scan = spec.scan;
  p.pre_frames = pre_injection_frames(spec.frames, spec.dt, spec.injection_delay);
  const auto rc = roi_curves(gt.images, gt.labels, spec, p);
  ASSERT_EQ(rc.kidneys.size(), 1u);
  const auto& kid = rc.kidneys.at("left");
  for (int t = 0; t < spec.frames; ++t) {
    EXPECT_NEAR(rc.aif.values[t], gt.aif.values[t], 1e-6 * (1.0 + gt.aif.values[t]));
    EXPECT_NEAR(kid.values[t], gt.region_curves[1].values[t], 1e-6 * (1.0 + gt.region_curves[1].values[t]));
  }
  EXPECT_EQ(rc.kidney_voxels.at("left"), (gt.labels == 2).count());
}

TEST(RoiCurves, ZeroConcentrationGivesZeroCurves) {
  auto spec = default_phantom_spec(32);
  spec.aif.bolus_amp = spec.aif.recirc_amp = spec.aif.washout_amp = 0.0;
  const auto gt = render_phantom(spec);
  ConversionParams p;
  p.scan = spec.scan;
  p.pre_frames = 3;
  const auto rc = roi_curves(gt.images, gt.labels, spec, p);
  for (double v : rc.aif.values) EXPECT_NEAR(v, 0.0, 1e-12);
  for (double v : rc.kidneys.at("left").values) EXPECT_NEAR(v, 0.0, 1e-12);
}

TEST(RoiCurves, SingleVoxelMaskEqualsVoxel) {
  const auto gt = render_phantom(default_phantom_spec(32));
  Mask m = Mask::Constant(32, 32, false);
  m(10, 12) = true;
  const auto s = roi_signal(gt.images, m);
  for (std::size_t t = 0; t < s.size(); ++t) EXPECT_DOUBLE_EQ(s[t], std::abs(gt.images[t](10, 12)));
}

TEST(ModelForward, MatchesPhantomCodePath) {
  const auto aif = default_aif();
  const TKParams tk{0.04, 4.0, 0.006, 80.0};
  EXPECT_EQ(model_forward(aif, tk).values, tissue_concentration(aif, tk).values);
}

TEST(ModelForward, LinearInFlowsForFixedTransitTimes) {
  const auto aif = default_aif();
  const auto a = model_forward(aif, {0.03, 5.0, 0.0, 90.0}).values;
  const auto b = model_forward(aif, {0.0, 5.0, 0.01, 90.0}).values;
  const auto ab = model_forward(aif, {0.06, 5.0, 0.03, 90.0}).values;
  for (std::size_t i = 0; i < a.size(); ++i) EXPECT_NEAR(ab[i], 2.0 * a[i] + 3.0 * b[i], 1e-12 * (1.0 + ab[i]));
}

TEST(ModelForward, LinearInAif) {
  auto aif = default_aif();
  const TKParams tk{0.04, 4.0, 0.006, 80.0};
  const auto a = model_forward(aif, tk).values;
  for (double& v : aif.values) v *= 2.5;
  const auto b = model_forward(aif, tk).values;
  for (std::size_t i = 0; i < a.size(); ++i) EXPECT_NEAR(b[i], 2.5 * a[i], 1e-12 * (1.0 + b[i]));
}

TEST(Fit, NoiselessSelfConsistency) {
  const auto aif = default_aif();
  for (const TKParams tk : {TKParams{0.040, 4.0, 0.006, 80.0}, TKParams{0.015, 6.0, 0.008, 120.0},
                            TKParams{0.004, 8.0, 0.010, 150.0}, TKParams{0.08, 2.0, 0.02, 40.0}}) {
    const auto r = fit(aif, model_forward(aif, tk), kInit);
    EXPECT_LT(rel(r.params.ft, tk.ft), 1e-3) << "F_T " << tk.ft << " got " << r.params.ft;
    EXPECT_LT(r.residual, 1e-6);
  }
}

TEST(Fit, TwoPercentNoiseMedianErrorWithinFivePercent) {
  const auto aif = default_aif();
  const TKParams tk{0.040, 4.0, 0.006, 80.0};
  const auto clean = model_forward(aif, tk);
  const double peak = *std::max_element(clean.values.begin(), clean.values.end());
  std::vector<double> err;
  for (int seed = 0; seed < 20; ++seed) {
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> nd(0.0, 0.02 * peak);
    auto noisy = clean;
    for (double& v : noisy.values) v += nd(rng);
    err.push_back(rel(fit(aif, noisy, kInit).params.ft, tk.ft));
  }
  std::nth_element(err.begin(), err.begin() + 10, err.end());
  EXPECT_LE(err[10], 0.05);
}

TEST(Fit, AbsentTubularCompartment) {
  const auto aif = default_aif();
  const TKParams tk{0.04, 4.0, 0.0, 80.0};
  const auto r = fit(aif, model_forward(aif, tk), kInit);
  EXPECT_LT(r.params.ft, 1e-4 * tk.fp);
}

TEST(Fit, NeverWorseThanInit) {
  const auto aif = default_aif();
  std::mt19937_64 rng(4);
  std::normal_distribution<double> nd(0.0, 0.1);
  auto c = model_forward(aif, {0.02, 10.0, 0.01, 60.0});
  for (double& v : c.values) v += nd(rng);
  for (const TKParams init : {kInit, TKParams{0.2, 60.0, 0.2, 600.0}, TKParams{0.01, 1.0, 0.0, 10.0}}) {
    const auto r = fit(aif, c, init);
    const auto r0 = detail::tk_residual(aif, c.values, detail::to_vec(init)).norm();
    EXPECT_LE(r.residual, r0);
  }
}

TEST(Fit, RespectsBounds) {
  const auto aif = default_aif();
  auto c = model_forward(aif, {0.04, 4.0, 0.006, 80.0});
  for (double& v : c.values) v *= 20.0;  // needs flows beyond the upper bound
  const auto r = fit(aif, c, kInit);
  const TKBounds b;
  EXPECT_GE(r.params.fp, b.lower.fp);
  EXPECT_LE(r.params.fp, b.upper.fp);
  EXPECT_LE(r.params.ft, b.upper.ft);
  EXPECT_GE(r.params.tp, b.lower.tp);
  EXPECT_LE(r.params.tt, b.upper.tt);
}

TEST(Fit, ScaleEquivariance) {
  auto aif = default_aif();
  std::mt19937_64 rng(6);
  std::normal_distribution<double> nd(0.0, 0.01);
  auto c = model_forward(aif, {0.03, 5.0, 0.007, 90.0});
  for (double& v : c.values) v += nd(rng);
  const auto a = fit(aif, c, kInit);
  for (double& v : aif.values) v *= 3.0;
  for (double& v : c.values) v *= 3.0;
  const auto b = fit(aif, c, kInit);
  EXPECT_LT(rel(b.params.ft, a.params.ft), 1e-4);
  EXPECT_LT(rel(b.params.fp, a.params.fp), 1e-4);
  EXPECT_LT(rel(b.params.tt, a.params.tt), 1e-3);
}

TEST(Fit, GfrFromParenchymaVolume) {
  const auto aif = default_aif();
  const TKParams tk{0.04, 4.0, 0.006, 80.0};
  const auto r = fit(aif, model_forward(aif, tk), kInit, {}, 1000);
  EXPECT_NEAR(r.gfr, r.params.ft * 1000 * 4.6875e-3 * 60.0, 1e-12);
}

TEST(Fit, RejectsZeroAifAndMismatch) {
  auto aif = default_aif();
  auto c = model_forward(aif, kInit);
  ConcentrationCurve zero{std::vector<double>(aif.size(), 0.0), aif.dt};
  EXPECT_THROW(fit(zero, c, kInit), std::invalid_argument);
  c.values.pop_back();
  EXPECT_THROW(fit(aif, c, kInit), std::invalid_argument);
}
