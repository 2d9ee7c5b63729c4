#include <gtest/gtest.h>

#include <cstring>
#include <random>

#include "dcedip/phantom.hpp"

using namespace dcedip;

namespace {

int count_local_maxima(const std::vector<double>& v) {
  int count = 0;
  for (std::size_t i = 1; i + 1 < v.size(); ++i)
    if (v[i] > v[i - 1] && v[i] >= v[i + 1]) ++count;
  return count;
}

}  // namespace

TEST(Aif, ZeroBeforeInjection) {
  auto spec = default_phantom_spec();
  for (double delay : {0.0, 7.0, 20.0, 41.3}) {
    spec.injection_delay = delay;
    const auto aif = make_aif(spec);
    for (int k = 0; k < spec.frames; ++k) {
      EXPECT_GE(aif.values[k], 0.0);
      if (k * spec.dt < delay) EXPECT_EQ(aif.values[k], 0.0) << "frame " << k;
    }
  }
}

TEST(Aif, DefaultHasDoublePeak) {
  const auto aif = make_aif(default_phantom_spec());
  EXPECT_EQ(count_local_maxima(aif.values), 2);
  const double peak = *std::max_element(aif.values.begin(), aif.values.end());
  EXPECT_NEAR(peak, 6.0, 0.5);
}

TEST(Aif, ImmediateInjectionStartsAtZero) {
  auto spec = default_phantom_spec();
  spec.injection_delay = 0.0;
  const auto aif = make_aif(spec);
  EXPECT_EQ(aif.values[0], 0.0);
  EXPECT_GT(aif.values[1], 0.0);
}

TEST(Aif, RejectsNoPostInjectionFrames) {
  auto spec = default_phantom_spec();
  spec.injection_delay = spec.frames * spec.dt;
  EXPECT_THROW(make_aif(spec), std::invalid_argument);
}

TEST(TissueConcentration, ZeroInputsGiveZero) {
  ConcentrationCurve zero{std::vector<double>(20, 0.0), 3.3};
  for (double v : tissue_concentration(zero, {0.04, 4.0, 0.006, 80.0}).values) EXPECT_EQ(v, 0.0);
  const auto aif = make_aif(default_phantom_spec());
  for (double v : tissue_concentration(aif, {0.0, 4.0, 0.0, 80.0}).values) EXPECT_EQ(v, 0.0);
}

TEST(TissueConcentration, ImpulseRecoversPlasmaResponse) {
  const double dt = 3.3;
  ConcentrationCurve impulse{std::vector<double>(30, 0.0), dt};
  impulse.values[0] = 1.0 / dt;
  const auto out = tissue_concentration(impulse, {1.0, 10.0, 0.0, 50.0});
  for (int k = 0; k < 30; ++k) EXPECT_NEAR(out.values[k], std::exp(-k * dt / 10.0), 1e-12);
}

TEST(TissueConcentration, RejectsNonpositiveTransit) {
  const auto aif = make_aif(default_phantom_spec());
  EXPECT_THROW(tissue_concentration(aif, {0.01, 0.0, 0.01, 10.0}), std::invalid_argument);
  EXPECT_THROW(tissue_concentration(aif, {0.01, 3.0, 0.01, -1.0}), std::invalid_argument);
}

TEST(TissueConcentration, LinearInAif) {
  const auto aif = make_aif(default_phantom_spec());
  const TKParams tk{0.03, 5.0, 0.007, 90.0};
  const auto base = tissue_concentration(aif, tk);
  for (double a : {0.0, 0.5, 2.0, 3.75}) {
    ConcentrationCurve scaled = aif;
    for (double& v : scaled.values) v *= a;
    const auto out = tissue_concentration(scaled, tk);
    for (std::size_t k = 0; k < out.size(); ++k) EXPECT_NEAR(out.values[k], a * base.values[k], 1e-14 * (1 + base.values[k]));
  }
}

TEST(TissueConcentration, Causal) {
  const auto spec = default_phantom_spec();
  const auto aif = make_aif(spec);
  for (const auto& r : spec.regions) {
    if (r.role != RegionRole::tissue) continue;
    const auto c = tissue_concentration(aif, r.tk);
    for (int k = 0; k < spec.frames; ++k)
      if (k * spec.dt < spec.injection_delay) EXPECT_EQ(c.values[k], 0.0);
  }
}

TEST(GreSignal, ClosedFormValue) {
  // Independent high-precision evaluation of the steady-state formula.
  EXPECT_NEAR(gre_signal(0.0, 1.2, 3.56e-3, 12.0, 4.5, 1.0), 0.0248845344406997621834720450808, 1e-15);
  EXPECT_NEAR(gre_signal(2.0, 1.6, 3.56e-3, 12.0, 4.5, 1.0), 0.127797556406570578594671312402, 1e-15);
}

TEST(GreSignal, MonotoneInConcentration) {
  EXPECT_GT(gre_signal(1e-9, 1.2, 3.56e-3, 12.0, 4.5), gre_signal(0.0, 1.2, 3.56e-3, 12.0, 4.5));
  double prev = -1.0;
  for (double c = 0.0; c <= 10.0; c += 0.25) {
    const double s = gre_signal(c, 0.8, 3.56e-3, 12.0, 4.5);
    EXPECT_GT(s, prev);
    prev = s;
  }
}

TEST(GreSignal, RejectsBadPreconditions) {
  EXPECT_THROW(gre_signal(0.0, 0.0, 3.56e-3, 12.0, 4.5), std::invalid_argument);
  EXPECT_THROW(gre_signal(0.0, 1.2, 3.56e-3, 90.0, 4.5), std::invalid_argument);
  EXPECT_THROW(gre_signal(0.0, 1.2, 3.56e-3, 12.0, 0.0), std::invalid_argument);
}

TEST(SignalConversion, RoundTrip) {
  const ScanParams scan;
  for (double t1 : {0.8, 1.2, 1.6})
    for (double m0 : {0.3, 1.0, 7.0}) {
      const double base = gre_signal(0.0, t1, scan, m0);
      for (double c : {0.0, 0.5, 2.0}) {
        const auto r = signal_to_concentration(gre_signal(c, t1, scan, m0), base, t1, scan);
        EXPECT_FALSE(r.clamped);
        if (c == 0.0)
          EXPECT_EQ(r.concentration, 0.0);
        else
          EXPECT_NEAR(r.concentration, c, 1e-9 * c);
      }
    }
}

TEST(SignalConversion, RoundTripPropertyOverRange) {
  const ScanParams scan;
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> cd(0.0, 10.0), td(0.5, 2.0);
  for (int i = 0; i < 200; ++i) {
    const double c = cd(rng), t1 = td(rng);
    const double base = gre_signal(0.0, t1, scan);
    const auto r = signal_to_concentration(gre_signal(c, t1, scan), base, t1, scan);
    EXPECT_NEAR(r.concentration, c, 1e-9 * std::max(c, 1e-3));
  }
}

TEST(SignalConversion, BelowBaselineClampsAndAboveSupremumThrows) {
  const ScanParams scan;
  const double base = gre_signal(0.0, 1.2, scan);
  const auto r = signal_to_concentration(0.9 * base, base, 1.2, scan);
  EXPECT_EQ(r.concentration, 0.0);
  EXPECT_TRUE(r.clamped);
  const auto b = signal_to_concentration(base, base, 1.2, scan);
  EXPECT_EQ(b.concentration, 0.0);
  EXPECT_FALSE(b.clamped);
  const double m0 = base / gre_signal(0.0, 1.2, scan, 1.0);
  EXPECT_THROW(signal_to_concentration(1.01 * m0 * std::sin(12.0 * kPi / 180.0), base, 1.2, scan), std::domain_error);
}

TEST(RenderPhantom, BaselineFrameAndStaticBackground) {
  const auto spec = default_phantom_spec();
  const auto gt = render_phantom(spec);
  ASSERT_EQ(static_cast<int>(gt.images.size()), spec.frames);

  auto zero = spec;
  for (auto& r : zero.regions) {
    r.role = RegionRole::tissue;
    r.tk = {0.0, 1.0, 0.0, 1.0};
  }
  const auto flat = render_phantom(zero);
  EXPECT_EQ((gt.images[0] - flat.images[0]).abs().maxCoeff(), 0.0);

  auto crisp = spec;
  crisp.region_edge = 0.0;
  const auto hard = render_phantom(crisp);
  for (int y = 0; y < spec.n; ++y)
    for (int x = 0; x < spec.n; ++x) {
      if (hard.labels(y, x) != 0) continue;
      for (int t = 1; t < spec.frames; ++t) ASSERT_EQ(hard.images[t](y, x), hard.images[0](y, x));
    }
}

TEST(RenderPhantom, EdgeFalloffStaysOutsideMasks) {
  auto spec = default_phantom_spec();
  auto crisp = spec;
  crisp.region_edge = 0.0;
  const auto soft = render_phantom(spec);
  const auto hard = render_phantom(crisp);
  for (int t = 0; t < spec.frames; t += 6)
    for (int y = 0; y < spec.n; ++y)
      for (int x = 0; x < spec.n; ++x)
        if (soft.labels(y, x) != 0) ASSERT_EQ(soft.images[t](y, x), hard.images[t](y, x));
  const int far_y = spec.n / 2, far_x = spec.n / 2 + 20;
  ASSERT_EQ(soft.labels(far_y, far_x), 0);
  EXPECT_NEAR(std::abs(soft.images[10](far_y, far_x) - soft.images[0](far_y, far_x)), 0.0, 1e-12);
}

TEST(RenderPhantom, ImagesAreComplexAndNonnegativeMagnitude) {
  const auto gt = render_phantom(default_phantom_spec());
  EXPECT_GT(gt.images[10].imag().abs().maxCoeff(), 1e-3);
  for (const auto& f : gt.images) EXPECT_GE(f.abs().minCoeff(), 0.0);
}

TEST(RenderPhantom, AortaRoundTripsToAif) {
  const auto spec = default_phantom_spec();
  const auto gt = render_phantom(spec);
  const int aorta = 1;
  std::vector<double> mean(spec.frames, 0.0);
  int count = 0;
  for (int y = 0; y < spec.n; ++y)
    for (int x = 0; x < spec.n; ++x)
      if (gt.labels(y, x) == aorta) {
        ++count;
        for (int t = 0; t < spec.frames; ++t) mean[t] += std::abs(gt.images[t](y, x));
      }
  ASSERT_GT(count, 10);
  const auto& reg = spec.regions[0];
  for (int t = 0; t < spec.frames; ++t) {
    const auto c = signal_to_concentration(mean[t] / count, mean[0] / count, reg.t1, spec.scan);
    EXPECT_NEAR(c.concentration, gt.aif.values[t], 1e-6 * std::max(1.0, gt.aif.values[t]));
  }
}

TEST(RenderPhantom, OverlapRejected) {
  auto spec = default_phantom_spec();
  spec.regions[1].shape = spec.regions[0].shape;
  EXPECT_THROW(render_phantom(spec), std::invalid_argument);
}

TEST(RenderPhantom, Deterministic) {
  const auto spec = default_phantom_spec();
  const auto a = render_phantom(spec);
  const auto b = render_phantom(spec);
  for (int t = 0; t < spec.frames; ++t)
    ASSERT_EQ(std::memcmp(a.images[t].data(), b.images[t].data(), sizeof(cplx) * a.images[t].size()), 0);
  EXPECT_TRUE((a.labels == b.labels).all());
}

TEST(RenderPhantom, RegionsDisjointWithBackgroundRemainder) {
  const auto spec = default_phantom_spec();
  const auto labels = region_labels(spec);
  std::vector<int> counts(spec.regions.size() + 1, 0);
  for (int y = 0; y < spec.n; ++y)
    for (int x = 0; x < spec.n; ++x) ++counts[labels(y, x)];
  for (std::size_t r = 1; r < counts.size(); ++r) EXPECT_GT(counts[r], 0) << spec.regions[r - 1].name;
  EXPECT_GT(counts[0], spec.n * spec.n / 2);
}
