#include <gtest/gtest.h>

#include <cstring>
#include <random>

#include "dcedip/cs_recon.hpp"
#include "dcedip/phantom.hpp"

using namespace dcedip;

namespace {

ImageSeq random_seq(int n, int frames, std::mt19937_64& rng) {
  std::normal_distribution<double> nd;
  ImageSeq x;
  for (int t = 0; t < frames; ++t) {
    Image f(n, n);
    for (Eigen::Index i = 0; i < f.size(); ++i) f(i) = cplx(nd(rng), nd(rng));
    x.push_back(f);
  }
  return x;
}

struct Setup {
  GroundTruthSeq gt;
  std::shared_ptr<CoilSet> coils;
  KSpaceFrames k;
  std::vector<EncodingOp> ops;
};

Setup small_setup(int n, int frames, int spokes, double sigma) {
  auto spec = default_phantom_spec(n);
  spec.frames = frames;
  spec.injection_delay = 0.0;
  Setup s;
  s.gt = render_phantom(spec);
  s.coils = std::make_shared<CoilSet>(make_coils(n, 4, 7));
  s.k = simulate_acquisition(s.gt.images, s.coils, spokes, 2 * n, sigma, 11);
  s.ops = frame_operators(s.k, s.coils);
  return s;
}

bool identical(const ImageSeq& a, const ImageSeq& b) {
  if (a.size() != b.size()) return false;
  for (std::size_t t = 0; t < a.size(); ++t)
    if (a[t].size() != b[t].size() || std::memcmp(a[t].data(), b[t].data(), sizeof(cplx) * a[t].size()) != 0)
      return false;
  return true;
}

}  // namespace

TEST(TemporalTv, ConstantSequenceIsZero) {
  std::mt19937_64 rng(1);
  const auto f = random_seq(8, 1, rng)[0];
  EXPECT_EQ(temporal_tv(ImageSeq(5, f)), 0.0);
}

TEST(TemporalTv, ComplexModulus) {
  ImageSeq x{Image::Zero(1, 1), Image::Constant(1, 1, cplx(3.0, 4.0))};
  EXPECT_DOUBLE_EQ(temporal_tv(x), 5.0);
}

TEST(TemporalTv, SmoothedApproachesExactFromAbove) {
  std::mt19937_64 rng(2);
  const auto x = random_seq(6, 5, rng);
  const double exact = temporal_tv(x);
  double prev = std::numeric_limits<double>::infinity();
  for (double eps : {1e-2, 1e-4, 1e-8}) {
    const double s = temporal_tv_smooth(x, eps);
    EXPECT_GE(s, exact);
    EXPECT_LT(s, prev);
    prev = s;
  }
  EXPECT_NEAR(prev, exact, 1e-10 * exact);
}

TEST(CsGradient, ZeroAtConsistentDataWithoutRegularization) {
  auto s = small_setup(16, 4, 9, 0.0);
  const auto g = cs_gradient(s.gt.images, s.k, s.ops, 0.0, 1e-3);
  for (const auto& f : g) EXPECT_LT(f.abs().maxCoeff(), 1e-12);
}

TEST(CsGradient, ConstantInTimeHasNoTvComponent) {
  std::mt19937_64 rng(4);
  const auto f = random_seq(8, 1, rng)[0];
  for (const auto& g : temporal_tv_gradient(ImageSeq(4, f), 1e-3)) EXPECT_EQ(g.abs().maxCoeff(), 0.0);
}

TEST(CsGradient, MatchesFiniteDifferences) {
  auto s = small_setup(16, 4, 9, 0.05);
  std::mt19937_64 rng(5);
  for (bool weighted : {false, true})
    for (int trial = 0; trial < 5; ++trial) {
      const auto x = random_seq(16, 4, rng);
      const auto d = random_seq(16, 4, rng);
      const double lambda = 0.3, eps = 1e-3, h = 1e-6;
      const auto g = cs_gradient(x, s.k, s.ops, lambda, eps, weighted);
      ImageSeq xp = x, xm = x;
      for (std::size_t t = 0; t < x.size(); ++t) {
        xp[t] += h * d[t];
        xm[t] -= h * d[t];
      }
      const double fd = (cs_objective(xp, s.k, s.ops, lambda, eps, weighted) -
                         cs_objective(xm, s.k, s.ops, lambda, eps, weighted)) /
                        (2.0 * h);
      const double an = real_dot(g, d);
      EXPECT_LT(std::abs(fd - an) / std::abs(an), 1e-4) << "weighted=" << weighted << " trial " << trial;
    }
}

TEST(ReconstructCs, ZeroLambdaIsInufft) {
  auto s = small_setup(16, 4, 9, 0.05);
  CSConfig cfg;
  cfg.lambda = 0.0;
  const auto r = reconstruct_cs(s.k, s.ops, cfg);
  EXPECT_TRUE(identical(r.images, inufft_sequence(s.k, s.ops)));
  EXPECT_EQ(r.iterations, 0);
}

TEST(ReconstructCs, ObjectiveNonIncreasingAndTracked) {
  auto s = small_setup(32, 12, 13, 0.05);
  for (double lambda : {0.00125, 0.0125, 0.125, 1.25}) {
    CSConfig cfg;
    cfg.lambda = lambda;
    const auto r = reconstruct_cs(s.k, s.ops, cfg);
    ASSERT_EQ(r.iterations, cfg.n_iters);
    ASSERT_EQ(static_cast<int>(r.objective.size()), cfg.n_iters + 1);
    for (std::size_t i = 1; i < r.objective.size(); ++i)
      EXPECT_LE(r.objective[i], r.objective[i - 1]) << "lambda " << lambda << " iteration " << i;
    EXPECT_LT(r.objective.back(), r.objective.front());

    std::vector<FrameSamples> data;
    for (const auto& f : s.k.frames) data.push_back(f / r.scale);
    ImageSeq xn = r.images;
    for (auto& f : xn) f /= r.scale;
    const double recomputed = CSProblem(s.ops, data, lambda, r.eps, cfg.density_weighted).objective(xn);
    EXPECT_NEAR(recomputed, r.objective.back(), 1e-8 * r.objective.back());
  }
}

TEST(ReconstructCs, Deterministic) {
  auto s = small_setup(16, 6, 9, 0.05);
  CSConfig cfg;
  cfg.lambda = 0.0125;
  EXPECT_TRUE(identical(reconstruct_cs(s.k, s.ops, cfg).images, reconstruct_cs(s.k, s.ops, cfg).images));
}

TEST(ReconstructCs, FullSamplingBeatsUndersampling) {
  CSConfig cfg;
  cfg.lambda = 0.00125;
  auto full = small_setup(32, 6, 51, 0.0);
  auto under = small_setup(32, 6, 13, 0.0);
  const double e_full = nrmse(reconstruct_cs(full.k, full.ops, cfg).images, full.gt.images);
  const double e_under = nrmse(reconstruct_cs(under.k, under.ops, cfg).images, under.gt.images);
  EXPECT_LT(e_full, e_under);
}

TEST(ReconstructCs, TemporalTvDecreasesWithLambda) {
  auto s = small_setup(32, 16, 13, 0.05);
  double prev = std::numeric_limits<double>::infinity();
  for (double lambda : {0.0, 0.00125, 0.0125, 0.125, 1.25}) {
    CSConfig cfg;
    cfg.lambda = lambda;
    const double tv = temporal_tv(reconstruct_cs(s.k, s.ops, cfg).images);
    EXPECT_LT(tv, prev) << "lambda " << lambda;
    prev = tv;
  }
}

TEST(ReconstructCs, RejectsInvalidConfig) {
  auto s = small_setup(16, 4, 9, 0.0);
  CSConfig cfg;
  cfg.lambda = -1.0;
  EXPECT_THROW(reconstruct_cs(s.k, s.ops, cfg), std::invalid_argument);
  cfg.lambda = 0.1;
  cfg.n_iters = 0;
  EXPECT_THROW(reconstruct_cs(s.k, s.ops, cfg), std::invalid_argument);
}
