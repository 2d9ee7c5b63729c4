#include <gtest/gtest.h>

#include <filesystem>
#include <random>

#include "dcedip/dip.hpp"
#include "dcedip/phantom.hpp"

using namespace dcedip;

namespace {

NetSpec micro_spec(Normalization norm = Normalization::instance) {
  NetSpec s;
  s.m = 3;
  s.fc_hidden = 6;
  s.base = 2;
  s.channels = 4;
  s.stage_blocks = {1, 2, 1};
  s.norm = norm;
  s.init_seed = 5;
  return s;
}

struct MicroProblem {
  std::shared_ptr<CoilSet> coils;
  KSpaceFrames k;
  std::vector<EncodingOp> ops;
  LatentSeq z;
};

MicroProblem micro_problem(int n, int frames, int m, std::uint64_t seed) {
  MicroProblem p;
  auto spec = default_phantom_spec(n);
  spec.frames = frames;
  spec.injection_delay = 0.0;
  const auto gt = render_phantom(spec);
  p.coils = std::make_shared<CoilSet>(make_coils(n, 2, 7));
  p.k = simulate_acquisition(gt.images, p.coils, 5, 2 * n, 0.05, seed);
  p.ops = frame_operators(p.k, p.coils);
  PhaseClustering c;
  c.boundaries = {1};
  for (int i = 1; i <= 5; ++i) c.boundaries.push_back(1 + (frames - 1) * i / 5);
  p.z = design_latent(c, m, 1.0, seed);
  return p;
}

template <class S>
double max_abs(const std::vector<S>& v) {
  double m = 0.0;
  for (S x : v) m = std::max(m, std::abs(static_cast<double>(x)));
  return m;
}

}  // namespace

TEST(NetSpec, DeskPresetReachesGrid) {
  for (int n : {16, 32, 64}) EXPECT_EQ(NetSpec::desk(n).output_size(), n);
  EXPECT_EQ(NetSpec::paper_scale().output_size(), 224);
}

TEST(Generator, ParameterCountMatchesClosedForm) {
  for (const auto& s : {micro_spec(), micro_spec(Normalization::none), NetSpec::desk(32), NetSpec::desk(64)}) {
    const Generator<double> g(s);
    EXPECT_EQ(g.parameter_count(), parameter_count(s));
    EXPECT_EQ(g.init().values.size(), parameter_count(s));
  }
  // m=32: FC 32*128+128 + 128*16+16; first block 9*32+32+64; 12 further blocks 9*32*32+32+64; head 2*9*32+2.
  EXPECT_EQ(parameter_count(NetSpec::desk(64)), 4224u + 2064u + 384u + 12u * 9312u + 578u);
}

TEST(Generator, OutputShapeAndDeterminism) {
  const Generator<float> g(NetSpec::desk(32));
  const auto p = g.init();
  Eigen::VectorXd z = Eigen::VectorXd::LinSpaced(32, -1.0, 1.0);
  const Image a = g.generate(p.values, z);
  EXPECT_EQ(a.rows(), 32);
  EXPECT_EQ(a.cols(), 32);
  EXPECT_TRUE((a == g.generate(p.values, z)).all());
  EXPECT_GT(a.abs().maxCoeff(), 0.0);
}

TEST(Generator, ZeroParametersGiveZeroImage) {
  const Generator<double> g(micro_spec());
  std::vector<double> zero(g.parameter_count(), 0.0);
  const Image a = g.generate(zero, Eigen::VectorXd::Ones(3));
  EXPECT_EQ(a.abs().maxCoeff(), 0.0);
}

TEST(Generator, LipschitzProbe) {
  const Generator<double> g(NetSpec::desk(32));
  const auto p = g.init();
  std::mt19937_64 rng(8);
  std::normal_distribution<double> nd;
  double worst = 0.0;
  for (int trial = 0; trial < 10; ++trial) {
    Eigen::VectorXd z(32), dz(32);
    for (int i = 0; i < 32; ++i) {
      z(i) = nd(rng);
      dz(i) = nd(rng);
    }
    dz *= 1e-3 / dz.norm();
    const double d = std::sqrt((g.generate(p.values, z + dz) - g.generate(p.values, z)).abs2().sum());
    const double d2 = std::sqrt((g.generate(p.values, z + 0.5 * dz) - g.generate(p.values, z)).abs2().sum());
    worst = std::max(worst, d / 1e-3);
    EXPECT_NEAR(d2, 0.5 * d, 0.05 * d + 1e-12);  // locally linear: no jumps at this scale
  }
  EXPECT_TRUE(std::isfinite(worst));
  EXPECT_GT(worst, 0.0);
}

TEST(DipGradient, MatchesFiniteDifferencesOnMicroNet) {
  for (auto norm : {Normalization::instance, Normalization::none}) {
    const auto spec = micro_spec(norm);
    const Generator<double> gen(spec);
    ASSERT_LE(gen.parameter_count(), 5000u);
    auto prob = micro_problem(8, 6, spec.m, 21);
    std::vector<FrameSamples> data = prob.k.frames;
    for (auto& f : data) f /= 0.05;
    const DipObjective<double> obj(gen, prob.ops, data, prob.z);
    auto theta = gen.init().values;
    const std::vector<int> batch{0, 3, 5};
    std::vector<double> grad(theta.size(), 0.0);
    obj.batch(theta, batch, &grad);
    const double floor = 1e-7 * max_abs(grad);

    std::mt19937_64 rng(9);
    std::uniform_int_distribution<std::size_t> pick(0, theta.size() - 1);
    int checked = 0;
    for (int i = 0; i < 60; ++i) {
      const std::size_t j = pick(rng);
      const double h = 1e-6 * std::max(1.0, std::abs(theta[j]));
      auto tp = theta, tm = theta;
      tp[j] += h;
      tm[j] -= h;
      const double fd = (obj.batch(tp, batch, nullptr) - obj.batch(tm, batch, nullptr)) / (2.0 * h);
      const double err = std::abs(fd - grad[j]) / std::max({std::abs(fd), std::abs(grad[j]), floor});
      EXPECT_LT(err, 1e-4) << "parameter " << j << " fd " << fd << " analytic " << grad[j];
      ++checked;
    }
    EXPECT_GE(checked, 50);
  }
}

TEST(DipGradient, ZeroResidualGivesZeroGradient) {
  const auto spec = micro_spec();
  const Generator<double> gen(spec);
  auto prob = micro_problem(8, 6, spec.m, 2);
  const auto theta = gen.init().values;
  std::vector<FrameSamples> data;
  for (int t = 0; t < 6; ++t) data.push_back(prob.ops[t].forward(gen.generate(theta, prob.z.z.row(t).transpose())));
  const DipObjective<double> obj(gen, prob.ops, data, prob.z);
  std::vector<double> grad(theta.size(), 0.0);
  EXPECT_LT(obj.batch(theta, {0, 1, 2, 3, 4, 5}, &grad), 1e-24);
  EXPECT_LT(max_abs(grad), 1e-12);
}

TEST(DipGradient, BatchOrderDoesNotChangeLossOrGradient) {
  const auto spec = micro_spec();
  const Generator<double> gen(spec);
  auto prob = micro_problem(8, 6, spec.m, 3);
  const DipObjective<double> obj(gen, prob.ops, prob.k.frames, prob.z);
  const auto theta = gen.init().values;
  std::vector<double> ga(theta.size(), 0.0), gb(theta.size(), 0.0);
  const double la = obj.batch(theta, {0, 2, 4}, &ga);
  const double lb = obj.batch(theta, {4, 0, 2}, &gb);
  EXPECT_NEAR(la, lb, 1e-12 * la);
  for (std::size_t i = 0; i < ga.size(); ++i) EXPECT_NEAR(ga[i], gb[i], 1e-10 * (1.0 + std::abs(ga[i])));
}

TEST(DipGradient, ResidualGradientScalesWithTargets) {
  // With a zero network output, doubling k doubles the gradient.
  const auto spec = micro_spec(Normalization::none);
  const Generator<double> gen(spec);
  auto prob = micro_problem(8, 6, spec.m, 4);
  auto theta = gen.init().values;
  std::fill(theta.end() - 2 * 9 * spec.channels - 2, theta.end(), 0.0);  // zero head -> zero output
  std::vector<FrameSamples> twice = prob.k.frames;
  for (auto& f : twice) f *= 2.0;
  const DipObjective<double> a(gen, prob.ops, prob.k.frames, prob.z), b(gen, prob.ops, twice, prob.z);
  std::vector<double> ga(theta.size(), 0.0), gb(theta.size(), 0.0);
  a.batch(theta, {1, 2}, &ga);
  b.batch(theta, {1, 2}, &gb);
  for (std::size_t i = 0; i < ga.size(); ++i) EXPECT_NEAR(gb[i], 2.0 * ga[i], 1e-10 * (1.0 + std::abs(ga[i])));
}

TEST(Train, TinyInstanceLossDecreasesAndIsDeterministic) {
  auto prob = micro_problem(16, 8, 8, 5);
  NetSpec spec;
  spec.m = 8;
  spec.fc_hidden = 16;
  spec.base = 4;
  spec.channels = 8;
  spec.stage_blocks = {1, 1, 1};
  TrainConfig cfg;
  cfg.batch = 4;
  cfg.optimizer = Optimizer::adam;
  cfg.lr = 1e-3;
  cfg.max_epochs = 200;
  cfg.min_epochs = 200;
  const auto a = train<double>(prob.k, prob.ops, prob.z, spec, cfg);
  ASSERT_EQ(a.loss.size(), 200u);
  std::vector<double> smooth;
  for (std::size_t e = 0; e + 5 <= a.loss.size(); e += 5)
    smooth.push_back(std::accumulate(a.loss.begin() + e, a.loss.begin() + e + 5, 0.0) / 5.0);
  for (std::size_t i = 1; i < smooth.size(); ++i) EXPECT_LT(smooth[i], smooth[i - 1]) << "window " << i;
  const auto b = train<double>(prob.k, prob.ops, prob.z, spec, cfg);
  EXPECT_EQ(a.loss, b.loss);
  EXPECT_EQ(a.params.values, b.params.values);
}

TEST(Train, PlainGradientDescentDecreasesLoss) {
  auto prob = micro_problem(16, 8, 8, 6);
  NetSpec spec = NetSpec::desk(16);
  spec.m = 8;
  spec.channels = 8;
  TrainConfig cfg;
  cfg.batch = 4;
  cfg.max_epochs = 30;
  cfg.min_epochs = 30;
  cfg.lr = 1e-4;
  const auto r = train<float>(prob.k, prob.ops, prob.z, spec, cfg);
  EXPECT_LT(r.loss.back(), r.loss.front());
}

TEST(Train, StoppingRuleFiresOnConstantData) {
  auto prob = micro_problem(16, 8, 8, 7);
  for (auto& f : prob.k.frames) f.setConstant(cplx(0.01, 0.0));
  NetSpec spec = NetSpec::desk(16);
  spec.m = 8;
  spec.channels = 4;
  TrainConfig cfg;
  cfg.batch = 8;
  cfg.optimizer = Optimizer::adam;
  cfg.lr = 1e-3;
  cfg.max_epochs = 2000;
  cfg.min_epochs = 10;
  const auto r = train<float>(prob.k, prob.ops, prob.z, spec, cfg);
  EXPECT_TRUE(r.converged);
  EXPECT_LT(static_cast<int>(r.loss.size()), cfg.max_epochs);
}

TEST(Train, RejectsBadConfig) {
  auto prob = micro_problem(16, 8, 8, 8);
  NetSpec spec = NetSpec::desk(16);
  spec.m = 8;
  TrainConfig cfg;
  cfg.batch = 9;
  EXPECT_THROW(train<float>(prob.k, prob.ops, prob.z, spec, cfg), std::invalid_argument);
  cfg.batch = 4;
  cfg.lr = 0.0;
  EXPECT_THROW(train<float>(prob.k, prob.ops, prob.z, spec, cfg), std::invalid_argument);
  cfg.lr = 1e-3;
  spec.m = 7;
  EXPECT_THROW(train<float>(prob.k, prob.ops, prob.z, spec, cfg), std::invalid_argument);
}

TEST(Train, NonFiniteLossAbortsWithCheckpoint) {
  auto prob = micro_problem(16, 8, 8, 9);
  NetSpec spec = NetSpec::desk(16);
  spec.m = 8;
  spec.channels = 4;
  TrainConfig cfg;
  cfg.batch = 4;
  cfg.lr = 1e30;
  cfg.max_epochs = 50;
  cfg.checkpoint_dir = (std::filesystem::temp_directory_path() / "dcedip_diverge").string();
  std::filesystem::remove_all(cfg.checkpoint_dir);
  EXPECT_THROW(train<float>(prob.k, prob.ops, prob.z, spec, cfg), NumericalError);
  EXPECT_TRUE(std::filesystem::exists(std::filesystem::path(cfg.checkpoint_dir) / "diverged.ckpt"));
  std::filesystem::remove_all(cfg.checkpoint_dir);
}

TEST(Checkpoint, RoundTrip) {
  const Generator<float> g(NetSpec::desk(16));
  auto p = g.init();
  p.epoch = 12;
  p.loss_history = {3.0, 2.5, 2.25};
  p.data_scale = 0.125;
  const auto path = (std::filesystem::temp_directory_path() / "dcedip_ckpt_roundtrip.ckpt").string();
  save_checkpoint(path, p);
  const auto q = load_checkpoint<float>(path);
  EXPECT_EQ(q.values, p.values);
  EXPECT_EQ(q.epoch, 12);
  EXPECT_EQ(q.loss_history, p.loss_history);
  EXPECT_EQ(q.data_scale, 0.125);
  EXPECT_EQ(q.spec.stage_blocks, p.spec.stage_blocks);
  EXPECT_THROW(load_checkpoint<double>(path), DataError);
  std::filesystem::remove(path);
}

TEST(ReconstructDip, EvaluatesEveryFrameInDataUnits) {
  auto prob = micro_problem(16, 8, 8, 10);
  NetSpec spec = NetSpec::desk(16);
  spec.m = 8;
  const Generator<float> g(spec);
  auto p = g.init();
  p.data_scale = 2.0;
  const auto x = reconstruct_dip(p, prob.z);
  ASSERT_EQ(x.size(), 8u);
  for (int t = 0; t < 8; ++t)
    EXPECT_LT((x[t] - 2.0 * g.generate(p.values, prob.z.z.row(t).transpose())).abs().maxCoeff(), 1e-12);
}
