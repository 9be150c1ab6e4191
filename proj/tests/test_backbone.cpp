#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "phinet/backbone.hpp"
#include "phinet/gradcheck.hpp"
#include "phinet/model.hpp"

using namespace phinet;

namespace {

Frame random_frame(int channels, int size, std::uint64_t seed, float lo = 0.0f, float hi = 1.0f) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<float> u(lo, hi);
  Frame f(channels, size);
  for (auto& p : f.planes)
    for (int i = 0; i < p.size(); ++i) p.data()[i] = u(rng);
  return f;
}

}  // namespace

TEST(Backbone, PatchifyShapes) {
  ModelConfig cfg = ModelConfig::desk();
  const Mat<double> p = patchify<double>(random_frame(3, 32, 1), cfg);
  EXPECT_EQ(p.rows(), 192);
  EXPECT_EQ(p.cols(), 16);
  cfg.image_size = 16;
  cfg.patch_size = 16;
  EXPECT_EQ(cfg.n_p(), 2);
  EXPECT_EQ(patchify<double>(random_frame(3, 16, 2), cfg).cols(), 1);
}

TEST(Backbone, PatchifyIsLosslessAndRasterOrdered) {
  const ModelConfig cfg = ModelConfig::desk();
  const Frame f = random_frame(3, 32, 3);
  const Mat<float> p = patchify<float>(f, cfg);
  EXPECT_TRUE(assemble<float>(p, cfg) == f);
  // Column 5 is grid row 1, grid col 1; its first entry is channel 0 pixel (8, 8).
  EXPECT_EQ(p(0, 5), f.planes[0](8, 8));
  EXPECT_EQ(p(1, 5), f.planes[0](8, 9));
  EXPECT_EQ(p(64, 5), f.planes[1](8, 8));
}

TEST(Backbone, PatchifyRejectsWrongShape) {
  EXPECT_THROW(patchify<float>(random_frame(3, 24, 4), ModelConfig::desk()), ConfigError);
  EXPECT_THROW(patchify<float>(random_frame(1, 32, 4), ModelConfig::desk()), ConfigError);
}

TEST(Backbone, EncodeShapeAndDeterminism) {
  const ModelConfig cfg = ModelConfig::desk();
  const auto params = init_parameters<float>(cfg, DecoderKind::transformer, 5);
  const Frame f = random_frame(3, 32, 6);
  const auto a = encode(params, f, cfg);
  const auto b = encode(params, f, cfg);
  EXPECT_EQ(a.rows(), 64);
  EXPECT_EQ(a.cols(), 17);
  EXPECT_TRUE(a == b);
  EXPECT_TRUE(a.allFinite());
}

TEST(Backbone, EncodeGradientMatchesFiniteDifferences) {
  const ModelConfig cfg = ModelConfig::micro();
  auto params = init_parameters<double>(cfg, DecoderKind::transformer, 8).subset("f.");
  randomize(params, 0.3, 9);
  const Frame f = random_frame(3, 8, 10);
  std::mt19937_64 rng(11);
  std::normal_distribution<double> n(0.0, 1.0);
  Mat<double> w(cfg.d, cfg.n_p());
  for (int i = 0; i < w.size(); ++i) w.data()[i] = n(rng);
  const ScalarProbe probe = [&](Binder<double>& b) { return ad::dot(encode_frame(b, f, cfg), w); };
  const auto analytic = analytic_gradient(params, probe);
  const auto numeric = numeric_gradient(params, probe, 1e-5);
  ASSERT_EQ(analytic.size(), numeric.size());
  for (const auto& [name, g] : analytic) EXPECT_LT(relative_error(g, numeric.at(name)), 1e-4) << name;
}

TEST(Backbone, InputGradientMatchesFiniteDifferences) {
  const ModelConfig cfg = ModelConfig::micro();
  auto params = init_parameters<double>(cfg, DecoderKind::transformer, 12).subset("f.");
  randomize(params, 0.3, 13);
  const Mat<double> x0 = patchify<double>(random_frame(3, 8, 14), cfg);
  const Mat<double> w = Mat<double>::Random(cfg.d, cfg.n_p());
  ad::Tape<double> tape;
  Binder<double> b(tape, params, false);
  auto x = tape.variable(x0);
  tape.backward(ad::dot(encode(b, x, cfg), w));
  const Mat<double> analytic = tape.grad(x.id);
  Mat<double> numeric(x0.rows(), x0.cols());
  for (int i = 0; i < x0.size(); ++i) {
    auto value = [&](double delta) {
      Mat<double> xp = x0;
      xp.data()[i] += delta;
      ad::Tape<double> t;
      Binder<double> bb(t, params, false);
      return ad::dot(encode(bb, t.constant(xp), cfg), w).item();
    };
    numeric.data()[i] = (value(1e-5) - value(-1e-5)) / 2e-5;
  }
  EXPECT_LT(relative_error(analytic, numeric), 1e-4);
}

TEST(Backbone, PerturbZeroNoiseIsIdentity) {
  const Frame f = random_frame(3, 32, 15);
  std::mt19937_64 rng(1);
  EXPECT_TRUE(perturb(f, 0.0, rng) == f);
}

TEST(Backbone, PerturbNoiseHasRequestedStd) {
  Frame f(1, 1000);  // 10⁶ entries
  std::mt19937_64 rng(16);
  const Frame g = perturb(f, 0.5, rng);
  const Eigen::ArrayXd v = g.planes[0].cast<double>().reshaped().array();
  const double mean = v.mean();
  const double sd = std::sqrt((v - mean).square().sum() / (v.size() - 1));
  EXPECT_GE(sd, 0.498);
  EXPECT_LE(sd, 0.502);
}

TEST(Backbone, PerturbIsSeededAndUnclipped) {
  const Frame f = random_frame(3, 32, 17);
  std::mt19937_64 a(5), b(5);
  const Frame x = perturb(f, 0.5, a);
  EXPECT_TRUE(x == perturb(f, 0.5, b));
  EXPECT_LT(x.planes[0].minCoeff(), 0.0f);
  EXPECT_GT(x.planes[0].maxCoeff(), 1.0f);
  EXPECT_THROW(perturb(f, -0.1, a), ConfigError);
}

TEST(Backbone, PermutationCovariantWithoutPositionalEmbeddings) {
  ModelConfig cfg = ModelConfig::desk();
  cfg.use_pos_embed = false;
  cfg.depth = 2;
  auto params = init_parameters<double>(cfg, DecoderKind::transformer, 18).subset("f.");
  randomize(params, 0.1, 19);
  const Mat<double> x = patchify<double>(random_frame(3, 32, 20), cfg);
  std::vector<int> perm(16);
  std::iota(perm.begin(), perm.end(), 0);
  std::shuffle(perm.begin(), perm.end(), std::mt19937_64(21));
  Mat<double> xp(x.rows(), x.cols());
  for (int j = 0; j < 16; ++j) xp.col(j) = x.col(perm[j]);
  auto run = [&](const Mat<double>& in) {
    ad::Tape<double> t;
    Binder<double> b(t, params, false);
    return Mat<double>(encode(b, t.constant(in), cfg).value());
  };
  const Mat<double> z = run(x), zp = run(xp);
  EXPECT_LT((zp.col(0) - z.col(0)).norm(), 1e-12);
  for (int j = 0; j < 16; ++j) EXPECT_LT((zp.col(j + 1) - z.col(perm[j] + 1)).norm(), 1e-12) << j;
}

TEST(Backbone, FiniteOnWideInputRange) {
  const ModelConfig cfg = ModelConfig::desk();
  auto params = init_parameters<float>(cfg, DecoderKind::transformer, 22);
  for (std::uint64_t s = 0; s < 5; ++s) {
    ad::Tape<float> t;
    Binder<float> b(t, params, false);
    const auto z = encode_normalized(b, random_frame(3, 32, 100 + s, -3.0f, 3.0f), cfg).value();
    EXPECT_TRUE(z.allFinite());
  }
}

TEST(Backbone, NonFiniteActivationNamesTheBlock) {
  const ModelConfig cfg = ModelConfig::micro();
  auto params = init_parameters<double>(cfg, DecoderKind::transformer, 23);
  params["f.blocks.0.mlp.fc2.b"](0, 0) = std::numeric_limits<double>::infinity();
  Frame f = random_frame(3, 8, 24);
  try {
    encode(params, f, cfg);
    FAIL() << "expected a numerical error";
  } catch (const NumericalError& e) {
    EXPECT_EQ(e.where(), "backbone.block[0]");
  }
}

TEST(Backbone, NormalizationUsesStoredStatistics) {
  const ModelConfig cfg = ModelConfig::micro();
  auto params = init_parameters<double>(cfg, DecoderKind::transformer, 25);
  params["f.pixel_mean"].setConstant(0.25);
  params["f.pixel_std"].setConstant(0.5);
  Frame f(3, 8);
  for (auto& p : f.planes) p.setConstant(0.75f);
  const Frame n = normalize(f, params);
  for (const auto& p : n.planes) EXPECT_FLOAT_EQ(p(3, 3), 1.0f);
  EXPECT_FALSE(params.at("f.pixel_mean").trainable);
  EXPECT_FALSE(params.at("f.cls").decay);
  EXPECT_FALSE(params.at("f.pos").decay);
  EXPECT_TRUE(params.at("f.patch.w").decay);
}
