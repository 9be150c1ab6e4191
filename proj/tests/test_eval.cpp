#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "phinet/eval.hpp"
#include "phinet/model.hpp"

using namespace phinet;

namespace {

FeatureGrid random_grid(int h, int w, int d, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<float> n(0.0f, 1.0f);
  FeatureGrid g{h, w, Eigen::MatrixXf(d, h * w)};
  for (int i = 0; i < g.features.size(); ++i) g.features.data()[i] = n(rng);
  g.features.colwise().normalize();
  return g;
}

LabelGrid random_labels(int h, int w, int n_labels, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<int> u(0, n_labels - 1);
  LabelGrid l(h, w);
  for (int i = 0; i < l.size(); ++i) l.data()[i] = u(rng);
  return l;
}

FeatureGrid flip_grid(const FeatureGrid& g) {
  FeatureGrid out = g;
  for (int y = 0; y < g.height; ++y)
    for (int x = 0; x < g.width; ++x) out.features.col(y * g.width + x) = g.features.col(y * g.width + g.width - 1 - x);
  return out;
}

LabelGrid square(int size, int y0, int x0, int side, int label = 1) {
  LabelGrid l = LabelGrid::Zero(size, size);
  l.block(y0, x0, side, side).setConstant(label);
  return l;
}

}  // namespace

TEST(Eval, LatticeSide) {
  EXPECT_EQ(lattice_side(16), 4);
  EXPECT_EQ(lattice_side(196), 14);
  EXPECT_EQ(lattice_side(1), 1);
  EXPECT_THROW(lattice_side(15), ConfigError);
}

TEST(Eval, FeatureGridsAreUnitNorm) {
  const ModelConfig cfg = ModelConfig::desk();
  const auto ps = init_parameters<float>(cfg, DecoderKind::transformer, 1);
  Frame f(3, 32);
  for (auto& p : f.planes) p.setRandom();
  const FeatureGrid g = extract_features(ps, f, cfg);
  EXPECT_EQ(g.height, 4);
  EXPECT_EQ(g.width, 4);
  EXPECT_EQ(g.dim(), cfg.d);
  for (int j = 0; j < g.features.cols(); ++j) EXPECT_NEAR(g.features.col(j).norm(), 1.0f, 1e-6f);
  EXPECT_TRUE(extract_features(ps, f, cfg).features == g.features);
}

TEST(Eval, DownsampleMajorityBreaksTiesLow) {
  LabelGrid m(4, 4);
  m << 2, 2, 1, 1,
       1, 1, 1, 3,
       0, 0, 5, 5,
       0, 0, 5, 5;
  const LabelGrid d = downsample_majority(m, 2);
  EXPECT_EQ(d(0, 0), 1);  // 2,2,1,1 tie
  EXPECT_EQ(d(0, 1), 1);
  EXPECT_EQ(d(1, 0), 0);
  EXPECT_EQ(d(1, 1), 5);
  EXPECT_THROW(downsample_majority(m, 3), ConfigError);
}

TEST(Eval, StaticVideoReproducesReference) {
  const FeatureGrid g = random_grid(4, 4, 16, 2);
  const LabelGrid ref = random_labels(4, 4, 3, 3);
  for (const auto& pp : {PropagationParams::davis(), PropagationParams::vip(), PropagationParams::jhmdb()}) {
    const auto soft = propagate_labels(std::vector<FeatureGrid>(8, g), ref, 3, pp);
    ASSERT_EQ(soft.size(), 8u);
    for (const auto& s : soft) EXPECT_TRUE(hard_labels(s, 4, 4) == ref);
  }
}

TEST(Eval, DegenerateParametersCopyPreviousFrame) {
  PropagationParams pp;
  pp.queue = 1;
  pp.radius = 0;
  pp.top_k = 1;
  std::vector<FeatureGrid> grids;
  for (int t = 0; t < 5; ++t) grids.push_back(random_grid(5, 5, 8, 10 + t));
  const LabelGrid ref = random_labels(5, 5, 4, 4);
  const auto soft = propagate_labels(grids, ref, 4, pp);
  for (const auto& s : soft) EXPECT_TRUE(hard_labels(s, 5, 5) == ref);
}

TEST(Eval, SoftLabelsAreStochastic) {
  std::vector<FeatureGrid> grids;
  for (int t = 0; t < 6; ++t) grids.push_back(random_grid(4, 4, 8, 20 + t));
  const auto soft = propagate_labels(grids, random_labels(4, 4, 5, 5), 5, PropagationParams::davis());
  for (const auto& s : soft) {
    EXPECT_EQ(s.rows(), 5);
    EXPECT_EQ(s.cols(), 16);
    EXPECT_GE(s.minCoeff(), 0.0f);
    for (int j = 0; j < s.cols(); ++j) EXPECT_NEAR(s.col(j).sum(), 1.0f, 1e-6f);
  }
}

TEST(Eval, PropagationIsFlipEquivariant) {
  std::vector<FeatureGrid> grids, flipped;
  for (int t = 0; t < 6; ++t) {
    grids.push_back(random_grid(6, 6, 8, 30 + t));
    flipped.push_back(flip_grid(grids.back()));
  }
  const LabelGrid ref = random_labels(6, 6, 3, 6);
  PropagationParams pp = PropagationParams::vip();
  pp.radius = 2;
  const auto a = propagate_labels(grids, ref, 3, pp);
  const auto b = propagate_labels(flipped, hflip(ref), 3, pp);
  for (std::size_t t = 0; t < a.size(); ++t) EXPECT_TRUE(hflip(hard_labels(a[t], 6, 6)) == hard_labels(b[t], 6, 6)) << t;
}

TEST(Eval, PropagationRejectsBadInput) {
  EXPECT_THROW(propagate_labels({}, LabelGrid::Zero(4, 4), 2, PropagationParams::davis()), ProtocolError);
  const FeatureGrid g = random_grid(4, 4, 8, 7);
  EXPECT_THROW(propagate_labels({g}, LabelGrid::Zero(3, 3), 2, PropagationParams::davis()), ProtocolError);
  EXPECT_THROW(propagate_labels({g}, LabelGrid::Constant(4, 4, 2), 2, PropagationParams::davis()), ProtocolError);
}

TEST(Eval, JaccardUnitCases) {
  const LabelGrid full = square(8, 2, 2, 4);
  EXPECT_EQ(jaccard(full, full, 1), 1.0);
  EXPECT_EQ(jaccard(square(8, 0, 0, 2), square(8, 5, 5, 2), 1), 0.0);
  LabelGrid half = LabelGrid::Zero(8, 8);
  half.block(2, 2, 2, 4).setConstant(1);
  EXPECT_EQ(jaccard(half, full, 1), 0.5);
  EXPECT_EQ(jaccard(LabelGrid::Zero(8, 8), LabelGrid::Zero(8, 8), 1), 1.0);
  EXPECT_THROW(jaccard(full, LabelGrid::Zero(4, 4), 1), ProtocolError);
}

TEST(Eval, BoundaryUnitCases) {
  const LabelGrid gt = square(10, 3, 3, 4);
  EXPECT_EQ(boundary_f(gt, gt, 1), 1.0);
  EXPECT_EQ(boundary_f(LabelGrid::Zero(10, 10), gt, 1), 0.0);
  EXPECT_EQ(boundary_f(square(10, 3, 4, 4), gt, 1, 1.0), 1.0);
  EXPECT_EQ(boundary_f(square(10, 4, 3, 4), gt, 1, 1.0), 1.0);
  EXPECT_LT(boundary_f(square(10, 3, 6, 4), gt, 1, 1.0), 1.0);
  EXPECT_EQ(boundary_f(LabelGrid::Zero(10, 10), LabelGrid::Zero(10, 10), 1), 1.0);
}

TEST(Eval, MetricsAreSymmetric) {
  for (std::uint64_t s = 0; s < 20; ++s) {
    const LabelGrid a = random_labels(12, 12, 3, 100 + s), b = random_labels(12, 12, 3, 200 + s);
    for (int label = 0; label < 3; ++label) {
      EXPECT_DOUBLE_EQ(jaccard(a, b, label), jaccard(b, a, label));
      EXPECT_DOUBLE_EQ(boundary_f(a, b, label), boundary_f(b, a, label));
    }
  }
}

TEST(Eval, CollapseMetrics) {
  const Eigen::MatrixXd same = Eigen::RowVectorXd::LinSpaced(8, 1.0, 2.0).replicate(50, 1);
  const auto c0 = collapse_metrics(same);
  EXPECT_LT(c0.per_dim_std.cwiseAbs().maxCoeff(), 1e-12);
  EXPECT_NEAR(c0.effective_rank, 1.0, 1e-9);

  std::mt19937_64 rng(8);
  std::normal_distribution<double> n(0.0, 1.0);
  Eigen::MatrixXd x(10000, 64);
  for (int i = 0; i < x.size(); ++i) x.data()[i] = n(rng);
  EXPECT_GT(collapse_metrics(x).effective_rank, 60.0);

  EXPECT_NEAR(collapse_metrics(Eigen::MatrixXd::Identity(16, 16)).effective_rank, 16.0, 1e-9);
  EXPECT_THROW(collapse_metrics(Eigen::MatrixXd::Ones(1, 4)), ProtocolError);
}

TEST(Eval, SequenceScoringSkipsReference) {
  const LabelGrid gt = square(8, 2, 2, 4);
  std::vector<LabelGrid> truth(3, gt), pred(3, gt);
  pred[0] = LabelGrid::Zero(8, 8);  // ignored
  const auto s = score_sequence("a", pred, truth);
  EXPECT_EQ(s.j, 1.0);
  EXPECT_EQ(s.f, 1.0);
  pred[2] = LabelGrid::Zero(8, 8);
  const auto t = score_sequence("b", pred, truth);
  EXPECT_DOUBLE_EQ(t.j, 0.5);
  EXPECT_DOUBLE_EQ(t.f, 0.5);
}

TEST(Eval, AggregateAveragesPerSequence) {
  const auto r = aggregate({{"a", 1.0, 0.5}, {"b", 0.0, 0.25}, {"c", 0.5, 0.0}});
  EXPECT_DOUBLE_EQ(r.j_mean, 0.5);
  EXPECT_DOUBLE_EQ(r.f_mean, 0.25);
  EXPECT_DOUBLE_EQ(r.jf_mean, 0.375);
  EXPECT_EQ(r.sequences.size(), 3u);
  EXPECT_THROW(aggregate({}), ProtocolError);
}

TEST(Eval, StaticDatasetScoresPerfectly) {
  const ModelConfig cfg = ModelConfig::desk();
  const auto ps = init_parameters<float>(cfg, DecoderKind::transformer, 9);
  DataConfig dc;
  dc.n_videos = 2;
  dc.frames = 6;
  dc.static_scene = true;
  const auto videos = generate_dataset(dc, cfg.image_size);
  const auto r = evaluate_dataset(ps, cfg, videos, PropagationParams::davis());
  EXPECT_DOUBLE_EQ(r.jf_mean, 1.0);
}
