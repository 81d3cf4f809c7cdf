#include "hmd/explain.hpp"

#include <gtest/gtest.h>

#include <sstream>

#include "support.hpp"

namespace hmd::explain {
namespace {

TEST(FeatureStatsTest, PopulationMoments) {
  RealMatrix x(4, 2, {1, 5, 2, 5, 3, 5, 4, 5});
  auto st = feature_stats(x);
  EXPECT_DOUBLE_EQ(st.mean[0], 2.5);
  EXPECT_DOUBLE_EQ(st.stddev[0], std::sqrt(1.25));
  EXPECT_EQ(st.stddev[1], 0.0);
  EXPECT_THROW(feature_stats(RealMatrix(0, 2)), DataError);
}

TEST(PerturbTest, FirstRowIsInstanceAndConstantsStayFixed) {
  FeatureStats st{{0, 0, 0}, {1, 0, 2}};
  std::vector<double> inst{0.5, 7.0, -1.0};
  Rng rng(3);
  auto p = perturb(inst, 50, st, 1.0, rng);
  EXPECT_EQ(p.samples.row(0)[0], 0.5);
  EXPECT_EQ(p.weights[0], 1.0);
  for (std::size_t i = 0; i < 50; ++i) {
    EXPECT_EQ(p.samples(i, 1), 7.0);
    EXPECT_GT(p.weights[i], 0.0);
    EXPECT_LE(p.weights[i], 1.0);
    const double z0 = p.samples(i, 0) - 0.5, z2 = (p.samples(i, 2) + 1.0) / 2.0;
    EXPECT_NEAR(p.weights[i], std::exp(-(z0 * z0 + z2 * z2)), 1e-12);
  }
}

TEST(PerturbTest, RejectsBadArguments) {
  FeatureStats st{{0}, {1}};
  Rng rng(1);
  std::vector<double> inst{0.0};
  EXPECT_THROW(perturb(inst, 0, st, 1.0, rng), DataError);
  EXPECT_THROW(perturb(inst, 5, st, 0.0, rng), DataError);
  std::vector<double> wrong{0.0, 1.0};
  EXPECT_THROW(perturb(wrong, 5, st, 1.0, rng), DataError);
}

TEST(WeightedRidgeTest, MatchesOracleSmallDimensions) {
  for (std::size_t d = 1; d <= 10; ++d) {
    auto z = testing::random_matrix(40, d, d);
    std::mt19937_64 rng(100 + d);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    std::vector<double> y(40), w(40);
    for (std::size_t i = 0; i < 40; ++i) {
      y[i] = u(rng) * 3 - 1;
      w[i] = 0.05 + u(rng);
    }
    for (double ridge : {1e-3, 0.5}) {
      auto [beta, b] = weighted_ridge(z, y, w, ridge);
      auto ref = testing::ridge_oracle(z, y, w, ridge);
      EXPECT_NEAR(b, ref[0], 1e-8) << d;
      for (std::size_t j = 0; j < d; ++j) EXPECT_NEAR(beta[j], ref[j + 1], 1e-8) << d << ' ' << j;
    }
  }
}

TEST(WeightedRidgeTest, ZeroWeightsRejected) {
  RealMatrix z(2, 1, {0, 1});
  std::vector<double> y{0, 1}, w{0, 0};
  EXPECT_THROW(weighted_ridge(z, y, w, 1e-3), DataError);
}

TEST(LocalWeightsTest, LinearFunctionRecoversSlope) {
  // f = 3 x1 on standardized inputs gives slope 3 * stddev_1 on x1 only.
  auto x = testing::random_matrix(200, 4, 9);
  auto st = feature_stats(x);
  ScoreFunction f = [](std::span<const double> v) { return 3.0 * v[1]; };
  ExplainConfig cfg;
  cfg.seed = 4;
  auto e = local_weights(f, x.row(0), st, cfg, "row0");
  EXPECT_EQ(e.id, "row0");
  EXPECT_EQ(e.n_samples, 1000u);
  EXPECT_DOUBLE_EQ(e.sigma, default_sigma(4));
  EXPECT_NEAR(e.weights[1], 3.0 * st.stddev[1], 1e-4);
  for (std::size_t j : {0u, 2u, 3u}) EXPECT_NEAR(e.weights[j], 0.0, 1e-4);
}

TEST(LocalWeightsTest, ConstantColumnGetsZeroWeight) {
  auto x = testing::random_matrix(50, 3, 2);
  for (std::size_t i = 0; i < 50; ++i) x(i, 2) = 1.0;
  auto st = feature_stats(x);
  ScoreFunction f = [](std::span<const double> v) { return v[0] + 10 * v[2]; };
  auto e = local_weights(f, x.row(3), st, ExplainConfig{});
  EXPECT_EQ(e.weights[2], 0.0);
  EXPECT_TRUE(std::isfinite(e.weights[0]));
}

TEST(LocalWeightsTest, DeterministicPerSeed) {
  auto x = testing::random_matrix(30, 5, 1);
  auto st = feature_stats(x);
  ScoreFunction f = [](std::span<const double> v) { return std::sin(v[0]) * v[3]; };
  ExplainConfig cfg;
  cfg.seed = 77;
  EXPECT_EQ(local_weights(f, x.row(2), st, cfg).weights, local_weights(f, x.row(2), st, cfg).weights);
  cfg.ridge = 0;
  EXPECT_THROW(local_weights(f, x.row(2), st, cfg), DataError);
}

TEST(GlobalWeightsTest, AveragesLocalWeights) {
  auto x = testing::random_matrix(30, 3, 5);
  auto st = feature_stats(x);
  ScoreFunction f = [](std::span<const double> v) { return v[0] * v[0] - v[2]; };
  ExplainConfig cfg;
  cfg.n_samples = 200;
  cfg.seed = 8;
  auto g = global_weights(f, x.select_rows(std::vector<std::size_t>{0, 1, 2}), st, cfg);
  EXPECT_EQ(g.instances, 3u);
  std::vector<double> mean(3, 0.0);
  for (std::size_t i = 0; i < 3; ++i) {
    auto c = cfg;
    c.seed = derive_seed(8, i);
    auto l = local_weights(f, x.row(i), st, c);
    for (std::size_t j = 0; j < 3; ++j) mean[j] += l.weights[j] / 3.0;
  }
  for (std::size_t j = 0; j < 3; ++j) EXPECT_NEAR(g.weights[j], mean[j], 1e-15);
  EXPECT_THROW(global_weights(f, RealMatrix(0, 3), st, cfg), DataError);
}

TEST(GlobalWeightsTest, DuplicateColumnsShareWeight) {
  auto x = testing::random_matrix(40, 3, 6);
  for (std::size_t i = 0; i < 40; ++i) x(i, 2) = x(i, 0);
  auto st = feature_stats(x);
  ScoreFunction f = [](std::span<const double> v) { return v[0] + v[2]; };
  ExplainConfig cfg;
  cfg.n_samples = 300;
  auto g = global_weights(f, x.select_rows(std::vector<std::size_t>{0, 1}), st, cfg);
  // Perturbations are independent per column, so each copy is identifiable.
  EXPECT_NEAR(g.weights[0], g.weights[2], 1e-3);
  EXPECT_NEAR(g.weights[1], 0.0, 1e-6);
}

TEST(SelectTopKTest, OrderAndTies) {
  std::vector<double> w{0.1, -0.9, 0.5, 0.5, 0.0};
  EXPECT_EQ(select_top_k(w, 3), (std::vector<std::size_t>{2, 3, 0}));
  EXPECT_EQ(select_top_k(w, 2, true), (std::vector<std::size_t>{1, 2}));
  EXPECT_EQ(select_top_k(w, 5).size(), 5u);
  EXPECT_THROW(select_top_k(w, 0), DataError);
  EXPECT_THROW(select_top_k(w, 6), DataError);
}

TEST(SelectTopKTest, DefaultKeepsFortyEight) {
  std::vector<double> w(64);
  for (std::size_t i = 0; i < 64; ++i) w[i] = double(i);
  auto top = select_top_k(w);
  ASSERT_EQ(top.size(), 48u);
  EXPECT_EQ(top.front(), 63u);
  EXPECT_EQ(top.back(), 16u);
}

TEST(ExplainIoTest, WeightsRoundTrip) {
  GlobalWeights g{{0.25, -1.0 / 3.0, 1e-300}, 4};
  std::stringstream ss;
  write_global_weights(ss, g);
  auto back = read_global_weights(ss);
  EXPECT_EQ(back.weights, g.weights);
}

TEST(ExplainIoTest, MalformedWeights) {
  std::stringstream a("feature\tweight\n0\t1\n2\t3\n");
  EXPECT_THROW(read_global_weights(a), ParseError);
  std::stringstream b("feature\tweight\n0\tx\n");
  EXPECT_THROW(read_global_weights(b), ParseError);
}

TEST(ExplainIoTest, IndicesRoundTripAndDuplicates) {
  std::vector<std::size_t> idx{5, 0, 17};
  std::stringstream ss;
  write_indices(ss, idx);
  EXPECT_EQ(read_indices(ss), idx);
  std::stringstream dup("1\n2\n1\n");
  EXPECT_THROW(read_indices(dup), DataError);
  std::stringstream bad("1\nx\n");
  EXPECT_THROW(read_indices(bad), ParseError);
}

}  // namespace
}  // namespace hmd::explain
