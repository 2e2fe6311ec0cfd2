#include <gtest/gtest.h>

#include <cstdlib>

#include "gammaglm/data.hpp"
#include "gammaglm/init_select.hpp"
#include "gammaglm/mm.hpp"

using namespace gammaglm;

namespace {

Fitter mm_fitter(double gamma) {
  return [gamma](const Dataset& train, double lambda, std::uint64_t) {
    MmOptions o;
    o.max_iter = 300;
    return mm_coordinate_descent(train, gamma, lambda, *ml_fit(train), o).theta;
  };
}

}  // namespace

TEST(MlFit, RecoversNoiselessLine) {
  RowMatrix X(20, 1);
  Vector y(20);
  for (Eigen::Index i = 0; i < 20; ++i) {
    X(i, 0) = static_cast<double>(i) - 7.0;
    y[i] = 2.0 * X(i, 0);
  }
  const auto fit = ml_fit(Dataset(Family::Linear, X, y));
  ASSERT_TRUE(fit);
  EXPECT_NEAR(fit->beta0, 0.0, 1e-12);
  EXPECT_NEAR(fit->beta[0], 2.0, 1e-12);
}

TEST(Ransac, NoiselessLineWithOutliers) {
  RowMatrix X(40, 1);
  Vector y(40);
  for (Eigen::Index i = 0; i < 40; ++i) {
    X(i, 0) = 0.1 * static_cast<double>(i) + 0.01 * static_cast<double>(i * i % 7);
    y[i] = 2.0 * X(i, 0) + (i % 10 == 3 ? 50.0 : 0.0);
  }
  RansacConfig c;
  c.seed = 1;
  c.inlier_threshold = 1e-6;
  const auto r = ransac_init(Dataset(Family::Linear, X, y), c);
  EXPECT_NEAR(r.theta.beta0, 0.0, 1e-9);
  EXPECT_NEAR(r.theta.beta[0], 2.0, 1e-9);
  EXPECT_EQ(r.inliers, 36u);
}

TEST(Ransac, Deterministic) {
  const auto sim = simulate_linear({200, 12, 0.1, 2, Family::Linear});
  RansacConfig c;
  c.seed = 9;
  c.noise_scale = 0.1;
  const auto a = ransac_init(sim.data, c), b = ransac_init(sim.data, c);
  EXPECT_EQ(a.theta, b.theta);
  EXPECT_EQ(a.inliers, b.inliers);
}

TEST(Ransac, SigmaNearTruthUnderContamination) {
  const auto sim = simulate_linear({200, 12, 0.2, 3, Family::Linear});
  RansacConfig c;
  c.seed = 3;
  const auto r = ransac_init(sim.data, c);
  EXPECT_NEAR(*r.theta.sigma2, 0.25, 0.1);
  EXPECT_LT((r.theta.beta - sim.truth.beta).lpNorm<Eigen::Infinity>(), 0.5);
}

TEST(Rocv, TieGoesToSmallerLambda) {
  const auto sim = simulate_linear({60, 12, 0.0, 4, Family::Linear});
  const Fitter constant = [&](const Dataset&, double, std::uint64_t) { return sim.truth; };
  const double grid[] = {0.3, 0.1, 0.2};
  const auto r = rocv_select(sim.data, grid, 0.1, 5, constant, 1);
  EXPECT_EQ(r.lambda_star, 0.1);
  EXPECT_EQ(r.best_index, 1u);
}

TEST(Rocv, SingleGridValue) {
  const auto sim = simulate_linear({60, 12, 0.0, 5, Family::Linear});
  const double grid[] = {0.05};
  const auto r = rocv_select(sim.data, grid, 0.1, 3, mm_fitter(0.1), 1);
  EXPECT_EQ(r.lambda_star, 0.05);
  EXPECT_EQ(r.scores.size(), 1u);
  EXPECT_TRUE(std::isfinite(r.scores[0]));
}

TEST(Rocv, LeaveOneOutIgnoresRowOrder) {
  const auto sim = simulate_linear({30, 12, 0.1, 6, Family::Linear});
  std::vector<std::size_t> rev(sim.data.size());
  for (std::size_t i = 0; i < rev.size(); ++i) rev[i] = rev.size() - 1 - i;
  const auto shuffled = sim.data.subset(rev);
  const double grid[] = {1e-3, 1e-2, 1e-1};
  const auto a = rocv_select(sim.data, grid, 0.1, 30, mm_fitter(0.1), 1);
  const auto b = rocv_select(shuffled, grid, 0.1, 30, mm_fitter(0.1), 2);
  EXPECT_EQ(a.best_index, b.best_index);
  for (std::size_t g = 0; g < 3; ++g) EXPECT_NEAR(a.scores[g], b.scores[g], 1e-10);
}

TEST(Rocv, FailedFoldScoresInfinity) {
  const auto sim = simulate_linear({40, 12, 0.0, 7, Family::Linear});
  const Fitter flaky = [&](const Dataset&, double lambda, std::uint64_t) -> Theta {
    if (lambda > 0.5) throw NumericalError("diverged");
    return sim.truth;
  };
  const double grid[] = {0.1, 1.0};
  const auto r = rocv_select(sim.data, grid, 0.1, 4, flaky, 1);
  EXPECT_TRUE(std::isinf(r.scores[1]));
  EXPECT_EQ(r.lambda_star, 0.1);
  EXPECT_FALSE(r.warnings.empty());
}

TEST(Rocv, ThreadCountDoesNotChangeResult) {
  const auto sim = simulate_linear({80, 12, 0.1, 8, Family::Linear});
  const double grid[] = {1e-3, 1e-2, 1e-1};
  const auto a = rocv_select(sim.data, grid, 0.1, 4, mm_fitter(0.1), 3, 1);
  const auto b = rocv_select(sim.data, grid, 0.1, 4, mm_fitter(0.1), 3, 4);
  EXPECT_EQ(a.scores, b.scores);
}

TEST(Rocv, ThreadCountFromEnvironment) {
  ::setenv("GAMMAGLM_THREADS", "3", 1);
  EXPECT_EQ(thread_count(), 3u);
  ::setenv("GAMMAGLM_THREADS", "junk", 1);
  EXPECT_EQ(thread_count(), 1u);
  ::unsetenv("GAMMAGLM_THREADS");
  EXPECT_EQ(thread_count(), 1u);
}

TEST(Rocv, InvalidArguments) {
  const auto sim = simulate_linear({20, 12, 0.0, 9, Family::Linear});
  const double grid[] = {0.1};
  EXPECT_THROW(rocv_select(sim.data, std::span<const double>{}, 0.1, 2, mm_fitter(0.1), 1), ConfigError);
  EXPECT_THROW(rocv_select(sim.data, grid, 0.1, 1, mm_fitter(0.1), 1), ConfigError);
  EXPECT_THROW(rocv_select(sim.data, grid, 0.1, 21, mm_fitter(0.1), 1), ConfigError);
  EXPECT_THROW(rocv_select(sim.data, grid, 0.0, 2, mm_fitter(0.1), 1), ConfigError);
}

TEST(Pipeline, OptimizerNamesRoundTrip) {
  for (auto o : {Optimizer::Rspg, Optimizer::TwoPhaseRspg, Optimizer::Sgd, Optimizer::Mm})
    EXPECT_EQ(optimizer_from_string(to_string(o)), o);
  EXPECT_THROW(optimizer_from_string("adam"), ConfigError);
}
