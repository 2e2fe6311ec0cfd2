#include <gtest/gtest.h>

#include <cmath>

#include "gammaglm/poisson_series.hpp"
#include "oracles.hpp"

using namespace gammaglm;

TEST(PoissonSeries, ZeroMeanIsPointMass) {
  EXPECT_EQ(power_normalizer(0.0, 0.7), 1.0);
  EXPECT_EQ(weighted_sum(0.0, 0.0, 0.7), 0.0);
}

TEST(PoissonSeries, GammaZeroSumsThePmf) {
  for (double mu : {0.01, 0.5, 1.0, 7.0, 42.0, 300.0}) EXPECT_NEAR(power_normalizer(mu, 0.0), 1.0, 1e-12) << mu;
}

TEST(PoissonSeries, BesselIdentity) {
  // sum_y e^{-2} / (y!)^2 = e^{-2} I0(2); I0(2) = 2.2795853023360673...
  const double s = power_normalizer(1.0, 1.0);
  EXPECT_NEAR(s, static_cast<double>(oracle::poisson_sum(1.0L, 1.0L, 200)), 1e-12);
  EXPECT_NEAR(s, std::exp(-2.0) * std::cyl_bessel_i(0.0, 2.0), 1e-12);
  EXPECT_NEAR(s, 0.3085083, 1e-7);
}

TEST(PoissonSeries, WeightedSumIsMeanShiftAtGammaZero) {
  for (double mu : {0.2, 1.0, 3.5, 10.0, 80.0})
    for (double y : {0.0, 1.0, 4.0, 13.0}) EXPECT_NEAR(weighted_sum(mu, y, 0.0), mu - y, 1e-12) << mu << ' ' << y;
}

TEST(PoissonSeries, WeightedSumAgainstPartialSumOracle) {
  const long double ref = oracle::poisson_sum(2.0L, 0.3L, 500, [](int y) { return y - 5.0L; });
  EXPECT_NEAR(weighted_sum(2.0, 5.0, 0.3), static_cast<double>(ref), 1e-10);
}

TEST(PoissonSeries, NormalizerDecreasesInGamma) {
  for (double mu : {0.3, 2.0, 15.0}) {
    double prev = power_normalizer(mu, 0.0);
    for (double g : {0.05, 0.1, 0.5, 1.0, 2.0}) {
      const double s = power_normalizer(mu, g);
      EXPECT_LT(s, prev);
      EXPECT_GT(s, 0.0);
      EXPECT_LE(s, 1.0);
      prev = s;
    }
  }
}

TEST(PoissonSeries, RelativeErrorWithinTolerance) {
  for (double mu : {0.4, 3.0, 25.0})
    for (double g : {0.1, 0.9}) {
      const double ref = static_cast<double>(oracle::poisson_sum(mu, g, 400));
      EXPECT_LE(std::abs(power_normalizer(mu, g) - ref), 1e-12 * ref) << mu << ' ' << g;
    }
}

TEST(PoissonSeries, FinalRatioBelowHalfPastTwiceMean) {
  for (double mu : {0.5, 1.0, 2.0, 5.0, 10.0, 50.0}) {
    const auto m = poisson_moments(mu, 0.2);
    if (static_cast<double>(m.last_index) > 2.0 * mu) {
      EXPECT_LT(m.last_ratio, 0.5) << mu;
    }
    EXPECT_GT(static_cast<double>(m.last_index), mu);
  }
}

TEST(PoissonSeries, DoublingMaxTermsIsStable) {
  for (double mu : {0.7, 9.0, 120.0}) {
    const SeriesTolerance a{1e-12, 10000}, b{1e-12, 20000};
    const double s1 = power_normalizer(mu, 0.4, a), s2 = power_normalizer(mu, 0.4, b);
    EXPECT_LE(std::abs(s1 - s2), 1e-12 * s1);
    EXPECT_EQ(weighted_sum(mu, 3.0, 0.4, a), weighted_sum(mu, 3.0, 0.4, b));
  }
}

TEST(PoissonSeries, TruncationErrorCarriesArguments) {
  try {
    power_normalizer(5000.0, 0.1, SeriesTolerance{1e-12, 10});
    FAIL() << "expected truncation error";
  } catch (const TruncationError& e) {
    EXPECT_EQ(e.mu(), 5000.0);
    EXPECT_EQ(e.gamma(), 0.1);
  }
}

TEST(PoissonSeries, RejectsBadInput) {
  EXPECT_THROW(power_normalizer(-1.0, 0.1), ConfigError);
  EXPECT_THROW(power_normalizer(1.0, -0.1), ConfigError);
  EXPECT_THROW(power_normalizer(1.0, 0.1, SeriesTolerance{0.0, 100}), ConfigError);
  EXPECT_THROW(power_normalizer(1.0, 0.1, SeriesTolerance{1e-12, 5}), ConfigError);
  EXPECT_THROW(weighted_sum(1.0, -2.0, 0.1), ConfigError);
}
