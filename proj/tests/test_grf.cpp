#include <adnorm/grf.hpp>
#include <adnorm/numerics.hpp>

#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <numbers>

using namespace adnorm;
using namespace adnorm::grf;

TEST(Matern, ExponentialCaseIsClosedForm) {
  const MaternParams p{1.0, 0.2, 0.5};
  EXPECT_DOUBLE_EQ(matern_cov(p, 0.0), 1.0);
  EXPECT_NEAR(matern_cov(p, 0.2), std::exp(-1.0), 1e-12);
  for (double d : {0.01, 0.13, 0.5, 1.4}) EXPECT_NEAR(matern_cov({2.5, 0.3, 0.5}, d), 2.5 * std::exp(-d / 0.3), 1e-12);
}

TEST(Matern, NuOneMatchesBessel) {
  EXPECT_NEAR(matern_cov({1.0, 1.0, 1.0}, 1.0), numerics::bessel_k(1.0, 1.0), 1e-12);
  EXPECT_NEAR(matern_cov({1.0, 1.0, 1.0}, 1.0), 0.6019072, 1e-7);
}

TEST(Matern, GeneralNuUsesFullFormula) {
  for (double nu : {0.7, 1.5, 2.3}) {
    const double t = 0.4 / 0.25;
    const double expect = std::pow(2.0, 1.0 - nu) / std::tgamma(nu) * std::pow(t, nu) * numerics::bessel_k(nu, t);
    EXPECT_NEAR(matern_corr(0.25, nu, 0.4), expect, 1e-12) << nu;
  }
}

TEST(Matern, ZeroRangeIsIndependence) {
  EXPECT_EQ(matern_cov({1.0, 0.0, 0.5}, 0.0), 1.0);
  EXPECT_EQ(matern_cov({1.0, 0.0, 0.5}, 0.1), 0.0);
}

TEST(Matern, DecreasingAndBoundedBySill) {
  for (double nu : {0.5, 1.0, 2.5}) {
    double prev = 1.0;
    for (double d = 0.01; d < 3.0; d += 0.05) {
      const double c = matern_corr(0.3, nu, d);
      EXPECT_LE(c, prev + 1e-15);
      EXPECT_GE(c, 0.0);
      prev = c;
    }
  }
}

TEST(Matern, BatchedMatchesScalarBitwise) {
  std::vector<double> d{0.0, 1e-9, 0.05, 0.3, 1.0, 4.0, 300.0};
  for (double nu : {0.5, 0.9, 2.0}) {
    std::vector<double> out(d.size());
    matern_corr_many(d, 0.2, nu, out);
    for (std::size_t k = 0; k < d.size(); ++k) EXPECT_EQ(out[k], matern_corr(0.2, nu, d[k]));
  }
}

TEST(Matern, RejectsInvalidParameters) {
  EXPECT_THROW((MaternParams{0.0, 0.1, 0.5}.validate()), DomainError);
  EXPECT_THROW((MaternParams{1.0, -0.1, 0.5}.validate()), DomainError);
  EXPECT_THROW((MaternParams{1.0, 0.1, 0.0}.validate()), DomainError);
  EXPECT_THROW(matern_cov({1.0, 0.1, 0.5}, -1.0), DomainError);
}

TEST(BetaMax, ExponentialClosedForm) {
  EXPECT_NEAR(beta_max(0.5, 0.7), 0.7 / std::log(20.0), 1e-9);
  EXPECT_NEAR(beta_max(0.5, 0.7), 0.234, 5e-4);
  EXPECT_NEAR(beta_max(0.5, std::log(20.0)), 1.0, 1e-9);
}

TEST(BetaMax, SolvesThresholdForOtherNu) {
  for (double nu : {1.0, 1.5, 3.0}) EXPECT_NEAR(matern_corr(beta_max(nu, 0.7), nu, 0.7), 0.05, 1e-10) << nu;
}

TEST(GridSpec, ParseAndDescribeRoundTrip) {
  for (const char* s : {"30x30", "sphere:32x64"}) EXPECT_EQ(GridSpec::parse(s).describe(), GridSpec::parse(GridSpec::parse(s).describe()).describe());
  EXPECT_EQ(GridSpec::parse("30x30").size(), 900u);
  EXPECT_TRUE(GridSpec::parse("sphere:32x64").is_sphere());
  EXPECT_THROW(GridSpec::parse("banana"), DomainError);
}

TEST(GridSpec, UnitSquareGeometry) {
  const GridSpec g = GridSpec::unit_square(2, 2);
  EXPECT_NEAR(g.max_distance(), std::sqrt(2.0), 1e-15);
  const auto t = g.distance_table();
  EXPECT_DOUBLE_EQ(t.distance(0, 1), 1.0);
  EXPECT_DOUBLE_EQ(t.distance(0, 3), std::sqrt(2.0));
}

TEST(GridSpec, SphereDistancesAreChordal) {
  const GridSpec g = GridSpec::sphere(4, 8);
  const auto t = g.distance_table();
  for (std::size_t i = 0; i < g.size(); i += 5)
    for (std::size_t j = 0; j < g.size(); j += 3) {
      const auto a = g.coordinate(i);
      const auto b = g.coordinate(j);
      const double d = std::hypot(a[0] - b[0], a[1] - b[1], a[2] - b[2]);
      EXPECT_NEAR(t.distance(i, j), d, 1e-9);
    }
  EXPECT_LE(g.max_distance(), 2.0 * kEarthRadiusKm);
}

TEST(GridSpec, AggregationDims) {
  const GridSpec g = GridSpec::sphere(32, 64);
  EXPECT_EQ(g.aggregated(2).size(), 512u);
  EXPECT_EQ(g.aggregated(8).size(), 32u);
  EXPECT_THROW(g.aggregated(3), DomainError);
}

TEST(Covariance, AdjacentEntryOracle) {
  const Eigen::MatrixXd c = cov_matrix(GridSpec::unit_square(2, 2), {1.0, 0.234, 0.5});
  EXPECT_NEAR(c(0, 1), std::exp(-1.0 / 0.234), 1e-12);
  EXPECT_NEAR(c(0, 1), 0.01392, 2e-5);  // reference printed to four digits
  EXPECT_DOUBLE_EQ(c(2, 2), 1.0);
}

TEST(Covariance, ZeroRangeIsIdentity) {
  const Eigen::MatrixXd c = cov_matrix(GridSpec::unit_square(3, 4), {2.0, 0.0, 0.5});
  EXPECT_TRUE(c.isApprox(2.0 * Eigen::MatrixXd::Identity(12, 12)));
}

TEST(Covariance, EntrywiseMatchesScalarKernel) {
  const GridSpec g = GridSpec::unit_square(4, 3);
  const MaternParams p{1.3, 0.4, 1.5};
  const Eigen::MatrixXd c = cov_matrix(g, p);
  const auto t = g.distance_table();
  for (std::size_t i = 0; i < g.size(); ++i)
    for (std::size_t j = 0; j < g.size(); ++j) EXPECT_EQ(c(i, j), matern_cov(p, t.distance(i, j)));
  EXPECT_TRUE(c.isApprox(c.transpose()));
}

TEST(SignedPower, Formula) {
  const std::vector<double> z{0.0, -2.0, 3.0, -0.5};
  const auto y = signed_power(z, 2.0);
  EXPECT_EQ(y[0], 0.0);
  EXPECT_EQ(y[1], -4.0);
  EXPECT_EQ(y[2], 9.0);
  EXPECT_EQ(y[3], -0.25);
  EXPECT_EQ(signed_power(z, 1.0), z);
  EXPECT_THROW(signed_power(z, 0.5), DomainError);
}

TEST(Sampler, DeterministicForSeed) {
  const FieldSampler s(GridSpec::unit_square(5, 5), {1.0, 0.2, 0.5});
  EXPECT_EQ(s.draw(3, 42), s.draw(3, 42));
  EXPECT_NE(s.draw(1, 42)[0], s.draw(1, 43)[0]);
  // Sample k depends only on (seed, k), not on how the batch is split.
  EXPECT_EQ(s.draw(3, 42)[2], s.draw(1, 42, 2)[0]);
}

TEST(Sampler, ZeroRangeGivesStandardNormals) {
  const FieldSampler s(GridSpec::unit_square(10, 10), {1.0, 0.0, 0.5});
  std::vector<double> pooled;
  for (const auto& f : s.draw(100, 7)) pooled.insert(pooled.end(), f.begin(), f.end());
  std::sort(pooled.begin(), pooled.end());
  const double n = static_cast<double>(pooled.size());
  double ks = 0.0;
  for (std::size_t i = 0; i < pooled.size(); ++i) {
    const double F = numerics::std_normal_cdf(pooled[i]);
    ks = std::max({ks, (i + 1) / n - F, F - i / n});
  }
  // Kolmogorov 1% critical value 1.628/sqrt(n).
  EXPECT_LT(ks, 1.628 / std::sqrt(n));
}

TEST(Sampler, EmpiricalCovarianceMatchesModel) {
  const GridSpec g = GridSpec::unit_square(3, 3);
  const MaternParams p{1.0, 0.5, 1.0};
  const FieldSampler s(g, p);
  const auto fields = s.draw(20000, 3);
  const Eigen::MatrixXd c = cov_matrix(g, p);
  for (std::size_t i = 0; i < 9; ++i)
    for (std::size_t j = 0; j <= i; ++j) {
      double acc = 0.0;
      for (const auto& f : fields) acc += f[i] * f[j];
      EXPECT_NEAR(acc / fields.size(), c(i, j), 0.05) << i << "," << j;
    }
}
