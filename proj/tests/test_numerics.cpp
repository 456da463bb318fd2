#include <adnorm/numerics.hpp>
#include <adnorm/errors.hpp>

#include <gtest/gtest.h>

#include <cmath>
#include <numbers>

using namespace adnorm;
using namespace adnorm::numerics;

TEST(BesselK, HalfIntegerClosedForms) {
  EXPECT_NEAR(bessel_k(0.5, 1.0), std::sqrt(std::numbers::pi / 2.0) * std::exp(-1.0), 1e-14);
  EXPECT_NEAR(bessel_k(1.5, 2.0), std::sqrt(std::numbers::pi / 4.0) * std::exp(-2.0) * 1.5, 1e-14);
  for (double x : {0.01, 0.3, 1.0, 7.5, 40.0}) {
    const double k12 = std::sqrt(std::numbers::pi / (2.0 * x)) * std::exp(-x);
    EXPECT_NEAR(bessel_k(0.5, x) / k12, 1.0, 1e-13) << x;
    EXPECT_NEAR(bessel_k(2.5, x) / (k12 * (1.0 + 3.0 / x + 3.0 / (x * x))), 1.0, 1e-12) << x;
  }
}

TEST(BesselK, IntegerOrderOracle) {
  // Reference value from an independent series + continued-fraction evaluation.
  EXPECT_NEAR(bessel_k(1.0, 1.0), 0.6019072301972346, 1e-12);
}

TEST(BesselK, RelativeAccuracyAcrossRange) {
  // Frozen reference values (scipy.special.kv).
  struct Ref {
    double order, x, value;
  };
  const Ref refs[] = {
      {0.25, 1e-06, 68.107227889734901},        {0.25, 0.7, 0.68057536440105548},
      {0.75, 3.0, 0.037696423405926792},        {1.3, 0.01, 439.84003676339574},
      {2.2, 12.0, 2.670646522653897e-06},       {3.7, 0.5, 344.19834208704435},
      {5.0, 50.0, 4.3671822541009859e-23},      {4.1, 0.001, 116548663910169.06},
  };
  for (const Ref& r : refs) EXPECT_LE(std::abs(bessel_k(r.order, r.x) / r.value - 1.0), 1e-10) << r.order << " " << r.x;
}

TEST(BesselK, RecurrenceHolds) {
  // K_{v+1}(x) = K_{v-1}(x) + (2v/x) K_v(x)
  for (double v : {1.3, 1.7, 2.0, 2.2, 3.4}) {
    for (double x : {0.05, 0.5, 1.3, 4.0, 12.0, 60.0}) {
      const double lhs = bessel_k(v + 1.0, x);
      const double rhs = bessel_k(v - 1.0, x) + 2.0 * v / x * bessel_k(v, x);
      EXPECT_LE(std::abs(lhs - rhs) / std::abs(lhs), 1e-8) << v << " " << x;
    }
  }
}

TEST(BesselK, DecreasingInX) {
  double prev = bessel_k(1.2, 0.1);
  for (double x = 0.2; x < 20.0; x += 0.37) {
    const double k = bessel_k(1.2, x);
    EXPECT_LT(k, prev);
    prev = k;
  }
}

TEST(BesselK, RejectsNonPositiveArgument) {
  EXPECT_THROW(bessel_k(1.0, 0.0), DomainError);
  EXPECT_THROW(bessel_k(1.0, -1.0), DomainError);
  EXPECT_THROW(bessel_k(0.0, 1.0), DomainError);
  EXPECT_THROW(bessel_k(1.0, 1e-305), OverflowError);
}

TEST(Normal, CdfValues) {
  EXPECT_DOUBLE_EQ(std_normal_cdf(0.0), 0.5);
  EXPECT_NEAR(std_normal_cdf(40.0), 1.0, 1e-15);
  EXPECT_NEAR(std_normal_cdf(1.959964), 0.975, 1e-6);
  for (double z : {-3.0, -1.1, 0.4, 2.7}) EXPECT_NEAR(std_normal_cdf(z) + std_normal_cdf(-z), 1.0, 1e-15);
}

TEST(Normal, QuantileInvertsCdf) {
  EXPECT_DOUBLE_EQ(quantile(QuantileRequest::normal(0.5)), 0.0);
  EXPECT_NEAR(quantile(QuantileRequest::normal(0.975)), 1.959964, 1e-6);
  for (double p : {1e-10, 0.001, 0.2, 0.5, 0.77, 0.999}) EXPECT_NEAR(std_normal_cdf(std_normal_quantile(p)), p, 1e-12 + 1e-9 * p);
}

TEST(Normal, PdfIntegratesToCdf) {
  // Simpson's rule on [-8, 1.3].
  const int n = 2000;
  const double a = -8.0, b = 1.3, h = (b - a) / n;
  double s = std_normal_pdf(a) + std_normal_pdf(b);
  for (int i = 1; i < n; ++i) s += (i % 2 ? 4.0 : 2.0) * std_normal_pdf(a + i * h);
  EXPECT_NEAR(s * h / 3.0, std_normal_cdf(b), 1e-10);
}

TEST(ChiSquared, QuantileMatchesClosedFormForTwoDf) {
  const double q = quantile(QuantileRequest::chi_squared(2, 0.95));
  EXPECT_NEAR(q, -2.0 * std::log(0.05), 1e-9);
  EXPECT_NEAR(q, 5.991465, 1e-6);
}

TEST(ChiSquared, CdfMatchesClosedFormForTwoDf) {
  for (double x : {0.1, 1.0, 3.3, 9.0}) EXPECT_NEAR(chi_squared_cdf(x, 2), 1.0 - std::exp(-x / 2.0), 1e-14);
  EXPECT_EQ(chi_squared_cdf(0.0, 3), 0.0);
}

TEST(ChiSquared, RejectsBadRequests) {
  EXPECT_THROW(quantile(QuantileRequest::chi_squared(0, 0.5)), DomainError);
  EXPECT_THROW(quantile(QuantileRequest::chi_squared(2, 1.0)), DomainError);
  EXPECT_THROW(quantile(QuantileRequest::normal(0.0)), DomainError);
}

TEST(Gamma, RegularizedPKnownValues) {
  EXPECT_NEAR(regularized_gamma_p(1.0, 2.0), 1.0 - std::exp(-2.0), 1e-14);
  EXPECT_NEAR(regularized_gamma_p(0.5, 0.5), std::erf(std::sqrt(0.5)), 1e-14);
  EXPECT_NEAR(regularized_gamma_p(3.0, 40.0), 1.0, 1e-14);
}
