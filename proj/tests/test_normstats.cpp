#include <adnorm/normstats.hpp>
#include <adnorm/numerics.hpp>
#include <adnorm/rng.hpp>

#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <random>

using namespace adnorm;
using namespace adnorm::normstats;

namespace {

std::vector<double> normals(std::size_t n, std::uint64_t seed) {
  Rng rng = make_rng(seed);
  std::normal_distribution<double> d;
  std::vector<double> v(n);
  for (double& x : v) x = d(rng);
  return v;
}

}  // namespace

TEST(Moments, SkewnessKurtosisOracles) {
  EXPECT_NEAR(skewness_kurtosis(std::vector<double>{-1, 0, 1}).skewness, 0.0, 1e-15);
  EXPECT_NEAR(skewness_kurtosis(std::vector<double>{-1, 1, -1, 1}).kurtosis, 1.0, 1e-15);
  const SkewKurt sk = skewness_kurtosis(std::vector<double>{0, 0, 0, 1});
  // m2 = 3/16, m3 = 3/32, m4 = 21/256.
  EXPECT_NEAR(sk.skewness, (3.0 / 32.0) / std::pow(3.0 / 16.0, 1.5), 1e-14);
  EXPECT_NEAR(sk.skewness, 1.1547005383792515, 1e-12);
  EXPECT_NEAR(sk.kurtosis, (21.0 / 256.0) / (9.0 / 256.0), 1e-14);
}

TEST(JarqueBera, Oracles) {
  EXPECT_NEAR(jarque_bera(std::vector<double>{-1, 1, -1, 1}), 2.0 / 3.0, 1e-14);
  const SkewKurt sk = skewness_kurtosis(std::vector<double>{0, 0, 0, 1});
  EXPECT_NEAR(jarque_bera(std::vector<double>{0, 0, 0, 1}),
              4.0 / 6.0 * (sk.skewness * sk.skewness + 0.25 * (sk.kurtosis - 3) * (sk.kurtosis - 3)), 1e-14);
  EXPECT_DOUBLE_EQ(jarque_bera_from(100, {0.0, 3.0}), 0.0);
}

TEST(Lilliefors, TwoPointOracle) {
  // z = ±1/√2, Φ(0.7071) = 0.76025.
  EXPECT_NEAR(lilliefors(std::vector<double>{1, 2}), numerics::std_normal_cdf(std::sqrt(0.5)) - 0.5, 1e-14);
  EXPECT_NEAR(lilliefors(std::vector<double>{1, 2}), 0.26025, 1e-5);
}

TEST(Lilliefors, GaussianQuantileSampleIsClose) {
  std::vector<double> z(100);
  for (std::size_t i = 0; i < z.size(); ++i) z[i] = numerics::std_normal_quantile((i + 0.5) / 100.0);
  EXPECT_LE(lilliefors(z), 0.01);
}

TEST(AndersonDarling, TwoPointOracle) {
  EXPECT_NEAR(anderson_darling(std::vector<double>{-1, 1}), 0.2504824087501869, 1e-12);
}

TEST(AndersonDarling, MatchesIntegralForm) {
  // A² = n ∫ (F_n(u) − u)² / (u(1−u)) du with u = Φ(z); Simpson per segment.
  std::vector<double> x(20);
  for (int i = 0; i < 20; ++i) x[static_cast<std::size_t>(i)] = std::sin(1.7 * i) + 0.05 * i * i;
  const double n = 20.0;
  double mean = 0.0;
  for (double v : x) mean += v;
  mean /= n;
  double ss = 0.0;
  for (double v : x) ss += (v - mean) * (v - mean);
  const double sd = std::sqrt(ss / (n - 1.0));
  std::vector<double> u;
  for (double v : x) u.push_back(numerics::std_normal_cdf((v - mean) / sd));
  std::sort(u.begin(), u.end());
  std::vector<double> knots{0.0};
  knots.insert(knots.end(), u.begin(), u.end());
  knots.push_back(1.0);
  double integral = 0.0;
  for (std::size_t s = 0; s + 1 < knots.size(); ++s) {
    const double c = static_cast<double>(s) / n;
    const double a = knots[s], b = knots[s + 1];
    const auto g = [&](double t) {
      if (t <= 0.0) return c == 0.0 ? 0.0 : std::numeric_limits<double>::infinity();
      if (t >= 1.0) return c == 1.0 ? 0.0 : std::numeric_limits<double>::infinity();
      return (c - t) * (c - t) / (t * (1.0 - t));
    };
    const int m = 400;
    const double h = (b - a) / m;
    double acc = g(a) + g(b);
    for (int k = 1; k < m; ++k) acc += (k % 2 ? 4.0 : 2.0) * g(a + k * h);
    integral += acc * h / 3.0;
  }
  EXPECT_NEAR(anderson_darling(x), n * integral, 1e-3);
}

TEST(ShapiroWilk, FrozenReferenceValues) {
  // Reference: scipy.stats.shapiro (same Royston approximation).
  std::vector<double> lin(50);
  for (int i = 0; i < 50; ++i) lin[static_cast<std::size_t>(i)] = i + 1.0;
  EXPECT_NEAR(*shapiro_wilk(lin), 0.9555826875589973, 1e-8);
  EXPECT_GT(*shapiro_wilk(lin), 0.9);

  std::vector<double> a(20);
  for (int i = 1; i <= 20; ++i) a[static_cast<std::size_t>(i - 1)] = std::sin(i) + i / 10.0;
  EXPECT_NEAR(*shapiro_wilk(a), 0.9862422044637839, 1e-8);

  std::vector<double> b(100);
  for (int i = 1; i <= 100; ++i) b[static_cast<std::size_t>(i - 1)] = std::exp(std::cos(3.0 * i));
  EXPECT_NEAR(*shapiro_wilk(b), 0.8665693264606045, 1e-8);

  std::vector<double> c(4000);
  for (int i = 1; i <= 4000; ++i) c[static_cast<std::size_t>(i - 1)] = ((i * 7919) % 101) / 101.0;
  EXPECT_NEAR(*shapiro_wilk(c), 0.9546223356710366, 1e-7);
}

TEST(ShapiroWilk, OrderInvariantAndSizeBound) {
  std::vector<double> x = normals(200, 5);
  const double w = *shapiro_wilk(x);
  std::reverse(x.begin(), x.end());
  std::rotate(x.begin(), x.begin() + 37, x.end());
  EXPECT_DOUBLE_EQ(*shapiro_wilk(x), w);
  EXPECT_FALSE(shapiro_wilk(normals(6000, 1)).has_value());
  EXPECT_TRUE(shapiro_wilk(normals(5000, 1)).has_value());
}

TEST(Statistics, LocationScaleInvariance) {
  const std::vector<double> x = normals(300, 11);
  std::vector<double> y(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) y[i] = 3.7 * x[i] - 12.0;
  EXPECT_NEAR(lilliefors(x), lilliefors(y), 1e-12);
  EXPECT_NEAR(anderson_darling(x), anderson_darling(y), 1e-10);
  EXPECT_NEAR(*shapiro_wilk(x), *shapiro_wilk(y), 1e-12);
  EXPECT_NEAR(jarque_bera(x), jarque_bera(y), 1e-9);
}

TEST(Features, ShapeAndOrder) {
  const FeatureVector f = features(normals(3600, 2));
  EXPECT_EQ(f.m(), 6u);
  EXPECT_TRUE(f.shapiro_wilk.has_value());
  const auto v = f.as_vector();
  ASSERT_EQ(v.size(), 6u);
  EXPECT_EQ(v[0], *f.shapiro_wilk);
  EXPECT_EQ(v[1], f.lilliefors);
  EXPECT_EQ(v[2], f.anderson_darling);
  EXPECT_EQ(v[3], f.jarque_bera);
  EXPECT_EQ(v[4], f.skewness);
  EXPECT_EQ(v[5], f.kurtosis);
  EXPECT_EQ(FeatureVector::names(6).front(), "shapiro_wilk");

  const FeatureVector big = features(normals(8192, 3));
  EXPECT_EQ(big.m(), 5u);
  EXPECT_FALSE(big.shapiro_wilk.has_value());
}

TEST(Features, DegenerateInputs) {
  EXPECT_THROW(features(std::vector<double>(50, 2.0)), ZeroVarianceError);
  EXPECT_THROW(features(std::vector<double>{1, 2, 3}), DomainError);
}

TEST(CriticalValues, JarqueBeraNearAsymptote) {
  const CriticalValues cv = classical_critical_values(3600, 0.05, 1000, 17);
  EXPECT_GE(cv.value.at(ClassicalTest::jarque_bera), 4.5);
  EXPECT_LE(cv.value.at(ClassicalTest::jarque_bera), 7.5);
}

TEST(CriticalValues, CalibratedOnFreshNullData) {
  const std::size_t M = 30;
  const double alpha = 0.05;
  const CriticalValues cv = classical_critical_values(M, alpha, 50000, 23);
  const std::size_t n_test = 2000;
  std::map<ClassicalTest, int> rejections;
  for (std::size_t r = 0; r < n_test; ++r) {
    const FeatureVector f = features(normals(M, 1000000 + r));
    for (ClassicalTest t : kClassicalTests) rejections[t] += *cv.reject(t, f) ? 1 : 0;
  }
  const double band = 2.0 * std::sqrt(alpha * (1.0 - alpha) / n_test);
  for (ClassicalTest t : kClassicalTests)
    EXPECT_NEAR(rejections[t] / static_cast<double>(n_test), alpha, band) << to_string(t);
}

TEST(CriticalValues, ShapiroWilkRejectsLow) {
  EXPECT_TRUE(rejects_low(ClassicalTest::shapiro_wilk));
  const CriticalValues cv = classical_critical_values(50, 0.05, 1000, 3);
  FeatureVector f;
  f.shapiro_wilk = cv.value.at(ClassicalTest::shapiro_wilk) - 1e-6;
  EXPECT_TRUE(*cv.reject(ClassicalTest::shapiro_wilk, f));
  f.shapiro_wilk = 0.999999;
  EXPECT_FALSE(*cv.reject(ClassicalTest::shapiro_wilk, f));
}

TEST(CriticalValues, CacheRoundTrip) {
  const auto path = std::filesystem::temp_directory_path() / "adnorm_cv_cache_test.csv";
  std::filesystem::remove(path);
  const CriticalValues a = classical_critical_values(40, 0.05, 1000, 9, path);
  ASSERT_TRUE(std::filesystem::exists(path));
  const CriticalValues b = classical_critical_values(40, 0.05, 1000, 9, path);
  EXPECT_EQ(a.value, b.value);
  std::filesystem::remove(path);
}
