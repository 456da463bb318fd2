#pragma once

// Classical normality statistics and their Monte Carlo calibration under
// i.i.d. normal data.

#include <adnorm/errors.hpp>
#include <adnorm/numerics.hpp>
#include <adnorm/rng.hpp>

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <limits>
#include <map>
#include <mutex>
#include <optional>
#include <random>
#include <span>
#include <sstream>
#include <string>
#include <vector>

namespace adnorm::normstats {

/// Largest sample size for which a Shapiro–Wilk value is produced.
inline constexpr std::size_t kShapiroWilkMaxSize = 5000;

struct Moments {
  double mean = 0.0;
  double m2 = 0.0;  // 1/M central moments
  double m3 = 0.0;
  double m4 = 0.0;
};

namespace detail {

inline Moments central_moments(std::span<const double> y, const char* where) {
  const std::size_t n = y.size();
  Moments mo;
  double scale = 0.0;
  for (double v : y) {
    mo.mean += v;
    scale = std::max(scale, std::abs(v));
  }
  mo.mean /= static_cast<double>(n);
  for (double v : y) {
    const double d = v - mo.mean;
    const double d2 = d * d;
    mo.m2 += d2;
    mo.m3 += d2 * d;
    mo.m4 += d2 * d2;
  }
  mo.m2 /= static_cast<double>(n);
  mo.m3 /= static_cast<double>(n);
  mo.m4 /= static_cast<double>(n);
  if (!(mo.m2 > 0.0) || std::sqrt(mo.m2) <= 1e-13 * scale) throw ZeroVarianceError(where);
  return mo;
}

// Sorted z-scores using the sample mean and the (M-1)-denominator sd.
inline std::vector<double> sorted_standardized(std::span<const double> y, const char* where) {
  const Moments mo = central_moments(y, where);
  const double n = static_cast<double>(y.size());
  const double sd = std::sqrt(mo.m2 * n / (n - 1.0));
  std::vector<double> z(y.begin(), y.end());
  std::sort(z.begin(), z.end());
  for (double& v : z) v = (v - mo.mean) / sd;
  return z;
}

inline void require_size(std::span<const double> y, std::size_t min, const char* where) {
  if (y.size() < min) {
    throw DomainError(std::string(where) + ": need at least " + std::to_string(min) + " values");
  }
}

}  // namespace detail

struct SkewKurt {
  double skewness = 0.0;
  double kurtosis = 0.0;
};

/// S = m3 / m2^{3/2}, K = m4 / m2^2 with 1/M central moments.
inline SkewKurt skewness_kurtosis(std::span<const double> values) {
  detail::require_size(values, 3, "skewness_kurtosis");
  const Moments mo = detail::central_moments(values, "skewness_kurtosis");
  return {mo.m3 / std::pow(mo.m2, 1.5), mo.m4 / (mo.m2 * mo.m2)};
}

inline double jarque_bera_from(std::size_t n, const SkewKurt& sk) {
  const double e = sk.kurtosis - 3.0;
  return static_cast<double>(n) / 6.0 * (sk.skewness * sk.skewness + 0.25 * e * e);
}

inline double jarque_bera(std::span<const double> values) {
  return jarque_bera_from(values.size(), skewness_kurtosis(values));
}

/// Kolmogorov–Smirnov distance to the fitted normal (Lilliefors statistic).
/// Accepts M >= 2 so tiny hand-checked cases can be evaluated.
inline double lilliefors(std::span<const double> values) {
  detail::require_size(values, 2, "lilliefors");
  const std::vector<double> z = detail::sorted_standardized(values, "lilliefors");
  const double n = static_cast<double>(z.size());
  double d = 0.0;
  for (std::size_t i = 0; i < z.size(); ++i) {
    const double f = numerics::std_normal_cdf(z[i]);
    d = std::max({d, (i + 1) / n - f, f - i / n});
  }
  return d;
}

/// Anderson–Darling A^2 against the fitted normal.
inline double anderson_darling(std::span<const double> values) {
  detail::require_size(values, 2, "anderson_darling");
  const std::vector<double> z = detail::sorted_standardized(values, "anderson_darling");
  const std::size_t n = z.size();
  constexpr double kLo = 1e-300;
  constexpr double kHi = 1.0 - 1e-16;
  double s = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double lower = std::clamp(numerics::std_normal_cdf(z[i]), kLo, kHi);
    // 1 - Phi(z_(n+1-i)) = Phi(-z_(n+1-i)), evaluated directly to keep the tail.
    const double upper = std::clamp(numerics::std_normal_cdf(-z[n - 1 - i]), kLo, kHi);
    s += (2.0 * (i + 1) - 1.0) * (std::log(lower) + std::log(upper));
  }
  return -static_cast<double>(n) - s / static_cast<double>(n);
}

/// Royston's approximation of the Shapiro–Wilk coefficients a_1..a_{n/2}
/// (for the n/2 largest order statistics; the lower half carries the negatives).
inline std::vector<double> shapiro_wilk_weights(std::size_t n) {
  if (n < 3) throw DomainError("shapiro_wilk: need at least 3 values");
  const std::size_t half = n / 2;
  std::vector<double> a(half);
  if (n == 3) {
    a[0] = std::sqrt(0.5);
    return a;
  }
  static constexpr double c1[] = {0.0, 0.221157, -0.147981, -2.071190, 4.434685, -2.706056};
  static constexpr double c2[] = {0.0, 0.042981, -0.293762, -1.752461, 5.682633, -3.582633};
  const auto poly = [](const double* c, double x) {
    double r = c[5];
    for (int i = 4; i >= 0; --i) r = r * x + c[i];
    return r;
  };
  const double an25 = static_cast<double>(n) + 0.25;
  std::vector<double> m(half);
  double summ2 = 0.0;
  for (std::size_t i = 0; i < half; ++i) {
    m[i] = numerics::std_normal_quantile((static_cast<double>(i + 1) - 0.375) / an25);
    summ2 += m[i] * m[i];
  }
  summ2 *= 2.0;
  const double ssumm2 = std::sqrt(summ2);
  const double rsn = 1.0 / std::sqrt(static_cast<double>(n));
  const double a1 = poly(c1, rsn) - m[0] / ssumm2;
  std::size_t first;
  double fac;
  if (n > 5) {
    first = 2;
    const double a2 = -m[1] / ssumm2 + poly(c2, rsn);
    fac = std::sqrt((summ2 - 2.0 * m[0] * m[0] - 2.0 * m[1] * m[1]) / (1.0 - 2.0 * a1 * a1 - 2.0 * a2 * a2));
    a[1] = a2;
  } else {
    first = 1;
    fac = std::sqrt((summ2 - 2.0 * m[0] * m[0]) / (1.0 - 2.0 * a1 * a1));
  }
  a[0] = a1;
  for (std::size_t i = first; i < half; ++i) a[i] = -m[i] / fac;
  return a;
}

namespace detail {

inline const std::vector<double>& cached_sw_weights(std::size_t n) {
  static std::mutex mutex;
  static std::map<std::size_t, std::vector<double>> cache;
  std::lock_guard lock(mutex);
  auto it = cache.find(n);
  if (it == cache.end()) it = cache.emplace(n, shapiro_wilk_weights(n)).first;
  return it->second;
}

}  // namespace detail

/// Shapiro–Wilk W; empty above kShapiroWilkMaxSize values.
inline std::optional<double> shapiro_wilk(std::span<const double> values) {
  detail::require_size(values, 3, "shapiro_wilk");
  if (values.size() > kShapiroWilkMaxSize) return std::nullopt;
  const std::size_t n = values.size();
  detail::central_moments(values, "shapiro_wilk");
  std::vector<double> x(values.begin(), values.end());
  std::sort(x.begin(), x.end());
  const std::vector<double>& a = detail::cached_sw_weights(n);
  // Squared correlation between the antisymmetric weight vector and the
  // range-scaled order statistics.
  const double range = x.back() - x.front();
  double sx = 0.0;
  for (double v : x) sx += v / range;
  sx /= static_cast<double>(n);
  double ssa = 0.0;
  double ssx = 0.0;
  double sax = 0.0;
  const std::size_t half = n / 2;
  for (std::size_t i = 0; i < n; ++i) {
    double asa = 0.0;
    if (i < half) {
      asa = -a[i];
    } else if (n - 1 - i < half) {
      asa = a[n - 1 - i];
    }
    const double xsx = x[i] / range - sx;
    ssa += asa * asa;
    ssx += xsx * xsx;
    sax += asa * xsx;
  }
  const double ssassx = std::sqrt(ssa * ssx);
  const double w1 = (ssassx - sax) * (ssassx + sax) / (ssa * ssx);
  return std::clamp(1.0 - w1, std::numeric_limits<double>::min(), 1.0);
}

/// Classifier inputs. Order in `as_vector`: [W], D, A^2, JB, S, K.
struct FeatureVector {
  std::optional<double> shapiro_wilk;
  double lilliefors = 0.0;
  double anderson_darling = 0.0;
  double jarque_bera = 0.0;
  double skewness = 0.0;
  double kurtosis = 0.0;

  std::size_t m() const { return shapiro_wilk ? 6 : 5; }

  std::vector<double> as_vector() const {
    std::vector<double> v;
    v.reserve(6);
    if (shapiro_wilk) v.push_back(*shapiro_wilk);
    v.insert(v.end(), {lilliefors, anderson_darling, jarque_bera, skewness, kurtosis});
    return v;
  }

  static std::vector<std::string> names(std::size_t m) {
    std::vector<std::string> n{"lilliefors", "anderson_darling", "jarque_bera", "skewness", "kurtosis"};
    if (m == 6) n.insert(n.begin(), "shapiro_wilk");
    return n;
  }
};

inline FeatureVector features(std::span<const double> values) {
  detail::require_size(values, 8, "features");
  FeatureVector f;
  const SkewKurt sk = skewness_kurtosis(values);
  f.skewness = sk.skewness;
  f.kurtosis = sk.kurtosis;
  f.jarque_bera = jarque_bera_from(values.size(), sk);
  f.lilliefors = lilliefors(values);
  f.anderson_darling = anderson_darling(values);
  f.shapiro_wilk = shapiro_wilk(values);
  return f;
}

// ---------------------------------------------------------------------------
// Monte Carlo calibration of the classical tests.

enum class ClassicalTest { shapiro_wilk, lilliefors, anderson_darling, jarque_bera };

inline constexpr std::array<ClassicalTest, 4> kClassicalTests = {
    ClassicalTest::shapiro_wilk, ClassicalTest::lilliefors, ClassicalTest::anderson_darling,
    ClassicalTest::jarque_bera};

inline std::string to_string(ClassicalTest t) {
  switch (t) {
    case ClassicalTest::shapiro_wilk: return "shapiro_wilk";
    case ClassicalTest::lilliefors: return "lilliefors";
    case ClassicalTest::anderson_darling: return "anderson_darling";
    case ClassicalTest::jarque_bera: return "jarque_bera";
  }
  return "?";
}

/// W rejects for small values; the other statistics for large ones.
inline bool rejects_low(ClassicalTest t) { return t == ClassicalTest::shapiro_wilk; }

inline std::optional<double> statistic(ClassicalTest t, const FeatureVector& f) {
  switch (t) {
    case ClassicalTest::shapiro_wilk: return f.shapiro_wilk;
    case ClassicalTest::lilliefors: return f.lilliefors;
    case ClassicalTest::anderson_darling: return f.anderson_darling;
    case ClassicalTest::jarque_bera: return f.jarque_bera;
  }
  return std::nullopt;
}

struct CriticalValues {
  std::size_t sample_size = 0;
  double alpha = 0.05;
  std::size_t n_null = 0;
  std::uint64_t seed = 0;
  std::map<ClassicalTest, double> value;

  /// nullopt when the statistic is unavailable for this sample size.
  std::optional<bool> reject(ClassicalTest t, const FeatureVector& f) const {
    const auto it = value.find(t);
    const auto s = statistic(t, f);
    if (it == value.end() || !s) return std::nullopt;
    return rejects_low(t) ? *s < it->second : *s > it->second;
  }
};

namespace detail {

inline std::string cache_key_prefix(ClassicalTest t, std::size_t M, double alpha, std::size_t n_null,
                                    std::uint64_t seed) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.17g", alpha);
  return to_string(t) + "," + std::to_string(M) + "," + buf + "," + std::to_string(n_null) + "," +
         std::to_string(seed) + ",";
}

}  // namespace detail

/// Empirical (1-alpha) quantile of each statistic (alpha quantile for W) over
/// n_null i.i.d. N(0,1) samples of size M. With `cache_csv` set, results are
/// read from / appended to that CSV keyed by (statistic, M, alpha, n_null, seed).
inline CriticalValues classical_critical_values(std::size_t M, double alpha, std::size_t n_null,
                                                std::uint64_t seed,
                                                const std::filesystem::path& cache_csv = {}) {
  if (n_null < 1000) throw DomainError("classical_critical_values: n_null must be >= 1000");
  if (!(alpha > 0.0 && alpha < 1.0)) throw DomainError("classical_critical_values: alpha outside (0,1)");
  if (M < 8) throw DomainError("classical_critical_values: M must be >= 8");
  CriticalValues cv{M, alpha, n_null, seed, {}};
  const bool has_sw = M <= kShapiroWilkMaxSize;

  if (!cache_csv.empty() && std::filesystem::exists(cache_csv)) {
    std::ifstream in(cache_csv);
    std::string line;
    while (std::getline(in, line)) {
      for (ClassicalTest t : kClassicalTests) {
        const std::string prefix = detail::cache_key_prefix(t, M, alpha, n_null, seed);
        if (line.rfind(prefix, 0) == 0) cv.value[t] = std::stod(line.substr(prefix.size()));
      }
    }
    if (cv.value.size() == (has_sw ? 4u : 3u)) return cv;
    cv.value.clear();
  }

  std::map<ClassicalTest, std::vector<double>> stats;
  std::vector<double> y(M);
  for (std::size_t r = 0; r < n_null; ++r) {
    Rng rng = make_rng(seed, {r});
    std::normal_distribution<double> normal;
    for (double& v : y) v = normal(rng);
    const FeatureVector f = features(y);
    for (ClassicalTest t : kClassicalTests)
      if (const auto s = statistic(t, f)) stats[t].push_back(*s);
  }
  for (auto& [t, v] : stats) {
    std::sort(v.begin(), v.end());
    const double n = static_cast<double>(v.size());
    if (rejects_low(t)) {
      // Smallest c with #{W < c} <= alpha n.
      const auto k = static_cast<std::size_t>(std::floor(alpha * n + 1e-9));
      cv.value[t] = v[std::min(k, v.size() - 1)];
    } else {
      const auto k = static_cast<std::size_t>(std::ceil(n * (1.0 - alpha) - 1e-9));
      cv.value[t] = v[std::clamp<std::size_t>(k, 1, v.size()) - 1];
    }
  }

  if (!cache_csv.empty()) {
    const bool fresh = !std::filesystem::exists(cache_csv);
    std::ofstream out(cache_csv, std::ios::app);
    if (fresh) out << "statistic,M,alpha,n_null,seed,value\n";
    for (const auto& [t, value] : cv.value) {
      char buf[64];
      std::snprintf(buf, sizeof buf, "%.17g", value);
      out << detail::cache_key_prefix(t, M, alpha, n_null, seed) << buf << "\n";
    }
  }
  return cv;
}

}  // namespace adnorm::normstats
