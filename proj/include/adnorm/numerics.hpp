#pragma once

// Special functions and scalar root finding shared by the rest of the library.

#include <adnorm/errors.hpp>

#include <array>
#include <cmath>
#include <limits>
#include <numbers>
#include <string>

namespace adnorm::numerics {

namespace detail {

// Taylor coefficients of 1/Gamma(z) around 0 (c[k] multiplies z^k).
inline constexpr std::array<double, 29> kRecipGammaCoef = {
    0.0,
    1.0,
    0.577215664901532861,
    -0.655878071520253881,
    -0.0420026350340952355,
    0.16653861138229149,
    -0.0421977345555443367,
    -0.00962197152787697356,
    0.00721894324666309954,
    -0.00116516759185906511,
    -0.000215241674114950973,
    0.000128050282388116186,
    -0.0000201348547807882387,
    -1.25049348214267066e-6,
    1.13302723198169588e-6,
    -2.0563384169776071e-7,
    6.11609510448141582e-9,
    5.00200764446922293e-9,
    -1.18127457048702014e-9,
    1.04342671169110051e-10,
    7.78226343990507125e-12,
    -3.69680561864220571e-12,
    5.10037028745447598e-13,
    -2.05832605356650678e-14,
    -5.34812253942301798e-15,
    1.22677862823826079e-15,
    -1.18125930169745877e-16,
    1.18669225475160033e-18,
    1.41238065531803178e-18,
};

struct TemmeGammas {
  double gam1;   // (1/G(1-mu) - 1/G(1+mu)) / (2 mu)
  double gam2;   // (1/G(1-mu) + 1/G(1+mu)) / 2
  double gampl;  // 1/G(1+mu)
  double gammi;  // 1/G(1-mu)
};

// |mu| <= 1/2. Power series avoid the cancellation in gam1 near mu = 0.
inline TemmeGammas temme_gammas(double mu) {
  const auto& c = kRecipGammaCoef;
  double gam1 = 0.0;
  double gam2 = 0.0;
  // gam2 = sum_{k odd} c_k mu^(k-1), gam1 = -sum_{k even} c_k mu^(k-2).
  const double mu2 = mu * mu;
  double p = 1.0;
  for (std::size_t k = 1; k < c.size(); k += 2) {
    gam2 += c[k] * p;
    p *= mu2;
  }
  p = 1.0;
  for (std::size_t k = 2; k < c.size(); k += 2) {
    gam1 -= c[k] * p;
    p *= mu2;
  }
  return {gam1, gam2, gam2 - mu * gam1, gam2 + mu * gam1};
}

// K_mu(x) and K_{mu+1}(x) for |mu| <= 1/2.
inline void bessel_k_pair(double mu, double x, double& k_mu, double& k_mu1) {
  constexpr double kEps = 1e-17;
  constexpr int kMaxIter = 100000;
  const double pi = std::numbers::pi;
  const double xi = 1.0 / x;
  const double xi2 = 2.0 * xi;
  if (x < 2.0) {
    const double x2 = 0.5 * x;
    const double pimu = pi * mu;
    const double fact = std::abs(pimu) < 1e-15 ? 1.0 : pimu / std::sin(pimu);
    double d = -std::log(x2);
    double e = mu * d;
    const double fact2 = std::abs(e) < 1e-15 ? 1.0 : std::sinh(e) / e;
    const TemmeGammas g = temme_gammas(mu);
    double ff = fact * (g.gam1 * std::cosh(e) + g.gam2 * fact2 * d);
    double sum = ff;
    e = std::exp(e);
    double p = 0.5 * e / g.gampl;
    double q = 0.5 / (e * g.gammi);
    double c = 1.0;
    d = x2 * x2;
    double sum1 = p;
    int i = 1;
    for (; i <= kMaxIter; ++i) {
      const double di = i;
      ff = (di * ff + p + q) / (di * di - mu * mu);
      c *= d / di;
      p /= (di - mu);
      q /= (di + mu);
      const double del = c * ff;
      sum += del;
      const double del1 = c * (p - di * ff);
      sum1 += del1;
      if (std::abs(del) < std::abs(sum) * kEps) break;
    }
    if (i > kMaxIter) throw Error("bessel_k: series failed to converge");
    k_mu = sum;
    k_mu1 = sum1 * xi2;
  } else {
    // Steed's continued fraction.
    double b = 2.0 * (1.0 + x);
    double d = 1.0 / b;
    double h = d;
    double delh = d;
    double q1 = 0.0;
    double q2 = 1.0;
    const double a1 = 0.25 - mu * mu;
    double q = a1;
    double c = a1;
    double a = -a1;
    double s = 1.0 + q * delh;
    int i = 2;
    for (; i <= kMaxIter; ++i) {
      a -= 2.0 * (i - 1);
      c = -a * c / i;
      const double qnew = (q1 - b * q2) / a;
      q1 = q2;
      q2 = qnew;
      q += c * qnew;
      b += 2.0;
      d = 1.0 / (b + a * d);
      delh = (b * d - 1.0) * delh;
      h += delh;
      const double dels = q * delh;
      s += dels;
      if (std::abs(dels / s) < kEps) break;
    }
    if (i > kMaxIter) throw Error("bessel_k: continued fraction failed to converge");
    k_mu = std::sqrt(pi / (2.0 * x)) * std::exp(-x) / s;
    k_mu1 = k_mu * (mu + x + 0.5 - a1 * h) * xi;
  }
}

// K_{n+1/2}(x) = sqrt(pi/(2x)) e^{-x} sum_k (n+k)!/(k!(n-k)!) (2x)^{-k}
inline double bessel_k_half_integer(int n, double x) {
  double term = 1.0;
  double sum = 1.0;
  for (int k = 1; k <= n; ++k) {
    term *= static_cast<double>((n + k) * (n - k + 1)) / (2.0 * k * x);
    sum += term;
  }
  return std::sqrt(std::numbers::pi / (2.0 * x)) * std::exp(-x) * sum;
}

}  // namespace detail

/// Modified Bessel function of the second kind K_order(x), order > 0, x > 0.
inline double bessel_k(double order, double x) {
  if (!(order > 0.0) || !(x > 0.0) || !std::isfinite(order) || !std::isfinite(x)) {
    throw DomainError("bessel_k: order and x must be positive and finite");
  }
  if (x < 1e-300) throw OverflowError("bessel_k: x below 1e-300 overflows");
  if (x > 745.0) return 0.0;

  const double half_shift = order - 0.5;
  const double k_half = std::round(half_shift);
  if (std::abs(half_shift - k_half) < 1e-12 && k_half >= 0.0) {
    return detail::bessel_k_half_integer(static_cast<int>(k_half), x);
  }

  const int nl = static_cast<int>(order + 0.5);
  const double mu = order - nl;
  double k_mu = 0.0;
  double k_mu1 = 0.0;
  detail::bessel_k_pair(mu, x, k_mu, k_mu1);
  const double xi2 = 2.0 / x;
  for (int i = 1; i <= nl; ++i) {
    const double next = (mu + i) * xi2 * k_mu1 + k_mu;
    k_mu = k_mu1;
    k_mu1 = next;
  }
  if (!std::isfinite(k_mu)) throw OverflowError("bessel_k: result overflows");
  return k_mu;
}

/// Standard normal CDF.
inline double std_normal_cdf(double z) {
  return 0.5 * std::erfc(-z / std::numbers::sqrt2);
}

/// Standard normal density.
inline double std_normal_pdf(double z) {
  return std::exp(-0.5 * z * z) / std::sqrt(2.0 * std::numbers::pi);
}

/// Inverse of the standard normal CDF, p in (0,1).
inline double std_normal_quantile(double p) {
  if (!(p > 0.0 && p < 1.0)) throw DomainError("normal quantile: probability outside (0,1)");
  // Acklam's rational approximation, then Halley refinement on erfc.
  static constexpr double a[] = {-3.969683028665376e+01, 2.209460984245205e+02,
                                 -2.759285104469687e+02, 1.383577518672690e+02,
                                 -3.066479806614716e+01, 2.506628277459239e+00};
  static constexpr double b[] = {-5.447609879822406e+01, 1.615858368580409e+02,
                                 -1.556989798598866e+02, 6.680131188771972e+01,
                                 -1.328068155288572e+01};
  static constexpr double c[] = {-7.784894002430293e-03, -3.223964580411365e-01,
                                 -2.400758277161838e+00, -2.549732539343734e+00,
                                 4.374664141464968e+00,  2.938163982698783e+00};
  static constexpr double d[] = {7.784695709041462e-03, 3.224671290700398e-01,
                                 2.445134137142996e+00, 3.754408661907416e+00};
  constexpr double p_low = 0.02425;
  double x;
  if (p < p_low) {
    const double q = std::sqrt(-2.0 * std::log(p));
    x = (((((c[0] * q + c[1]) * q + c[2]) * q + c[3]) * q + c[4]) * q + c[5]) /
        ((((d[0] * q + d[1]) * q + d[2]) * q + d[3]) * q + 1.0);
  } else if (p <= 1.0 - p_low) {
    const double q = p - 0.5;
    const double r = q * q;
    x = (((((a[0] * r + a[1]) * r + a[2]) * r + a[3]) * r + a[4]) * r + a[5]) * q /
        (((((b[0] * r + b[1]) * r + b[2]) * r + b[3]) * r + b[4]) * r + 1.0);
  } else {
    const double q = std::sqrt(-2.0 * std::log1p(-p));
    x = -(((((c[0] * q + c[1]) * q + c[2]) * q + c[3]) * q + c[4]) * q + c[5]) /
        ((((d[0] * q + d[1]) * q + d[2]) * q + d[3]) * q + 1.0);
  }
  for (int it = 0; it < 2; ++it) {
    // Work on the smaller tail to keep the residual relative.
    double e;
    if (x < 0.0) {
      e = 0.5 * std::erfc(-x / std::numbers::sqrt2) - p;
    } else {
      e = (1.0 - p) - 0.5 * std::erfc(x / std::numbers::sqrt2);
    }
    const double u = e * std::sqrt(2.0 * std::numbers::pi) * std::exp(0.5 * x * x);
    x = x - u / (1.0 + 0.5 * x * u);
  }
  return x;
}

/// Regularized lower incomplete gamma P(a, x).
inline double regularized_gamma_p(double a, double x) {
  if (!(a > 0.0) || x < 0.0) throw DomainError("regularized_gamma_p: need a > 0, x >= 0");
  if (x == 0.0) return 0.0;
  const double log_prefix = -x + a * std::log(x) - std::lgamma(a);
  constexpr double kEps = 1e-16;
  if (x < a + 1.0) {
    double ap = a;
    double del = 1.0 / a;
    double sum = del;
    for (int n = 0; n < 100000; ++n) {
      ap += 1.0;
      del *= x / ap;
      sum += del;
      if (std::abs(del) < std::abs(sum) * kEps) break;
    }
    return sum * std::exp(log_prefix);
  }
  // Lentz continued fraction for Q.
  constexpr double kTiny = 1e-300;
  double b = x + 1.0 - a;
  double c = 1.0 / kTiny;
  double d = 1.0 / b;
  double h = d;
  for (int i = 1; i < 100000; ++i) {
    const double an = -i * (i - a);
    b += 2.0;
    d = an * d + b;
    if (std::abs(d) < kTiny) d = kTiny;
    c = b + an / c;
    if (std::abs(c) < kTiny) c = kTiny;
    d = 1.0 / d;
    const double del = d * c;
    h *= del;
    if (std::abs(del - 1.0) < kEps) break;
  }
  return 1.0 - std::exp(log_prefix) * h;
}

/// CDF of the chi-squared distribution with `df` degrees of freedom.
inline double chi_squared_cdf(double x, int df) {
  if (df < 1) throw DomainError("chi_squared_cdf: df must be >= 1");
  if (x <= 0.0) return 0.0;
  return regularized_gamma_p(0.5 * df, 0.5 * x);
}

enum class Distribution { standard_normal, chi_squared };

struct QuantileRequest {
  Distribution distribution = Distribution::standard_normal;
  int df = 0;
  double probability = 0.5;

  static QuantileRequest normal(double p) { return {Distribution::standard_normal, 0, p}; }
  static QuantileRequest chi_squared(int df, double p) {
    return {Distribution::chi_squared, df, p};
  }
};

namespace detail {

inline double chi_squared_quantile(int df, double p) {
  double lo = 0.0;
  double hi = std::max(1.0, static_cast<double>(df));
  while (chi_squared_cdf(hi, df) < p) {
    lo = hi;
    hi *= 2.0;
    if (hi > 1e300) throw Error("chi-squared quantile: bracket overflow");
  }
  for (int it = 0; it < 400; ++it) {
    const double mid = 0.5 * (lo + hi);
    if (mid <= lo || mid >= hi) break;
    if (chi_squared_cdf(mid, df) < p) {
      lo = mid;
    } else {
      hi = mid;
    }
  }
  return 0.5 * (lo + hi);
}

}  // namespace detail

/// Quantile of the requested distribution.
inline double quantile(const QuantileRequest& req) {
  const double p = req.probability;
  if (!(p > 0.0 && p < 1.0)) throw DomainError("quantile: probability outside (0,1)");
  switch (req.distribution) {
    case Distribution::standard_normal:
      return std_normal_quantile(p);
    case Distribution::chi_squared:
      if (req.df < 1) throw DomainError("quantile: chi-squared df must be >= 1");
      return detail::chi_squared_quantile(req.df, p);
  }
  throw DomainError("quantile: unknown distribution");
}

}  // namespace adnorm::numerics
