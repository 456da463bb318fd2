#pragma once

// Skewness-kurtosis chi-square test for dependent lattice data with
// long-run variance normalisation.

#include <adnorm/errors.hpp>
#include <adnorm/numerics.hpp>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <ostream>
#include <span>
#include <string>
#include <vector>

namespace adnorm::depnorm {

struct DepTestResult {
  double stat = 0.0;
  double skew_term = 0.0;
  double kurt_term = 0.0;
  double phi2_skew = 0.0;
  double phi2_kurt = 0.0;
  double alpha = 0.05;
  int window = 1;
  bool reject = false;
};

inline int default_window(int rows, int cols) {
  return std::max(1, static_cast<int>(std::floor(std::pow(static_cast<double>(rows) * cols, 0.25))));
}

/// Σ over lags |h|,|v| ≤ window of (1−|h|/(w+1))(1−|v|/(w+1)) times the lag
/// autocovariance of a mean-zero lattice field (1/M normalisation).
inline double bartlett_long_run_variance(std::span<const double> field, int rows, int cols, int window) {
  const auto at = [&](int r, int c) { return field[static_cast<std::size_t>(r) * cols + c]; };
  const double m = static_cast<double>(rows) * cols;
  const double denom = window + 1.0;
  double total = 0.0;
  for (int dr = 0; dr <= window && dr < rows; ++dr) {
    for (int dc = -window; dc <= window; ++dc) {
      if (dr == 0 && dc < 0) continue;  // (dr,dc) and (-dr,-dc) share one autocovariance
      if (std::abs(dc) >= cols) continue;
      double acc = 0.0;
      for (int r = 0; r + dr < rows; ++r) {
        const int c0 = std::max(0, -dc);
        const int c1 = std::min(cols, cols - dc);
        for (int c = c0; c < c1; ++c) acc += at(r, c) * at(r + dr, c + dc);
      }
      const double gamma = acc / m;
      const double w = (1.0 - dr / denom) * (1.0 - std::abs(dc) / denom);
      total += (dr == 0 && dc == 0 ? 1.0 : 2.0) * w * gamma;
    }
  }
  return total;
}

/// Standardises by the 1/M mean and sd, so S = mean z³ and K = mean z⁴ − 3.
/// Long-run variances come from the Hermite projections z³ − 3z and
/// z⁴ − 6z² + 3, which have the same means as z³ and z⁴ − 3 once z is
/// standardised and reduce to the i.i.d. variances 6 and 24.
inline DepTestResult dep_normality_test(std::span<const double> values, int rows, int cols, double alpha = 0.05,
                                        int window = 0) {
  if (rows < 1 || cols < 1 || static_cast<std::size_t>(rows) * cols != values.size()) {
    throw DimensionError("dep_normality_test: lattice dimensions do not match values");
  }
  if (values.size() < 100) throw DomainError("dep_normality_test: needs at least 100 locations");
  if (!(alpha > 0.0 && alpha < 1.0)) throw DomainError("dep_normality_test: alpha must be in (0,1)");
  if (window == 0) window = default_window(rows, cols);
  if (window < 1) throw DomainError("dep_normality_test: window must be >= 1");

  const std::size_t n = values.size();
  const double m = static_cast<double>(n);
  double mean = 0.0;
  for (double v : values) mean += v;
  mean /= m;
  double m2 = 0.0;
  for (double v : values) m2 += (v - mean) * (v - mean);
  m2 /= m;
  double max_abs = 0.0;
  for (double v : values) max_abs = std::max(max_abs, std::abs(v));
  if (!(m2 > 0.0) || std::sqrt(m2) <= 1e-13 * max_abs) throw ZeroVarianceError("dep_normality_test");
  const double sd = std::sqrt(m2);

  std::vector<double> h3(n);
  std::vector<double> h4(n);
  double s = 0.0;
  double k = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double z = (values[i] - mean) / sd;
    const double z2 = z * z;
    s += z2 * z;
    k += z2 * z2;
    h3[i] = z2 * z - 3.0 * z;
    h4[i] = z2 * z2 - 6.0 * z2 + 3.0;
  }
  s /= m;
  k = k / m - 3.0;
  // Centre the projected fields at their sample means before autocovariances.
  double mh3 = 0.0;
  double mh4 = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    mh3 += h3[i];
    mh4 += h4[i];
  }
  mh3 /= m;
  mh4 /= m;
  for (std::size_t i = 0; i < n; ++i) {
    h3[i] -= mh3;
    h4[i] -= mh4;
  }

  DepTestResult r;
  r.alpha = alpha;
  r.window = window;
  r.phi2_skew = bartlett_long_run_variance(h3, rows, cols, window);
  r.phi2_kurt = bartlett_long_run_variance(h4, rows, cols, window);
  if (!(r.phi2_skew > 0.0) || !(r.phi2_kurt > 0.0)) {
    throw DomainError("dep_normality_test: non-positive long-run variance; window " + std::to_string(window) +
                      " is inadequate");
  }
  r.skew_term = m * s * s / r.phi2_skew;
  r.kurt_term = m * k * k / r.phi2_kurt;
  r.stat = r.skew_term + r.kurt_term;
  r.reject = r.stat > numerics::quantile(numerics::QuantileRequest::chi_squared(2, 1.0 - alpha));
  return r;
}

inline void write_result_header(std::ostream& out) { out << "stat,skew_term,kurt_term,reject,alpha,window\n"; }

inline void write_result_row(std::ostream& out, const DepTestResult& r) {
  char buf[200];
  std::snprintf(buf, sizeof buf, "%.17g,%.17g,%.17g,%d,%.17g,%d\n", r.stat, r.skew_term, r.kurt_term,
                r.reject ? 1 : 0, r.alpha, r.window);
  out << buf;
}

}  // namespace adnorm::depnorm
